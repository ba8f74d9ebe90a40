#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "cultivar/geometry.h"
#include "cultivar/tableau.h"
#include "doctest.h"

using namespace cultivar;

namespace {

Coord c2(int64_t x, int64_t y) { return Coord{Frac(x), Frac(y)}; }

std::vector<PauliString> stab_paulis(const Patch &p) {
    std::vector<PauliString> out;
    for (const Stab *s : p.all_stabs()) out.push_back(p.stab_pauli(*s));
    return out;
}

// conjugation by the full transversal gate (factors act on disjoint supports)
PauliString fold_conj(const Patch &p, const std::vector<TransversalFactor> &fs, PauliString ps) {
    for (const auto &f : fs) {
        int a = p.index_of(f.a);
        REQUIRE(a >= 0);
        switch (f.kind) {
            case TransversalFactor::SingleH:
                ps = conjugate_gate(Op::H, {a}, ps);
                break;
            case TransversalFactor::SingleHXY:
                ps = conjugate_gate(Op::H_XY, {a}, ps);
                break;
            case TransversalFactor::SingleHXYZ:
                ps = conjugate_gate(Op::Z, {a}, ps);
                ps = conjugate_gate(Op::H_XY, {a}, ps);
                break;
            case TransversalFactor::PairCZ:
                ps = conjugate_gate(Op::CZ, {a, p.index_of(f.b)}, ps);
                break;
            case TransversalFactor::PairSwapHH: {
                int b = p.index_of(f.b);
                REQUIRE(b >= 0);
                ps = conjugate_gate(Op::H, {a}, ps);
                ps = conjugate_gate(Op::H, {b}, ps);
                ps = conjugate_gate(Op::SWAP, {a, b}, ps);
                break;
            }
        }
    }
    return ps;
}

int qindex(const std::vector<Coord> &qs, Coord c) {
    for (size_t i = 0; i < qs.size(); i++)
        if (qs[i] == c) return int(i);
    return -1;
}

// unrotated-frame support lifted into the mid-cycle qubit space
PauliString lifted(const MidCycle &mc, const std::vector<Coord> &sup, char pauli) {
    PauliString p(mc.qubits.size());
    for (const auto &c : sup) {
        Coord r{Frac(c.x.num + mc.shift.x.num), Frac(c.y.num + mc.shift.y.num)};
        int i = qindex(mc.qubits, r);
        REQUIRE(i >= 0);
        (pauli == 'X' ? p.x : p.z).set(size_t(i), true);
    }
    return p;
}

PauliString on_qubits(const std::vector<Coord> &qs, const std::vector<Coord> &sup, char pauli) {
    PauliString p(qs.size());
    for (const auto &c : sup) {
        int i = qindex(qs, c);
        REQUIRE(i >= 0);
        (pauli == 'X' ? p.x : p.z).set(size_t(i), true);
    }
    return p;
}

}  // namespace

TEST_CASE("patch construction and invariants") {
    for (int d : {2, 3, 5, 7}) {
        Patch u = build_patch(PatchKind::Unrotated, d);
        CHECK(u.data.size() == size_t(d * d + (d - 1) * (d - 1)));
        CHECK(u.x_stabs.size() == size_t(d * (d - 1)));
        CHECK(u.z_stabs.size() == size_t(d * (d - 1)));
        CHECK(u.logical_x.size() == size_t(d));
        CHECK(u.logical_z.size() == size_t(d));

        Patch r = build_patch(PatchKind::Rotated, d);
        CHECK(r.data.size() == size_t(d * d));
        CHECK(r.x_stabs.size() + r.z_stabs.size() == size_t(d * d - 1));
    }
    CHECK_THROWS(build_patch(PatchKind::Rotated, 1));
    CHECK_THROWS(build_patch(PatchKind::Unrotated, 0));

    Patch r2 = build_patch(PatchKind::Rotated, 2);
    CHECK(r2.x_stabs.size() == 1);
    CHECK(r2.z_stabs.size() == 2);
    CHECK(r2.x_stabs[0].support.size() == 4);

    // boundary checks of the d=3 rotated patch sit where they should
    Patch r3 = build_patch(PatchKind::Rotated, 3);
    std::vector<Coord> xb, zb;
    for (const auto &s : r3.x_stabs)
        if (s.support.size() == 2) xb.push_back(s.anc);
    for (const auto &s : r3.z_stabs)
        if (s.support.size() == 2) zb.push_back(s.anc);
    REQUIRE(xb.size() == 2);
    REQUIRE(zb.size() == 2);
    CHECK(xb[0] == c2(4, 0));
    CHECK(xb[1] == c2(2, 6));
    CHECK(zb[0] == c2(0, 2));
    CHECK(zb[1] == c2(6, 4));

    CHECK(build_patch(PatchKind::Unrotated, 3).index_of(c2(1, 1)) >= 0);
    CHECK(build_patch(PatchKind::Unrotated, 3).index_of(c2(1, 2)) == -1);
}

TEST_CASE("five qubit patch dump is stable") {
    Patch p = build_patch(PatchKind::Unrotated, 2);
    std::string want =
        "unrotated d=2 data=5\n"
        "data: (0, 0) (2, 0) (1, 1) (0, 2) (2, 2)\n"
        "X (1, 0): (0, 0) (2, 0) (1, 1)\n"
        "X (1, 2): (1, 1) (0, 2) (2, 2)\n"
        "Z (0, 1): (0, 0) (1, 1) (0, 2)\n"
        "Z (2, 1): (2, 0) (1, 1) (2, 2)\n"
        "X_L: (0, 0) (0, 2)\n"
        "Z_L: (0, 0) (2, 0)\n";
    CHECK(dump_patch(p) == want);
}

TEST_CASE("fold structure splits the patch along the diagonal") {
    for (int d : {2, 3, 5}) {
        Patch p = build_patch(PatchKind::Unrotated, d);
        FoldStructure f = fold_structure(p);
        CHECK(f.diagonal.size() == size_t(2 * d - 1));
        CHECK(f.pairs.size() == (p.data.size() - f.diagonal.size()) / 2);
        for (const auto &c : f.diagonal) CHECK(c.x == c.y);
        for (const auto &[b, m] : f.pairs) {
            CHECK(m == fold_reflect(b));
            CHECK(b.y < b.x);
            CHECK(fold_reflect(fold_reflect(b)) == b);
        }

        // reflection swaps the X and Z check structure site for site
        REQUIRE(p.x_stabs.size() == p.z_stabs.size());
        std::set<std::string> z_keys;
        for (const auto &s : p.z_stabs) {
            std::string k = s.anc.str() + "|";
            for (const auto &c : s.support) k += c.str();
            z_keys.insert(k);
        }
        for (const auto &s : p.x_stabs) {
            std::vector<Coord> ref;
            for (const auto &c : s.support) ref.push_back(fold_reflect(c));
            std::sort(ref.begin(), ref.end(),
                      [](const Coord &a, const Coord &b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
            std::string k = fold_reflect(s.anc).str() + "|";
            for (const auto &c : ref) k += c.str();
            CHECK(z_keys.count(k) == 1);
        }
    }
    CHECK_THROWS(fold_structure(build_patch(PatchKind::Rotated, 3)));
}

TEST_CASE("transversal factors cover every data qubit once") {
    for (int d : {2, 3, 5}) {
        Patch p = build_patch(PatchKind::Unrotated, d);
        for (char which : {'H', 'Y'}) {
            auto fs = transversal_factors(p, which);
            std::set<std::string> seen;
            size_t hxy = 0, hxyz = 0, hs = 0, czs = 0, swaps = 0;
            for (const auto &f : fs) {
                switch (f.kind) {
                    case TransversalFactor::SingleH: hs++; break;
                    case TransversalFactor::SingleHXY: hxy++; break;
                    case TransversalFactor::SingleHXYZ: hxyz++; break;
                    case TransversalFactor::PairCZ: czs++; break;
                    case TransversalFactor::PairSwapHH: swaps++; break;
                }
                CHECK(seen.insert(f.a.str()).second);
                if (f.kind == TransversalFactor::PairCZ || f.kind == TransversalFactor::PairSwapHH)
                    CHECK(seen.insert(f.b.str()).second);
            }
            CHECK(seen.size() == p.data.size());
            size_t pair_count = (p.data.size() - size_t(2 * d - 1)) / 2;
            if (which == 'H') {
                CHECK(hs == size_t(2 * d - 1));
                CHECK(swaps == pair_count);
                CHECK(hxy + hxyz + czs == 0);
            } else {
                CHECK(hxy == size_t(d));
                CHECK(hxyz == size_t(d - 1));
                CHECK(czs == pair_count);
                CHECK(hs + swaps == 0);
            }
        }
    }
}

TEST_CASE("fold gates preserve the stabilizer group and map the logicals") {
    for (int d : {2, 3, 5}) {
        Patch p = build_patch(PatchKind::Unrotated, d);
        auto stabs = stab_paulis(p);
        PauliString lx = p.logical_pauli('X'), lz = p.logical_pauli('Z');
        PauliString yl = lx * lz;
        yl.phase = (yl.phase + 1) & 3;  // i * X_L * Z_L, Hermitian
        CHECK((yl * yl).is_identity());
        CHECK((yl * yl).phase == 0);

        for (char which : {'H', 'Y'}) {
            auto fs = transversal_factors(p, which);
            for (const auto &s : stabs) CHECK(group_sign(stabs, fold_conj(p, fs, s)) == 1);
            PauliString clx = fold_conj(p, fs, lx);
            PauliString clz = fold_conj(p, fs, lz);
            if (which == 'H') {
                CHECK(clx == lz);
                CHECK(clz == lx);
            } else {
                CHECK(clx == yl);
                PauliString neg_lz = lz;
                neg_lz.phase = (neg_lz.phase + 2) & 3;
                CHECK(clz == neg_lz);
            }
        }
    }
}

TEST_CASE("extraction schedule uses four conflict-free layers") {
    for (PatchKind kind : {PatchKind::Rotated, PatchKind::Unrotated}) {
        for (int d : {2, 3, 5}) {
            Patch p = build_patch(kind, d);
            auto layers = se_schedule(p);
            REQUIRE(layers.size() == 4);

            std::set<std::string> x_ancs;
            for (const auto &s : p.x_stabs) x_ancs.insert(s.anc.str());

            size_t support_total = 0;
            for (const Stab *s : p.all_stabs()) support_total += s->support.size();

            std::set<std::string> edges;
            size_t gate_total = 0;
            for (const auto &layer : layers) {
                std::set<std::string> used;
                for (const auto &g : layer) {
                    gate_total++;
                    CHECK(used.insert(g.anc.str()).second);
                    CHECK(used.insert(g.data.str()).second);
                    CHECK(g.anc_is_control == (x_ancs.count(g.anc.str()) == 1));
                    CHECK(edges.insert(g.anc.str() + ">" + g.data.str()).second);
                }
            }
            CHECK(gate_total == support_total);
        }
    }
}

TEST_CASE("mid cycle group matches the unrotated code") {
    for (int d : {2, 3, 5}) {
        Patch rot = build_patch(PatchKind::Rotated, d);
        MidCycle mc = mid_cycle_group(rot);
        CHECK(mc.unrot.d == d);
        CHECK(mc.shift == c2(1, 1));
        CHECK(mc.qubits.size() == size_t(2 * d * d - 1));
        REQUIRE(mc.code_qubits.size() == size_t(d * d + (d - 1) * (d - 1)));

        // the code sits exactly on the shifted image of the unrotated layout
        for (const auto &c : mc.unrot.data) {
            Coord r{Frac(c.x.num + 1), Frac(c.y.num + 1)};
            CHECK(qindex(mc.code_qubits, r) >= 0);
        }

        for (const Stab *s : mc.unrot.all_stabs()) {
            PauliString want = lifted(mc, s->support, s->is_x ? 'X' : 'Z');
            CHECK(group_sign(mc.group, want) == 1);
        }
        CHECK(mc.logical_x == lifted(mc, mc.unrot.logical_x, 'X'));
        CHECK(mc.logical_z == lifted(mc, mc.unrot.logical_z, 'Z'));

        std::vector<std::pair<Coord, char>> want_fresh;
        if (d == 2) want_fresh = {{c2(0, 2), 'Z'}};
        if (d == 3) want_fresh = {{c2(4, 0), 'X'}, {c2(0, 2), 'Z'}};
        if (d == 5)
            want_fresh = {{c2(4, 0), 'X'}, {c2(8, 0), 'X'}, {c2(0, 2), 'Z'}, {c2(0, 6), 'Z'}};
        CHECK(mc.fresh_singles == want_fresh);
        for (const auto &[c, basis] : mc.fresh_singles) CHECK(qindex(mc.code_qubits, c) == -1);
    }
    CHECK_THROWS(mid_cycle_group(build_patch(PatchKind::Unrotated, 3)));
}

TEST_CASE("a full extraction round returns the rotated code to itself") {
    for (int d : {2, 3}) {
        Patch rot = build_patch(PatchKind::Rotated, d);
        MidCycle mc = mid_cycle_group(rot);
        const auto &qs = mc.qubits;
        Tableau t(qs.size());

        for (const Stab *s : rot.all_stabs()) {
            if (s->is_x) t.measure_pauli(on_qubits(qs, {s->anc}, 'X'), nullptr);
            t.measure_pauli(on_qubits(qs, s->support, s->is_x ? 'X' : 'Z'), nullptr);
        }
        t.measure_pauli(on_qubits(qs, rot.logical_z, 'Z'), nullptr);

        for (const auto &layer : se_schedule(rot)) {
            for (const auto &g : layer) {
                int a = qindex(qs, g.anc), dq = qindex(qs, g.data);
                if (g.anc_is_control) t.apply(Op::CX, {a, dq});
                else t.apply(Op::CX, {dq, a});
            }
        }
        t.check_invariants();

        for (const Stab *s : rot.all_stabs()) {
            CHECK(t.expectation(on_qubits(qs, {s->anc}, s->is_x ? 'X' : 'Z')) == 1);
            CHECK(t.expectation(on_qubits(qs, s->support, s->is_x ? 'X' : 'Z')) == 1);
        }
        CHECK(t.expectation(on_qubits(qs, rot.logical_z, 'Z')) == 1);
        CHECK(t.expectation(on_qubits(qs, rot.logical_x, 'X')) == 0);
    }
}

TEST_CASE("expansion maps grow away from the fixed corner") {
    Patch r3 = build_patch(PatchKind::Rotated, 3);
    ExpansionMap e = expansion_map(r3, 5);
    CHECK(e.target.d == 5);
    CHECK(e.new_bases.size() == 16);
    size_t xs = 0, zs = 0;
    for (const auto &[c, basis] : e.new_bases) {
        CHECK(r3.index_of(c) == -1);
        CHECK(e.target.index_of(c) >= 0);
        if (basis == 'X') {
            xs++;
            CHECK(Frac(5) < c.y);
        } else {
            REQUIRE(basis == 'Z');
            zs++;
            CHECK(Frac(5) < c.x);
        }
    }
    CHECK(xs == 10);
    CHECK(zs == 6);
    CHECK(r3.data.size() + e.new_bases.size() == e.target.data.size());

    // source structure is preserved inside the target
    for (const auto &c : r3.data) CHECK(e.target.index_of(c) >= 0);
    for (size_t i = 0; i < r3.logical_x.size(); i++) CHECK(e.target.logical_x[i] == r3.logical_x[i]);
    for (size_t i = 0; i < r3.logical_z.size(); i++) CHECK(e.target.logical_z[i] == r3.logical_z[i]);
    std::set<std::string> tgt_ancs;
    for (const Stab *s : e.target.all_stabs())
        tgt_ancs.insert((s->is_x ? "X" : "Z") + s->anc.str() + std::to_string(s->support.size()));
    for (const Stab *s : r3.all_stabs()) {
        std::string k = (s->is_x ? "X" : "Z") + s->anc.str();
        bool found = tgt_ancs.count(k + "2") || tgt_ancs.count(k + "3") || tgt_ancs.count(k + "4");
        CHECK(found);
    }

    ExpansionMap u = expansion_map(build_patch(PatchKind::Unrotated, 2), 3);
    CHECK(u.new_bases.size() == 8);
    size_t ux = 0;
    for (const auto &[c, basis] : u.new_bases)
        if (basis == 'X') ux++;
    CHECK(ux == 5);

    CHECK(expansion_map(r3, 3).new_bases.empty());
    CHECK_THROWS(expansion_map(build_patch(PatchKind::Rotated, 5), 3));
}
