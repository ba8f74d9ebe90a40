#include "cultivar/geometry.h"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace cultivar {

namespace {

bool coord_less(const Coord &a, const Coord &b) {
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
}

int64_t as_int(const Frac &f) {
    if (f.den != 1) throw std::logic_error("non-integer lattice coordinate");
    return f.num;
}

Coord mk(int64_t x, int64_t y) { return Coord{Frac(x), Frac(y)}; }

}  // namespace

int Patch::index_of(Coord c) const {
    auto it = std::lower_bound(data.begin(), data.end(), c, coord_less);
    if (it == data.end() || !(*it == c)) return -1;
    return int(it - data.begin());
}

PauliString Patch::stab_pauli(const Stab &s) const {
    PauliString p(data.size());
    for (const auto &c : s.support) {
        int i = index_of(c);
        if (i < 0) throw std::logic_error("stabilizer support off patch");
        (s.is_x ? p.x : p.z).set(size_t(i), true);
    }
    return p;
}

PauliString Patch::logical_pauli(char which) const {
    PauliString p(data.size());
    const auto &sup = which == 'X' ? logical_x : logical_z;
    for (const auto &c : sup) {
        int i = index_of(c);
        if (i < 0) throw std::logic_error("logical support off patch");
        (which == 'X' ? p.x : p.z).set(size_t(i), true);
    }
    return p;
}

std::vector<const Stab *> Patch::all_stabs() const {
    std::vector<const Stab *> out;
    for (const auto &s : x_stabs) out.push_back(&s);
    for (const auto &s : z_stabs) out.push_back(&s);
    return out;
}

Patch build_patch(PatchKind kind, int d) {
    if (d < 2) throw std::invalid_argument("need d >= 2");
    Patch p;
    p.kind = kind;
    p.d = d;

    if (kind == PatchKind::Unrotated) {
        int m = 2 * d - 2;
        for (int y = 0; y <= m; y++)
            for (int x = 0; x <= m; x++)
                if ((x + y) % 2 == 0) p.data.push_back(mk(x, y));
        std::sort(p.data.begin(), p.data.end(), coord_less);

        auto neighbors = [&](int x, int y) {
            std::vector<Coord> out;
            const int dx[4] = {0, -1, 1, 0}, dy[4] = {-1, 0, 0, 1};
            for (int k = 0; k < 4; k++) {
                int nx = x + dx[k], ny = y + dy[k];
                if (nx < 0 || ny < 0 || nx > m || ny > m) continue;
                out.push_back(mk(nx, ny));
            }
            return out;
        };
        for (int y = 0; y <= m; y++)
            for (int x = 0; x <= m; x++) {
                if ((x + y) % 2 == 0) continue;
                Stab s;
                s.anc = mk(x, y);
                s.support = neighbors(x, y);
                s.is_x = (x % 2 == 1);  // odd x, even y
                (s.is_x ? p.x_stabs : p.z_stabs).push_back(s);
            }
        for (int y = 0; y <= m; y += 2) p.logical_x.push_back(mk(0, y));
        for (int x = 0; x <= m; x += 2) p.logical_z.push_back(mk(x, 0));
    } else {
        int m = 2 * d;
        for (int y = 1; y < m; y += 2)
            for (int x = 1; x < m; x += 2) p.data.push_back(mk(x, y));
        std::sort(p.data.begin(), p.data.end(), coord_less);

        for (int cy = 0; cy <= m; cy += 2)
            for (int cx = 0; cx <= m; cx += 2) {
                std::vector<Coord> sup;
                const int dx[4] = {-1, 1, -1, 1}, dy[4] = {-1, -1, 1, 1};
                for (int k = 0; k < 4; k++) {
                    int nx = cx + dx[k], ny = cy + dy[k];
                    if (nx < 1 || ny < 1 || nx > m - 1 || ny > m - 1) continue;
                    sup.push_back(mk(nx, ny));
                }
                bool is_x = ((cx + cy) % 4 == 0);
                bool keep = false;
                if (sup.size() == 4) keep = true;
                else if (sup.size() == 2) {
                    bool top_bottom = (cy == 0 || cy == m);
                    bool left_right = (cx == 0 || cx == m);
                    keep = (is_x && top_bottom) || (!is_x && left_right);
                }
                if (!keep) continue;
                Stab s;
                s.anc = mk(cx, cy);
                s.support = sup;
                s.is_x = is_x;
                (is_x ? p.x_stabs : p.z_stabs).push_back(s);
            }
        for (int y = 1; y < m; y += 2) p.logical_x.push_back(mk(1, y));
        for (int x = 1; x < m; x += 2) p.logical_z.push_back(mk(x, 1));
    }

    for (auto *sv : {&p.x_stabs, &p.z_stabs})
        for (auto &s : *sv) std::sort(s.support.begin(), s.support.end(), coord_less);
    auto stab_less = [](const Stab &a, const Stab &b) { return coord_less(a.anc, b.anc); };
    std::sort(p.x_stabs.begin(), p.x_stabs.end(), stab_less);
    std::sort(p.z_stabs.begin(), p.z_stabs.end(), stab_less);
    check_patch(p);
    return p;
}

void check_patch(const Patch &p) {
    size_t expect_data = p.kind == PatchKind::Rotated
                             ? size_t(p.d) * p.d
                             : size_t(p.d) * p.d + size_t(p.d - 1) * (p.d - 1);
    if (p.data.size() != expect_data) throw std::logic_error("wrong data qubit count");
    std::set<std::string> seen;
    for (const auto &c : p.data)
        if (!seen.insert(c.str()).second) throw std::logic_error("duplicate data coordinate");
    if (p.x_stabs.size() + p.z_stabs.size() != p.data.size() - 1)
        throw std::logic_error("wrong stabilizer count");

    std::vector<PauliString> stabs;
    for (const Stab *s : p.all_stabs()) {
        if (s->support.empty()) throw std::logic_error("empty stabilizer");
        stabs.push_back(p.stab_pauli(*s));
    }
    for (size_t i = 0; i < stabs.size(); i++)
        for (size_t j = i + 1; j < stabs.size(); j++)
            if (!stabs[i].commutes(stabs[j])) throw std::logic_error("stabilizers anticommute");

    PauliString lx = p.logical_pauli('X'), lz = p.logical_pauli('Z');
    for (const auto &s : stabs)
        if (!lx.commutes(s) || !lz.commutes(s))
            throw std::logic_error("logical fails to commute with a stabilizer");
    if (lx.commutes(lz)) throw std::logic_error("logicals fail to anticommute");
    if (p.logical_x.size() != size_t(p.d) || p.logical_z.size() != size_t(p.d))
        throw std::logic_error("logical weight is not d");

    // full rank: stabilizers are independent
    Gf2Basis basis;
    size_t n = p.data.size();
    for (const auto &s : stabs) {
        BitVec row(2 * n);
        for (size_t q = 0; q < n; q++) {
            row.set(q, s.x.get(q));
            row.set(n + q, s.z.get(q));
        }
        if (!basis.add(row)) throw std::logic_error("dependent stabilizers");
    }
}

std::string dump_patch(const Patch &p) {
    std::string out = (p.kind == PatchKind::Rotated ? std::string("rotated") : std::string("unrotated")) +
                      " d=" + std::to_string(p.d) + " data=" + std::to_string(p.data.size()) + "\n";
    out += "data:";
    for (const auto &c : p.data) out += " " + c.str();
    out += "\n";
    for (const Stab *s : p.all_stabs()) {
        out += (s->is_x ? "X " : "Z ") + s->anc.str() + ":";
        for (const auto &c : s->support) out += " " + c.str();
        out += "\n";
    }
    out += "X_L:";
    for (const auto &c : p.logical_x) out += " " + c.str();
    out += "\nZ_L:";
    for (const auto &c : p.logical_z) out += " " + c.str();
    out += "\n";
    return out;
}

Coord fold_reflect(Coord c) { return Coord{c.y, c.x}; }

FoldStructure fold_structure(const Patch &p) {
    if (p.kind != PatchKind::Unrotated)
        throw std::invalid_argument("fold structure requires an unrotated patch");
    FoldStructure f;
    for (const auto &c : p.data) {
        if (c.x == c.y) f.diagonal.push_back(c);
        else if (c.y < c.x) f.pairs.push_back({c, fold_reflect(c)});
    }
    std::sort(f.diagonal.begin(), f.diagonal.end(), coord_less);
    std::sort(f.pairs.begin(), f.pairs.end(),
              [](const auto &a, const auto &b) { return coord_less(a.first, b.first); });
    return f;
}

std::vector<TransversalFactor> transversal_factors(const Patch &p, char which) {
    FoldStructure f = fold_structure(p);
    std::vector<TransversalFactor> out;
    for (const auto &c : f.diagonal) {
        TransversalFactor t;
        t.a = c;
        if (which == 'H') t.kind = TransversalFactor::SingleH;
        else t.kind = (as_int(c.x) % 2 == 0) ? TransversalFactor::SingleHXY
                                             : TransversalFactor::SingleHXYZ;
        out.push_back(t);
    }
    for (const auto &[b, c] : f.pairs) {
        TransversalFactor t;
        t.kind = which == 'H' ? TransversalFactor::PairSwapHH : TransversalFactor::PairCZ;
        t.a = b;
        t.b = c;
        out.push_back(t);
    }
    return out;
}

std::vector<std::vector<SeGate>> se_schedule(const Patch &p) {
    struct Off { int dx, dy; };
    std::vector<Off> x_order, z_order;
    if (p.kind == PatchKind::Rotated) {
        x_order = {{-1, -1}, {1, -1}, {-1, 1}, {1, 1}};
        z_order = {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}};
    } else {
        // same W,N,S,E order for both check types: keeps every data qubit's
        // X-check and Z-check touches in disjoint layers on both sublattices
        x_order = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
        z_order = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
    }
    std::vector<std::vector<SeGate>> layers(4);
    for (const Stab *s : p.all_stabs()) {
        const auto &order = s->is_x ? x_order : z_order;
        for (const auto &c : s->support) {
            int dx = int(as_int(c.x) - as_int(s->anc.x));
            int dy = int(as_int(c.y) - as_int(s->anc.y));
            size_t layer = order.size();
            for (size_t k = 0; k < order.size(); k++)
                if (order[k].dx == dx && order[k].dy == dy) { layer = k; break; }
            if (layer == order.size()) throw std::logic_error("support offset not in schedule");
            layers[layer].push_back({s->anc, c, s->is_x});
        }
    }
    return layers;
}

MidCycle mid_cycle_group(const Patch &rotated) {
    if (rotated.kind != PatchKind::Rotated)
        throw std::invalid_argument("mid-cycle analysis requires a rotated patch");
    MidCycle mc;
    mc.shift = mk(1, 1);
    mc.unrot = build_patch(PatchKind::Unrotated, rotated.d);

    mc.qubits = rotated.data;
    for (const Stab *s : rotated.all_stabs()) mc.qubits.push_back(s->anc);
    std::sort(mc.qubits.begin(), mc.qubits.end(), coord_less);
    size_t n = mc.qubits.size();
    auto idx = [&](Coord c) {
        auto it = std::lower_bound(mc.qubits.begin(), mc.qubits.end(), c, coord_less);
        if (it == mc.qubits.end() || !(*it == c)) throw std::logic_error("qubit not found");
        return int(it - mc.qubits.begin());
    };

    // generators before the half round: patch stabilizers + prepped ancillas
    for (const Stab *s : rotated.all_stabs()) {
        PauliString g(n);
        for (const auto &c : s->support) (s->is_x ? g.x : g.z).set(size_t(idx(c)), true);
        mc.group.push_back(g);
    }
    for (const Stab *s : rotated.all_stabs())
        mc.group.push_back(PauliString::single(n, size_t(idx(s->anc)), s->is_x ? 'X' : 'Z'));
    mc.logical_x = PauliString(n);
    for (const auto &c : rotated.logical_x) mc.logical_x.x.set(size_t(idx(c)), true);
    mc.logical_z = PauliString(n);
    for (const auto &c : rotated.logical_z) mc.logical_z.z.set(size_t(idx(c)), true);

    auto layers = se_schedule(rotated);
    std::set<int> touched;
    for (size_t l = 0; l < 2; l++) {
        for (const auto &g : layers[l]) {
            int anc = idx(g.anc), dat = idx(g.data);
            std::vector<int> qs = g.anc_is_control ? std::vector<int>{anc, dat}
                                                   : std::vector<int>{dat, anc};
            for (auto &gen : mc.group) gen = conjugate_gate(Op::CX, qs, gen);
            mc.logical_x = conjugate_gate(Op::CX, qs, mc.logical_x);
            mc.logical_z = conjugate_gate(Op::CX, qs, mc.logical_z);
            touched.insert(anc);
        }
    }

    // code qubits: data plus interior (weight-4) check ancillas
    mc.code_qubits = rotated.data;
    for (const Stab *s : rotated.all_stabs())
        if (s->support.size() == 4) mc.code_qubits.push_back(s->anc);
    std::sort(mc.code_qubits.begin(), mc.code_qubits.end(), coord_less);

    for (const Stab *s : rotated.all_stabs())
        if (!touched.count(idx(s->anc)))
            mc.fresh_singles.push_back({s->anc, s->is_x ? 'X' : 'Z'});
    return mc;
}

ExpansionMap expansion_map(const Patch &source, int d2) {
    if (d2 < source.d) throw std::invalid_argument("target distance below source");
    ExpansionMap e;
    e.source = source;
    e.target = build_patch(source.kind, d2);
    int64_t src_max = source.kind == PatchKind::Unrotated ? 2 * source.d - 2 : 2 * source.d - 1;
    for (const auto &c : e.target.data) {
        if (source.index_of(c) >= 0) continue;
        char basis = (Frac(src_max) < c.y) ? 'X' : 'Z';
        e.new_bases.push_back({c, basis});
    }
    return e;
}

}  // namespace cultivar
