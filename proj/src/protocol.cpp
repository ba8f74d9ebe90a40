#include "cultivar/protocol.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>

#include "cultivar/bits.h"
#include "cultivar/tableau.h"

namespace cultivar {

namespace {

Coord cadd(Coord c, Frac dx, Frac dy) { return Coord{c.x + dx, c.y + dy}; }
Coord cshift(Coord c, Coord off) { return Coord{c.x + off.x, c.y + off.y}; }

Coord centroid(const std::vector<Coord> &cs) {
    Frac sx(0), sy(0);
    for (const Coord &c : cs) { sx = sx + c.x; sy = sy + c.y; }
    int64_t n = int64_t(cs.size());
    return Coord{Frac(sx.num, sx.den * n), Frac(sy.num, sy.den * n)};
}

double dist2(Coord a, Coord b) {
    double dx = a.x.to_double() - b.x.to_double();
    double dy = a.y.to_double() - b.y.to_double();
    return dx * dx + dy * dy;
}

// Greedy layering under the one-use-per-tick rule. Items keep their order
// inside a layer.
std::vector<std::vector<size_t>> pack_layers(const std::vector<std::vector<int>> &uses) {
    // A gate that touches a qubit someone earlier touched goes strictly after
    // that gate's layer, so non-commuting neighbours keep their order.
    std::vector<std::vector<size_t>> layers;
    std::map<int, size_t> last;
    for (size_t i = 0; i < uses.size(); i++) {
        size_t l = 0;
        for (int q : uses[i]) {
            auto it = last.find(q);
            if (it != last.end() && it->second + 1 > l) l = it->second + 1;
        }
        if (l == layers.size()) layers.emplace_back();
        layers[l].push_back(i);
        for (int q : uses[i]) last[q] = l;
    }
    return layers;
}

// Balanced binary tree over a coordinate list; node 0 is the root, parent of
// node i is (i-1)/2. The root is the entry nearest the centroid.
struct ParityTree {
    std::vector<Coord> nodes;
    std::vector<std::pair<int, int>> edges;  // (parent index, child index), shallow first
};

ParityTree build_tree(std::vector<Coord> cs) {
    std::sort(cs.begin(), cs.end());
    Coord mid = centroid(cs);
    size_t best = 0;
    for (size_t i = 1; i < cs.size(); i++)
        if (dist2(cs[i], mid) < dist2(cs[best], mid)) best = i;
    std::rotate(cs.begin(), cs.begin() + best, cs.begin() + best + 1);
    ParityTree t;
    t.nodes = cs;
    for (size_t i = 1; i < cs.size(); i++)
        t.edges.push_back({int((i - 1) / 2), int(i)});
    return t;
}

char variant_fold(Variant v) { return v == Variant::H ? 'H' : 'Y'; }

}  // namespace

void validate_config(const ProtocolConfig &cfg) {
    auto bad = [](const std::string &m) { throw std::invalid_argument(m); };
    if (cfg.d1 != 2 && cfg.d1 != 3 && cfg.d1 != 5) bad("d1 must be 2, 3 or 5");
    if (cfg.d2 < cfg.d1) bad("d2 must be at least d1");
    if (cfg.rounds < 0) bad("rounds must be nonnegative");
    if (cfg.d2 > cfg.d1 && cfg.rounds < 1) bad("expansion needs at least one round");
    if (cfg.variant == Variant::H && cfg.patch == PatchKind::Rotated)
        bad("the fold-H variant needs an unrotated patch");
    if (cfg.variant == Variant::CX) {
        if (cfg.patch != PatchKind::Rotated) bad("the CX variant runs on rotated patches");
        if (cfg.style != CheckStyle::Kickback) bad("the CX variant checks by GHZ kickback");
        if (cfg.d2 != cfg.d1) bad("the CX variant does not expand");
        if (cfg.rounds != 0) bad("the CX variant has no post-expansion rounds");
        if (cfg.final_mode == FinalMode::Transversal)
            bad("the CX variant ends with None or PerfectPair");
        if (cfg.wrong_input) bad("wrong_input is not defined for the CX variant");
    } else {
        if (cfg.final_mode == FinalMode::PerfectPair)
            bad("PerfectPair is a CX-variant final");
        if (cfg.style == CheckStyle::Kickback && cfg.patch == PatchKind::Rotated)
            bad("kickback checks are only laid out for unrotated patches");
    }
    if (cfg.wrong_input && !cfg.clifford_proxy)
        bad("wrong_input is a proxy diagnostic");
    if (cfg.noise.p < 0 || cfg.noise.p > 1) bad("p out of range");
    if (cfg.noise.e < 0 || cfg.noise.e > 1) bad("e out of range");
    if (cfg.noise.p3q > 1) bad("p3q out of range");
}

// ---------------------------------------------------------------------------
// unitary growth: measure nothing, entangle a prepared fragment onto the
// boundary with one CX layer

namespace {

struct GrowthPlan {
    std::vector<Coord> new_x, new_z;                       // reset bases
    std::vector<std::vector<std::pair<Coord, Coord>>> fans;  // CX layers (control, target)
    std::vector<Coord> fix_x, fix_z;                       // sign-fix Paulis after prep
    std::vector<std::pair<Coord, Coord>> merge;            // CX (new control -> old target)
};

PauliString embed(const Patch &big, const std::vector<Coord> &supp, char pauli) {
    PauliString p(big.data.size());
    for (const Coord &c : supp) {
        int i = big.index_of(c);
        if (i < 0) throw std::logic_error("embed: coord not in patch");
        if (pauli == 'X') p.x.set(size_t(i), true);
        else p.z.set(size_t(i), true);
    }
    return p;
}

// Splits p (over big.data indices) into old/new parts; the phase rides on the
// new part. X and Z supports never overlap for the CSS strings seen here.
void split_parts(const PauliString &p, const std::vector<char> &is_old,
                 PauliString &po, PauliString &pn) {
    size_t n = is_old.size();
    po = PauliString(n);
    pn = PauliString(n);
    for (size_t i = 0; i < n; i++) {
        if (p.x.get(i)) (is_old[i] ? po : pn).x.set(i, true);
        if (p.z.get(i)) (is_old[i] ? po : pn).z.set(i, true);
    }
    pn.phase = p.phase;
}

BitVec sympl(const PauliString &p) {
    size_t n = p.num_qubits();
    BitVec v(2 * n);
    for (size_t i = 0; i < n; i++) {
        if (p.x.get(i)) v.set(i, true);
        if (p.z.get(i)) v.set(n + i, true);
    }
    return v;
}

GrowthPlan solve_growth(const Patch &small, const Patch &big) {
    size_t n = big.data.size();
    std::vector<char> is_old(n, 0);
    for (const Coord &c : small.data) is_old[size_t(big.index_of(c))] = 1;

    // old group and logicals embedded in the big index space
    std::vector<PauliString> old_gens;
    for (const Stab *s : small.all_stabs())
        old_gens.push_back(embed(big, s->support, s->is_x ? 'X' : 'Z'));
    PauliString lx_old = embed(big, small.logical_x, 'X');
    PauliString lz_old = embed(big, small.logical_z, 'Z');

    Frac xmax(0), ymax(0);
    for (const Coord &c : small.data) {
        if (xmax < c.x) xmax = c.x;
        if (ymax < c.y) ymax = c.y;
    }

    // candidate merge layers: copy the rightmost column and topmost row onto
    // their +2 neighbors, with four ways to treat the shared corner
    for (int corner = 0; corner < 4; corner++) {
        std::vector<std::pair<Coord, Coord>> merge;
        bool feasible = true;
        for (const Coord &q : small.data) {
            bool at_corner = q.x == xmax && q.y == ymax;
            bool use_x = q.x == xmax && (!at_corner || corner == 0 || corner == 2);
            bool use_y = q.y == ymax && (!at_corner || corner == 1 || corner == 2);
            if (at_corner && corner == 3) continue;
            if (use_x) {
                Coord src = cadd(q, Frac(2), Frac(0));
                if (big.index_of(src) >= 0) merge.push_back({src, q});
            }
            if (use_y) {
                Coord src = cadd(q, Frac(0), Frac(2));
                if (big.index_of(src) >= 0) merge.push_back({src, q});
            }
        }
        if (merge.empty()) continue;

        auto conj_back = [&](PauliString p) {
            // M^dag p M for the merge layer M (CX is self-inverse)
            for (auto it = merge.rbegin(); it != merge.rend(); ++it)
                p = conjugate_gate(Op::CX, {big.index_of(it->first), big.index_of(it->second)}, p);
            return p;
        };

        // collect fragment stabilizer constraints
        std::vector<PauliString> frag;
        Gf2Basis frag_basis;
        auto want = [&](PauliString pn, int sign) {
            if (sign < 0) pn.phase ^= 2;
            if (pn.is_identity()) {
                if (pn.phase != 0) feasible = false;
                return;
            }
            for (const PauliString &g : frag)
                if (!g.commutes(pn)) { feasible = false; return; }
            if (frag_basis.add(sympl(pn))) {
                frag.push_back(pn);
            } else if (group_sign(frag, pn) != 1) {
                feasible = false;
            }
        };
        // factor = identity for stabilizers, the old logical for logicals: the
        // old part must equal factor * (product of old stabilizers)
        auto require = [&](const PauliString &target, const PauliString *factor) {
            PauliString q = conj_back(target);
            PauliString po, pn;
            split_parts(q, is_old, po, pn);
            if (factor) po = po * *factor;
            int sgn = po.is_identity() ? (po.phase == 0 ? 1 : -1) : group_sign(old_gens, po);
            if (sgn == 0) { feasible = false; return; }
            want(pn, sgn);
        };

        for (const Stab *s : big.all_stabs()) {
            require(big.stab_pauli(*s), nullptr);
            if (!feasible) break;
        }
        if (feasible) require(big.logical_pauli('X'), &lx_old);
        if (feasible) require(big.logical_pauli('Z'), &lz_old);
        if (!feasible) continue;

        // complete to a full-rank product-friendly set with singles
        std::vector<size_t> new_idx;
        for (size_t i = 0; i < n; i++)
            if (!is_old[i]) new_idx.push_back(i);
        for (size_t i : new_idx) {
            for (char b : {'Z', 'X'}) {
                PauliString s = PauliString::single(n, i, b);
                bool comm = true;
                for (const PauliString &g : frag)
                    if (!g.commutes(s)) { comm = false; break; }
                if (comm && frag_basis.add(sympl(s))) { frag.push_back(s); break; }
            }
        }
        if (frag.size() != new_idx.size()) continue;

        // CSS split; prepare X generators from |+>/|0> products plus CX fans
        std::vector<PauliString> gx, gz;
        for (const PauliString &g : frag) {
            if (g.x.any() && g.z.any()) { feasible = false; break; }
            (g.x.any() ? gx : gz).push_back(g);
        }
        if (!feasible) continue;

        Gf2Basis xb;
        std::vector<PauliString> gx_red;
        for (PauliString g : gx) {
            BitVec row = g.x;
            for (size_t i = 0; i < xb.rows.size(); i++)
                if (row.get(xb.pivots[i])) { row ^= xb.rows[i]; g = g * gx_red[i]; }
            if (!row.any()) { feasible = false; break; }  // dependent X gens already merged
            xb.rows.push_back(row);
            xb.pivots.push_back(row.lowest_set());
            g.x = row;  // reduced support
            gx_red.push_back(g);
        }
        if (!feasible) continue;

        GrowthPlan plan;
        std::set<size_t> xinit;
        for (int p : xb.pivots) xinit.insert(size_t(p));
        for (size_t i : new_idx)
            (xinit.count(i) ? plan.new_x : plan.new_z).push_back(big.data[i]);

        std::vector<std::vector<int>> uses;
        std::vector<std::pair<Coord, Coord>> fan_edges;
        for (size_t k = 0; k < gx_red.size(); k++) {
            int piv = xb.pivots[k];
            for (int i : gx_red[k].x.set_bits()) {
                if (i == piv) continue;
                fan_edges.push_back({big.data[size_t(piv)], big.data[size_t(i)]});
                uses.push_back({piv, i});
            }
        }
        for (const auto &layer : pack_layers(uses)) {
            plan.fans.emplace_back();
            for (size_t e : layer) plan.fans.back().push_back(fan_edges[e]);
        }

        // verify on a fragment tableau and solve sign fixes
        {
            std::map<size_t, size_t> sub;  // big index -> fragment index
            for (size_t k = 0; k < new_idx.size(); k++) sub[new_idx[k]] = k;
            Tableau t(new_idx.size());
            for (size_t i : new_idx)
                if (xinit.count(i)) t.reset_x(int(sub[i]));
            for (const auto &layer : plan.fans)
                for (const auto &e : layer)
                    t.apply(Op::CX, {int(sub[size_t(big.index_of(e.first))]),
                                     int(sub[size_t(big.index_of(e.second))])});
            auto shrink = [&](const PauliString &g) {
                PauliString s(new_idx.size());
                s.phase = g.phase;
                for (size_t i : g.x.set_bits()) s.x.set(sub[size_t(i)], true);
                for (size_t i : g.z.set_bits()) s.z.set(sub[size_t(i)], true);
                return s;
            };
            std::vector<size_t> bad_x, bad_z;  // failing gen indices
            std::vector<PauliString> gz_small;
            for (size_t k = 0; k < gz.size(); k++) {
                gz_small.push_back(shrink(gz[k]));
                int e = t.expectation(gz_small.back());
                if (e == 0) { feasible = false; break; }
                if (e < 0) bad_z.push_back(k);
            }
            if (!feasible) continue;
            for (const PauliString &g : gx_red) {
                if (t.expectation(shrink(g)) != 1) { feasible = false; break; }
            }
            if (!feasible) continue;
            if (!bad_z.empty()) {
                // X flips on chosen qubits toggle exactly the failing Z gens
                std::vector<BitVec> rows;
                for (size_t q = 0; q < new_idx.size(); q++) {
                    BitVec r(gz_small.size());
                    for (size_t k = 0; k < gz_small.size(); k++)
                        if (gz_small[k].z.get(q)) r.set(k, true);
                    rows.push_back(r);
                }
                BitVec bvec(gz_small.size());
                for (size_t k : bad_z) bvec.set(k, true);
                bool ok = false;
                std::vector<int> w = gf2_solve(rows, bvec, &ok);
                if (!ok) continue;
                for (int q : w) plan.fix_x.push_back(big.data[new_idx[size_t(q)]]);
            }
            (void)bad_x;
        }

        plan.merge = merge;
        return plan;
    }
    throw std::logic_error("no feasible growth merge pattern");
}

// ---------------------------------------------------------------------------
// circuit builder: emits the true circuit and its Clifford proxy as
// structural twins, then annotates from an exact record-dependency analysis
// of the proxy

enum class Purpose { SeCheck, CheckMid, CheckFlag, GhzZero, FinalData };
enum class Side { Both, TrueOnly, ProxyOnly };

struct MeasEvent {
    int rec = 0;
    Purpose purpose = Purpose::SeCheck;
    Coord key;
    int prev = -1;
    bool soft = false;
    bool first_round = false;
    bool rnd_t = false, rnd_p = false;  // random in round 1 of the true/proxy circuit
    bool first_mid = false;
    size_t ti = 0, pi = 0;  // index of the measuring instruction per circuit
};

struct Pending {
    Op op = Op::POSTSELECT;
    double arg = 0;
    std::vector<int> recs;
    size_t after_t = 0, after_p = 0;
    Side side = Side::Both;
    bool must_be_quiet = false;
};

struct MSpec {
    int q;
    Coord key;
    bool rnd_t = false, rnd_p = false;
};

struct PatchAt {
    const Patch *p;
    Coord off;
    char init_t = 'Z', init_p = 'Z';  // data reset basis per circuit
};

struct FactorPlan {
    struct F {
        TransversalFactor::Kind kind;
        Coord a, b;  // live coords
        bool pair = false;
        bool active = false;
        Coord base;
    };
    std::vector<F> fs;
};

FactorPlan solve_factors(const Patch &canon, char which, Coord shift) {
    std::vector<TransversalFactor> tf = transversal_factors(canon, which);
    size_t nd = canon.data.size();
    std::vector<BitVec> rows;
    for (const TransversalFactor &f : tf) {
        BitVec r(nd);
        r.set(size_t(canon.index_of(f.a)), true);
        if (f.kind == TransversalFactor::PairCZ || f.kind == TransversalFactor::PairSwapHH)
            r.set(size_t(canon.index_of(f.b)), true);
        rows.push_back(r);
    }
    for (const Stab &s : canon.x_stabs) {
        BitVec r(nd);
        for (const Coord &c : s.support) r.set(size_t(canon.index_of(c)), true);
        rows.push_back(r);
    }
    BitVec b(nd);
    for (const Coord &c : canon.logical_x) b.set(size_t(canon.index_of(c)), true);
    bool ok = false;
    std::vector<int> used = gf2_solve(rows, b, &ok);
    if (!ok) throw std::logic_error("no transversal-factor cover of the logical");
    std::set<int> act(used.begin(), used.end());

    FactorPlan fp;
    for (size_t i = 0; i < tf.size(); i++) {
        FactorPlan::F f;
        f.kind = tf[i].kind;
        f.pair = f.kind == TransversalFactor::PairCZ || f.kind == TransversalFactor::PairSwapHH;
        f.a = cshift(tf[i].a, shift);
        f.b = cshift(tf[i].b, shift);
        f.active = act.count(int(i)) > 0;
        f.base = f.pair ? Coord{Frac(f.a.x.num * f.b.x.den + f.b.x.num * f.a.x.den,
                                     2 * f.a.x.den * f.b.x.den),
                                Frac(f.a.y.num * f.b.y.den + f.b.y.num * f.a.y.den,
                                     2 * f.a.y.den * f.b.y.den)}
                        : f.a;
        fp.fs.push_back(f);
    }
    return fp;
}

struct Builder {
    const ProtocolConfig &cfg;
    Circuit tc, pc;
    std::map<Coord, int> ids;
    std::vector<Coord> id_coords;
    std::set<Coord> reserved;  // frame coords never reused for check ancillas
    int mcount = 0;
    std::vector<MeasEvent> events;
    std::vector<Pending> pendings;
    std::map<Coord, int> last_rec;
    std::map<Coord, int> r1_recs;
    bool soft_started = false;
    bool use_lambda = true;
    int obs_next = 0;
    int soft_rec = -1;
    size_t soft_ti = 0, soft_pi = 0;

    explicit Builder(const ProtocolConfig &c) : cfg(c) {}

    int qid(Coord c) {
        auto it = ids.find(c);
        if (it != ids.end()) return it->second;
        int id = int(id_coords.size());
        ids.emplace(c, id);
        id_coords.push_back(c);
        return id;
    }
    std::vector<int> qids(const std::vector<Coord> &cs, Coord off = {Frac(0), Frac(0)}) {
        std::vector<int> out;
        for (const Coord &c : cs) out.push_back(qid(cshift(c, off)));
        return out;
    }

    void register_patch(const Patch &p, Coord off) {
        for (const Coord &c : p.data) {
            qid(cshift(c, off));
            reserved.insert(cshift(c, off));
        }
        std::vector<Coord> ancs;
        for (const Stab *s : p.all_stabs()) ancs.push_back(cshift(s->anc, off));
        std::sort(ancs.begin(), ancs.end());
        for (const Coord &c : ancs) {
            qid(c);
            reserved.insert(c);
        }
    }

    void raw(Circuit &c, Op op, std::vector<Target> tg, std::vector<double> args = {}) {
        Instruction ins;
        ins.op = op;
        ins.args = std::move(args);
        ins.targets = std::move(tg);
        c.append(std::move(ins));
    }
    static std::vector<Target> qt(const std::vector<int> &qs) {
        std::vector<Target> t;
        for (int q : qs) t.push_back(Target::qubit(q));
        return t;
    }
    void both(Op op, const std::vector<int> &qs, std::vector<double> args = {}) {
        raw(tc, op, qt(qs), args);
        raw(pc, op, qt(qs), args);
    }
    void split_op(Op t, Op p, const std::vector<int> &qs) {
        raw(tc, t, qt(qs));
        raw(pc, p, qt(qs));
    }
    void tick() { both(Op::TICK, {}); }

    std::vector<int> measure(Op mop, const std::vector<MSpec> &specs, Purpose purpose,
                             bool first_round = false, bool first_mid = false) {
        std::vector<int> qs;
        for (const MSpec &s : specs) qs.push_back(s.q);
        both(mop, qs);
        size_t ti = tc.instructions.size() - 1, pi = pc.instructions.size() - 1;
        std::vector<int> recs;
        for (const MSpec &s : specs) {
            MeasEvent e;
            e.rec = mcount++;
            e.purpose = purpose;
            e.key = s.key;
            e.soft = soft_started;
            e.first_round = first_round;
            e.rnd_t = s.rnd_t;
            e.rnd_p = s.rnd_p;
            e.first_mid = first_mid;
            e.ti = ti;
            e.pi = pi;
            auto it = last_rec.find(s.key);
            e.prev = it == last_rec.end() ? -1 : it->second;
            last_rec[s.key] = e.rec;
            if (first_round) r1_recs[s.key] = e.rec;
            recs.push_back(e.rec);
            events.push_back(e);
        }
        return recs;
    }

    Pending &pend(Op op, std::vector<int> recs, Side side, size_t ti, size_t pi) {
        Pending p;
        p.op = op;
        p.recs = std::move(recs);
        p.side = side;
        p.after_t = ti;
        p.after_p = pi;
        pendings.push_back(std::move(p));
        return pendings.back();
    }

    // ---- syndrome extraction ----

    void se_round(const std::vector<PatchAt> &ps, bool first_round,
                  const std::function<void()> &midblock = {}) {
        if (cfg.patch == PatchKind::Unrotated) {
            if (midblock) throw std::logic_error("mid-round checks need a rotated patch");
            se_half(ps, true, first_round);
            se_half(ps, false, first_round);
            return;
        }
        std::vector<int> xa, za;
        std::vector<MSpec> xs, zs;
        for (const PatchAt &pa : ps) {
            for (const Stab &s : pa.p->x_stabs) {
                Coord c = cshift(s.anc, pa.off);
                xa.push_back(qid(c));
                xs.push_back({qid(c), c, pa.init_t != 'X', pa.init_p != 'X'});
            }
            for (const Stab &s : pa.p->z_stabs) {
                Coord c = cshift(s.anc, pa.off);
                za.push_back(qid(c));
                zs.push_back({qid(c), c, pa.init_t != 'Z', pa.init_p != 'Z'});
            }
        }
        tick();
        both(Op::RX, xa);
        both(Op::R, za);
        for (int l = 0; l < 4; l++) {
            std::vector<int> tg;
            for (const PatchAt &pa : ps) {
                auto layers = se_schedule(*pa.p);
                for (const SeGate &g : layers[size_t(l)]) {
                    int a = qid(cshift(g.anc, pa.off)), d = qid(cshift(g.data, pa.off));
                    if (g.anc_is_control) { tg.push_back(a); tg.push_back(d); }
                    else { tg.push_back(d); tg.push_back(a); }
                }
            }
            tick();
            both(Op::CX, tg);
            if (l == 1 && midblock) midblock();
        }
        tick();
        measure(Op::MX, xs, Purpose::SeCheck, first_round);
        measure(Op::M, zs, Purpose::SeCheck, first_round);
    }

    void se_half(const std::vector<PatchAt> &ps, bool xhalf, bool first_round) {
        std::vector<int> ancs;
        std::vector<MSpec> specs;
        for (const PatchAt &pa : ps) {
            for (const Stab &s : (xhalf ? pa.p->x_stabs : pa.p->z_stabs)) {
                Coord c = cshift(s.anc, pa.off);
                ancs.push_back(qid(c));
                char det = xhalf ? 'X' : 'Z';
                specs.push_back({qid(c), c, pa.init_t != det, pa.init_p != det});
            }
        }
        tick();
        both(xhalf ? Op::RX : Op::R, ancs);
        for (int l = 0; l < 4; l++) {
            std::vector<int> tg;
            for (const PatchAt &pa : ps) {
                auto layers = se_schedule(*pa.p);
                for (const SeGate &g : layers[size_t(l)]) {
                    if (g.anc_is_control != xhalf) continue;
                    int a = qid(cshift(g.anc, pa.off)), d = qid(cshift(g.data, pa.off));
                    if (g.anc_is_control) { tg.push_back(a); tg.push_back(d); }
                    else { tg.push_back(d); tg.push_back(a); }
                }
            }
            if (tg.empty()) continue;
            tick();
            both(Op::CX, tg);
        }
        tick();
        measure(xhalf ? Op::MX : Op::M, specs, Purpose::SeCheck, first_round);
    }

    // classically controlled corrections that set the random-type round-1
    // stabilizers to +1; emitted into one circuit (the two sides fix
    // different types when their reset bases differ)
    void sign_fix(Circuit &c, const Patch &p, Coord off, char init) {
        const std::vector<Stab> &stabs = init == 'Z' ? p.x_stabs : p.z_stabs;
        Op gate = init == 'Z' ? Op::CZ : Op::CX;
        if (stabs.empty()) return;
        size_t ns = stabs.size();
        std::vector<BitVec> rows;
        for (const Coord &q : p.data) {
            BitVec r(ns);
            for (size_t i = 0; i < ns; i++)
                for (const Coord &sc : stabs[i].support)
                    if (sc == q) r.set(i, true);
            rows.push_back(r);
        }
        std::vector<std::pair<int, int>> gates;  // (rec, qubit)
        std::vector<std::vector<int>> uses;
        for (size_t i = 0; i < ns; i++) {
            BitVec e(ns);
            e.set(i, true);
            bool ok = false;
            std::vector<int> w = gf2_solve(rows, e, &ok);
            if (!ok) throw std::logic_error("sign fix unsolvable");
            auto it = r1_recs.find(cshift(stabs[i].anc, off));
            if (it == r1_recs.end()) throw std::logic_error("sign fix: missing round-1 record");
            for (int q : w) {
                gates.push_back({it->second, qid(cshift(p.data[size_t(q)], off))});
                uses.push_back({gates.back().second});
            }
        }
        for (const auto &layer : pack_layers(uses)) {
            raw(c, Op::TICK, {});
            std::vector<Target> tg;
            for (size_t g : layer) {
                tg.push_back(Target::rec(gates[g].first - mcount));
                tg.push_back(Target::qubit(gates[g].second));
            }
            raw(c, gate, tg);
        }
    }

    // ---- injection rotations ----

    void ladder_rot(const std::vector<Coord> &supp, Coord cc, bool x_ladder, Op rot) {
        int c = qid(cc);
        std::vector<int> qs;
        {
            std::vector<Coord> s = supp;
            std::sort(s.begin(), s.end());
            for (const Coord &q : s)
                if (q != cc) qs.push_back(qid(q));
        }
        for (int q : qs) {
            tick();
            both(Op::CX, x_ladder ? std::vector<int>{c, q} : std::vector<int>{q, c});
        }
        tick();
        split_op(rot, Op::I, {c});
        for (auto it = qs.rbegin(); it != qs.rend(); ++it) {
            tick();
            both(Op::CX, x_ladder ? std::vector<int>{c, *it} : std::vector<int>{*it, c});
        }
    }

    void rotations(const Patch &p) {
        if (cfg.variant == Variant::H) {
            // both rotations pivot on the corner shared by the two logicals
            Coord c{Frac(0), Frac(0)};
            bool found = false;
            for (const Coord &a : p.logical_x)
                for (const Coord &b : p.logical_z)
                    if (a == b) { c = a; found = true; }
            if (!found) throw std::logic_error("logicals do not intersect");
            ladder_rot(p.logical_x, c, true, Op::T_X);
            ladder_rot(p.logical_z, c, false, Op::S);
        } else {
            std::vector<Coord> supp = p.logical_z;
            std::sort(supp.begin(), supp.end());
            ladder_rot(supp, supp[supp.size() / 2], false, Op::T);
        }
    }

    // ---- check blocks ----

    Coord probe_anc(Coord base, std::set<Coord> &taken) {
        static const std::pair<int, int> offs[] = {{1, 1}, {3, 1}, {1, 3}, {3, 3},
                                                   {5, 1}, {1, 5}, {7, 1}, {1, 7}};
        for (const auto &[dx, dy] : offs) {
            Coord c = cadd(base, Frac(dx, 4), Frac(dy, 4));
            if (!reserved.count(c) && !taken.count(c)) {
                taken.insert(c);
                return c;
            }
        }
        throw std::logic_error("no free check-ancilla coordinate");
    }

    void ca_layer(const FactorPlan &fp, const std::vector<int> &anc) {
        tick();
        std::map<Op, std::vector<int>> t_ops, p_ops;
        for (size_t i = 0; i < fp.fs.size(); i++) {
            const FactorPlan::F &f = fp.fs[i];
            Op top;
            switch (f.kind) {
                case TransversalFactor::SingleH: top = Op::CH; break;
                case TransversalFactor::SingleHXY: top = Op::CHXY; break;
                case TransversalFactor::SingleHXYZ: top = Op::CHXYZ; break;
                case TransversalFactor::PairCZ: top = Op::CCZ; break;
                default: top = Op::CSWAPHH; break;
            }
            Op pop = f.pair ? (f.active ? Op::CXX : Op::I3) : (f.active ? Op::CX : Op::I2);
            auto push = [&](std::map<Op, std::vector<int>> &m, Op o) {
                m[o].push_back(anc[i]);
                m[o].push_back(qid(f.a));
                if (f.pair) m[o].push_back(qid(f.b));
            };
            push(t_ops, top);
            push(p_ops, pop);
        }
        for (const auto &[op, qs] : t_ops) raw(tc, op, qt(qs));
        for (const auto &[op, qs] : p_ops) raw(pc, op, qt(qs));
    }

    void fan(const ParityTree &t, const std::vector<int> &node_ids, bool shallow_first) {
        std::vector<std::pair<int, int>> es = t.edges;
        if (!shallow_first) std::reverse(es.begin(), es.end());
        std::vector<std::vector<int>> uses;
        for (const auto &[p, c] : es) uses.push_back({node_ids[size_t(p)], node_ids[size_t(c)]});
        for (const auto &layer : pack_layers(uses)) {
            tick();
            std::vector<int> tg;
            for (size_t e : layer) {
                tg.push_back(uses[e][0]);
                tg.push_back(uses[e][1]);
            }
            both(Op::CX, tg);
        }
    }

    void double_check(const FactorPlan &fp) {
        std::set<Coord> taken;
        std::vector<Coord> acs;
        std::vector<int> anc;
        for (const FactorPlan::F &f : fp.fs) acs.push_back(probe_anc(f.base, taken));
        for (const Coord &c : acs) anc.push_back(qid(c));
        tick();
        both(Op::RX, anc);
        ca_layer(fp, anc);
        ParityTree t = build_tree(acs);
        std::vector<int> node_ids;
        for (const Coord &c : t.nodes) node_ids.push_back(qid(c));
        fan(t, node_ids, false);
        tick();
        measure(Op::MX, {{node_ids[0], t.nodes[0]}}, Purpose::CheckMid);
        tick();
        both(Op::RX, {node_ids[0]});
        fan(t, node_ids, true);
        ca_layer(fp, anc);
        tick();
        std::vector<MSpec> flags;
        for (size_t i = 0; i < acs.size(); i++) flags.push_back({anc[i], acs[i]});
        measure(Op::MX, flags, Purpose::CheckFlag);
    }

    void kickback_check(const std::vector<Coord> &ghz, const std::function<void(const std::vector<int> &)> &ca,
                        bool first_mid) {
        ParityTree t = build_tree(ghz);
        std::vector<int> node_ids;
        for (const Coord &c : t.nodes) node_ids.push_back(qid(c));
        std::vector<int> others(node_ids.begin() + 1, node_ids.end());
        tick();
        both(Op::RX, {node_ids[0]});
        if (!others.empty()) both(Op::R, others);
        fan(t, node_ids, true);
        // controlled block, ghz qubits in tree-node order
        ca(node_ids);
        fan(t, node_ids, false);
        tick();
        measure(Op::MX, {{node_ids[0], t.nodes[0]}}, Purpose::CheckMid, false, first_mid);
        std::vector<MSpec> zs;
        for (size_t i = 1; i < t.nodes.size(); i++) zs.push_back({node_ids[i], t.nodes[i]});
        if (!zs.empty()) measure(Op::M, zs, Purpose::GhzZero);
    }

    void check_block(const Patch &cur) {
        char which = variant_fold(cfg.variant);
        if (cfg.patch == PatchKind::Rotated) {
            MidCycle mc = mid_cycle_group(cur);
            FactorPlan fp = solve_factors(mc.unrot, which, mc.shift);
            se_round({{&cur, Coord{Frac(0), Frac(0)}, 'Z', 'Z'}}, false,
                     [&]() { double_check(fp); });
            return;
        }
        FactorPlan fp = solve_factors(cur, which, Coord{Frac(0), Frac(0)});
        if (cfg.style == CheckStyle::DoubleCheck) {
            double_check(fp);
            return;
        }
        // kickback at rest: GHZ qubits borrow the idle syndrome ancillas
        std::vector<Coord> free_anc;
        for (const Stab *s : cur.all_stabs()) free_anc.push_back(s->anc);
        std::vector<Coord> ghz;
        std::set<size_t> used;
        for (const FactorPlan::F &f : fp.fs) {
            size_t best = SIZE_MAX;
            for (size_t i = 0; i < free_anc.size(); i++) {
                if (used.count(i)) continue;
                if (best == SIZE_MAX || dist2(free_anc[i], f.base) < dist2(free_anc[best], f.base))
                    best = i;
            }
            if (best == SIZE_MAX) throw std::logic_error("not enough idle ancillas for the GHZ");
            used.insert(best);
            ghz.push_back(free_anc[best]);
        }
        // ghz[i] drives factor i; the tree reorders, so map back by coord
        kickback_check(ghz, [&](const std::vector<int> &nodes) {
            std::map<int, size_t> which_factor;
            for (size_t i = 0; i < ghz.size(); i++) which_factor[qid(ghz[i])] = i;
            tick();
            std::map<Op, std::vector<int>> t_ops, p_ops;
            for (int g : nodes) {
                const FactorPlan::F &f = fp.fs[which_factor[g]];
                Op top;
                switch (f.kind) {
                    case TransversalFactor::SingleH: top = Op::CH; break;
                    case TransversalFactor::SingleHXY: top = Op::CHXY; break;
                    case TransversalFactor::SingleHXYZ: top = Op::CHXYZ; break;
                    case TransversalFactor::PairCZ: top = Op::CCZ; break;
                    default: top = Op::CSWAPHH; break;
                }
                Op pop = f.pair ? (f.active ? Op::CXX : Op::I3) : (f.active ? Op::CX : Op::I2);
                auto push = [&](std::map<Op, std::vector<int>> &m, Op o) {
                    m[o].push_back(g);
                    m[o].push_back(qid(f.a));
                    if (f.pair) m[o].push_back(qid(f.b));
                };
                push(t_ops, top);
                push(p_ops, pop);
            }
            for (const auto &[op, qs] : t_ops) raw(tc, op, qt(qs));
            for (const auto &[op, qs] : p_ops) raw(pc, op, qt(qs));
        }, false);
    }

    // ---- growth and expansion ----

    void grow_unitary(Patch &cur) {
        Patch big = build_patch(cfg.patch, 5);
        GrowthPlan plan = solve_growth(cur, big);
        tick();
        if (!plan.new_x.empty()) both(Op::RX, qids(plan.new_x));
        if (!plan.new_z.empty()) both(Op::R, qids(plan.new_z));
        for (const auto &layer : plan.fans) {
            tick();
            std::vector<int> tg;
            for (const auto &[c, t] : layer) {
                tg.push_back(qid(c));
                tg.push_back(qid(t));
            }
            both(Op::CX, tg);
        }
        if (!plan.fix_x.empty() || !plan.fix_z.empty()) {
            tick();
            if (!plan.fix_x.empty()) both(Op::X, qids(plan.fix_x));
            if (!plan.fix_z.empty()) both(Op::Z, qids(plan.fix_z));
        }
        tick();
        std::vector<int> tg;
        for (const auto &[c, t] : plan.merge) {
            tg.push_back(qid(c));
            tg.push_back(qid(t));
        }
        both(Op::CX, tg);
        cur = big;
    }

    void expand(Patch &cur) {
        ExpansionMap em = expansion_map(cur, cfg.d2);
        soft_rec = mcount;
        soft_ti = tc.instructions.size();
        soft_pi = pc.instructions.size();
        soft_started = true;
        std::vector<Coord> xs, zs;
        for (const auto &[c, b] : em.new_bases) (b == 'X' ? xs : zs).push_back(c);
        tick();
        if (!xs.empty()) both(Op::RX, qids(xs));
        if (!zs.empty()) both(Op::R, qids(zs));
        cur = em.target;
    }

    // ---- finals ----

    void final_transversal(const Patch &cur) {
        tick();
        std::vector<MSpec> specs;
        for (const Coord &c : cur.data) specs.push_back({qid(c), c});
        std::vector<int> recs = measure(Op::MX, specs, Purpose::FinalData);
        std::map<Coord, int> rec_of;
        for (size_t i = 0; i < cur.data.size(); i++) rec_of[cur.data[i]] = recs[i];
        size_t ti = tc.instructions.size() - 1, pi = pc.instructions.size() - 1;
        Op dop = soft_started ? Op::DETECTOR_SOFT : Op::POSTSELECT;
        for (const Stab &s : cur.x_stabs) {
            std::vector<int> rs;
            for (const Coord &c : s.support) rs.push_back(rec_of.at(c));
            auto it = last_rec.find(s.anc);
            if (it == last_rec.end())
                throw std::logic_error("final stabilizer has no prior syndrome record");
            rs.push_back(it->second);
            pend(dop, rs, Side::Both, ti, pi).must_be_quiet = true;
        }
        if (cfg.clifford_proxy && !cfg.wrong_input) {
            std::vector<int> rs;
            for (const Coord &c : cur.logical_x) rs.push_back(rec_of.at(c));
            Pending &p = pend(Op::OBSERVABLE_INCLUDE, rs, Side::ProxyOnly, ti, pi);
            p.arg = obs_next++;
        }
    }

    // ---- stage machines ----

    void finish_meta() {
        for (Circuit *c : {&tc, &pc}) {
            for (size_t i = 0; i < id_coords.size(); i++) c->set_coord(int(i), id_coords[i]);
            c->metadata["d1"] = std::to_string(cfg.d1);
            c->metadata["d2"] = std::to_string(cfg.d2);
            c->metadata["rounds"] = std::to_string(cfg.rounds);
            c->metadata["variant"] = cfg.variant == Variant::H ? "H"
                                     : cfg.variant == Variant::H_XY ? "H_XY" : "CX";
        }
        tc.metadata["proxy"] = "0";
        pc.metadata["proxy"] = "1";
        int srec = soft_started ? soft_rec : mcount;
        tc.metadata["soft_start_rec"] = std::to_string(srec);
        pc.metadata["soft_start_rec"] = std::to_string(srec);
        tc.metadata["soft_start_instr"] =
            std::to_string(soft_started ? soft_ti : tc.instructions.size());
        pc.metadata["soft_start_instr"] =
            std::to_string(soft_started ? soft_pi : pc.instructions.size());
    }

    void run_h(bool injection_only) {
        int inj_d = std::min(cfg.d1, 3);
        Patch frame = build_patch(cfg.patch, cfg.d2);
        register_patch(frame, Coord{Frac(0), Frac(0)});
        Patch cur = build_patch(cfg.patch, inj_d);
        char init_t = cfg.variant == Variant::H ? 'Z' : 'X';
        char init_p = 'X';
        split_op(init_t == 'Z' ? Op::R : Op::RX, Op::RX, qids(cur.data));
        PatchAt at{&cur, Coord{Frac(0), Frac(0)}, init_t, init_p};
        se_round({at}, true);
        sign_fix(tc, cur, at.off, init_t);
        sign_fix(pc, cur, at.off, init_p);
        rotations(cur);
        se_round({at}, false);
        if (injection_only) { finish_meta(); return; }
        if (cfg.wrong_input) {
            tick();
            both(Op::Z, qids(cur.logical_z));
        }
        check_block(cur);
        if (cfg.d1 == 5) {
            grow_unitary(cur);
            se_round({{&cur, at.off, 'Z', 'Z'}}, false);
            check_block(cur);
        }
        if (cfg.d2 > cfg.d1) expand(cur);
        for (int r = 0; r < cfg.rounds; r++) se_round({{&cur, at.off, 'Z', 'Z'}}, false);
        if (cfg.final_mode == FinalMode::Transversal) final_transversal(cur);
        finish_meta();
    }

    void run_cx(bool injection_only) {
        int d = cfg.d1;
        Patch P = build_patch(PatchKind::Rotated, d);
        Coord off1{Frac(0), Frac(0)}, off2{Frac(4 * d), Frac(0)};
        register_patch(P, off1);
        register_patch(P, off2);
        both(Op::RX, qids(P.data, off1));
        both(Op::R, qids(P.data, off2));
        PatchAt a1{&P, off1, 'X', 'X'}, a2{&P, off2, 'Z', 'Z'};
        se_round({a1, a2}, true);
        sign_fix(tc, P, off1, 'X');
        sign_fix(tc, P, off2, 'Z');
        sign_fix(pc, P, off1, 'X');
        sign_fix(pc, P, off2, 'Z');
        if (injection_only) { finish_meta(); return; }
        {
            // proxy: Bell-type logical pair, then logical Z on patch 1 with
            // probability 1/4 to mirror the true projection statistics
            raw(pc, Op::TICK, {});
            std::vector<Target> tg;
            for (const Coord &c : P.data) {
                tg.push_back(Target::qubit(qid(cshift(c, off1))));
                tg.push_back(Target::qubit(qid(cshift(c, off2))));
            }
            raw(pc, Op::CX, tg);
            raw(pc, Op::CORRZ, qt(qids(P.logical_z, off1)), {0.25});
        }
        std::vector<Coord> ghz;
        for (const Coord &c : P.data) ghz.push_back(cadd(c, Frac(2 * d), Frac(0)));
        for (int k = 0; k < d; k++) {
            kickback_check(ghz, [&](const std::vector<int> &nodes) {
                std::map<int, size_t> data_of;
                for (size_t i = 0; i < ghz.size(); i++) data_of[qid(ghz[i])] = i;
                tick();
                std::vector<Target> tt, pt;
                for (int g : nodes) {
                    const Coord &c = P.data[data_of[g]];
                    int q1 = qid(cshift(c, off1)), q2 = qid(cshift(c, off2));
                    for (auto *v : {&tt, &pt}) {
                        v->push_back(Target::qubit(g));
                        v->push_back(Target::qubit(q1));
                        v->push_back(Target::qubit(q2));
                    }
                }
                raw(tc, Op::CCX, tt);
                raw(pc, Op::CXX, pt);
            }, k == 0);
            if (k == 0) {
                // the first projection outcome is genuinely random; expose it
                // as an observable instead of filtering on it
                for (auto it = events.rbegin(); it != events.rend(); ++it) {
                    if (it->purpose == Purpose::CheckMid) {
                        pend(Op::OBSERVABLE_INCLUDE, {it->rec}, Side::Both, it->ti, it->pi)
                            .arg = obs_next++;
                        break;
                    }
                }
            }
            se_round({a1, a2}, false);
        }
        if (cfg.final_mode == FinalMode::PerfectPair) {
            // joint logical readouts, noise exempt: XX then ZZ across the pair
            tick();
            std::vector<int> xq, zq;
            for (const Coord &c : P.logical_x) xq.push_back(qid(cshift(c, off1)));
            for (const Coord &c : P.logical_x) xq.push_back(qid(cshift(c, off2)));
            for (const Coord &c : P.logical_z) zq.push_back(qid(cshift(c, off1)));
            for (const Coord &c : P.logical_z) zq.push_back(qid(cshift(c, off2)));
            both(Op::MPP_X, xq);
            int rx = mcount++;
            size_t ti = tc.instructions.size() - 1, pi = pc.instructions.size() - 1;
            pend(Op::OBSERVABLE_INCLUDE, {rx}, Side::Both, ti, pi).arg = obs_next++;
            both(Op::MPP_Z, zq);
            int rz = mcount++;
            ti = tc.instructions.size() - 1;
            pi = pc.instructions.size() - 1;
            pend(Op::OBSERVABLE_INCLUDE, {rz}, Side::Both, ti, pi).arg = obs_next++;
        }
        finish_meta();
    }
};

// ---------------------------------------------------------------------------
// record-dependency analysis of the proxy: one XOR column per nondeterministic
// outcome and per correction coin; a record set is a valid detector iff its
// parity is independent of every source

struct Lambda {
    std::vector<BitVec> cols;
    BitVec ref;
    bool dep(const std::vector<int> &recs) const {
        for (const BitVec &c : cols) {
            int par = 0;
            for (int r : recs) par ^= int(c.get(size_t(r)));
            if (par) return true;
        }
        return false;
    }
    bool dep1(int r) const { return dep({r}); }
    bool dep2(int a, int b) const { return dep({a, b}); }
};

Lambda analyze(const Circuit &pcirc) {
    ReferenceResult base = simulate_reference(pcirc);
    Lambda lam;
    lam.ref = base.measurements;
    size_t k = 0;
    for (size_t r = 0; r < base.random_mask.size(); r++) {
        if (!base.random_mask[r]) continue;
        std::vector<int> flips(k + 1, 0);
        flips[k] = 1;
        ReferenceResult res = simulate_reference(pcirc, flips);
        if (res.random_mask != base.random_mask)
            throw std::logic_error("dependency probe changed the nondeterministic set");
        BitVec col = res.measurements;
        col ^= base.measurements;
        lam.cols.push_back(std::move(col));
        k++;
    }
    for (size_t i = 0; i < pcirc.instructions.size(); i++) {
        Op op = pcirc.instructions[i].op;
        if (op != Op::CORRX && op != Op::CORRZ) continue;
        Circuit mod = pcirc;
        mod.instructions[i].op = op == Op::CORRX ? Op::X : Op::Z;
        mod.instructions[i].args.clear();
        ReferenceResult res = simulate_reference(mod);
        if (res.random_mask != base.random_mask)
            throw std::logic_error("correction probe changed the nondeterministic set");
        BitVec col = res.measurements;
        col ^= base.measurements;
        lam.cols.push_back(std::move(col));
    }
    return lam;
}

// turns measurement events into annotations; lam == nullptr falls back to the
// structural rules (standalone blocks built without the full history)
void decide(Builder &b, const Lambda *lam) {
    const ProtocolConfig &cfg = b.cfg;
    for (const MeasEvent &e : b.events) {
        Op dop = e.soft ? Op::DETECTOR_SOFT : Op::POSTSELECT;
        switch (e.purpose) {
            case Purpose::SeCheck:
                if (e.first_round) {
                    if (!e.rnd_t) b.pend(Op::POSTSELECT, {e.rec}, Side::TrueOnly, e.ti, e.pi);
                    if (lam && lam->dep1(e.rec) != e.rnd_p)
                        throw std::logic_error("round-1 determinism disagrees with the reset rule");
                    if (!e.rnd_p) b.pend(Op::POSTSELECT, {e.rec}, Side::ProxyOnly, e.ti, e.pi);
                } else if (!lam) {
                    b.pend(dop, {e.rec}, Side::Both, e.ti, e.pi);
                } else if (!lam->dep1(e.rec)) {
                    b.pend(dop, {e.rec}, Side::Both, e.ti, e.pi);
                } else if (e.prev >= 0 && !lam->dep2(e.rec, e.prev)) {
                    b.pend(dop, {e.rec, e.prev}, Side::Both, e.ti, e.pi);
                } else if (!e.soft) {
                    throw std::logic_error("unprotected syndrome check before expansion");
                }
                break;
            case Purpose::CheckMid:
                if (cfg.variant == Variant::CX) {
                    if (e.first_mid) break;  // exposed as an observable at emission
                    if (!lam) {
                        b.pend(dop, {e.rec}, Side::Both, e.ti, e.pi);
                    } else {
                        if (e.prev < 0)
                            throw std::logic_error("repeated projection lost its reference");
                        if (lam->dep2(e.rec, e.prev))
                            throw std::logic_error("projection repeat not reproducible");
                        b.pend(dop, {e.rec, e.prev}, Side::Both, e.ti, e.pi);
                    }
                } else if (cfg.wrong_input) {
                    b.pend(Op::OBSERVABLE_INCLUDE, {e.rec}, Side::Both, e.ti, e.pi).arg =
                        b.obs_next++;
                } else {
                    if (lam && lam->dep1(e.rec))
                        throw std::logic_error("check outcome not deterministic");
                    b.pend(dop, {e.rec}, Side::Both, e.ti, e.pi);
                }
                break;
            case Purpose::CheckFlag:
            case Purpose::GhzZero:
                if (lam && lam->dep1(e.rec))
                    throw std::logic_error("flag outcome not deterministic at record " +
                                           std::to_string(e.rec) + " key " + e.key.str());
                b.pend(dop, {e.rec}, Side::Both, e.ti, e.pi);
                break;
            case Purpose::FinalData:
                break;
        }
    }
    if (lam) {
        for (const Pending &p : b.pendings) {
            if (p.must_be_quiet && lam->dep(p.recs))
                throw std::logic_error("final stabilizer parity not deterministic");
            if (p.op == Op::OBSERVABLE_INCLUDE) continue;
            int par = 0;
            for (int r : p.recs) par ^= int(lam->ref.get(size_t(r)));
            if (par) throw std::logic_error("annotation parity nonzero in the reference run");
        }
    }
}

int records_of(const Instruction &ins) {
    if (ins.op == Op::M || ins.op == Op::MX) return int(ins.targets.size());
    if (ins.op == Op::MPP_X || ins.op == Op::MPP_Z) return 1;
    return 0;
}

Circuit finalize_one(const Circuit &src, const std::vector<Pending> &pendings, bool true_side) {
    std::map<size_t, std::vector<const Pending *>> at;
    for (const Pending &p : pendings) {
        if (p.side == (true_side ? Side::ProxyOnly : Side::TrueOnly)) continue;
        at[true_side ? p.after_t : p.after_p].push_back(&p);
    }
    Circuit out;
    out.coords = src.coords;
    out.metadata = src.metadata;
    int recs = 0;
    for (size_t i = 0; i < src.instructions.size(); i++) {
        const Instruction &ins = src.instructions[i];
        out.append(ins);
        recs += records_of(ins);
        auto it = at.find(i);
        if (it == at.end()) continue;
        for (const Pending *p : it->second) {
            Instruction a;
            a.op = p->op;
            if (p->op == Op::OBSERVABLE_INCLUDE) a.args = {p->arg};
            for (int r : p->recs) {
                if (r >= recs) throw std::logic_error("annotation precedes its record");
                a.targets.push_back(Target::rec(r - recs));
            }
            out.append(std::move(a));
        }
    }
    return out;
}

Circuit finish_build(Builder &b, bool with_lambda) {
    if (b.pc.num_measurements() != b.mcount || b.tc.num_measurements() != b.mcount)
        throw std::logic_error("record bookkeeping out of sync");
    if (with_lambda) {
        Lambda lam = analyze(b.pc);
        decide(b, &lam);
    } else {
        decide(b, nullptr);
    }
    Circuit out =
        finalize_one(b.cfg.clifford_proxy ? b.pc : b.tc, b.pendings, !b.cfg.clifford_proxy);
    try {
        out.validate();
    } catch (const std::exception &ex) {
        if (getenv("CULTIVAR_DUMP_ON_INVALID")) fprintf(stderr, "%s\n", serialize_circuit(out).c_str());
        throw;
    }
    return out;
}

}  // namespace

Circuit build_full(const ProtocolConfig &cfg) {
    validate_config(cfg);
    Builder b(cfg);
    if (cfg.variant == Variant::CX) b.run_cx(false);
    else b.run_h(false);
    return finish_build(b, true);
}

Circuit build_injection(const ProtocolConfig &cfg) {
    validate_config(cfg);
    Builder b(cfg);
    if (cfg.variant == Variant::CX) b.run_cx(true);
    else b.run_h(true);
    return finish_build(b, true);
}

Circuit build_projection(const ProtocolConfig &cfg, int stage_distance) {
    validate_config(cfg);
    if (cfg.variant == Variant::CX) {
        if (stage_distance != cfg.d1)
            throw std::invalid_argument("pair protocols check only at their working distance");
    } else if (stage_distance != std::min(cfg.d1, 3) && stage_distance != cfg.d1) {
        throw std::invalid_argument("no check stage at that distance");
    }
    Builder b(cfg);
    b.use_lambda = false;
    if (cfg.variant == Variant::CX) {
        int d = cfg.d1;
        Patch P = build_patch(PatchKind::Rotated, d);
        Coord off1{Frac(0), Frac(0)}, off2{Frac(4 * d), Frac(0)};
        b.register_patch(P, off1);
        b.register_patch(P, off2);
        std::vector<Coord> ghz;
        for (const Coord &c : P.data) ghz.push_back(cadd(c, Frac(2 * d), Frac(0)));
        b.kickback_check(ghz, [&](const std::vector<int> &nodes) {
            std::map<int, size_t> data_of;
            for (size_t i = 0; i < ghz.size(); i++) data_of[b.qid(ghz[i])] = i;
            b.tick();
            std::vector<Target> tt, pt;
            for (int g : nodes) {
                const Coord &c = P.data[data_of[g]];
                int q1 = b.qid(cshift(c, off1)), q2 = b.qid(cshift(c, off2));
                for (auto *v : {&tt, &pt}) {
                    v->push_back(Target::qubit(g));
                    v->push_back(Target::qubit(q1));
                    v->push_back(Target::qubit(q2));
                }
            }
            b.raw(b.tc, Op::CCX, tt);
            b.raw(b.pc, Op::CXX, pt);
        }, false);
        PatchAt a1{&P, off1, 'Z', 'Z'}, a2{&P, off2, 'Z', 'Z'};
        b.se_round({a1, a2}, false);
        b.finish_meta();
    } else {
        Patch frame = build_patch(cfg.patch, cfg.d2);
        b.register_patch(frame, Coord{Frac(0), Frac(0)});
        Patch cur = build_patch(cfg.patch, stage_distance);
        b.check_block(cur);
        b.finish_meta();
    }
    return finish_build(b, false);
}

Circuit apply_noise(const Circuit &src, const NoiseConfig &nc) {
    if (nc.p < 0 || nc.p > 1) throw std::invalid_argument("error rate out of range");
    if (nc.p3q > 1) throw std::invalid_argument("three-qubit rate out of range");
    Circuit out;
    out.coords = src.coords;
    out.metadata = src.metadata;
    if (nc.p <= 0) {
        out.instructions = src.instructions;
        return out;
    }
    for (const Instruction &ins : src.instructions) {
        Op op = ins.op;
        if (op == Op::DEP1 || op == Op::DEP2 || op == Op::DEP3 || op == Op::XERR ||
            op == Op::ZERR || op == Op::MERR || op == Op::HERALD)
            throw std::invalid_argument("circuit already carries noise");
    }
    double p = nc.p;
    double p3 = nc.p3q < 0 ? std::min(1.0, 3 * p) : nc.p3q;
    bool uniform = nc.model == NoiseModel::Uniform;
    bool gate_only = nc.model == NoiseModel::GateOnly;
    double p1 = nc.model == NoiseModel::Atom ? p / 10 : p;

    // idle accounting: a qubit waits in every counted tick inside its busy
    // window where nothing touches it
    int nticks = 1;
    for (const Instruction &ins : src.instructions)
        if (ins.op == Op::TICK) nticks++;
    std::vector<char> tick_counts(size_t(nticks), 0);
    std::map<int, std::pair<int, int>> window;  // qubit -> [first, last] touched tick
    std::map<int, std::set<int>> busy;          // tick -> touched qubits
    {
        int t = 0;
        for (const Instruction &ins : src.instructions) {
            if (ins.op == Op::TICK) { t++; continue; }
            const OpInfo &info = op_info(ins.op);
            if (info.kind == OpKind::Annotation || info.kind == OpKind::Noise) continue;
            bool ctrl = false;
            for (const Target &tg : ins.targets) ctrl = ctrl || tg.is_rec;
            if (ctrl) continue;
            tick_counts[size_t(t)] = 1;
            for (const Target &tg : ins.targets) {
                int q = tg.value;
                busy[t].insert(q);
                auto it = window.find(q);
                if (it == window.end()) window[q] = {t, t};
                else it->second.second = t;
            }
        }
    }
    auto idle_for = [&](int t) {
        std::vector<int> qs;
        if (!uniform || !tick_counts[size_t(t)]) return qs;
        const std::set<int> &b = busy[t];
        for (const auto &[q, w] : window)
            if (w.first <= t && t <= w.second && !b.count(q)) qs.push_back(q);
        return qs;
    };
    auto add = [&](Op op, const std::vector<Target> &tg, double arg) {
        Instruction n;
        n.op = op;
        n.args = {arg};
        n.targets = tg;
        out.append(std::move(n));
    };
    int t = 0;
    auto flush_idle = [&]() {
        std::vector<int> qs = idle_for(t);
        if (!qs.empty()) add(Op::DEP1, Builder::qt(qs), p1);
    };
    for (const Instruction &ins : src.instructions) {
        if (ins.op == Op::TICK) {
            flush_idle();
            out.append(ins);
            t++;
            continue;
        }
        const OpInfo &info = op_info(ins.op);
        bool ctrl = false;
        for (const Target &tg : ins.targets) ctrl = ctrl || tg.is_rec;
        if (ctrl || info.kind == OpKind::Annotation || ins.op == Op::CORRX ||
            ins.op == Op::CORRZ || ins.op == Op::MPP_X || ins.op == Op::MPP_Z) {
            out.append(ins);
            continue;
        }
        if (info.kind == OpKind::Gate) {
            out.append(ins);
            if (info.group == 1) add(Op::DEP1, ins.targets, p1);
            else if (info.group == 2) add(Op::DEP2, ins.targets, p);
            else {
                for (size_t i = 0; i + 2 < ins.targets.size(); i += 3) {
                    add(Op::DEP3, {ins.targets[i], ins.targets[i + 1], ins.targets[i + 2]}, p3);
                    add(Op::DEP2, {ins.targets[i], ins.targets[i + 1]}, p);
                    add(Op::DEP2, {ins.targets[i], ins.targets[i + 2]}, p);
                }
            }
            continue;
        }
        if (info.kind == OpKind::Reset) {
            out.append(ins);
            if (!gate_only) add(ins.op == Op::R ? Op::XERR : Op::ZERR, ins.targets, p);
            continue;
        }
        // M / MX
        if (!gate_only) add(Op::DEP1, ins.targets, p);
        out.append(ins);
        if (!gate_only) add(Op::MERR, ins.targets, p);
    }
    flush_idle();
    return out;
}

Circuit apply_erasure(const Circuit &src, double e) {
    if (e < 0 || e > 1) throw std::invalid_argument("erasure rate out of range");
    Circuit out;
    out.coords = src.coords;
    out.metadata = src.metadata;
    if (e == 0) {
        out.instructions = src.instructions;
        return out;
    }
    for (const Instruction &ins : src.instructions) {
        out.append(ins);
        Op op = ins.op;
        if (op == Op::DEP1 || op == Op::DEP2 || op == Op::DEP3 || op == Op::XERR ||
            op == Op::ZERR) {
            Instruction h;
            h.op = Op::HERALD;
            h.args = {e};
            h.targets = ins.targets;
            out.append(std::move(h));
        }
    }
    return out;
}

Circuit compile_3q(const Circuit &src) {
    // rewrites every three-qubit gate except CCZ into {CCZ, 2q, 1q}; CCZ is
    // kept as the one irreducible three-body generator
    auto steps_of = [](Op op) {
        switch (op) {
            case Op::CCX: return 3;
            case Op::CXX: return 2;
            case Op::CSWAP: return 5;
            case Op::CSWAPHH: return 7;
            case Op::I3: return 1;
            default: return 0;
        }
    };
    Circuit out;
    out.coords = src.coords;
    out.metadata = src.metadata;
    std::vector<Instruction> tickbuf;
    auto emit_step = [&](const Instruction &ins, int s) {
        Target g = ins.targets[0], a = ins.targets[1], c = ins.targets[2];
        auto one = [&](Op op, std::vector<Target> tg) {
            Instruction n;
            n.op = op;
            n.targets = std::move(tg);
            out.append(std::move(n));
        };
        switch (ins.op) {
            case Op::CCX:
                if (s == 0 || s == 2) one(Op::H, {c});
                else one(Op::CCZ, {g, a, c});
                break;
            case Op::CXX:
                one(Op::CX, {g, s == 0 ? a : c});
                break;
            case Op::CSWAP:
                if (s == 0 || s == 4) one(Op::CX, {c, a});
                else if (s == 1 || s == 3) one(Op::H, {c});
                else one(Op::CCZ, {g, a, c});
                break;
            case Op::CSWAPHH:
                if (s == 0 || s == 2 || s == 4 || s == 6) one(Op::H, {a, c});
                else if (s == 1 || s == 5) one(Op::CZ, {a, c});
                else one(Op::CCZ, {g, a, c});
                break;
            default:  // I3
                one(Op::I2, {a, c});
                one(Op::I, {g});
                break;
        }
    };
    auto flush = [&]() {
        int maxs = 0;
        for (const Instruction &ins : tickbuf) maxs = std::max(maxs, steps_of(ins.op));
        if (maxs == 0) {
            for (Instruction &ins : tickbuf) out.append(std::move(ins));
            tickbuf.clear();
            return;
        }
        for (int s = 0; s < maxs; s++) {
            if (s > 0) out.append(Instruction{Op::TICK, {}, {}});
            for (const Instruction &ins : tickbuf) {
                int ns = steps_of(ins.op);
                if (ns == 0) {
                    if (s == 0) out.append(ins);
                    continue;
                }
                if (s >= ns) continue;
                const OpInfo &info = op_info(ins.op);
                for (size_t i = 0; i + 2 < ins.targets.size(); i += size_t(info.group)) {
                    Instruction inst;
                    inst.op = ins.op;
                    inst.targets = {ins.targets[i], ins.targets[i + 1], ins.targets[i + 2]};
                    emit_step(inst, s);
                }
            }
        }
        tickbuf.clear();
    };
    for (const Instruction &ins : src.instructions) {
        if (ins.op == Op::TICK) {
            flush();
            out.append(ins);
            continue;
        }
        tickbuf.push_back(ins);
    }
    flush();
    return out;
}

namespace {

Preset mk(const std::string &name, const std::string &note, Variant v, PatchKind k, int d1,
          int d2, int rounds, CheckStyle st, bool proxy, FinalMode fm, bool wrong = false,
          NoiseModel nm = NoiseModel::Uniform) {
    Preset p;
    p.name = name;
    p.note = note;
    p.cfg.variant = v;
    p.cfg.patch = k;
    p.cfg.d1 = d1;
    p.cfg.d2 = d2;
    p.cfg.rounds = rounds;
    p.cfg.style = st;
    p.cfg.clifford_proxy = proxy;
    p.cfg.final_mode = fm;
    p.cfg.wrong_input = wrong;
    p.cfg.noise.model = nm;
    p.cfg.noise.p = 1e-3;
    return p;
}

}  // namespace

const std::vector<Preset> &presets() {
    static const std::vector<Preset> table = {
        mk("h-unrot-d2", "smallest H cultivation, kickback checks", Variant::H,
           PatchKind::Unrotated, 2, 2, 0, CheckStyle::Kickback, false, FinalMode::None),
        mk("h-unrot-d2-proxy", "Clifford stand-in of h-unrot-d2 with a logical readout",
           Variant::H, PatchKind::Unrotated, 2, 2, 0, CheckStyle::Kickback, true,
           FinalMode::Transversal),
        mk("h-unrot-d3", "H cultivation at distance 3, repeated double checks", Variant::H,
           PatchKind::Unrotated, 3, 3, 0, CheckStyle::DoubleCheck, false, FinalMode::None),
        mk("h-unrot-d3-proxy", "Clifford stand-in of h-unrot-d3 with a logical readout",
           Variant::H, PatchKind::Unrotated, 3, 3, 0, CheckStyle::DoubleCheck, true,
           FinalMode::Transversal),
        mk("hxy-rot-d3", "XY-folded cultivation on the rotated patch", Variant::H_XY,
           PatchKind::Rotated, 3, 3, 0, CheckStyle::DoubleCheck, false, FinalMode::None),
        mk("hxy-rot-d3-proxy", "Clifford stand-in of hxy-rot-d3 with a logical readout",
           Variant::H_XY, PatchKind::Rotated, 3, 3, 0, CheckStyle::DoubleCheck, true,
           FinalMode::Transversal),
        mk("h-unrot-d5-proxy", "proxy with unitary growth to distance 5", Variant::H,
           PatchKind::Unrotated, 5, 5, 0, CheckStyle::DoubleCheck, true, FinalMode::Transversal),
        mk("hxy-rot-d5-proxy", "rotated proxy with unitary growth to distance 5", Variant::H_XY,
           PatchKind::Rotated, 5, 5, 0, CheckStyle::DoubleCheck, true, FinalMode::Transversal),
        mk("hxy-rot-d3-d2_7-r7-proxy", "full pipeline: cultivate at 3, expand to 7, 7 rounds",
           Variant::H_XY, PatchKind::Rotated, 3, 7, 7, CheckStyle::DoubleCheck, true,
           FinalMode::Transversal),
        mk("h-unrot-d3-d2_7-r4-proxy", "unrotated pipeline with expansion to 7 and 4 rounds",
           Variant::H, PatchKind::Unrotated, 3, 7, 4, CheckStyle::DoubleCheck, true,
           FinalMode::Transversal),
        mk("cx-d2", "entangled-pair cultivation with joint final readouts", Variant::CX,
           PatchKind::Rotated, 2, 2, 0, CheckStyle::Kickback, false, FinalMode::PerfectPair),
        mk("cx-d2-proxy", "Clifford stand-in of cx-d2", Variant::CX, PatchKind::Rotated, 2, 2, 0,
           CheckStyle::Kickback, true, FinalMode::PerfectPair),
        mk("hxy-rot-d3-proxy-atom", "hxy-rot-d3-proxy under the neutral-atom noise model",
           Variant::H_XY, PatchKind::Rotated, 3, 3, 0, CheckStyle::DoubleCheck, true,
           FinalMode::Transversal, false, NoiseModel::Atom),
        mk("hxy-rot-d3-proxy-gateonly", "hxy-rot-d3-proxy with gate noise only", Variant::H_XY,
           PatchKind::Rotated, 3, 3, 0, CheckStyle::DoubleCheck, true, FinalMode::Transversal,
           false, NoiseModel::GateOnly),
        mk("h-unrot-d3-proxy-wrong", "orthogonal input fed to the distance-3 checks", Variant::H,
           PatchKind::Unrotated, 3, 3, 0, CheckStyle::DoubleCheck, true, FinalMode::Transversal,
           true),
    };
    return table;
}

const Preset &preset(const std::string &name) {
    for (const Preset &p : presets())
        if (p.name == name) return p;
    throw std::invalid_argument("unknown preset: " + name);
}

}  // namespace cultivar
