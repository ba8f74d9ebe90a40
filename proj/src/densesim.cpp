#include "cultivar/densesim.h"

#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "cultivar/tableau.h"

namespace cultivar {
namespace {

using Cd = std::complex<double>;

// Measurement probabilities this close to 0, 1, or 1/2 are snapped exact.
// Snapping to 1/2 makes the dense engine draw randomness at exactly the
// spots where a tableau run would, so the two stay in lockstep on one seed.
constexpr double kSnap = 1e-9;

constexpr double kR2 = 0.70710678118654752440;

struct Mat2 {
    Cd a, b, c, d;
};
struct Mat4 {
    Cd m[16];
};

const Mat2 &pauli_mat(char p) {
    static const Mat2 X{0, 1, 1, 0};
    static const Mat2 Y{0, Cd(0, -1), Cd(0, 1), 0};
    static const Mat2 Z{1, 0, 0, -1};
    switch (p) {
        case 'X': return X;
        case 'Y': return Y;
        default: return Z;
    }
}

const Mat2 &gate1_mat(Op op) {
    static const Mat2 H{kR2, kR2, kR2, -kR2};
    static const Mat2 S{1, 0, 0, Cd(0, 1)};
    static const Mat2 SD{1, 0, 0, Cd(0, -1)};
    static const Mat2 HXY{0, Cd(kR2, -kR2), Cd(kR2, kR2), 0};
    static const Mat2 HXYZ{0, Cd(-kR2, -kR2), Cd(-kR2, kR2), 0};
    static const Mat2 T{1, 0, 0, std::polar(1.0, M_PI / 4)};
    static const Mat2 TD{1, 0, 0, std::polar(1.0, -M_PI / 4)};
    static const Mat2 TX = [] {
        Cd t = std::polar(1.0, M_PI / 4);
        return Mat2{(1. + t) * .5, (1. - t) * .5, (1. - t) * .5, (1. + t) * .5};
    }();
    static const Mat2 TXD = [] {
        Cd t = std::polar(1.0, -M_PI / 4);
        return Mat2{(1. + t) * .5, (1. - t) * .5, (1. - t) * .5, (1. + t) * .5};
    }();
    switch (op) {
        case Op::X:
        case Op::Y:
        case Op::Z: return pauli_mat("XYZ"[int(op) - int(Op::X)]);
        case Op::H: return H;
        case Op::S: return S;
        case Op::S_DAG: return SD;
        case Op::H_XY: return HXY;
        case Op::H_XYZ: return HXYZ;
        case Op::T: return T;
        case Op::T_DAG: return TD;
        case Op::T_X: return TX;
        case Op::T_X_DAG: return TXD;
        default: throw std::logic_error("no 1q matrix for this op");
    }
}

const Mat2 &ctrl_base_mat(Op op) {
    // target unitary of the controlled gate
    switch (op) {
        case Op::CH: return gate1_mat(Op::H);
        case Op::CHXY: return gate1_mat(Op::H_XY);
        case Op::CHXYZ: return gate1_mat(Op::H_XYZ);
        case Op::CCX: return pauli_mat('X');
        default: throw std::logic_error("no controlled base matrix for this op");
    }
}

const Mat4 &swap_hh_mat() {
    static const Mat4 m = [] {
        Mat4 r{};
        const double rows[4][4] = {
            {1, 1, 1, 1}, {1, 1, -1, -1}, {1, -1, 1, -1}, {1, -1, -1, 1}};
        for (int i = 0; i < 4; i++)
            for (int j = 0; j < 4; j++) r.m[i * 4 + j] = rows[i][j] * 0.5;
        return r;
    }();
    return m;
}

uint64_t loc_key(int inst, int instance) {
    return (uint64_t(uint32_t(inst)) << 32) | uint32_t(instance);
}

// All the random decisions of one shot, drawn up front in instruction order.
// Both engines consume this instead of drawing noise during execution, which
// is what makes their record streams line up bit for bit.
struct ShotPlan {
    std::unordered_map<uint64_t, std::string> pauli;  // per-instance letters
    std::unordered_set<uint64_t> merr;                // record flips
    std::unordered_set<uint64_t> corr;                // fired correlation coins
    std::unordered_set<uint64_t> herald;              // fired erasure flags
    bool clean = true;

    void clear() {
        pauli.clear();
        merr.clear();
        corr.clear();
        herald.clear();
        clean = true;
    }
};

void sample_plan(const Circuit &c, Rng &rng, ShotPlan &plan) {
    plan.clear();
    for (size_t i = 0; i < c.instructions.size(); i++) {
        const Instruction &ins = c.instructions[i];
        if (op_info(ins.op).kind != OpKind::Noise) continue;
        double p = ins.args[0];
        if (p <= 0) continue;  // never draws, so p=0 channels are free
        switch (ins.op) {
            case Op::DEP1:
            case Op::XERR:
            case Op::ZERR:
            case Op::MERR:
                for (size_t k = 0; k < ins.targets.size(); k++) {
                    if (rng.uniform() >= p) continue;
                    plan.clean = false;
                    uint64_t loc = loc_key(int(i), int(k));
                    if (ins.op == Op::MERR) plan.merr.insert(loc);
                    else if (ins.op == Op::XERR) plan.pauli[loc] = "X";
                    else if (ins.op == Op::ZERR) plan.pauli[loc] = "Z";
                    else plan.pauli[loc] = std::string(1, "XYZ"[rng.below(3)]);
                }
                break;
            case Op::DEP2:
                for (size_t base = 0, inst = 0; base + 2 <= ins.targets.size(); base += 2, inst++) {
                    if (rng.uniform() >= p) continue;
                    plan.clean = false;
                    int k = int(rng.below(15)) + 1;
                    plan.pauli[loc_key(int(i), int(inst))] = {"IXYZ"[k >> 2], "IXYZ"[k & 3]};
                }
                break;
            case Op::DEP3:
                for (size_t base = 0, inst = 0; base + 3 <= ins.targets.size(); base += 3, inst++) {
                    if (rng.uniform() >= p) continue;
                    plan.clean = false;
                    int k = int(rng.below(63)) + 1;
                    plan.pauli[loc_key(int(i), int(inst))] = {
                        "IXYZ"[(k >> 4) & 3], "IXYZ"[(k >> 2) & 3], "IXYZ"[k & 3]};
                }
                break;
            case Op::HERALD: {
                if (rng.uniform() >= p) break;
                plan.clean = false;
                plan.herald.insert(loc_key(int(i), 0));
                std::string s;
                for (size_t k = 0; k < ins.targets.size(); k++) s += "IXYZ"[rng.below(4)];
                plan.pauli[loc_key(int(i), 0)] = s;
                break;
            }
            case Op::CORRX:
            case Op::CORRZ:
                if (rng.uniform() < p) {
                    plan.clean = false;
                    plan.corr.insert(loc_key(int(i), 0));
                }
                break;
            default: break;
        }
    }
}

enum class Mode { Reference, Sample, Scan };

// State-vector executor over a dynamic qubit set. Bit k of an amplitude
// index belongs to q_of_slot[k]. Qubits join at first use and leave right
// after a destructive single-qubit measurement; their classical leftovers
// live in dead[] until something touches them again.
template <typename R>
struct Engine {
    using C = std::complex<R>;

    Mode mode = Mode::Reference;
    Rng *rng = nullptr;
    const ShotPlan *plan = nullptr;
    const BitVec *ref_rec = nullptr;  // Scan: record of the quiet reference run
    bool discard_on_detector = true;
    int cap = 22;

    std::vector<C> amp;
    std::vector<int> q_of_slot;
    std::vector<int> slot_of;   // -1 when the qubit is not in the vector
    std::vector<int8_t> dead;   // parked value: 0,1 = |0>,|1>; 2,3 = |+>,|->
    std::vector<int> last_rec;  // most recent record index per qubit
    BitVec record;
    std::vector<uint8_t> dets;  // parity per DETECTOR/DETECTOR_SOFT/POSTSELECT
    BitVec obs;
    std::vector<uint8_t> heralds;  // one flag per HERALD instruction
    bool kept = true;
    Op discard_op = Op::TICK;  // annotation that discarded the shot
    // reference runs flag genuinely random measurements; a circuit with any
    // is not cacheable, since its clean shots still need their own draws
    bool hit_random = false;

    void setup(int nq, int nobs, int cap_) {
        cap = cap_;
        amp.assign(1, C(1));
        q_of_slot.clear();
        slot_of.assign(size_t(nq), -1);
        dead.assign(size_t(nq), 0);
        last_rec.assign(size_t(nq), -1);
        record = BitVec();
        dets.clear();
        obs = BitVec(size_t(nobs));
        heralds.clear();
        kept = true;
        hit_random = false;
    }

    int width() const { return int(q_of_slot.size()); }

    void acquire(int q, int bit) {
        if (width() >= cap) throw std::runtime_error("dense state width cap exceeded");
        size_t old = amp.size();
        amp.resize(old << 1, C(0));
        if (bit)
            for (size_t i = 0; i < old; i++) {
                amp[old + i] = amp[i];
                amp[i] = C(0);
            }
        slot_of[q] = width();
        q_of_slot.push_back(q);
    }

    void ensure_live(int q) {
        if (slot_of[q] >= 0) return;
        int8_t d = dead[q];
        if (d <= 1) {
            acquire(q, d);
        } else {
            acquire(q, d - 2);
            apply1(slot_of[q], gate1_mat(Op::H));
        }
    }

    void drop_slot(int s) {
        slot_of[q_of_slot[s]] = -1;
        q_of_slot.erase(q_of_slot.begin() + s);
        for (size_t k = size_t(s); k < q_of_slot.size(); k++) slot_of[q_of_slot[k]] = int(k);
    }

    void apply1(int s, const Mat2 &m) {
        C a(m.a), b(m.b), c(m.c), d(m.d);
        size_t msk = size_t(1) << s;
        for (size_t i = 0; i < amp.size(); i++) {
            if (i & msk) continue;
            C a0 = amp[i], a1 = amp[i | msk];
            amp[i] = a * a0 + b * a1;
            amp[i | msk] = c * a0 + d * a1;
        }
    }

    void ctrl1(int cs, int ts, const Mat2 &m) {
        C a(m.a), b(m.b), c(m.c), d(m.d);
        size_t mc = size_t(1) << cs, mt = size_t(1) << ts;
        for (size_t i = 0; i < amp.size(); i++) {
            if (!(i & mc) || (i & mt)) continue;
            C a0 = amp[i], a1 = amp[i | mt];
            amp[i] = a * a0 + b * a1;
            amp[i | mt] = c * a0 + d * a1;
        }
    }

    void cc1(int c1, int c2, int ts, const Mat2 &m) {
        C a(m.a), b(m.b), c(m.c), d(m.d);
        size_t mc = (size_t(1) << c1) | (size_t(1) << c2), mt = size_t(1) << ts;
        for (size_t i = 0; i < amp.size(); i++) {
            if ((i & mc) != mc || (i & mt)) continue;
            C a0 = amp[i], a1 = amp[i | mt];
            amp[i] = a * a0 + b * a1;
            amp[i | mt] = c * a0 + d * a1;
        }
    }

    void ctrl2(int cs, int t1, int t2, const Mat4 &m4) {
        C m[16];
        for (int k = 0; k < 16; k++) m[k] = C(m4.m[k]);
        size_t mc = size_t(1) << cs, m1 = size_t(1) << t1, m2 = size_t(1) << t2;
        for (size_t i = 0; i < amp.size(); i++) {
            if (!(i & mc) || (i & m1) || (i & m2)) continue;
            C v[4] = {amp[i], amp[i | m2], amp[i | m1], amp[i | m1 | m2]};
            for (int r = 0; r < 4; r++) {
                C acc(0);
                for (int k = 0; k < 4; k++) acc += m[r * 4 + k] * v[k];
                size_t j = i | ((r & 2) ? m1 : 0) | ((r & 1) ? m2 : 0);
                amp[j] = acc;
            }
        }
    }

    void diag_neg(size_t msk) {
        for (size_t i = 0; i < amp.size(); i++)
            if ((i & msk) == msk) amp[i] = -amp[i];
    }

    void cswap(int cs, int as, int bs) {
        size_t mc = size_t(1) << cs, ma = size_t(1) << as, mb = size_t(1) << bs;
        for (size_t i = 0; i < amp.size(); i++)
            if ((i & mc) && (i & ma) && !(i & mb)) std::swap(amp[i], amp[i ^ ma ^ mb]);
    }

    // SWAP exchanges the quantum states of the two wires, which is a pure
    // relabel here. Measurement history (last_rec) stays with the wire.
    void swap_labels(int qa, int qb) {
        std::swap(slot_of[qa], slot_of[qb]);
        std::swap(dead[qa], dead[qb]);
        if (slot_of[qa] >= 0) q_of_slot[slot_of[qa]] = qa;
        if (slot_of[qb] >= 0) q_of_slot[slot_of[qb]] = qb;
    }

    void apply_pauli(int q, char p) {
        if (slot_of[q] < 0) {
            // parked values toggle classically; dropped phases are global
            int8_t &d = dead[q];
            if (p == 'X') {
                if (d <= 1) d ^= 1;
            } else if (p == 'Z') {
                if (d >= 2) d ^= 1;
            } else {
                d ^= 1;
            }
            return;
        }
        apply1(slot_of[q], pauli_mat(p));
    }

    double prob_one(int s) const {
        size_t m = size_t(1) << s;
        double acc = 0;
        for (size_t i = 0; i < amp.size(); i++)
            if (i & m) acc += std::norm(amp[i]);
        return acc;
    }

    // Shared outcome policy. Reference takes the +1 branch of anything
    // ambiguous; Scan follows the reference record so faults are judged on
    // the branch where every check can still pass. The snap window scales
    // with the amplitude precision so float roundoff cannot turn a
    // deterministic outcome into a bogus draw.
    bool decide(double p1, bool has_rec) {
        constexpr double eps = sizeof(R) == sizeof(float) ? 1e-5 : kSnap;
        double p = p1;
        if (p < eps) p = 0;
        else if (p > 1 - eps) p = 1;
        else if (std::fabs(p - 0.5) < eps) p = 0.5;
        if (p == 0) return false;
        if (p == 1) return true;
        if (mode == Mode::Sample) return rng->uniform() < p;
        if (mode == Mode::Scan && has_rec) return ref_rec->get(record.size());
        if (mode == Mode::Reference) hit_random = true;
        return false;
    }

    void push_rec(int q, bool v) {
        size_t i = record.size();
        record.resize(i + 1);
        record.set(i, v);
        if (q >= 0) last_rec[q] = int(i);
    }

    void collapse_remove_z(int s, bool o, double pb) {
        size_t half = amp.size() >> 1;
        size_t lm = (size_t(1) << s) - 1;
        R f = R(1.0 / std::sqrt(pb));
        for (size_t d = 0; d < half; d++) {
            size_t src = ((d & ~lm) << 1) | (size_t(o) << s) | (d & lm);
            amp[d] = amp[src] * f;
        }
        amp.resize(half);
        drop_slot(s);
    }

    void collapse_remove_x(int s, bool o, double pb) {
        size_t half = amp.size() >> 1;
        size_t lm = (size_t(1) << s) - 1;
        R f = R(1.0 / std::sqrt(2.0 * pb));
        R sg = o ? R(-1) : R(1);
        for (size_t d = 0; d < half; d++) {
            size_t b = ((d & ~lm) << 1) | (d & lm);
            amp[d] = (amp[b] + sg * amp[b | (size_t(1) << s)]) * f;
        }
        amp.resize(half);
        drop_slot(s);
    }

    void do_m_one(int q) {
        bool o;
        if (slot_of[q] < 0) {
            int8_t d = dead[q];
            o = decide(d <= 1 ? double(d) : 0.5, true);
            dead[q] = int8_t(o);
        } else {
            int s = slot_of[q];
            double p1 = prob_one(s);
            o = decide(p1, true);
            collapse_remove_z(s, o, o ? p1 : 1 - p1);
            dead[q] = int8_t(o);
        }
        push_rec(q, o);
    }

    void do_mx_one(int q) {
        bool o;
        if (slot_of[q] < 0) {
            int8_t d = dead[q];
            o = decide(d >= 2 ? double(d - 2) : 0.5, true);
        } else {
            int s = slot_of[q];
            size_t m = size_t(1) << s;
            double pm = 0;
            for (size_t i = 0; i < amp.size(); i++)
                if (!(i & m)) pm += std::norm(amp[i] - amp[i | m]);
            pm *= 0.5;
            o = decide(pm, true);
            collapse_remove_x(s, o, o ? pm : 1 - pm);
        }
        dead[q] = int8_t(2 + int(o));
        push_rec(q, o);
    }

    void do_mpp(const Instruction &ins) {
        for (const Target &t : ins.targets) ensure_live(t.value);
        size_t mask = 0;
        for (const Target &t : ins.targets) mask |= size_t(1) << slot_of[t.value];
        bool o;
        if (ins.op == Op::MPP_X) {
            size_t low = mask & (~mask + 1);
            double pm = 0;
            for (size_t i = 0; i < amp.size(); i++)
                if (!(i & low)) pm += std::norm(amp[i] - amp[i ^ mask]);
            pm *= 0.5;
            o = decide(pm, true);
            R f = R(0.5 / std::sqrt(o ? pm : 1 - pm));
            R sg = o ? R(-1) : R(1);
            for (size_t i = 0; i < amp.size(); i++) {
                if (i & low) continue;
                size_t j = i ^ mask;
                C t2 = (amp[i] + sg * amp[j]) * f;
                amp[i] = t2;
                amp[j] = sg * t2;
            }
        } else {
            double podd = 0;
            for (size_t i = 0; i < amp.size(); i++)
                if (__builtin_parityll(i & mask)) podd += std::norm(amp[i]);
            o = decide(podd, true);
            R f = R(1.0 / std::sqrt(o ? podd : 1 - podd));
            for (size_t i = 0; i < amp.size(); i++) {
                if (bool(__builtin_parityll(i & mask)) == o) amp[i] *= f;
                else amp[i] = C(0);
            }
        }
        size_t idx = record.size();
        push_rec(-1, o);
        for (const Target &t : ins.targets) last_rec[t.value] = int(idx);
    }

    void do_reset(const Instruction &ins) {
        bool xb = ins.op == Op::RX;
        for (const Target &t : ins.targets) {
            int q = t.value;
            if (slot_of[q] >= 0) {
                // collapsing an entangled qubit here draws; tableau resets
                // never do, but circuits measure before resetting
                int s = slot_of[q];
                double p1 = prob_one(s);
                bool o = decide(p1, false);
                collapse_remove_z(s, o, o ? p1 : 1 - p1);
            }
            dead[q] = int8_t(xb ? 2 : 0);
        }
    }

    size_t rec_abs(int32_t lookback) const {
        return size_t(int64_t(record.size()) + lookback);
    }

    void do_gate(const Instruction &ins) {
        int g = op_info(ins.op).group;
        for (size_t base = 0; base < ins.targets.size(); base += size_t(g)) {
            const Target *t = &ins.targets[base];
            switch (ins.op) {
                case Op::I:
                case Op::I2:
                case Op::I3:
                    break;
                case Op::X:
                case Op::Y:
                case Op::Z:
                    apply_pauli(t[0].value, "XYZ"[int(ins.op) - int(Op::X)]);
                    break;
                case Op::H:
                case Op::S:
                case Op::S_DAG:
                case Op::H_XY:
                case Op::H_XYZ:
                case Op::T:
                case Op::T_DAG:
                case Op::T_X:
                case Op::T_X_DAG:
                    ensure_live(t[0].value);
                    apply1(slot_of[t[0].value], gate1_mat(ins.op));
                    break;
                case Op::CX:
                case Op::CZ:
                    if (t[0].is_rec) {
                        if (record.get(rec_abs(t[0].value)))
                            apply_pauli(t[1].value, ins.op == Op::CX ? 'X' : 'Z');
                    } else if (ins.op == Op::CX) {
                        ensure_live(t[0].value);
                        ensure_live(t[1].value);
                        ctrl1(slot_of[t[0].value], slot_of[t[1].value], pauli_mat('X'));
                    } else {
                        ensure_live(t[0].value);
                        ensure_live(t[1].value);
                        diag_neg((size_t(1) << slot_of[t[0].value]) |
                                 (size_t(1) << slot_of[t[1].value]));
                    }
                    break;
                case Op::SWAP: swap_labels(t[0].value, t[1].value); break;
                case Op::CH:
                case Op::CHXY:
                case Op::CHXYZ:
                    ensure_live(t[0].value);
                    ensure_live(t[1].value);
                    ctrl1(slot_of[t[0].value], slot_of[t[1].value], ctrl_base_mat(ins.op));
                    break;
                case Op::CXX:
                    for (int k = 1; k <= 2; k++) {
                        ensure_live(t[0].value);
                        ensure_live(t[k].value);
                        ctrl1(slot_of[t[0].value], slot_of[t[k].value], pauli_mat('X'));
                    }
                    break;
                case Op::CCX:
                    ensure_live(t[0].value);
                    ensure_live(t[1].value);
                    ensure_live(t[2].value);
                    cc1(slot_of[t[0].value], slot_of[t[1].value], slot_of[t[2].value],
                        pauli_mat('X'));
                    break;
                case Op::CCZ:
                    ensure_live(t[0].value);
                    ensure_live(t[1].value);
                    ensure_live(t[2].value);
                    diag_neg((size_t(1) << slot_of[t[0].value]) |
                             (size_t(1) << slot_of[t[1].value]) |
                             (size_t(1) << slot_of[t[2].value]));
                    break;
                case Op::CSWAP:
                    ensure_live(t[0].value);
                    ensure_live(t[1].value);
                    ensure_live(t[2].value);
                    cswap(slot_of[t[0].value], slot_of[t[1].value], slot_of[t[2].value]);
                    break;
                case Op::CSWAPHH:
                    ensure_live(t[0].value);
                    ensure_live(t[1].value);
                    ensure_live(t[2].value);
                    ctrl2(slot_of[t[0].value], slot_of[t[1].value], slot_of[t[2].value],
                          swap_hh_mat());
                    break;
                default: throw std::logic_error("unhandled gate");
            }
        }
    }

    void do_noise(const Instruction &ins, int idx) {
        if (ins.op == Op::HERALD)
            heralds.push_back(plan && plan->herald.count(loc_key(idx, 0)) ? 1 : 0);
        if (!plan) return;  // reference run is noiseless
        switch (ins.op) {
            case Op::MERR:
                for (size_t k = 0; k < ins.targets.size(); k++)
                    if (plan->merr.count(loc_key(idx, int(k))))
                        record.flip(size_t(last_rec[ins.targets[k].value]));
                break;
            case Op::CORRX:
            case Op::CORRZ:
                if (plan->corr.count(loc_key(idx, 0)))
                    for (const Target &t : ins.targets)
                        apply_pauli(t.value, ins.op == Op::CORRX ? 'X' : 'Z');
                break;
            default: {
                int g = op_info(ins.op).group;
                size_t gg = g == 0 ? ins.targets.size() : size_t(g);
                int inst = 0;
                for (size_t base = 0; base < ins.targets.size(); base += gg, inst++) {
                    auto it = plan->pauli.find(loc_key(idx, inst));
                    if (it == plan->pauli.end()) continue;
                    for (size_t k = 0; k < gg; k++)
                        if (it->second[k] != 'I')
                            apply_pauli(ins.targets[base + k].value, it->second[k]);
                }
                break;
            }
        }
    }

    bool rec_parity(const Instruction &ins) const {
        bool par = false;
        for (const Target &t : ins.targets) par ^= record.get(rec_abs(t.value));
        return par;
    }

    void do_annotation(const Instruction &ins) {
        switch (ins.op) {
            case Op::OBSERVABLE_INCLUDE:
                if (rec_parity(ins)) obs.flip(size_t(ins.args[0]));
                break;
            case Op::DETECTOR:
            case Op::DETECTOR_SOFT:
            case Op::POSTSELECT: {
                bool par = rec_parity(ins);
                dets.push_back(par ? 1 : 0);
                if (!par) break;
                if (mode == Mode::Reference)
                    throw std::runtime_error(std::string(op_info(ins.op).name) +
                                             " parity nonzero in the noiseless reference run");
                if (mode == Mode::Scan) {
                    kept = false;
                    discard_op = ins.op;
                } else if (ins.op == Op::POSTSELECT ||
                           (ins.op == Op::DETECTOR && discard_on_detector)) {
                    kept = false;
                    discard_op = ins.op;
                }
                break;
            }
            default: break;  // TICK, QUBIT_COORDS
        }
    }

    void run(const Circuit &c) {
        for (size_t i = 0; i < c.instructions.size() && kept; i++) {
            const Instruction &ins = c.instructions[i];
            switch (op_info(ins.op).kind) {
                case OpKind::Gate: do_gate(ins); break;
                case OpKind::Reset: do_reset(ins); break;
                case OpKind::Measure:
                    if (ins.op == Op::M)
                        for (const Target &t : ins.targets) do_m_one(t.value);
                    else if (ins.op == Op::MX)
                        for (const Target &t : ins.targets) do_mx_one(t.value);
                    else
                        do_mpp(ins);
                    break;
                case OpKind::Noise: do_noise(ins, int(i)); break;
                case OpKind::Annotation: do_annotation(ins); break;
            }
        }
    }
};

// |<a|b>|^2 over the live qubits, aligned by qubit id. Parked (measured-out)
// qubits are excluded on purpose: kept shots may differ from the reference
// in ancilla readouts without the output state being any worse for it.
template <typename R>
double fidelity_between(const Engine<R> &ref, const Engine<R> &sh) {
    if (ref.q_of_slot.size() != sh.q_of_slot.size())
        throw std::logic_error("runs ended with different live qubit sets");
    std::vector<int> perm(sh.q_of_slot.size());
    for (size_t k = 0; k < sh.q_of_slot.size(); k++) {
        int rs = ref.slot_of[sh.q_of_slot[k]];
        if (rs < 0) throw std::logic_error("runs ended with different live qubit sets");
        perm[k] = rs;
    }
    Cd acc = 0;
    double n_ref = 0, n_sh = 0;
    for (size_t i = 0; i < sh.amp.size(); i++) {
        size_t j = 0, rem = i;
        while (rem) {
            int k = __builtin_ctzll(rem);
            rem &= rem - 1;
            j |= size_t(1) << perm[k];
        }
        acc += std::conj(Cd(ref.amp[j])) * Cd(sh.amp[i]);
        n_ref += std::norm(ref.amp[j]);
        n_sh += std::norm(sh.amp[i]);
    }
    double den = n_ref * n_sh;
    return den > 0 ? std::norm(acc) / den : 0.0;
}

template <typename R>
FidelityReport run_dense_impl(const Circuit &c, const DenseOptions &opt) {
    c.validate();
    int nq = c.num_qubits();
    int nobs = c.num_observables();

    Engine<R> ref;
    ref.setup(nq, nobs, opt.cap);
    ref.mode = Mode::Reference;
    ref.run(c);

    FidelityReport rep;
    rep.shots = opt.shots;
    ShotPlan plan;
    Engine<R> eng;
    bool cacheable = !ref.hit_random;
    for (uint64_t shot = 0; shot < opt.shots; shot++) {
        Rng rng(opt.seed, shot);
        sample_plan(c, rng, plan);
        DenseShot sh;
        if (plan.clean && cacheable) {
            rep.zero_fault++;
            sh.kept = true;
            sh.fidelity = 1.0;
            if (opt.keep_records) {
                sh.record = ref.record;
                sh.observables = ref.obs;
            }
        } else {
            eng.setup(nq, nobs, opt.cap);
            eng.mode = Mode::Sample;
            eng.rng = &rng;
            eng.plan = &plan;
            eng.discard_on_detector = opt.discard_on_detector;
            eng.run(c);
            sh.kept = eng.kept;
            if (eng.kept) {
                sh.fidelity = fidelity_between(ref, eng);
                sh.logical_error = sh.fidelity < 0.5;
            } else {
                (eng.discard_op == Op::POSTSELECT ? rep.postselect_discards
                                                  : rep.detector_discards)++;
            }
            if (opt.keep_records) {
                sh.record = eng.record;
                sh.observables = eng.obs;
            }
        }
        if (sh.kept) {
            rep.kept++;
            rep.fidelity_sum += sh.fidelity;
            if (sh.logical_error) rep.logical_errors++;
        }
        if (opt.keep_records) rep.per_shot.push_back(std::move(sh));
    }
    return rep;
}

// Tableau twin of Engine. Same plan, same annotation handling, and
// measurement draws land in the same places, so records agree bit for bit.
struct TabRunner {
    Mode mode = Mode::Reference;
    Rng *rng = nullptr;
    const ShotPlan *plan = nullptr;
    bool discard_on_detector = true;

    int nq = 1;
    Tableau t{1};
    BitVec record, obs;
    std::vector<int> last_rec;
    std::vector<uint8_t> heralds;
    bool kept = true;
    Op discard_op = Op::TICK;
    bool hit_random = false;

    void setup(int nq_, int nobs) {
        nq = nq_;
        t = Tableau(size_t(nq_));
        record = BitVec();
        obs = BitVec(size_t(nobs));
        last_rec.assign(size_t(nq_), -1);
        heralds.clear();
        kept = true;
        hit_random = false;
    }

    size_t rec_abs(int32_t lookback) const {
        return size_t(int64_t(record.size()) + lookback);
    }

    void push_rec(int q, bool v) {
        size_t i = record.size();
        record.resize(i + 1);
        record.set(i, v);
        if (q >= 0) last_rec[q] = int(i);
    }

    void pauli(int q, char p) {
        t.apply(p == 'X' ? Op::X : p == 'Y' ? Op::Y : Op::Z, {q});
    }

    void do_gate(const Instruction &ins) {
        int g = op_info(ins.op).group;
        for (size_t base = 0; base < ins.targets.size(); base += size_t(g)) {
            const Target *tg = &ins.targets[base];
            if ((ins.op == Op::CX || ins.op == Op::CZ) && tg[0].is_rec) {
                if (record.get(rec_abs(tg[0].value)))
                    pauli(tg[1].value, ins.op == Op::CX ? 'X' : 'Z');
                continue;
            }
            std::vector<int> qs(size_t(g), 0);
            for (int k = 0; k < g; k++) qs[size_t(k)] = tg[k].value;
            t.apply(ins.op, qs);  // throws on non-Clifford gates
        }
    }

    void do_measure(const Instruction &ins) {
        Rng *r = mode == Mode::Reference ? nullptr : rng;
        bool wr = false;
        if (ins.op == Op::M || ins.op == Op::MX) {
            for (const Target &tg : ins.targets) {
                bool o = t.measure_pauli(
                    PauliString::single(size_t(nq), size_t(tg.value),
                                        ins.op == Op::M ? 'Z' : 'X'),
                    r, &wr);
                if (wr) hit_random = true;
                push_rec(tg.value, o);
            }
            return;
        }
        PauliString p{size_t(nq)};
        for (const Target &tg : ins.targets) {
            if (ins.op == Op::MPP_X) p.x.set(size_t(tg.value), true);
            else p.z.set(size_t(tg.value), true);
        }
        bool o = t.measure_pauli(p, r, &wr);
        if (wr) hit_random = true;
        size_t idx = record.size();
        push_rec(-1, o);
        for (const Target &tg : ins.targets) last_rec[tg.value] = int(idx);
    }

    void do_noise(const Instruction &ins, int idx) {
        if (ins.op == Op::HERALD)
            heralds.push_back(plan && plan->herald.count(loc_key(idx, 0)) ? 1 : 0);
        if (!plan) return;
        switch (ins.op) {
            case Op::MERR:
                for (size_t k = 0; k < ins.targets.size(); k++)
                    if (plan->merr.count(loc_key(idx, int(k))))
                        record.flip(size_t(last_rec[ins.targets[k].value]));
                break;
            case Op::CORRX:
            case Op::CORRZ:
                if (plan->corr.count(loc_key(idx, 0)))
                    for (const Target &tg : ins.targets)
                        pauli(tg.value, ins.op == Op::CORRX ? 'X' : 'Z');
                break;
            default: {
                int g = op_info(ins.op).group;
                size_t gg = g == 0 ? ins.targets.size() : size_t(g);
                int inst = 0;
                for (size_t base = 0; base < ins.targets.size(); base += gg, inst++) {
                    auto it = plan->pauli.find(loc_key(idx, inst));
                    if (it == plan->pauli.end()) continue;
                    for (size_t k = 0; k < gg; k++)
                        if (it->second[k] != 'I') pauli(ins.targets[base + k].value, it->second[k]);
                }
                break;
            }
        }
    }

    bool rec_parity(const Instruction &ins) const {
        bool par = false;
        for (const Target &tg : ins.targets) par ^= record.get(rec_abs(tg.value));
        return par;
    }

    void do_annotation(const Instruction &ins) {
        switch (ins.op) {
            case Op::OBSERVABLE_INCLUDE:
                if (rec_parity(ins)) obs.flip(size_t(ins.args[0]));
                break;
            case Op::DETECTOR:
            case Op::DETECTOR_SOFT:
            case Op::POSTSELECT: {
                if (!rec_parity(ins)) break;
                if (mode == Mode::Reference)
                    throw std::runtime_error(std::string(op_info(ins.op).name) +
                                             " parity nonzero in the noiseless reference run");
                if (ins.op == Op::POSTSELECT ||
                    (ins.op == Op::DETECTOR && discard_on_detector)) {
                    kept = false;
                    discard_op = ins.op;
                }
                break;
            }
            default: break;
        }
    }

    void run(const Circuit &c) {
        for (size_t i = 0; i < c.instructions.size() && kept; i++) {
            const Instruction &ins = c.instructions[i];
            switch (op_info(ins.op).kind) {
                case OpKind::Gate: do_gate(ins); break;
                case OpKind::Reset:
                    for (const Target &tg : ins.targets) {
                        if (ins.op == Op::R) t.reset_z(tg.value);
                        else t.reset_x(tg.value);
                    }
                    break;
                case OpKind::Measure: do_measure(ins); break;
                case OpKind::Noise: do_noise(ins, int(i)); break;
                case OpKind::Annotation: do_annotation(ins); break;
            }
        }
    }
};

// |<psi| X^xm Z^zm |psi>|^2 with masks over the state's slots. For the
// stabilizer states this gets used on the answer is 1 (operator stabilizes
// up to phase) or 0 (it anticommutes with some stabilizer).
double pauli_overlap(const std::vector<Cd> &amp, uint64_t xm, uint64_t zm) {
    Cd acc = 0;
    for (size_t i = 0; i < amp.size(); i++) {
        double sg = __builtin_parityll(i & zm) ? -1.0 : 1.0;
        acc += std::conj(amp[i ^ xm]) * amp[i] * sg;
    }
    return std::norm(acc);
}

}  // namespace

int StateVector::slot_of(int q) const {
    for (size_t k = 0; k < qubits.size(); k++)
        if (qubits[k] == q) return int(k);
    return -1;
}

double StateVector::norm() const {
    double acc = 0;
    for (const auto &a : amp) acc += std::norm(a);
    return acc;
}

StateVector make_state(const std::vector<int> &qubits) {
    if (qubits.size() > 26) throw std::invalid_argument("state too wide");
    for (size_t a = 0; a < qubits.size(); a++)
        for (size_t b = a + 1; b < qubits.size(); b++)
            if (qubits[a] == qubits[b]) throw std::invalid_argument("duplicate qubit in state");
    StateVector sv;
    sv.qubits = qubits;
    sv.amp.assign(size_t(1) << qubits.size(), Cd(0));
    sv.amp[0] = Cd(1);
    return sv;
}

void apply_unitary(StateVector &sv, const Circuit &c, int cap) {
    if (sv.amp.size() != size_t(1) << sv.qubits.size())
        throw std::invalid_argument("state size does not match its qubit list");
    c.validate();
    int nq = c.num_qubits();
    for (int q : sv.qubits) nq = std::max(nq, q + 1);

    Engine<double> eng;
    eng.setup(nq, 0, cap);
    eng.amp.assign(sv.amp.begin(), sv.amp.end());
    eng.q_of_slot = sv.qubits;
    for (size_t k = 0; k < sv.qubits.size(); k++) eng.slot_of[sv.qubits[k]] = int(k);

    for (const Instruction &ins : c.instructions) {
        const OpInfo &info = op_info(ins.op);
        if (ins.op == Op::TICK || ins.op == Op::QUBIT_COORDS) continue;
        if (info.kind != OpKind::Gate)
            throw std::invalid_argument(std::string(info.name) + " is not unitary");
        for (const Target &t : ins.targets)
            if (t.is_rec) throw std::invalid_argument("feed-forward is not unitary");
        eng.do_gate(ins);
    }
    sv.amp.assign(eng.amp.begin(), eng.amp.end());
    sv.qubits = eng.q_of_slot;
}

std::complex<double> eigencheck(const Circuit &op_circuit, const StateVector &psi) {
    StateVector u = psi;
    apply_unitary(u, op_circuit, 26);
    // qubits the op circuit pulled in beyond psi started (and stayed) in |0>
    std::vector<int> perm(u.qubits.size(), -1);
    size_t extra = 0;
    for (size_t k = 0; k < u.qubits.size(); k++) {
        int ps = psi.slot_of(u.qubits[k]);
        if (ps < 0) extra |= size_t(1) << k;
        else perm[k] = ps;
    }
    Cd acc = 0;
    for (size_t i = 0; i < u.amp.size(); i++) {
        if (i & extra) continue;
        size_t j = 0, rem = i;
        while (rem) {
            int k = __builtin_ctzll(rem);
            rem &= rem - 1;
            j |= size_t(1) << perm[k];
        }
        acc += std::conj(psi.amp[j]) * u.amp[i];
    }
    return acc;
}

StateVector reference_state(const Circuit &c, int cap) {
    c.validate();
    Engine<double> eng;
    eng.setup(c.num_qubits(), c.num_observables(), cap);
    eng.mode = Mode::Reference;
    eng.run(c);
    StateVector out;
    out.amp = eng.amp;
    out.qubits = eng.q_of_slot;
    return out;
}

std::string FidelityReport::csv() const {
    std::ostringstream ss;
    ss << std::setprecision(10);
    if (!per_shot.empty()) {
        ss << "shot,kept,fidelity,logical_error\n";
        for (size_t i = 0; i < per_shot.size(); i++) {
            const DenseShot &s = per_shot[i];
            ss << i << ',' << int(s.kept) << ',' << s.fidelity << ',' << int(s.logical_error)
               << '\n';
        }
    } else {
        ss << "shots,kept,zero_fault,logical_errors,mean_fidelity\n";
        ss << shots << ',' << kept << ',' << zero_fault << ',' << logical_errors << ','
           << mean_fidelity() << '\n';
    }
    return ss.str();
}

FidelityReport run_dense(const Circuit &c, const DenseOptions &opt) {
    if (opt.single_precision) return run_dense_impl<float>(c, opt);
    return run_dense_impl<double>(c, opt);
}

TrajectoryReport run_tableau(const Circuit &c, const DenseOptions &opt) {
    c.validate();
    int nq = c.num_qubits();
    int nobs = c.num_observables();

    TabRunner ref;
    ref.setup(nq, nobs);
    ref.mode = Mode::Reference;
    ref.run(c);

    TrajectoryReport rep;
    rep.shots = opt.shots;
    rep.reference_observables = ref.obs;
    rep.observable_flips.assign(size_t(nobs), 0);
    ShotPlan plan;
    TabRunner r;
    bool cacheable = !ref.hit_random;
    for (uint64_t shot = 0; shot < opt.shots; shot++) {
        Rng rng(opt.seed, shot);
        sample_plan(c, rng, plan);
        TrajectoryShot sh;
        if (plan.clean && cacheable) {
            sh.kept = true;
            sh.record = ref.record;
            sh.observables = ref.obs;
        } else {
            r.setup(nq, nobs);
            r.mode = Mode::Sample;
            r.rng = &rng;
            r.plan = &plan;
            r.discard_on_detector = opt.discard_on_detector;
            r.run(c);
            sh.kept = r.kept;
            if (!r.kept)
                (r.discard_op == Op::POSTSELECT ? rep.postselect_discards
                                                : rep.detector_discards)++;
            sh.record = r.record;
            sh.observables = r.obs;
        }
        if (sh.kept) {
            rep.kept++;
            for (int k = 0; k < nobs; k++)
                if (sh.observables.get(size_t(k)) != ref.obs.get(size_t(k)))
                    rep.observable_flips[size_t(k)]++;
        }
        if (opt.keep_records) rep.per_shot.push_back(std::move(sh));
    }
    return rep;
}

namespace {

struct ScanSite {
    int inst = 0;
    int instance = 0;
    std::vector<std::string> opts;
};

std::vector<ScanSite> scan_sites(const Circuit &c) {
    std::vector<ScanSite> sites;
    for (size_t i = 0; i < c.instructions.size(); i++) {
        const Instruction &ins = c.instructions[i];
        if (op_info(ins.op).kind != OpKind::Noise) continue;
        switch (ins.op) {
            case Op::DEP1:
            case Op::XERR:
            case Op::ZERR:
            case Op::MERR:
                for (size_t k = 0; k < ins.targets.size(); k++) {
                    ScanSite s{int(i), int(k), {}};
                    if (ins.op == Op::DEP1) s.opts = {"X", "Y", "Z"};
                    else if (ins.op == Op::XERR) s.opts = {"X"};
                    else if (ins.op == Op::ZERR) s.opts = {"Z"};
                    else s.opts = {"R"};
                    sites.push_back(std::move(s));
                }
                break;
            case Op::DEP2:
                for (size_t base = 0, inst = 0; base + 2 <= ins.targets.size();
                     base += 2, inst++) {
                    ScanSite s{int(i), int(inst), {}};
                    for (int k = 1; k < 16; k++)
                        s.opts.push_back({"IXYZ"[k >> 2], "IXYZ"[k & 3]});
                    sites.push_back(std::move(s));
                }
                break;
            case Op::DEP3:
                for (size_t base = 0, inst = 0; base + 3 <= ins.targets.size();
                     base += 3, inst++) {
                    ScanSite s{int(i), int(inst), {}};
                    for (int k = 1; k < 64; k++)
                        s.opts.push_back(
                            {"IXYZ"[(k >> 4) & 3], "IXYZ"[(k >> 2) & 3], "IXYZ"[k & 3]});
                    sites.push_back(std::move(s));
                }
                break;
            default: break;  // HERALD is flagged, CORR coins are protocol randomness
        }
    }
    return sites;
}

// Signature of a fault set against everything downstream that can see it.
struct ScanSig {
    BitVec checks, obs;
    uint64_t fx = 0, fz = 0;  // residual frame on the final live qubits

    void toggle(const ScanSig &o) {
        checks ^= o.checks;
        obs ^= o.obs;
        fx ^= o.fx;
        fz ^= o.fz;
    }
};

// Static layout facts a frame propagation needs: absolute record indices for
// everything that reads the record.
struct ScanLayout {
    int num_meas = 0;
    std::vector<int> rec_base;                      // per instruction
    std::vector<std::vector<int>> checks;           // rec indices per check
    std::vector<std::vector<int>> obs_recs;         // rec indices per observable
    std::unordered_map<uint64_t, int> merr_rec;     // fault loc -> flipped rec
    std::unordered_map<uint64_t, int> gate_rec;     // rec-controlled gate loc -> rec
};

ScanLayout scan_layout(const Circuit &c, int nq, int nobs) {
    ScanLayout lay;
    lay.rec_base.resize(c.instructions.size(), 0);
    lay.obs_recs.resize(size_t(nobs));
    std::vector<int> last_rec(size_t(nq), -1);
    int meas = 0;
    for (size_t i = 0; i < c.instructions.size(); i++) {
        lay.rec_base[i] = meas;
        const Instruction &ins = c.instructions[i];
        switch (ins.op) {
            case Op::M:
            case Op::MX:
                for (const Target &t : ins.targets) last_rec[t.value] = meas++;
                break;
            case Op::MPP_X:
            case Op::MPP_Z:
                for (const Target &t : ins.targets) last_rec[t.value] = meas;
                meas++;
                break;
            case Op::MERR:
                for (size_t k = 0; k < ins.targets.size(); k++)
                    lay.merr_rec[loc_key(int(i), int(k))] = last_rec[ins.targets[k].value];
                break;
            case Op::CX:
            case Op::CZ: {
                for (size_t base = 0, inst = 0; base + 2 <= ins.targets.size();
                     base += 2, inst++)
                    if (ins.targets[base].is_rec)
                        lay.gate_rec[loc_key(int(i), int(inst))] =
                            meas + ins.targets[base].value;
                break;
            }
            case Op::DETECTOR:
            case Op::DETECTOR_SOFT:
            case Op::POSTSELECT: {
                std::vector<int> recs;
                for (const Target &t : ins.targets) recs.push_back(meas + t.value);
                lay.checks.push_back(std::move(recs));
                break;
            }
            case Op::OBSERVABLE_INCLUDE:
                for (const Target &t : ins.targets)
                    lay.obs_recs[size_t(ins.args[0])].push_back(meas + t.value);
                break;
            default: break;
        }
    }
    lay.num_meas = meas;
    return lay;
}

// Pauli-frame propagation of a single fault through a Clifford circuit.
ScanSig propagate_frame(const Circuit &c, const ScanLayout &lay, int nq,
                        const Engine<double> &ref, const Fault &f) {
    PauliString frame{size_t(nq)};
    BitVec flips(size_t(lay.num_meas));
    if (f.paulis == "R") {
        flips.set(size_t(lay.merr_rec.at(loc_key(f.instruction, f.instance))), true);
    } else {
        const Instruction &src = c.instructions[size_t(f.instruction)];
        int g = op_info(src.op).group;
        size_t base = size_t(f.instance) * size_t(g);
        for (size_t k = 0; k < f.paulis.size(); k++) {
            char p = f.paulis[k];
            size_t q = size_t(src.targets[base + k].value);
            if (p == 'X' || p == 'Y') frame.x.flip(q);
            if (p == 'Z' || p == 'Y') frame.z.flip(q);
        }
    }

    for (size_t j = size_t(f.instruction) + 1; j < c.instructions.size(); j++) {
        const Instruction &ins = c.instructions[j];
        const OpInfo &info = op_info(ins.op);
        switch (info.kind) {
            case OpKind::Gate: {
                int g = info.group;
                for (size_t base = 0, inst = 0; base < ins.targets.size();
                     base += size_t(g), inst++) {
                    const Target *tg = &ins.targets[base];
                    if ((ins.op == Op::CX || ins.op == Op::CZ) && tg[0].is_rec) {
                        if (flips.get(size_t(lay.gate_rec.at(loc_key(int(j), int(inst)))))) {
                            if (ins.op == Op::CX) frame.x.flip(size_t(tg[1].value));
                            else frame.z.flip(size_t(tg[1].value));
                        }
                        continue;
                    }
                    std::vector<int> qs(size_t(g), 0);
                    for (int k = 0; k < g; k++) qs[size_t(k)] = tg[k].value;
                    frame = conjugate_gate(ins.op, qs, frame);
                }
                break;
            }
            case OpKind::Measure: {
                int rb = lay.rec_base[j];
                if (ins.op == Op::M) {
                    for (size_t k = 0; k < ins.targets.size(); k++) {
                        size_t q = size_t(ins.targets[k].value);
                        if (frame.x.get(q)) flips.flip(size_t(rb) + k);
                        frame.z.set(q, false);
                    }
                } else if (ins.op == Op::MX) {
                    for (size_t k = 0; k < ins.targets.size(); k++) {
                        size_t q = size_t(ins.targets[k].value);
                        if (frame.z.get(q)) flips.flip(size_t(rb) + k);
                        frame.x.set(q, false);
                    }
                } else {
                    bool fl = false;
                    for (const Target &t : ins.targets) {
                        size_t q = size_t(t.value);
                        fl ^= ins.op == Op::MPP_Z ? frame.x.get(q) : frame.z.get(q);
                    }
                    if (fl) flips.flip(size_t(rb));
                }
                break;
            }
            case OpKind::Reset:
                for (const Target &t : ins.targets) {
                    frame.x.set(size_t(t.value), false);
                    frame.z.set(size_t(t.value), false);
                }
                break;
            default: break;
        }
    }

    ScanSig sig;
    sig.checks = BitVec(lay.checks.size());
    for (size_t k = 0; k < lay.checks.size(); k++) {
        bool par = false;
        for (int r : lay.checks[k]) par ^= flips.get(size_t(r));
        sig.checks.set(k, par);
    }
    sig.obs = BitVec(lay.obs_recs.size());
    for (size_t k = 0; k < lay.obs_recs.size(); k++) {
        bool par = false;
        for (int r : lay.obs_recs[k]) par ^= flips.get(size_t(r));
        sig.obs.set(k, par);
    }
    for (size_t k = 0; k < ref.q_of_slot.size(); k++) {
        size_t q = size_t(ref.q_of_slot[k]);
        if (frame.x.get(q)) sig.fx |= uint64_t(1) << k;
        if (frame.z.get(q)) sig.fz |= uint64_t(1) << k;
    }
    return sig;
}

}  // namespace

FaultScanReport fault_scan(const Circuit &c, const FaultScanOptions &opt) {
    c.validate();
    if (opt.max_weight < 1) throw std::invalid_argument("max_weight must be at least 1");
    int nq = c.num_qubits();
    int nobs = c.num_observables();

    std::vector<ScanSite> sites = scan_sites(c);

    // combination count before any work
    const uint64_t kInf = ~uint64_t(0);
    std::vector<uint64_t> dp(size_t(opt.max_weight) + 1, 0);
    dp[0] = 1;
    for (const ScanSite &s : sites) {
        uint64_t m = s.opts.size();
        for (int k = opt.max_weight; k >= 1; k--) {
            if (!dp[size_t(k) - 1]) continue;
            uint64_t add = dp[size_t(k) - 1] > kInf / m ? kInf : dp[size_t(k) - 1] * m;
            dp[size_t(k)] = dp[size_t(k)] > kInf - add ? kInf : dp[size_t(k)] + add;
        }
    }
    uint64_t total = 0;
    for (int k = 1; k <= opt.max_weight; k++)
        total = total > kInf - dp[size_t(k)] ? kInf : total + dp[size_t(k)];
    if (total > opt.budget)
        throw std::runtime_error("fault scan over budget: " +
                                 (total == kInf ? std::string("huge") : std::to_string(total)) +
                                 " combinations");

    bool clifford = true;
    for (const Instruction &ins : c.instructions) {
        const OpInfo &info = op_info(ins.op);
        if (info.kind == OpKind::Gate && !info.clifford) clifford = false;
    }

    Engine<double> ref;
    ref.setup(nq, nobs, opt.cap);
    ref.mode = Mode::Reference;
    ref.run(c);

    FaultScanReport rep;
    std::vector<Fault> cur;

    if (clifford) {
        ScanLayout lay = scan_layout(c, nq, nobs);
        std::vector<std::vector<ScanSig>> sigs(sites.size());
        for (size_t s = 0; s < sites.size(); s++)
            for (const std::string &o : sites[s].opts)
                sigs[s].push_back(propagate_frame(
                    c, lay, nq, ref, Fault{sites[s].inst, sites[s].instance, o}));

        // residual-frame verdicts are memoized; for a stabilizer reference
        // they are exactly benign (overlap 1) or logical (overlap 0)
        std::map<std::pair<uint64_t, uint64_t>, bool> frame_logical;
        auto residual_logical = [&](uint64_t fx, uint64_t fz) {
            auto key = std::make_pair(fx, fz);
            auto it = frame_logical.find(key);
            if (it != frame_logical.end()) return it->second;
            bool bad = pauli_overlap(ref.amp, fx, fz) < 0.5;
            frame_logical.emplace(key, bad);
            return bad;
        };

        ScanSig acc;
        acc.checks = BitVec(lay.checks.size());
        acc.obs = BitVec(size_t(nobs));
        std::function<void(size_t)> go = [&](size_t from) {
            for (size_t s = from; s < sites.size(); s++) {
                for (size_t oi = 0; oi < sites[s].opts.size(); oi++) {
                    cur.push_back(Fault{sites[s].inst, sites[s].instance, sites[s].opts[oi]});
                    acc.toggle(sigs[s][oi]);
                    rep.classified++;
                    bool logical;
                    if (opt.require_all_observables)
                        logical = nobs > 0 && acc.obs.popcount() == size_t(nobs);
                    else
                        logical = acc.obs.any() ||
                                  ((acc.fx | acc.fz) && residual_logical(acc.fx, acc.fz));
                    if (acc.checks.any()) {
                        rep.detected++;
                    } else if (logical) {
                        rep.undetected++;
                        rep.undetected_logical.push_back(cur);
                    } else {
                        rep.benign++;
                    }
                    if (int(cur.size()) < opt.max_weight) go(s + 1);
                    acc.toggle(sigs[s][oi]);
                    cur.pop_back();
                }
            }
        };
        go(0);
        return rep;
    }

    // dense path: rerun per combination, following the reference branch
    ShotPlan plan;
    Engine<double> eng;
    std::function<void(size_t)> go = [&](size_t from) {
        for (size_t s = from; s < sites.size(); s++) {
            for (const std::string &o : sites[s].opts) {
                cur.push_back(Fault{sites[s].inst, sites[s].instance, o});
                plan.clear();
                for (const Fault &f : cur) {
                    uint64_t loc = loc_key(f.instruction, f.instance);
                    if (f.paulis == "R") plan.merr.insert(loc);
                    else plan.pauli[loc] = f.paulis;
                }
                eng.setup(nq, nobs, opt.cap);
                eng.mode = Mode::Scan;
                eng.plan = &plan;
                eng.ref_rec = &ref.record;
                eng.run(c);
                rep.classified++;
                if (!eng.kept) {
                    rep.detected++;
                } else {
                    bool logical;
                    if (opt.require_all_observables) {
                        size_t flips = 0;
                        for (int k = 0; k < nobs; k++)
                            if (eng.obs.get(size_t(k)) != ref.obs.get(size_t(k))) flips++;
                        logical = nobs > 0 && flips == size_t(nobs);
                    } else {
                        logical = !(eng.obs == ref.obs) || fidelity_between(ref, eng) < 0.5;
                    }
                    if (logical) {
                        rep.undetected++;
                        rep.undetected_logical.push_back(cur);
                    } else {
                        rep.benign++;
                    }
                }
                if (int(cur.size()) < opt.max_weight) go(s + 1);
                cur.pop_back();
            }
        }
    };
    go(0);
    return rep;
}

std::string fault_scan_text(const Circuit &c, const FaultScanReport &r) {
    std::ostringstream ss;
    ss << "classified " << r.classified << ": detected " << r.detected << ", benign " << r.benign
       << ", undetected-logical " << r.undetected << "\n";
    std::vector<int> tick_of(c.instructions.size(), 0);
    int t = 0;
    for (size_t i = 0; i < c.instructions.size(); i++) {
        if (c.instructions[i].op == Op::TICK) t++;
        tick_of[i] = t;
    }
    for (const std::vector<Fault> &combo : r.undetected_logical) {
        std::string line;
        for (const Fault &f : combo) {
            const Instruction &ins = c.instructions[size_t(f.instruction)];
            int g = op_info(ins.op).group;
            size_t gg = g == 0 ? ins.targets.size() : size_t(g);
            size_t base = size_t(f.instance) * gg;
            if (f.paulis == "R") {
                if (!line.empty()) line += " + ";
                line += "tick " + std::to_string(tick_of[size_t(f.instruction)]) + " qubit " +
                        std::to_string(ins.targets[base].value) + " rec";
                continue;
            }
            for (size_t k = 0; k < f.paulis.size(); k++) {
                if (f.paulis[k] == 'I') continue;
                if (!line.empty()) line += " + ";
                line += "tick " + std::to_string(tick_of[size_t(f.instruction)]) + " qubit " +
                        std::to_string(ins.targets[base + k].value) + " " + f.paulis[k];
            }
        }
        ss << "  " << line << "\n";
    }
    return ss.str();
}

}  // namespace cultivar
