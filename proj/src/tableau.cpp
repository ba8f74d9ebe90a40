#include "cultivar/tableau.h"

#include <cassert>
#include <stdexcept>

namespace cultivar {

PauliString PauliString::from_str(const std::string &s) {
    size_t i = 0;
    uint8_t phase = 0;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        if (s[i] == '-') phase = 2;
        i++;
    }
    PauliString p(s.size() - i);
    for (size_t q = 0; i < s.size(); i++, q++) {
        switch (s[i]) {
            case 'I': case '_': break;
            case 'X': p.x.set(q, true); break;
            case 'Z': p.z.set(q, true); break;
            case 'Y': p.x.set(q, true); p.z.set(q, true); break;
            default: throw std::invalid_argument("bad pauli char");
        }
    }
    p.phase = phase;
    return p;
}

PauliString PauliString::single(size_t n, size_t q, char pauli) {
    PauliString p(n);
    if (pauli == 'X' || pauli == 'Y') p.x.set(q, true);
    if (pauli == 'Z' || pauli == 'Y') p.z.set(q, true);
    return p;
}

PauliString PauliString::operator*(const PauliString &o) const {
    PauliString r(num_qubits());
    int64_t e = int64_t(phase) + o.phase;
    for (size_t i = 0; i < x.words.size(); i++) {
        uint64_t x1 = x.words[i], z1 = z.words[i];
        uint64_t x2 = o.x.words[i], z2 = o.z.words[i];
        e += __builtin_popcountll(x1 & z1);
        e += __builtin_popcountll(x2 & z2);
        e -= __builtin_popcountll((x1 ^ x2) & (z1 ^ z2));
        e += 2 * __builtin_popcountll(z1 & x2);
        r.x.words[i] = x1 ^ x2;
        r.z.words[i] = z1 ^ z2;
    }
    r.phase = uint8_t(((e % 4) + 4) % 4);
    return r;
}

std::string PauliString::str() const {
    static const char *pre[4] = {"+", "+i", "-", "-i"};
    std::string s = pre[phase];
    for (size_t q = 0; q < num_qubits(); q++) s += pauli_at(q);
    return s;
}

namespace {

struct QBits {
    bool x, z;
};

inline QBits row_bits(const PauliString &p, int q) { return {p.x.get(q), p.z.get(q)}; }

inline void set_bits(PauliString &p, int q, QBits b) {
    p.x.set(q, b.x);
    p.z.set(q, b.z);
}

// applies one Clifford gate to one Pauli row in place
void apply_row(PauliString &p, Op op, const std::vector<int> &qs) {
    switch (op) {
        case Op::I:
        case Op::I2:
        case Op::I3:
            break;
        case Op::X: {
            if (p.z.get(qs[0])) p.phase ^= 2;
            break;
        }
        case Op::Y: {
            auto b = row_bits(p, qs[0]);
            if (b.x ^ b.z) p.phase ^= 2;
            break;
        }
        case Op::Z: {
            if (p.x.get(qs[0])) p.phase ^= 2;
            break;
        }
        case Op::H: {
            auto b = row_bits(p, qs[0]);
            if (b.x && b.z) p.phase ^= 2;
            set_bits(p, qs[0], {b.z, b.x});
            break;
        }
        case Op::S: {
            auto b = row_bits(p, qs[0]);
            if (b.x && b.z) p.phase ^= 2;
            p.z.set(qs[0], b.z ^ b.x);
            break;
        }
        case Op::S_DAG: {
            auto b = row_bits(p, qs[0]);
            if (b.x && !b.z) p.phase ^= 2;
            p.z.set(qs[0], b.z ^ b.x);
            break;
        }
        case Op::H_XY: {
            auto b = row_bits(p, qs[0]);
            if (b.z && !b.x) p.phase ^= 2;
            p.z.set(qs[0], b.z ^ b.x);
            break;
        }
        case Op::H_XYZ: {
            // X -> -Y, Y -> -X, Z -> -Z
            auto b = row_bits(p, qs[0]);
            if (b.x || b.z) p.phase ^= 2;
            p.z.set(qs[0], b.z ^ b.x);
            break;
        }
        case Op::CX: {
            auto c = row_bits(p, qs[0]), t = row_bits(p, qs[1]);
            if (c.x && t.z && !(t.x ^ c.z)) p.phase ^= 2;
            p.x.set(qs[1], t.x ^ c.x);
            p.z.set(qs[0], c.z ^ t.z);
            break;
        }
        case Op::CZ: {
            auto a = row_bits(p, qs[0]), b = row_bits(p, qs[1]);
            if (a.x && b.x && (a.z ^ b.z)) p.phase ^= 2;
            p.z.set(qs[0], a.z ^ b.x);
            p.z.set(qs[1], b.z ^ a.x);
            break;
        }
        case Op::SWAP: {
            auto a = row_bits(p, qs[0]), b = row_bits(p, qs[1]);
            set_bits(p, qs[0], b);
            set_bits(p, qs[1], a);
            break;
        }
        case Op::CXX: {
            apply_row(p, Op::CX, {qs[0], qs[1]});
            apply_row(p, Op::CX, {qs[0], qs[2]});
            break;
        }
        default:
            throw std::invalid_argument(std::string("non-Clifford gate in tableau path: ") +
                                        op_info(op).name);
    }
}

}  // namespace

PauliString conjugate_gate(Op op, const std::vector<int> &qubits, const PauliString &p) {
    PauliString r = p;
    apply_row(r, op, qubits);
    return r;
}

PauliString conjugate(const Circuit &c, PauliString p) {
    for (const auto &ins : c.instructions) {
        const OpInfo &info = op_info(ins.op);
        if (info.kind == OpKind::Annotation) continue;
        if (info.kind != OpKind::Gate)
            throw std::invalid_argument("conjugate requires a unitary circuit");
        int g = info.group;
        if (g == 0) throw std::invalid_argument("conjugate requires a unitary circuit");
        for (size_t base = 0; base < ins.targets.size(); base += g) {
            std::vector<int> qs;
            for (int k = 0; k < g; k++) {
                if (ins.targets[base + k].is_rec)
                    throw std::invalid_argument("conjugate cannot handle feed-forward");
                qs.push_back(ins.targets[base + k].value);
            }
            apply_row(p, ins.op, qs);
        }
    }
    return p;
}

Tableau::Tableau(size_t n_) : n(n_) {
    rows.reserve(2 * n);
    for (size_t i = 0; i < n; i++) rows.push_back(PauliString::single(n, i, 'X'));
    for (size_t i = 0; i < n; i++) rows.push_back(PauliString::single(n, i, 'Z'));
}

void Tableau::apply(Op op, const std::vector<int> &qubits) {
    for (auto &row : rows) apply_row(row, op, qubits);
}

bool Tableau::measure_pauli(const PauliString &p, Rng *rng, bool *was_random,
                            bool force_minus) {
    assert(p.phase % 2 == 0);
    size_t a = n;
    for (size_t i = 0; i < n; i++) {
        if (!stab(i).commutes(p)) { a = i; break; }
    }
    if (a < n) {
        if (was_random) *was_random = true;
        PauliString old_stab = stab(a);
        for (size_t r = 0; r < 2 * n; r++) {
            if (r == a || r == n + a) continue;
            if (!rows[r].commutes(p)) rows[r] = rows[r] * old_stab;
        }
        // drawn as a uniform-vs-0.5 compare so dense and tableau runs with the
        // same seed consume randomness identically
        bool outcome = rng ? (rng->uniform() < 0.5) : force_minus;
        destab(a) = old_stab;
        stab(a) = p;
        if (outcome) stab(a).phase ^= 2;
        return outcome;
    }
    if (was_random) *was_random = false;
    // deterministic: p is in the group; accumulate the product
    PauliString scratch(n);
    for (size_t i = 0; i < n; i++)
        if (!destab(i).commutes(p)) scratch = scratch * stab(i);
    assert(scratch.x == p.x && scratch.z == p.z);
    return ((scratch.phase - p.phase) & 3) == 2;
}

void Tableau::reset_z(int q) {
    bool outcome = measure_z(q, nullptr);
    if (outcome) apply(Op::X, {q});
}

void Tableau::reset_x(int q) {
    bool outcome = measure_x(q, nullptr);
    if (outcome) apply(Op::Z, {q});
}

int Tableau::expectation(const PauliString &p) const {
    for (size_t i = 0; i < n; i++)
        if (!stab(i).commutes(p)) return 0;
    PauliString scratch(n);
    for (size_t i = 0; i < n; i++)
        if (!destab(i).commutes(p)) scratch = scratch * stab(i);
    if (!(scratch.x == p.x && scratch.z == p.z)) return 0;
    return ((scratch.phase - p.phase) & 3) == 2 ? -1 : +1;
}

std::vector<PauliString> canonical_group(std::vector<PauliString> gens) {
    if (gens.empty()) return gens;
    size_t n = gens[0].num_qubits();
    size_t done = 0;
    auto eliminate = [&](auto get_bit) {
        for (size_t col = 0; col < n; col++) {
            size_t piv = gens.size();
            for (size_t r = done; r < gens.size(); r++)
                if (get_bit(gens[r], col)) { piv = r; break; }
            if (piv == gens.size()) continue;
            std::swap(gens[done], gens[piv]);
            for (size_t r = 0; r < gens.size(); r++)
                if (r != done && get_bit(gens[r], col)) gens[r] = gens[r] * gens[done];
            done++;
        }
    };
    eliminate([](const PauliString &p, size_t c) { return p.x.get(c); });
    eliminate([](const PauliString &p, size_t c) { return !p.x.get(c) && p.z.get(c); });
    gens.resize(done);  // drop redundant generators
    return gens;
}

int group_sign(const std::vector<PauliString> &gens, const PauliString &p) {
    if (gens.empty()) return p.is_identity() ? (p.phase == 0 ? 1 : -1) : 0;
    size_t n = gens[0].num_qubits();
    std::vector<BitVec> rows;
    rows.reserve(gens.size());
    for (const auto &g : gens) {
        BitVec r(2 * n);
        for (size_t i = 0; i < g.x.words.size(); i++) r.words[i] = g.x.words[i];
        for (size_t q = 0; q < n; q++) if (g.z.get(q)) r.set(n + q, true);
        rows.push_back(std::move(r));
    }
    BitVec b(2 * n);
    for (size_t i = 0; i < p.x.words.size(); i++) b.words[i] = p.x.words[i];
    for (size_t q = 0; q < n; q++) if (p.z.get(q)) b.set(n + q, true);
    bool ok = false;
    auto combo = gf2_solve(rows, b, &ok);
    if (!ok) return 0;
    PauliString prod(n);
    for (int i : combo) prod = prod * gens[size_t(i)];
    int diff = (int(prod.phase) - int(p.phase)) & 3;
    if (diff == 0) return 1;
    if (diff == 2) return -1;
    return 0;  // imaginary ratio; caller treats as not-a-member
}

std::vector<PauliString> Tableau::canonical_stabilizers() const {
    return canonical_group(std::vector<PauliString>(rows.begin() + n, rows.end()));
}

void Tableau::check_invariants() const {
    for (size_t i = 0; i < 2 * n; i++) {
        if (rows[i].phase % 2 != 0) throw std::logic_error("odd row phase");
        for (size_t j = i + 1; j < 2 * n; j++) {
            bool anti = !rows[i].commutes(rows[j]);
            bool expect = (j == i + n);
            if (anti != expect) throw std::logic_error("tableau pairing violated");
        }
    }
}

ReferenceResult simulate_reference(const Circuit &c) {
    return simulate_reference(c, {});
}

ReferenceResult simulate_reference(const Circuit &c, const std::vector<int> &flip_random) {
    size_t nq = c.num_qubits();
    ReferenceResult res{Tableau(nq), BitVec(size_t(c.num_measurements())), {}};
    Tableau &t = res.state;
    size_t m = 0;
    size_t nrand = 0;

    auto next_flip = [&]() { return nrand < flip_random.size() && flip_random[nrand]; };
    auto record = [&](bool outcome, bool was_random) {
        res.measurements.set(m, outcome);
        res.random_mask.push_back(was_random ? 1 : 0);
        if (was_random) nrand++;
        m++;
    };

    for (const auto &ins : c.instructions) {
        const OpInfo &info = op_info(ins.op);
        switch (ins.op) {
            case Op::R:
                for (const auto &tg : ins.targets) t.reset_z(tg.value);
                break;
            case Op::RX:
                for (const auto &tg : ins.targets) t.reset_x(tg.value);
                break;
            case Op::M:
                for (const auto &tg : ins.targets) {
                    bool wr;
                    bool o = t.measure_pauli(PauliString::single(nq, tg.value, 'Z'), nullptr, &wr,
                                             next_flip());
                    record(o, wr);
                }
                break;
            case Op::MX:
                for (const auto &tg : ins.targets) {
                    bool wr;
                    bool o = t.measure_pauli(PauliString::single(nq, tg.value, 'X'), nullptr, &wr,
                                             next_flip());
                    record(o, wr);
                }
                break;
            case Op::MPP_X:
            case Op::MPP_Z: {
                PauliString p(nq);
                for (const auto &tg : ins.targets)
                    (ins.op == Op::MPP_X ? p.x : p.z).set(tg.value, true);
                bool wr;
                bool o = t.measure_pauli(p, nullptr, &wr, next_flip());
                record(o, wr);
                break;
            }
            default:
                if (info.kind == OpKind::Noise || info.kind == OpKind::Annotation) break;
                // gates
                {
                    int g = info.group;
                    for (size_t base = 0; base < ins.targets.size(); base += g) {
                        if (ins.targets[base].is_rec) {
                            // feed-forward Pauli: fires iff the referenced bit is 1
                            int idx = int(m) + ins.targets[base].value;
                            if (idx < 0) throw std::logic_error("rec out of range");
                            if (res.measurements.get(size_t(idx))) {
                                int q = ins.targets[base + 1].value;
                                t.apply(ins.op == Op::CX ? Op::X : Op::Z, {q});
                            }
                            continue;
                        }
                        std::vector<int> qs;
                        for (int k = 0; k < g; k++) qs.push_back(ins.targets[base + k].value);
                        t.apply(ins.op, qs);
                    }
                }
        }
    }
    return res;
}

}  // namespace cultivar
