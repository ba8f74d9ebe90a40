#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cultivar/bits.h"
#include "cultivar/circuit.h"
#include "cultivar/rng.h"

namespace cultivar {

// Pauli operator on n qubits, i^phase * prod_j sigma(x_j, z_j) with the
// Hermitian per-qubit encoding sigma(1,1) = Y.
struct PauliString {
    BitVec x, z;
    uint8_t phase = 0;  // exponent of i, mod 4

    PauliString() = default;
    explicit PauliString(size_t n) : x(n), z(n) {}
    // e.g. "+XIZ", "-YY", "XX" (sign optional)
    static PauliString from_str(const std::string &s);
    // e.g. X on qubit 3, n total
    static PauliString single(size_t n, size_t q, char pauli);

    size_t num_qubits() const { return x.size(); }
    bool commutes(const PauliString &o) const { return !(x.and_parity(o.z) ^ z.and_parity(o.x)); }
    bool is_identity() const { return !x.any() && !z.any(); }
    PauliString operator*(const PauliString &o) const;
    bool operator==(const PauliString &o) const { return x == o.x && z == o.z && phase == o.phase; }
    std::string str() const;
    char pauli_at(size_t q) const {
        int v = int(x.get(q)) | (int(z.get(q)) << 1);
        return "IXZY"[v];
    }
};

// Conjugation of P by a single Clifford gate: G P Gdag with exact sign.
// Throws on non-Clifford ops.
PauliString conjugate_gate(Op op, const std::vector<int> &qubits, const PauliString &p);
// Conjugation by a whole circuit's unitary (gates applied in circuit order;
// resets/measurements/noise/annotations rejected).
PauliString conjugate(const Circuit &c, PauliString p);

// Stabilizer state in tableau form: n destabilizer rows then n stabilizer
// rows. Row phases stay in {0, 2} (Hermitian Paulis).
struct Tableau {
    size_t n = 0;
    std::vector<PauliString> rows;  // 2n of them

    explicit Tableau(size_t n);  // |0...0>

    PauliString &destab(size_t i) { return rows[i]; }
    PauliString &stab(size_t i) { return rows[n + i]; }
    const PauliString &destab(size_t i) const { return rows[i]; }
    const PauliString &stab(size_t i) const { return rows[n + i]; }

    void apply(Op op, const std::vector<int> &qubits);

    // Measures Hermitian Pauli p (phase 0 or 2). Nondeterministic outcomes
    // come from rng, or are forced to +1 when rng is null (reference mode,
    // or to -1 with force_minus set). Returns the outcome bit (0 = +1).
    bool measure_pauli(const PauliString &p, Rng *rng, bool *was_random = nullptr,
                       bool force_minus = false);
    bool measure_z(int q, Rng *rng) { return measure_pauli(PauliString::single(n, q, 'Z'), rng); }
    bool measure_x(int q, Rng *rng) { return measure_pauli(PauliString::single(n, q, 'X'), rng); }
    void reset_z(int q);
    void reset_x(int q);

    // +1/-1 if p is determined by the current group, 0 if random.
    int expectation(const PauliString &p) const;

    // Row-reduced canonical stabilizer generators (X-part pivots first, then
    // Z-part), suitable for group equality tests.
    std::vector<PauliString> canonical_stabilizers() const;

    void check_invariants() const;  // symplectic rank + pairing; throws on violation
};

// Row-reduced canonical generating set of the group generated by `gens`
// (signs carried exactly). Input generators must pairwise commute.
std::vector<PauliString> canonical_group(std::vector<PauliString> gens);

// 0 if p is not in the group span (up to sign); otherwise +1/-1 such that
// p = sign * (product of generators). Generators must pairwise commute.
int group_sign(const std::vector<PauliString> &gens, const PauliString &p);

struct ReferenceResult {
    Tableau state;
    BitVec measurements;          // reference outcome bits, in record order
    std::vector<int> random_mask; // 1 where the outcome was nondeterministic (forced +1)
};

// Runs the Clifford part of a circuit, skipping noise instructions.
// Nondeterministic measurement outcomes are forced to +1. Classically
// controlled gates fire according to the reference record. Throws on
// non-Clifford gates.
ReferenceResult simulate_reference(const Circuit &c);

// Same, but the k-th nondeterministic outcome (counting in record order) is
// forced to -1 where flip_random[k] is nonzero. Used to probe which record
// bits and annotations depend on which random outcomes.
ReferenceResult simulate_reference(const Circuit &c, const std::vector<int> &flip_random);

}  // namespace cultivar
