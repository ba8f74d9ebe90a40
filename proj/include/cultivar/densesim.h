#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "cultivar/bits.h"
#include "cultivar/circuit.h"
#include "cultivar/rng.h"

namespace cultivar {

// Dense state over a dynamic set of circuit qubits. Bit k of an amplitude
// index is the state of qubits[k]. Qubits enter the vector at their first
// use and leave after a terminal single-qubit measurement, which is what
// keeps wide circuits under the width cap.
struct StateVector {
    std::vector<std::complex<double>> amp;  // size 2^width
    std::vector<int> qubits;                // slot -> circuit qubit id

    size_t width() const { return qubits.size(); }
    int slot_of(int q) const;  // -1 if absent
    double norm() const;
};

StateVector make_state(const std::vector<int> &qubits);

// Applies a unitary-only circuit in place. Rejects resets, measurements,
// noise, and feed-forward. Qubits not yet in the vector join in |0>.
void apply_unitary(StateVector &sv, const Circuit &c, int cap = 22);

// <psi|U|psi> for a unitary op circuit.
std::complex<double> eigencheck(const Circuit &op_circuit, const StateVector &psi);

// Runs the circuit once with reference semantics (noise skipped, coins zero,
// nondeterministic measurements forced to +1) and returns the final state.
// Throws if a POSTSELECT or DETECTOR parity comes out nonzero, since circuits
// are expected to be deterministic and quiet in the noiseless reference run.
StateVector reference_state(const Circuit &c, int cap = 22);

struct DenseOptions {
    uint64_t shots = 1;
    uint64_t seed = 0;
    int cap = 22;                     // max simultaneous live qubits
    bool single_precision = false;    // float amplitudes for bulk Monte Carlo
    bool discard_on_detector = true;  // hard DETECTOR parities postselect the shot
    bool keep_records = false;        // store per-shot results in the report
};

struct DenseShot {
    bool kept = false;
    bool logical_error = false;
    double fidelity = 0;  // vs the noiseless reference state; kept shots only
    BitVec record;
    BitVec observables;
};

struct FidelityReport {
    uint64_t shots = 0, kept = 0, logical_errors = 0;
    uint64_t postselect_discards = 0;  // first failed annotation was POSTSELECT
    uint64_t detector_discards = 0;    // first failed annotation was DETECTOR
    uint64_t zero_fault = 0;     // shots served from the noiseless cache
    double fidelity_sum = 0;     // over kept shots
    std::vector<DenseShot> per_shot;  // only with keep_records

    double kept_fraction() const { return shots ? double(kept) / double(shots) : 0.0; }
    double mean_fidelity() const { return kept ? fidelity_sum / double(kept) : 0.0; }
    double infidelity() const { return kept ? 1.0 - mean_fidelity() : 1.0; }
    std::string csv() const;  // per-shot rows when kept, else a summary row
};

// Quantum-trajectory sampler. Noise decisions for a shot are drawn up front
// in instruction order, then the shot executes with those faults injected;
// measurement randomness is drawn during execution. When the noiseless run
// is fully deterministic, shots whose plan fires nothing reuse the cached
// reference result; circuits with genuinely random measurements execute
// every shot, so their outcome statistics stay honest. Kept shots are scored
// by overlap with the reference final state (reference postselect branches
// are the +1 ones, so that state is the encoded target the circuit prepares).
FidelityReport run_dense(const Circuit &c, const DenseOptions &opt);

// Tableau-backed trajectory runner for Clifford circuits. Consumes
// randomness identically to run_dense (same plan draws, and measurement
// draws happen exactly where the dense Born probability is 1/2), so the two
// engines produce bit-identical records shot for shot under one seed.
// The one caveat: resetting a qubit while it is entangled draws in the dense
// engine but not here; circuits measure before reset, so this does not arise.
struct TrajectoryShot {
    bool kept = false;
    BitVec record;
    BitVec observables;
};

struct TrajectoryReport {
    uint64_t shots = 0, kept = 0;
    uint64_t postselect_discards = 0;
    uint64_t detector_discards = 0;
    BitVec reference_observables;            // noiseless values the flips are counted against
    std::vector<uint64_t> observable_flips;  // per observable, kept shots only
    std::vector<TrajectoryShot> per_shot;    // only with keep_records

    double kept_fraction() const { return shots ? double(kept) / double(shots) : 0.0; }
};

TrajectoryReport run_tableau(const Circuit &c, const DenseOptions &opt);

// Exhaustive fault classification. The fault universe is every Pauli option
// of every DEP/XERR/ZERR channel instance plus MERR record flips; HERALD
// (erasure is flagged by construction) and CORR coins (protocol randomness)
// are not faults. Combinations up to max_weight pick at most one option per
// channel instance.
struct Fault {
    int instruction = 0;  // index into circuit.instructions
    int instance = 0;
    std::string paulis;   // per-target "IXYZ" letters; "R" for a record flip
};

struct FaultScanOptions {
    int max_weight = 1;
    uint64_t budget = 20'000'000;  // max combinations to classify
    int cap = 22;                  // dense-path width cap
    // count a quiet combination as logical only when every observable flips
    // (acceptance tests where each observable is a separate accept condition)
    bool require_all_observables = false;
};

struct FaultScanReport {
    uint64_t classified = 0;
    uint64_t detected = 0, benign = 0, undetected = 0;
    std::vector<std::vector<Fault>> undetected_logical;
};

// Classifies each combination as detected (some DETECTOR, DETECTOR_SOFT, or
// POSTSELECT parity deviates from the quiet reference), undetected-logical
// (quiet, but an observable flips or the kept state lands at fidelity < 1/2),
// or benign. Clifford circuits take a Pauli-frame fast path whose pair
// signatures compose linearly; non-Clifford circuits re-run the dense engine
// per combination, following the reference branch wherever a measurement
// stays ambiguous, which is the branch every check passes on.
FaultScanReport fault_scan(const Circuit &c, const FaultScanOptions &opt);

// Text report listing undetected-logical faults by (tick, qubit, pauli).
std::string fault_scan_text(const Circuit &c, const FaultScanReport &r);

}  // namespace cultivar
