#pragma once

#include <string>
#include <vector>

#include "cultivar/circuit.h"
#include "cultivar/geometry.h"

namespace cultivar {

// Which magic operation the run cultivates an eigenstate of.
//   H     : the fold-transversal Hadamard of the unrotated code
//   H_XY  : the XY-plane Hadamard (rotated or unrotated code)
//   CX    : a logical CX across two patches, checked with a GHZ ancilla
enum class Variant { H, H_XY, CX };

// How each logical check is realized.
//   DoubleCheck : measure the operator twice through one flag ancilla per
//                 factor, with a fan-in/fan-out parity tree between them
//   Kickback    : single GHZ-kickback check (used at distance 2)
enum class CheckStyle { DoubleCheck, Kickback };

enum class NoiseModel { Uniform, Atom, GateOnly };

// What happens at the very end of the circuit.
//   None        : leave the state alive (dense fidelity studies)
//   Transversal : measure all data in X; proxies also get the logical readout
//   PerfectPair : CX only, noiseless logical XX and ZZ parity readouts
enum class FinalMode { None, Transversal, PerfectPair };

struct NoiseConfig {
    NoiseModel model = NoiseModel::Uniform;
    double p = 0;
    double p3q = -1;  // three-qubit gate strength; negative means 3*p
    double e = 0;     // erasure fraction appended at each noise site
    // erasure draws are appended after all Pauli noise so that e=0 and e>0
    // runs consume the base randomness identically
    bool seed_independent = true;
};

struct ProtocolConfig {
    Variant variant = Variant::H;
    PatchKind patch = PatchKind::Unrotated;
    int d1 = 3;      // cultivation distance (2, 3 or 5)
    int d2 = 3;      // final distance after expansion (>= d1)
    int rounds = 10; // syndrome rounds after expansion
    CheckStyle style = CheckStyle::DoubleCheck;
    bool clifford_proxy = false;
    FinalMode final_mode = FinalMode::Transversal;
    bool wrong_input = false;  // proxy diagnostic: start in the -1 eigenstate
    NoiseConfig noise;
};

// Throws std::invalid_argument on unsupported combinations.
void validate_config(const ProtocolConfig &cfg);

// Injection only: reset, first round with sign fix, logical rotations,
// second round. Noiseless; ends with the state at distance min(d1, 3).
Circuit build_injection(const ProtocolConfig &cfg);

// One logical check block at the given stage distance (the surrounding
// syndrome round included for rotated patches, at rest otherwise).
Circuit build_projection(const ProtocolConfig &cfg, int stage_distance);

// The full cultivation circuit, noiseless: injection, checks, growth,
// expansion to d2, syndrome rounds, final readout, with every measurement
// annotated for post-selection (before expansion) or soft decoding (after).
Circuit build_full(const ProtocolConfig &cfg);

// Inserts noise channels into a noiseless circuit per the configured model.
// Throws if c already contains noise channels.
Circuit apply_noise(const Circuit &c, const NoiseConfig &noise);

// Appends a heralded-erasure draw after every Pauli noise channel.
Circuit apply_erasure(const Circuit &c, double e);

// Rewrites three-qubit gates into CX/H/CCZ sequences (CXX into two CX).
Circuit compile_3q(const Circuit &c);

struct Preset {
    std::string name;
    std::string note;
    ProtocolConfig cfg;
};

const std::vector<Preset> &presets();
const Preset &preset(const std::string &name);  // throws if unknown

}  // namespace cultivar
