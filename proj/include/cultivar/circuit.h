#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cultivar {

// Exact rational coordinate. Denominator is kept positive and the fraction
// reduced, so equality is structural.
struct Frac {
    int64_t num = 0;
    int64_t den = 1;

    Frac() = default;
    Frac(int64_t n) : num(n), den(1) {}
    Frac(int64_t n, int64_t d);

    bool operator==(const Frac &o) const { return num == o.num && den == o.den; }
    bool operator!=(const Frac &o) const { return !(*this == o); }
    bool operator<(const Frac &o) const { return num * o.den < o.num * den; }
    Frac operator+(const Frac &o) const { return Frac(num * o.den + o.num * den, den * o.den); }
    Frac operator-(const Frac &o) const { return Frac(num * o.den - o.num * den, den * o.den); }
    double to_double() const { return double(num) / double(den); }
    std::string str() const;
};

struct Coord {
    Frac x, y;
    bool operator==(const Coord &o) const { return x == o.x && y == o.y; }
    bool operator!=(const Coord &o) const { return !(*this == o); }
    bool operator<(const Coord &o) const {
        if (x != o.x) return x < o.x;
        return y < o.y;
    }
    std::string str() const { return "(" + x.str() + ", " + y.str() + ")"; }
};

enum class Op : uint8_t {
    // 1q Clifford gates. H_XYZ is the Hermitian (Y - X)/sqrt(2), the base of
    // CHXYZ.
    I, X, Y, Z, H, S, S_DAG, H_XY, H_XYZ,
    // 1q non-Clifford rotations. T rotates about Z by an eighth turn of the
    // Bloch sphere pair (diag(1, e^{i pi/4})), T_X is the matching rotation
    // about X.
    T, T_DAG, T_X, T_X_DAG,
    // 2q gates. I2 does nothing; it reserves a two-qubit gate slot so a
    // replaced circuit keeps the gate layout (and thus the noise sites) of
    // the original.
    CX, CZ, SWAP, I2, CH, CHXY, CHXYZ,
    // 3q gates. CXX applies X on both targets when the control is set.
    // CSWAPHH applies SWAP * (H tensor H) on the targets when the control is
    // set. I3 is the three-qubit slot reservation.
    CXX, I3, CCX, CCZ, CSWAP, CSWAPHH,
    // Resets and measurements.
    R, RX, M, MX, MPP_X, MPP_Z,
    // Noise channels. HERALD is a located erasure: with the given probability
    // the shot is flagged and a uniformly random Pauli (identity included)
    // lands on the support. CORRX/CORRZ apply X/Z on the whole support with
    // the given probability (one coin per instruction).
    DEP1, DEP2, DEP3, XERR, ZERR, MERR, HERALD, CORRX, CORRZ,
    // Annotations.
    TICK, DETECTOR, DETECTOR_SOFT, OBSERVABLE_INCLUDE, POSTSELECT, QUBIT_COORDS,
};

constexpr int NUM_OPS = int(Op::QUBIT_COORDS) + 1;

enum class OpKind : uint8_t { Gate, Reset, Measure, Noise, Annotation };

struct OpInfo {
    const char *name;
    OpKind kind;
    // Targets per instance. Gates with group > 0 accept a multiple of `group`
    // targets and mean that many independent instances. 0 means the whole
    // target list forms one instance.
    int group;
    int num_args;      // required parenthesized arguments
    bool clifford;     // meaningful for gates only
    bool arg_is_prob;  // argument must lie in [0, 1]
};

const OpInfo &op_info(Op op);
Op op_from_name(const std::string &name);  // throws on unknown name

// A target is either a qubit index or a measurement-record lookback (negative
// offset from the current end of the record).
struct Target {
    int32_t value = 0;
    bool is_rec = false;

    static Target qubit(int32_t q) { return Target{q, false}; }
    static Target rec(int32_t offset) { return Target{offset, true}; }
    bool operator==(const Target &o) const { return value == o.value && is_rec == o.is_rec; }
};

struct Instruction {
    Op op;
    std::vector<double> args;
    std::vector<Target> targets;

    bool operator==(const Instruction &o) const {
        return op == o.op && args == o.args && targets == o.targets;
    }
    int num_instances() const {
        int g = op_info(op).group;
        return g == 0 ? 1 : int(targets.size()) / g;
    }
};

struct ParseError : std::runtime_error {
    int line;
    ParseError(int line_, const std::string &msg)
        : std::runtime_error("line " + std::to_string(line_) + ": " + msg), line(line_) {}
};

struct Circuit {
    std::vector<Coord> coords;  // indexed by qubit id; may be shorter than num_qubits
    std::vector<Instruction> instructions;
    std::map<std::string, std::string> metadata;

    int num_qubits() const;
    int num_measurements() const;
    int num_detectors() const;
    int num_observables() const;

    void append(Op op, std::initializer_list<int32_t> qubits, std::initializer_list<double> args = {});
    void append(Instruction ins) { instructions.push_back(std::move(ins)); }
    void set_coord(int32_t q, Coord c);

    bool operator==(const Circuit &o) const {
        return coords == o.coords && instructions == o.instructions && metadata == o.metadata;
    }

    // Structural validation: arities, argument ranges, record references,
    // measurement prerequisites for MERR, and per-tick target exclusivity for
    // physical operations. Throws ParseError (line = instruction index) on the
    // first violation.
    void validate() const;
};

// Line-oriented text format. Throws ParseError with 1-based source lines.
Circuit parse_circuit(const std::string &text);
std::string serialize_circuit(const Circuit &c);

// Number of instances of the named operation ("CX", "DEP2", ...), or of a
// whole kind ("gate", "reset", "measure", "noise", "annotation").
int64_t count_ops(const Circuit &c, const std::string &what);

}  // namespace cultivar
