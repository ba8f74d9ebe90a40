#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cultivar/circuit.h"
#include "cultivar/tableau.h"

namespace cultivar {

enum class PatchKind { Rotated, Unrotated };

struct Stab {
    Coord anc;
    std::vector<Coord> support;
    bool is_x;
};

// Surface code patch in canonical coordinates.
// Unrotated d: data on even-parity sites of [0, 2d-2]^2, X checks at
// (odd, even), Z checks at (even, odd), logical Z the y=0 row, logical X the
// x=0 column. Rotated d: data on (odd, odd) sites of [1, 2d-1]^2, checks on
// even-even sites, top/bottom boundaries host X checks, left/right host Z.
struct Patch {
    PatchKind kind;
    int d;
    std::vector<Coord> data;  // sorted by (y, x)
    std::vector<Stab> x_stabs, z_stabs;
    std::vector<Coord> logical_x, logical_z;

    int index_of(Coord c) const;
    PauliString stab_pauli(const Stab &s) const;
    PauliString logical_pauli(char which) const;  // 'X' or 'Z'
    std::vector<const Stab *> all_stabs() const;
};

Patch build_patch(PatchKind kind, int d);
void check_patch(const Patch &p);  // throws std::logic_error on violations
std::string dump_patch(const Patch &p);

Coord fold_reflect(Coord c);

struct FoldStructure {
    std::vector<Coord> diagonal;                  // x == y, ascending
    std::vector<std::pair<Coord, Coord>> pairs;   // (below diagonal, mirror)
};
FoldStructure fold_structure(const Patch &p);  // unrotated only

struct TransversalFactor {
    enum Kind { SingleH, SingleHXY, SingleHXYZ, PairCZ, PairSwapHH } kind;
    Coord a, b;  // b meaningful for pair kinds only
};
// which = 'H' (fold-H) or 'Y' (fold-H_XY)
std::vector<TransversalFactor> transversal_factors(const Patch &p, char which);

struct SeGate {
    Coord anc, data;
    bool anc_is_control;  // true for X checks
};
// Four CX layers of one syndrome-extraction round.
std::vector<std::vector<SeGate>> se_schedule(const Patch &p);

struct MidCycle {
    Patch unrot;                       // equivalent unrotated patch, canonical coords
    Coord shift;                       // rotated frame = canonical + shift
    std::vector<Coord> qubits;         // rotated-frame index space of `group` rows
    std::vector<PauliString> group;    // generators after the first half of SE
    PauliString logical_x, logical_z;  // logicals conjugated to the mid-cycle frame
    std::vector<Coord> code_qubits;    // the d^2+(d-1)^2 qubits carrying the code
    std::vector<std::pair<Coord, char>> fresh_singles;  // untouched ancillas, prep basis
};
MidCycle mid_cycle_group(const Patch &rotated);

struct ExpansionMap {
    Patch source, target;
    std::vector<std::pair<Coord, char>> new_bases;  // 'Z' -> |0>, 'X' -> |+>
};
ExpansionMap expansion_map(const Patch &source, int d2);

}  // namespace cultivar
