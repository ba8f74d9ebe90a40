#include "cultivar/densesim.h"

#include <cmath>
#include <complex>
#include <string>

#include "cultivar/circuit.h"
#include "doctest.h"

using namespace cultivar;

namespace {

StateVector prepped(const std::vector<int> &qubits, const std::string &prep) {
    StateVector sv = make_state(qubits);
    apply_unitary(sv, parse_circuit(prep));
    return sv;
}

}  // namespace

TEST_CASE("state vector basics and bell pair") {
    StateVector sv = make_state({0});
    CHECK(sv.norm() == doctest::Approx(1.0));
    CHECK(sv.slot_of(0) == 0);
    CHECK(sv.slot_of(7) == -1);
    CHECK_THROWS_AS(make_state({0, 1, 0}), std::invalid_argument);

    // CX pulls qubit 1 in at |0>
    apply_unitary(sv, parse_circuit("H 0\nTICK\nCX 0 1\n"));
    REQUIRE(sv.width() == 2);
    CHECK(sv.norm() == doctest::Approx(1.0));
    double r = 1.0 / std::sqrt(2.0);
    int s0 = sv.slot_of(0), s1 = sv.slot_of(1);
    size_t i11 = (size_t(1) << s0) | (size_t(1) << s1);
    CHECK(std::abs(sv.amp[0] - std::complex<double>(r, 0)) < 1e-12);
    CHECK(std::abs(sv.amp[i11] - std::complex<double>(r, 0)) < 1e-12);

    CHECK(eigencheck(parse_circuit("Z 0\nZ 1\n"), sv).real() == doctest::Approx(1.0));
    CHECK(eigencheck(parse_circuit("X 0\nX 1\n"), sv).real() == doctest::Approx(1.0));
    CHECK(std::abs(eigencheck(parse_circuit("Z 0\n"), sv)) < 1e-12);

    StateVector zero = make_state({0});
    CHECK(std::abs(eigencheck(parse_circuit("X 0\n"), zero)) < 1e-12);
    StateVector plus = prepped({0}, "H 0\n");
    CHECK(eigencheck(parse_circuit("X 0\n"), plus).real() == doctest::Approx(1.0));
}

TEST_CASE("magic states sit on the right axes") {
    StateVector t = prepped({0}, "H 0\nTICK\nT 0\n");
    CHECK(eigencheck(parse_circuit("H_XY 0\n"), t).real() == doctest::Approx(1.0));
    CHECK(std::abs(eigencheck(parse_circuit("Z 0\n"), t)) < 1e-12);
    CHECK(eigencheck(parse_circuit("X 0\n"), t).real() ==
          doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(eigencheck(parse_circuit("Y 0\n"), t).real() ==
          doctest::Approx(1.0 / std::sqrt(2.0)));

    StateVector th = prepped({0}, "T_X 0\nTICK\nS 0\n");
    CHECK(eigencheck(parse_circuit("H 0\n"), th).real() == doctest::Approx(1.0));

    // H_XYZ is S H_XY S_DAG exactly, phase included
    StateVector sx = prepped({0}, "H 0\nTICK\nT 0\nTICK\nS_DAG 0\nTICK\nH_XY 0\nTICK\nS 0\n");
    StateVector hx = prepped({0}, "H 0\nTICK\nT 0\nTICK\nH_XYZ 0\n");
    for (size_t k = 0; k < 2; k++) CHECK(std::abs(sx.amp[k] - hx.amp[k]) < 1e-12);
    StateVector st = prepped({0}, "H 0\nTICK\nT 0\nTICK\nS 0\n");
    CHECK(eigencheck(parse_circuit("H_XYZ 0\n"), st).real() == doctest::Approx(1.0));

    StateVector bad = prepped({0}, "H 0\nTICK\nT 0\nTICK\nZ 0\n");
    CHECK(eigencheck(parse_circuit("H_XY 0\n"), bad).real() == doctest::Approx(-1.0));
}

TEST_CASE("three qubit gates act as their definitions") {
    // CXX is just two fanned-out CXs
    {
        StateVector a = prepped({0, 1, 2}, "H 0\nH 1\nH 2\nTICK\nT 0\nS 1\nT 2\nTICK\nCX 0 1\n");
        StateVector b = a;
        apply_unitary(a, parse_circuit("CXX 0 1 2\n"));
        apply_unitary(b, parse_circuit("CX 0 1\nTICK\nCX 0 2\n"));
        REQUIRE(a.width() == b.width());
        for (size_t i = 0; i < a.amp.size(); i++) CHECK(std::abs(a.amp[i] - b.amp[i]) < 1e-12);
    }
    // CSWAPHH against its expansion
    {
        StateVector a = prepped({0, 1, 2}, "H 0\nH 1\nH 2\nTICK\nT 0\nS 1\nT 2\nTICK\nCX 1 2\n");
        StateVector b = a;
        apply_unitary(a, parse_circuit("CSWAPHH 0 1 2\n"));
        apply_unitary(b, parse_circuit("CH 0 1\nTICK\nCH 0 2\nTICK\nCSWAP 0 1 2\n"));
        for (size_t i = 0; i < a.amp.size(); i++) CHECK(std::abs(a.amp[i] - b.amp[i]) < 1e-12);
    }
    // CHXYZ fixes the +1 axis state when the control is on
    {
        StateVector sv = prepped({0, 1}, "X 0\nH 1\nTICK\nS 1\nTICK\nT 1\n");
        CHECK(eigencheck(parse_circuit("CHXYZ 0 1\n"), sv).real() == doctest::Approx(1.0));
        StateVector mv = prepped({0, 1}, "X 0\nH 1\nTICK\nS 1\nTICK\nT 1\nTICK\nZ 1\n");
        CHECK(eigencheck(parse_circuit("CHXYZ 0 1\n"), mv).real() == doctest::Approx(-1.0));
    }
    // CCX: |+> target is fixed iff it would only see an X
    {
        StateVector on = prepped({0, 1, 2}, "X 0\nX 1\nH 2\n");
        CHECK(eigencheck(parse_circuit("CCX 0 1 2\n"), on).real() == doctest::Approx(1.0));
        StateVector flip = prepped({0, 1, 2}, "X 0\nX 1\nH 2\nTICK\nZ 2\n");
        CHECK(eigencheck(parse_circuit("CCX 0 1 2\n"), flip).real() == doctest::Approx(-1.0));
        StateVector off = prepped({0, 1, 2}, "X 0\nH 2\nTICK\nZ 2\n");
        CHECK(eigencheck(parse_circuit("CCX 0 1 2\n"), off).real() == doctest::Approx(1.0));
    }
    // norm survives a pile of entangling gates
    {
        StateVector sv = prepped({0, 1, 2},
                                 "H 0\nH 1\nH 2\nTICK\nT 0\nS 1\nT_X 2\nTICK\nCX 0 1\nTICK\n"
                                 "CCZ 0 1 2\nTICK\nCSWAPHH 0 1 2\nTICK\nCSWAP 1 0 2\nTICK\n"
                                 "CXX 2 0 1\nTICK\nCHXYZ 0 1\nTICK\nS_DAG 0\nH_XY 1\nT_X_DAG 2\n");
        CHECK(sv.norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("unitary helpers reject non unitary pieces") {
    StateVector sv = make_state({0});
    CHECK_THROWS_AS(apply_unitary(sv, parse_circuit("M 0\n")), std::invalid_argument);
    CHECK_THROWS_AS(apply_unitary(sv, parse_circuit("R 0\n")), std::invalid_argument);
    CHECK_THROWS_AS(apply_unitary(sv, parse_circuit("DEP1(0.1) 0\n")), std::invalid_argument);
    CHECK_THROWS_AS(eigencheck(parse_circuit("MX 0\n"), sv), std::invalid_argument);
    CHECK_THROWS_AS(apply_unitary(sv, parse_circuit("TICK\nCX 0 1\nTICK\nCX 1 2\n"), 2),
                    std::runtime_error);
}

static const char *kAgreementCircuit =
    "RX 0\n"
    "R 1 2\n"
    "TICK\n"
    "CX 0 1\n"
    "TICK\n"
    "CX 1 2\n"
    "DEP1(0.08) 0 1 2\n"
    "TICK\n"
    "M 2\n"
    "CX rec[-1] 0\n"
    "CX rec[-1] 1\n"
    "HERALD(0.06) 0 1\n"
    "DEP2(0.08) 0 1\n"
    "TICK\n"
    "MPP_X 0 1\n"
    "TICK\n"
    "MPP_Z 0 1\n"
    "MERR(0.1) 1\n"
    "DETECTOR rec[-1]\n"
    "CORRZ(0.3) 0\n"
    "TICK\n"
    "MX 0\n"
    "MX 1\n"
    "DETECTOR rec[-1] rec[-2]\n"
    "DETECTOR_SOFT rec[-1] rec[-2]\n"
    "POSTSELECT rec[-5]\n"
    "OBSERVABLE_INCLUDE(0) rec[-1]\n"
    "OBSERVABLE_INCLUDE(1) rec[-3] rec[-1]\n";

TEST_CASE("dense and tableau engines agree bit for bit on one seed") {
    Circuit c = parse_circuit(kAgreementCircuit);
    DenseOptions opt;
    opt.shots = 400;
    opt.seed = 42;
    opt.keep_records = true;

    FidelityReport d = run_dense(c, opt);
    TrajectoryReport t = run_tableau(c, opt);
    REQUIRE(d.per_shot.size() == 400);
    REQUIRE(t.per_shot.size() == 400);

    // the random first projection makes the reference non cacheable
    CHECK(d.zero_fault == 0);
    CHECK(d.kept == t.kept);
    CHECK(d.kept > 20);
    CHECK(d.kept < 350);

    for (size_t i = 0; i < 400; i++) {
        REQUIRE(d.per_shot[i].kept == t.per_shot[i].kept);
        REQUIRE(d.per_shot[i].record == t.per_shot[i].record);
        REQUIRE(d.per_shot[i].observables == t.per_shot[i].observables);
        if (d.per_shot[i].kept) {
            CHECK(d.per_shot[i].fidelity >= 0.0);
            CHECK(d.per_shot[i].fidelity <= 1.0 + 1e-9);
        }
    }

    // flip tallies count kept shots whose observable left the reference value
    REQUIRE(t.observable_flips.size() == 2);
    std::vector<uint64_t> flips(2, 0);
    for (size_t i = 0; i < 400; i++) {
        if (!t.per_shot[i].kept) continue;
        for (size_t k = 0; k < 2; k++)
            flips[k] += t.per_shot[i].observables.get(k) != t.reference_observables.get(k);
    }
    CHECK(t.observable_flips[0] == flips[0]);
    CHECK(t.observable_flips[1] == flips[1]);
}

TEST_CASE("clean shots of a random circuit still draw their outcomes") {
    Circuit c = parse_circuit("RX 0\nR 1 2\nTICK\nCX 0 1\nTICK\nCX 1 2\nTICK\nM 0 1 2\n");
    DenseOptions opt;
    opt.shots = 2000;
    opt.seed = 7;
    opt.keep_records = true;
    FidelityReport rep = run_dense(c, opt);
    REQUIRE(rep.per_shot.size() == 2000);
    CHECK(rep.zero_fault == 0);
    CHECK(rep.kept == 2000);

    uint64_t ones = 0;
    for (const DenseShot &s : rep.per_shot) {
        bool b0 = s.record.get(0);
        CHECK(s.record.get(1) == b0);  // GHZ records agree within a shot
        CHECK(s.record.get(2) == b0);
        ones += b0;
    }
    CHECK(ones > 850);
    CHECK(ones < 1150);
}

TEST_CASE("measured qubits free their slot for reuse") {
    Circuit c = parse_circuit(
        "RX 1\nTICK\nCX 1 0\nTICK\nM 1\nRX 2\nTICK\nCX 2 0\nTICK\nM 2\n"
        "RX 3\nTICK\nCX 3 0\nTICK\nM 3\nTICK\nM 0\n");
    DenseOptions opt;
    opt.shots = 3;
    opt.cap = 2;  // never more than two live qubits
    FidelityReport rep = run_dense(c, opt);
    CHECK(rep.kept == 3);
    CHECK(rep.mean_fidelity() == doctest::Approx(1.0));

    Circuit wide = parse_circuit("RX 0\nTICK\nCX 0 1\nTICK\nCX 1 2\n");
    DenseOptions tight;
    tight.cap = 2;
    CHECK_THROWS_AS(run_dense(wide, tight), std::runtime_error);
}

TEST_CASE("noiseless postselected check keeps everything at fidelity one") {
    Circuit c = parse_circuit(
        "H 0\nTICK\nT 0\nRX 1\nTICK\nCHXY 1 0\nTICK\nMX 1\nPOSTSELECT rec[-1]\n");
    DenseOptions opt;
    opt.shots = 50;
    FidelityReport rep = run_dense(c, opt);
    CHECK(rep.kept == 50);
    CHECK(rep.zero_fault == 50);  // deterministic reference, so the cache serves
    CHECK(rep.infidelity() <= 1e-10);
    CHECK(rep.logical_errors == 0);
    CHECK(rep.csv().find("shots,kept,") != std::string::npos);

    // a deterministic violation poisons the reference run
    Circuit bad = parse_circuit(
        "H 0\nTICK\nT 0\nTICK\nZ 0\nRX 1\nTICK\nCHXY 1 0\nTICK\nMX 1\nPOSTSELECT rec[-1]\n");
    CHECK_THROWS_AS(run_dense(bad, opt), std::runtime_error);
}

TEST_CASE("the projection check purifies single qubit faults") {
    Circuit c = parse_circuit(
        "H 0\nTICK\nT 0\nDEP1(0.2) 0\nRX 1\nTICK\nCHXY 1 0\nTICK\nMX 1\nPOSTSELECT rec[-1]\n");
    DenseOptions opt;
    opt.shots = 200;
    opt.seed = 3;
    opt.keep_records = true;
    FidelityReport rep = run_dense(c, opt);
    // Z faults always bounce, X and Y bounce half the time: kept ~ 1 - 2p/3
    CHECK(rep.kept > 155);
    CHECK(rep.kept < 190);
    CHECK(rep.kept_fraction() == doctest::Approx(double(rep.kept) / 200.0));
    CHECK(rep.logical_errors == 0);
    CHECK(rep.mean_fidelity() > 1 - 1e-9);
    CHECK(rep.csv().find("shot,kept,fidelity") != std::string::npos);

    // float amplitudes walk the same plan to the same verdicts
    DenseOptions fopt = opt;
    fopt.single_precision = true;
    fopt.keep_records = false;
    FidelityReport frep = run_dense(c, fopt);
    CHECK(frep.kept == rep.kept);
    CHECK(frep.logical_errors == 0);
    CHECK(frep.mean_fidelity() > 1 - 1e-4);
}

TEST_CASE("reference runs reject circuits that are not quiet") {
    Circuit bad = parse_circuit("R 0\nTICK\nX 0\nTICK\nM 0\nDETECTOR rec[-1]\n");
    CHECK_THROWS_AS(reference_state(bad), std::runtime_error);
    StateVector ok = reference_state(parse_circuit("R 0\nTICK\nM 0\nDETECTOR rec[-1]\n"));
    CHECK(ok.norm() == doctest::Approx(1.0));
    CHECK(ok.width() == 0);  // everything measured away
}

TEST_CASE("run_tableau rejects non clifford circuits") {
    Circuit c = parse_circuit("H 0\nTICK\nT 0\nTICK\nM 0\n");
    DenseOptions opt;
    CHECK_THROWS_AS(run_tableau(c, opt), std::invalid_argument);
}

static const char *kScanCircuit =
    "R 0 1\n"
    "XERR(0.01) 0\n"
    "XERR(0.01) 0\n"
    "TICK\n"
    "CX 0 1\n"
    "TICK\n"
    "M 1\n"
    "DETECTOR rec[-1]\n"
    "XERR(0.01) 0\n"
    "ZERR(0.01) 0\n"
    "TICK\n"
    "M 0\n"
    "OBSERVABLE_INCLUDE(0) rec[-1]\n";

TEST_CASE("clifford fault scan classifies singles and cancelling pairs") {
    Circuit c = parse_circuit(kScanCircuit);
    FaultScanOptions opt;
    opt.max_weight = 2;
    FaultScanReport r = fault_scan(c, opt);
    CHECK(r.classified == 10);
    CHECK(r.detected == 6);
    CHECK(r.undetected == 2);
    CHECK(r.benign == 2);  // lone trailing Z, and the two Xs that cancel
    REQUIRE(r.undetected_logical.size() == 2);
    CHECK(r.undetected_logical[0].size() == 1);
    CHECK(r.undetected_logical[1].size() == 2);

    std::string txt = fault_scan_text(c, r);
    CHECK(txt.find("undetected-logical 2") != std::string::npos);
    CHECK(txt.find("qubit 0 X") != std::string::npos);
}

TEST_CASE("residual frames on live qubits are judged against the final state") {
    Circuit c = parse_circuit("R 0\nZERR(0.01) 0\nTICK\nH 0\nZERR(0.01) 0\n");
    FaultScanOptions opt;
    opt.max_weight = 2;
    FaultScanReport r = fault_scan(c, opt);
    CHECK(r.classified == 3);
    CHECK(r.detected == 0);
    CHECK(r.benign == 1);      // Z before H turns into X, which fixes |+>
    CHECK(r.undetected == 2);  // Z after H, and the pair (a Y on |+>)
}

TEST_CASE("a spectator non clifford gate must not change scan verdicts") {
    Circuit a = parse_circuit(kScanCircuit);
    Circuit b = parse_circuit(std::string(kScanCircuit) + "TICK\nRX 9\nTICK\nT 9\n");
    FaultScanOptions opt;
    opt.max_weight = 2;
    FaultScanReport ra = fault_scan(a, opt);  // pauli frame path
    FaultScanReport rb = fault_scan(b, opt);  // dense rerun path
    CHECK(ra.classified == rb.classified);
    CHECK(ra.detected == rb.detected);
    CHECK(ra.benign == rb.benign);
    CHECK(ra.undetected == rb.undetected);
    REQUIRE(ra.undetected_logical.size() == rb.undetected_logical.size());
    for (size_t i = 0; i < ra.undetected_logical.size(); i++) {
        REQUIRE(ra.undetected_logical[i].size() == rb.undetected_logical[i].size());
        for (size_t k = 0; k < ra.undetected_logical[i].size(); k++) {
            CHECK(ra.undetected_logical[i][k].instruction == rb.undetected_logical[i][k].instruction);
            CHECK(ra.undetected_logical[i][k].instance == rb.undetected_logical[i][k].instance);
            CHECK(ra.undetected_logical[i][k].paulis == rb.undetected_logical[i][k].paulis);
        }
    }
}

TEST_CASE("dense fault scan follows the reference branch through a magic check") {
    Circuit c = parse_circuit(
        "H 0\nTICK\nT 0\nZERR(0.01) 0\nRX 1\nTICK\nCHXY 1 0\nTICK\nMX 1\n"
        "POSTSELECT rec[-1]\nZERR(0.01) 0\n");
    FaultScanOptions opt;
    opt.max_weight = 2;
    FaultScanReport r = fault_scan(c, opt);
    CHECK(r.classified == 3);
    CHECK(r.detected == 2);    // the pre-check Z alone, and the pair
    CHECK(r.undetected == 1);  // the post-check Z flips the state unseen
    CHECK(r.benign == 0);
    std::string txt = fault_scan_text(c, r);
    CHECK(txt.find("qubit 0 Z") != std::string::npos);
}

TEST_CASE("fault scan enforces its combination budget") {
    Circuit c = parse_circuit("R 0 1 2\nDEP3(0.01) 0 1 2\n");
    FaultScanOptions opt;
    opt.budget = 5;  // 63 single options blow straight past this
    CHECK_THROWS_AS(fault_scan(c, opt), std::runtime_error);
}
