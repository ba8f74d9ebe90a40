#include "cultivar/circuit.h"

#include <string>

#include "doctest.h"

using namespace cultivar;

TEST_CASE("frac reduces and formats") {
    CHECK(Frac(3, 2).str() == "3/2");
    CHECK(Frac(4, 2).str() == "2");
    CHECK(Frac(-1, -2) == Frac(1, 2));
    CHECK(Frac(1, -2).str() == "-1/2");
    CHECK(Frac(1, 2) + Frac(1, 2) == Frac(1));
    CHECK(Frac(1, 3) < Frac(1, 2));
    CHECK_THROWS(Frac(1, 0));
}

TEST_CASE("parse minimal instructions") {
    Circuit c = parse_circuit("CX 0 1\n");
    REQUIRE(c.instructions.size() == 1);
    CHECK(c.instructions[0].op == Op::CX);
    CHECK(c.instructions[0].targets.size() == 2);
    CHECK(c.num_qubits() == 2);

    c = parse_circuit("DEP3(0.003) 0 1 2\n");
    REQUIRE(c.instructions.size() == 1);
    CHECK(c.instructions[0].op == Op::DEP3);
    CHECK(c.instructions[0].args[0] == doctest::Approx(0.003));
    CHECK(c.instructions[0].num_instances() == 1);
}

TEST_CASE("parse errors carry line numbers") {
    CHECK_THROWS_WITH_AS(parse_circuit("CX 0\n"), doctest::Contains("line 1"), ParseError);
    CHECK_THROWS_AS(parse_circuit("TICK\nFROB 0\n"), ParseError);
    try {
        parse_circuit("TICK\nFROB 0\n");
    } catch (const ParseError &e) {
        CHECK(e.line == 2);
    }
    CHECK_THROWS_AS(parse_circuit("DEP1(1.5) 0\n"), ParseError);
    CHECK_THROWS_AS(parse_circuit("DETECTOR rec[-1]\n"), ParseError);          // nothing measured yet
    CHECK_THROWS_AS(parse_circuit("M 0\nDETECTOR rec[-2]\n"), ParseError);     // too far back
    CHECK_THROWS_AS(parse_circuit("DETECTOR 3\n"), ParseError);                // must be rec
    CHECK_THROWS_AS(parse_circuit("H rec[-1]\n"), ParseError);
    CHECK_THROWS_AS(parse_circuit("MERR(0.1) 0\n"), ParseError);               // no prior measurement
    CHECK_NOTHROW(parse_circuit("M 0\nMERR(0.1) 0\n"));
}

TEST_CASE("grouped targets mean independent instances") {
    Circuit c = parse_circuit("CX 0 1 2 3\nM 4 5 6\n");
    CHECK(c.instructions[0].num_instances() == 2);
    CHECK(c.instructions[1].num_instances() == 3);
    CHECK(c.num_measurements() == 3);
    CHECK_THROWS_AS(parse_circuit("CX 0 1 2\n"), ParseError);
}

TEST_CASE("record targets and feed-forward controls") {
    Circuit c = parse_circuit("MX 0\nCX rec[-1] 1\nCZ rec[-1] 2\n");
    CHECK(c.instructions[1].targets[0].is_rec);
    CHECK(c.instructions[1].targets[0].value == -1);
    CHECK_THROWS_AS(parse_circuit("MX 0\nCX 1 rec[-1]\n"), ParseError);
    CHECK_THROWS_AS(parse_circuit("MX 0\nSWAP rec[-1] 1\n"), ParseError);
}

TEST_CASE("mpp and postselect") {
    Circuit c = parse_circuit("MPP_X 0 1 2\nPOSTSELECT rec[-1]\nMPP_Z 0 1\nDETECTOR rec[-1] rec[-2]\n");
    CHECK(c.num_measurements() == 2);
    CHECK(c.instructions[0].num_instances() == 1);
    CHECK(c.num_detectors() == 1);
}

TEST_CASE("coords parse as exact rationals") {
    Circuit c = parse_circuit("QUBIT_COORDS(3/2, -1/2) 4\nQUBIT_COORDS(2, 0) 1\nH 4\n");
    REQUIRE(c.coords.size() == 5);
    CHECK(c.coords[4].x == Frac(3, 2));
    CHECK(c.coords[4].y == Frac(-1, 2));
    CHECK(c.coords[1].x == Frac(2));
    CHECK(c.num_qubits() == 5);
}

TEST_CASE("metadata lines survive round-trip") {
    std::string text = "#!meta protocol = hxy-d3\n#!meta p = 0.001\nTICK\n";
    Circuit c = parse_circuit(text);
    CHECK(c.metadata.at("protocol") == "hxy-d3");
    CHECK(c.metadata.at("p") == "0.001");
    Circuit c2 = parse_circuit(serialize_circuit(c));
    CHECK(c == c2);
}

TEST_CASE("serialize round-trips structurally") {
    std::string text =
        "QUBIT_COORDS(0, 0) 0\n"
        "QUBIT_COORDS(1/2, 3/2) 1\n"
        "RX 0 1\n"
        "TICK\n"
        "CHXY 0 1\n"
        "TICK\n"
        "CHXYZ 1 0\n"
        "TICK\n"
        "CXX 0 1 2\n"
        "DEP2(0.001) 0 1\n"
        "HERALD(0.02) 0 1\n"
        "TICK\n"
        "MX 0 1\n"
        "MERR(0.001) 0\n"
        "DETECTOR rec[-2]\n"
        "DETECTOR_SOFT rec[-1]\n"
        "OBSERVABLE_INCLUDE(0) rec[-1] rec[-2]\n"
        "CORRZ(0.25) 2\n"
        "M 2\n"
        "POSTSELECT rec[-1]\n";
    Circuit c = parse_circuit(text);
    CHECK_NOTHROW(c.validate());
    std::string s1 = serialize_circuit(c);
    Circuit c2 = parse_circuit(s1);
    CHECK(c == c2);
    CHECK(serialize_circuit(c2) == s1);
    CHECK(parse_circuit("").instructions.empty());
    CHECK(serialize_circuit(parse_circuit("TICK\n")) == "TICK\n");
}

TEST_CASE("validate catches slice reuse and bad merr") {
    Circuit c = parse_circuit("H 0\nCX 0 1\n");
    CHECK_THROWS_AS(c.validate(), ParseError);
    c = parse_circuit("H 0\nTICK\nCX 0 1\n");
    CHECK_NOTHROW(c.validate());
    // noise channels are exempt from slice exclusivity
    c = parse_circuit("H 0\nDEP1(0.001) 0\n");
    CHECK_NOTHROW(c.validate());
    // repeated target within one instance
    Circuit bad;
    bad.append(Op::CX, {3, 3});
    CHECK_THROWS_AS(bad.validate(), ParseError);
    Circuit ok;
    ok.append(Op::MPP_X, {0, 1, 2});
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("count by name and by kind") {
    Circuit c = parse_circuit(
        "H 0 1 2\nTICK\nCX 0 1 2 3\nDEP2(0.001) 0 1 2 3\nTICK\nM 0 1\nDETECTOR rec[-1]\n");
    CHECK(count_ops(c, "H") == 3);
    CHECK(count_ops(c, "CX") == 2);
    CHECK(count_ops(c, "DEP2") == 2);
    CHECK(count_ops(c, "M") == 2);
    CHECK(count_ops(c, "gate") == 5);
    CHECK(count_ops(c, "noise") == 2);
    CHECK(count_ops(c, "measure") == 2);
    CHECK(count_ops(c, "annotation") == 3);  // 2 ticks + detector
    CHECK(count_ops(c, "DEP1") == 0);
    CHECK_THROWS(count_ops(c, "NOPE"));
}

TEST_CASE("duplicate coordinates rejected") {
    Circuit c;
    c.set_coord(0, {Frac(1), Frac(2)});
    c.set_coord(1, {Frac(1), Frac(2)});
    CHECK_THROWS_AS(c.validate(), ParseError);
}
