#include "cultivar/tableau.h"

#include "cultivar/bits.h"
#include "doctest.h"

using namespace cultivar;

TEST_CASE("pauli multiplication phases") {
    auto X = PauliString::from_str("X");
    auto Y = PauliString::from_str("Y");
    auto Z = PauliString::from_str("Z");
    CHECK((X * Z).str() == "-iY");
    CHECK((Z * X).str() == "+iY");
    CHECK((X * Y).str() == "+iZ");
    CHECK((Y * X).str() == "-iZ");
    CHECK((Y * Y).str() == "+I");
    CHECK((X * X).is_identity());
    auto P = PauliString::from_str("-XYZ");
    auto Q = PauliString::from_str("XXII");
    CHECK(P.str() == "-XYZ");
    CHECK(PauliString::from_str("XZ").commutes(PauliString::from_str("ZX")));
    CHECK(!PauliString::from_str("XI").commutes(PauliString::from_str("ZI")));
    CHECK((PauliString::from_str("XX") * PauliString::from_str("ZZ")).str() == "-YY");
}

TEST_CASE("single-gate conjugation rules") {
    auto chk = [](Op op, std::vector<int> qs, const char *in, const char *out) {
        CAPTURE(op_info(op).name);
        CAPTURE(in);
        CHECK(conjugate_gate(op, qs, PauliString::from_str(in)).str() == out);
    };
    chk(Op::H_XY, {0}, "X", "+Y");
    chk(Op::H_XY, {0}, "Y", "+X");
    chk(Op::H_XY, {0}, "Z", "-Z");
    chk(Op::H_XYZ, {0}, "X", "-Y");
    chk(Op::H_XYZ, {0}, "Y", "-X");
    chk(Op::H_XYZ, {0}, "Z", "-Z");
    chk(Op::I2, {0, 1}, "XZ", "+XZ");
    chk(Op::I3, {0, 1, 2}, "YZX", "+YZX");
    chk(Op::H, {0}, "X", "+Z");
    chk(Op::H, {0}, "Y", "-Y");
    chk(Op::S, {0}, "X", "+Y");
    chk(Op::S, {0}, "Y", "-X");
    chk(Op::S, {0}, "Z", "+Z");
    chk(Op::S_DAG, {0}, "X", "-Y");
    chk(Op::S_DAG, {0}, "Y", "+X");
    chk(Op::X, {0}, "Z", "-Z");
    chk(Op::Y, {0}, "X", "-X");
    chk(Op::Y, {0}, "Z", "-Z");
    chk(Op::Z, {0}, "X", "-X");
    chk(Op::CX, {0, 1}, "XI", "+XX");
    chk(Op::CX, {0, 1}, "IZ", "+ZZ");
    chk(Op::CX, {0, 1}, "IX", "+IX");
    chk(Op::CX, {0, 1}, "ZI", "+ZI");
    chk(Op::CX, {0, 1}, "YY", "-XZ");  // YY -> (YX)(ZY) = -XZ
    chk(Op::CZ, {0, 1}, "XI", "+XZ");
    chk(Op::CZ, {0, 1}, "XX", "+YY");
    chk(Op::CZ, {0, 1}, "YX", "-XY");
    chk(Op::SWAP, {0, 1}, "XZ", "+ZX");
    chk(Op::CXX, {0, 1, 2}, "XII", "+XXX");
    chk(Op::CXX, {0, 1, 2}, "IZI", "+ZZI");
    chk(Op::CXX, {0, 1, 2}, "IIZ", "+ZIZ");
    CHECK_THROWS(conjugate_gate(Op::T, {0}, PauliString::from_str("X")));
    CHECK_THROWS(conjugate_gate(Op::CH, {0, 1}, PauliString::from_str("XI")));
}

TEST_CASE("circuit conjugation") {
    Circuit c = parse_circuit("H 0\nTICK\nCX 0 1\n");
    // H then CX: X0 -> Z0 -> Z0
    CHECK(conjugate(c, PauliString::from_str("XI")).str() == "+ZI");
    // Z0 -> X0 -> X0 X1
    CHECK(conjugate(c, PauliString::from_str("ZI")).str() == "+XX");
    Circuit id = parse_circuit("TICK\n");
    CHECK(conjugate(id, PauliString::from_str("-YZX")).str() == "-YZX");
    CHECK_THROWS(conjugate(parse_circuit("M 0\n"), PauliString::from_str("X")));
}

TEST_CASE("ghz state expectations and measurements") {
    Tableau t(3);
    t.apply(Op::H, {0});
    t.apply(Op::CX, {0, 1});
    t.apply(Op::CX, {0, 2});
    t.check_invariants();
    CHECK(t.expectation(PauliString::from_str("ZZI")) == 1);
    CHECK(t.expectation(PauliString::from_str("IZZ")) == 1);
    CHECK(t.expectation(PauliString::from_str("XXX")) == 1);
    CHECK(t.expectation(PauliString::from_str("ZII")) == 0);
    CHECK(t.expectation(PauliString::from_str("-ZZI")) == -1);
    CHECK(t.measure_pauli(PauliString::from_str("ZZI"), nullptr) == false);
    CHECK(t.measure_pauli(PauliString::from_str("IZZ"), nullptr) == false);
    t.check_invariants();
}

TEST_CASE("forced and random measurement behavior") {
    Tableau t(2);
    bool was_random = false;
    bool o = t.measure_pauli(PauliString::from_str("XI"), nullptr, &was_random);
    CHECK(o == false);
    CHECK(was_random);
    // now in |+>|0>: X0 deterministic
    o = t.measure_pauli(PauliString::from_str("XI"), nullptr, &was_random);
    CHECK(o == false);
    CHECK(!was_random);
    // Z0 random again
    t.measure_pauli(PauliString::from_str("ZI"), nullptr, &was_random);
    CHECK(was_random);
    t.check_invariants();

    // same seed, same stream of random outcomes
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tableau t2(4);
        std::vector<bool> outs;
        for (int rep = 0; rep < 20; rep++) {
            t2.apply(Op::H, {rep % 4});
            t2.apply(Op::CX, {rep % 4, (rep + 1) % 4});
            outs.push_back(t2.measure_z((rep + 2) % 4, &rng));
        }
        t2.check_invariants();
        return outs;
    };
    CHECK(run(7) == run(7));
}

TEST_CASE("reset on determined minus state") {
    Tableau t(1);
    t.apply(Op::X, {0});
    t.reset_z(0);
    CHECK(t.expectation(PauliString::from_str("Z")) == 1);
    t.apply(Op::H, {0});
    t.apply(Op::Z, {0});
    t.reset_x(0);
    CHECK(t.expectation(PauliString::from_str("X")) == 1);
}

TEST_CASE("canonical stabilizers are construction independent") {
    Tableau a(3), b(3);
    a.apply(Op::H, {0});
    a.apply(Op::CX, {0, 1});
    a.apply(Op::CX, {0, 2});
    b.apply(Op::H, {2});
    b.apply(Op::CX, {2, 0});
    b.apply(Op::CX, {2, 1});
    auto ca = a.canonical_stabilizers();
    auto cb = b.canonical_stabilizers();
    REQUIRE(ca.size() == 3);
    bool same = true;
    for (size_t i = 0; i < 3; i++) same = same && ca[i] == cb[i];
    CHECK(same);
}

TEST_CASE("simulate_reference forces random outcomes to +1") {
    Circuit c = parse_circuit("H 0\nTICK\nCX 0 1\nTICK\nM 0 1\n");
    auto r = simulate_reference(c);
    CHECK(r.measurements.get(0) == false);
    CHECK(r.measurements.get(1) == false);
    CHECK(r.random_mask[0] == 1);
    CHECK(r.random_mask[1] == 0);  // correlated with the first
}

TEST_CASE("simulate_reference feed-forward") {
    Circuit c = parse_circuit("X 0\nTICK\nM 0\nCX rec[-1] 1\nTICK\nM 1\n");
    auto r = simulate_reference(c);
    CHECK(r.measurements.get(0) == true);
    CHECK(r.measurements.get(1) == true);

    Circuit c2 = parse_circuit("M 0\nCX rec[-1] 1\nTICK\nM 1\n");
    auto r2 = simulate_reference(c2);
    CHECK(r2.measurements.get(1) == false);
}

TEST_CASE("simulate_reference mpp and noise skipping") {
    Circuit c = parse_circuit(
        "RX 0\nR 1 2\nTICK\nCX 0 1\nDEP2(0.5) 0 1\nTICK\nCX 1 2\nTICK\nMPP_Z 0 1\nMPP_Z 1 2\nMPP_X 0 1 2\n");
    auto r = simulate_reference(c);
    CHECK(r.measurements.get(0) == false);
    CHECK(r.measurements.get(1) == false);
    CHECK(r.measurements.get(2) == false);
    CHECK(r.random_mask[0] == 0);
    CHECK(r.random_mask[2] == 0);
    CHECK_THROWS(simulate_reference(parse_circuit("T 0\n")));
}

TEST_CASE("gf2 solve") {
    auto mk = [](std::initializer_list<int> bits, size_t n) {
        BitVec v(n);
        for (int b : bits) v.set(b, true);
        return v;
    };
    std::vector<BitVec> rows = {mk({0, 1}, 3), mk({1, 2}, 3)};
    bool ok = false;
    auto sol = gf2_solve(rows, mk({0, 2}, 3), &ok);
    CHECK(ok);
    CHECK(sol == std::vector<int>{0, 1});
    gf2_solve(rows, mk({0}, 3), &ok);
    CHECK(!ok);
    Gf2Basis basis;
    CHECK(basis.add(mk({0, 1}, 3)));
    CHECK(basis.add(mk({1, 2}, 3)));
    CHECK(!basis.add(mk({0, 2}, 3)));
    CHECK(basis.in_span(mk({0, 2}, 3)));
    CHECK(!basis.in_span(mk({1}, 3)));
    CHECK(basis.rank() == 2);
}
