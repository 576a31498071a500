#include <morsepi/mscomplex.hpp>

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <memory>
#include <sstream>
#include <string>

using namespace morsepi;

namespace {

constexpr double kPi = 3.14159265358979323846;

MorseComplexData build(const Manifold& m, const std::string& expr, const ComplexOptions& o = {}) {
    auto f = make_expr_field(m, expr);
    return build_complex(*f, o);
}

Vec v2(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

std::string word_str(const Word& w) {
    std::ostringstream os;
    for (const SignedStep& s : w) os << s.step << (s.sign > 0 ? "+" : "-") << " ";
    return os.str();
}

void check_step(const Step& s, int through, int start, long dsx, long dsy, int end, long dex,
                long dey) {
    CAPTURE(s.id);
    CHECK(s.through == through);
    CHECK(s.start == start);
    CHECK(s.end == end);
    CHECK(s.delta_start[0] == dsx);
    CHECK(s.delta_start[1] == dsy);
    CHECK(s.delta_end[0] == dex);
    CHECK(s.delta_end[1] == dey);
}

}  // namespace

TEST_CASE("square torus field produces the commutator complex") {
    Manifold m = Manifold::torus();
    MorseComplexData data = build(m, "cos(2*pi*x)+cos(2*pi*y)");

    REQUIRE(data.cps.size() == 4);
    CHECK(data.cps[0].index == 0);
    CHECK(data.cps[1].index == 1);
    CHECK(data.cps[2].index == 1);
    CHECK(data.cps[3].index == 2);
    CHECK(m.distance(data.cps[0].coords, v2(0.5, 0.5)) < 1e-8);
    CHECK(m.distance(data.cps[1].coords, v2(0.0, 0.5)) < 1e-8);
    CHECK(m.distance(data.cps[2].coords, v2(0.5, 0.0)) < 1e-8);
    CHECK(m.distance(data.cps[3].coords, v2(0.0, 0.0)) < 1e-8);

    REQUIRE(data.steps.size() == 2);
    check_step(data.steps[0], 1, 0, -1, 0, 0, 0, 0);
    check_step(data.steps[1], 2, 0, 0, -1, 0, 0, 0);
    CHECK(data.step_of_saddle(1) == 0);
    CHECK(data.step_of_saddle(2) == 1);
    CHECK_THROWS_AS(data.step_of_saddle(0), FlowError);

    REQUIRE(data.disks.size() == 1);
    const DiskBoundary& disk = data.disks[0];
    CHECK(disk.of == 3);
    Word want{{0, -1}, {1, -1}, {0, 1}, {1, 1}};
    CHECK(disk.word == want);
    REQUIRE(disk.thetas.size() == 4);
    CHECK(disk.thetas[0] == Catch::Approx(kPi / 2).margin(1e-6));
    CHECK(disk.thetas[1] == Catch::Approx(kPi).margin(1e-6));
    CHECK(disk.thetas[2] == Catch::Approx(3 * kPi / 2).margin(1e-6));
    CHECK(disk.thetas[3] == Catch::Approx(2 * kPi).margin(1e-6));

    CHECK(data.base == 0);
    CHECK(data.provenance == MorseComplexData::Provenance::Numerical);
    CHECK(data.warnings.empty());
}

TEST_CASE("doubled sweep resolution reproduces the boundary word") {
    Manifold m = Manifold::torus();
    ComplexOptions coarse, fine;
    fine.sweep.samples = 1024;
    MorseComplexData a = build(m, "cos(2*pi*x)+cos(2*pi*y)", coarse);
    MorseComplexData b = build(m, "cos(2*pi*x)+cos(2*pi*y)", fine);
    REQUIRE(a.disks.size() == 1);
    REQUIRE(b.disks.size() == 1);
    CHECK(a.disks[0].word == b.disks[0].word);
    REQUIRE(a.disks[0].thetas.size() == b.disks[0].thetas.size());
    for (size_t i = 0; i < a.disks[0].thetas.size(); ++i)
        CHECK(a.disks[0].thetas[i] == Catch::Approx(b.disks[0].thetas[i]).margin(1e-6));
}

TEST_CASE("sphere height function yields no steps and a silent boundary") {
    Manifold m = Manifold::sphere();
    MorseComplexData data = build(m, "z");
    REQUIRE(data.cps.size() == 2);
    CHECK(data.cps[0].index == 0);
    CHECK(data.cps[1].index == 2);
    CHECK(data.steps.empty());
    REQUIRE(data.disks.size() == 1);
    CHECK(data.disks[0].of == 1);
    CHECK(data.disks[0].word.empty());
    CHECK(data.base == 0);
}

TEST_CASE("diagonally perturbed field reads a conjugated commutator") {
    Manifold m = Manifold::torus();
    MorseComplexData data = build(m, "cos(2*pi*x)+cos(2*pi*y)+0.1*cos(2*pi*(x+y))");
    REQUIRE(data.cps.size() == 4);
    REQUIRE(data.steps.size() == 2);
    REQUIRE(data.disks.size() == 1);
    Word want{{0, 1}, {1, -1}, {0, -1}, {1, 1}};
    CHECK(data.disks[0].word == want);
    int sum0 = 0, sum1 = 0;
    for (const SignedStep& s : data.disks[0].word) (s.step == 0 ? sum0 : sum1) += s.sign;
    CHECK(sum0 == 0);
    CHECK(sum1 == 0);
}

TEST_CASE("field with two basins resolves walls on a stiff separatrix") {
    // At the saddle mediating the theta = pi/2 wall of the second disk the
    // unstable rate is about 2.4 times the stable one, so default-tolerance
    // trajectories lose the separatrix before reaching the saddle and the
    // resolver must fall back to its re-bisected tight-tolerance pass.
    Manifold m = Manifold::torus();
    MorseComplexData data = build(m, "cos(2*pi*x)+0.35*cos(4*pi*x)+cos(2*pi*y)");

    REQUIRE(data.cps.size() == 8);
    int hist[3] = {0, 0, 0};
    for (const CriticalPoint& cp : data.cps) ++hist[cp.index];
    CHECK(hist[0] == 2);
    CHECK(hist[1] == 4);
    CHECK(hist[2] == 2);

    REQUIRE(data.steps.size() == 4);
    check_step(data.steps[0], 2, 1, 0, 0, 0, 0, 0);
    check_step(data.steps[1], 3, 1, 0, -1, 1, 0, 0);
    check_step(data.steps[2], 4, 0, 0, -1, 0, 0, 0);
    check_step(data.steps[3], 6, 0, 0, 0, 1, 1, 0);

    REQUIRE(data.disks.size() == 2);
    CAPTURE(word_str(data.disks[0].word), word_str(data.disks[1].word));
    Word want5{{2, -1}, {0, -1}, {1, 1}, {0, 1}};
    Word want7{{3, -1}, {2, -1}, {3, 1}, {1, 1}};
    CHECK(data.disks[0].word == want5);
    CHECK(data.disks[1].word == want7);
    for (const DiskBoundary& d : data.disks) {
        REQUIRE(d.thetas.size() == 4);
        for (size_t i = 0; i < 4; ++i)
            CHECK(d.thetas[i] == Catch::Approx((i + 1) * kPi / 2).margin(1e-6));
    }
}

TEST_CASE("disk boundaries come only from top-index points") {
    Manifold m = Manifold::torus();
    auto f = make_expr_field(m, "cos(2*pi*x)+cos(2*pi*y)");
    auto cps = find_critical_points(*f);
    auto steps = extract_steps(*f, cps);
    CHECK_THROWS_AS(extract_disk_boundary(*f, cps, steps, 0), FlowError);
    CHECK_THROWS_AS(extract_disk_boundary(*f, cps, steps, 1), FlowError);
}

TEST_CASE("complex extraction rejects fields with extra coordinates") {
    Manifold m = Manifold::product_r(Manifold::torus());
    auto f = make_expr_field(m, "cos(2*pi*x)+cos(2*pi*y)+s*s");
    CHECK_THROWS_AS(build_complex(*f), FlowError);
}
