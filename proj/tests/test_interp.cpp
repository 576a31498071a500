#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "morsepi/interp.hpp"

using namespace morsepi;
using Catch::Approx;

namespace {
FieldPtr coscos() { return make_expr_field(Manifold::torus(), "cos(2*pi*x)+cos(2*pi*y)"); }
}

TEST_CASE("blend is an exact cutoff with C2 joins") {
    Blend b(0.1);
    CHECK(b.rho(0.05) == 0.0);
    CHECK(b.rho(0.1) == 0.0);
    CHECK(b.rho(0.9) == 1.0);
    CHECK(b.rho(0.95) == 1.0);
    CHECK(b.rho(0.5) == Approx(0.5).margin(1e-15));
    CHECK(b.rho_d(0.5) > 0.0);
    // monotone
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
        double r = b.rho(i / 100.0);
        CHECK(r >= prev);
        prev = r;
    }
    // derivatives continuous at the joins (finite differences across them)
    for (double s0 : {0.1, 0.9}) {
        double left = b.rho_d(s0 - 1e-7), right = b.rho_d(s0 + 1e-7);
        CHECK(std::abs(left - right) < 1e-5);
        CHECK(std::abs(b.rho_dd(s0 - 1e-7) - b.rho_dd(s0 + 1e-7)) < 1e-4);
    }
    CHECK_THROWS(Blend(0.0));
    CHECK_THROWS(Blend(0.6));
}

TEST_CASE("profile derivatives") {
    Profile p(cubic_profile());
    CHECK(p.h(0.0) == 0.0);
    CHECK(p.h(1.0) == Approx(-0.5).margin(1e-16));
    CHECK(p.hd(0.0) == 0.0);
    CHECK(p.hd(1.0) == Approx(0.0).margin(1e-15));
    CHECK(p.hdd(0.0) == Approx(-3.0).margin(1e-15));
    CHECK(p.hdd(1.0) == Approx(3.0).margin(1e-15));
    CHECK_THROWS(Profile(parse_expr("pow(s,2)+x")));
}

TEST_CASE("pick_C frozen values") {
    auto f = coscos();

    InterpolationSpec id_spec;
    id_spec.f1 = f;
    id_spec.f2 = f;
    // d_s F~ == 0, so C = 1 / |h'(eps)| = 1/0.27
    CHECK(pick_C(id_spec) == Approx(3.703703703703703).margin(1e-14));

    InterpolationSpec half = id_spec;
    half.epsilon = 0.5;
    CHECK_NOTHROW(pick_C(half));
    CHECK(pick_C(half) == Approx(1.0 / 0.75).margin(1e-14));

    InterpolationSpec bad = id_spec;
    bad.profile = parse_expr("pow(s,3)-1.5*pow(s,2)+0.5*s");  // h' vanishes inside (eps, 1-eps)
    CHECK_THROWS_AS(pick_C(bad), ProfileDegenerate);
}

TEST_CASE("interpolation field is exact outside the blend window") {
    auto f = coscos();
    auto g = make_expr_field(Manifold::torus(), "cos(2*pi*(x-0.5))+cos(2*pi*y)");
    InterpolationSpec spec;
    spec.f1 = f;
    spec.f2 = g;
    spec.grid = 32;
    auto F = build_interpolation(spec);

    for (int k = 0; k < 100; ++k) {
        double x = std::fmod(0.17 + 0.61 * k, 1.0), y = std::fmod(0.39 + 0.29 * k, 1.0);
        Vec m2(2);
        m2 << x, y;
        Vec below(3), above(3);
        below << x, y, 0.1 * (k % 11) / 11.0;
        above << x, y, 1.0 - 0.1 * (k % 11) / 11.0;
        CHECK(F->tilde_value(below) == f->value(m2));  // bit-for-bit
        CHECK(F->tilde_value(above) == g->value(m2));
    }
}

TEST_CASE("index shift contract for the constant interpolation") {
    auto f = coscos();
    InterpolationSpec spec;
    spec.f1 = f;
    spec.f2 = f;
    auto F = build_interpolation(spec);
    CHECK(F->C() == Approx(3.703703703703703).margin(1e-14));

    FindCpOptions fo;
    fo.s_lo = -0.5;
    fo.s_hi = 1.5;
    fo.extra_seeds = 9;
    auto cps = find_critical_points(*F, 12, fo);
    REQUIRE(cps.size() == 8);
    int at0[4] = {0, 0, 0, 0}, at1[4] = {0, 0, 0, 0};
    for (const auto& cp : cps) {
        double s = cp.coords[2];
        CHECK((std::abs(s) < 1e-9 || std::abs(s - 1.0) < 1e-9));
        if (std::abs(s) < 1e-9)
            at0[cp.index]++;
        else
            at1[cp.index]++;
    }
    // s=0 carries the +1 shift of {0,1,1,2}; s=1 keeps {0,1,1,2}
    CHECK(at0[0] == 0);
    CHECK(at0[1] == 1);
    CHECK(at0[2] == 2);
    CHECK(at0[3] == 1);
    CHECK(at1[0] == 1);
    CHECK(at1[1] == 2);
    CHECK(at1[2] == 1);
    CHECK(at1[3] == 0);
}

TEST_CASE("sphere height interpolation index shift") {
    auto f = make_expr_field(Manifold::sphere(), "z");
    InterpolationSpec spec;
    spec.f1 = f;
    spec.f2 = f;
    auto F = build_interpolation(spec);
    FindCpOptions fo;
    fo.extra_seeds = 9;
    auto cps = find_critical_points(*F, 10, fo);
    REQUIRE(cps.size() == 4);
    std::vector<int> indices;
    for (const auto& cp : cps) indices.push_back(cp.index);
    // {3,1} at s=0 and {2,0} at s=1
    int count0 = 0, count1 = 0, count2 = 0, count3 = 0;
    for (const auto& cp : cps) {
        if (cp.index == 0) count0++;
        if (cp.index == 1) count1++;
        if (cp.index == 2) count2++;
        if (cp.index == 3) count3++;
        if (cp.index == 0 || cp.index == 2) CHECK(std::abs(cp.coords[3] - 1.0) < 1e-9);
        if (cp.index == 1 || cp.index == 3) CHECK(std::abs(cp.coords[3]) < 1e-9);
    }
    CHECK(count0 == 1);
    CHECK(count1 == 1);
    CHECK(count2 == 1);
    CHECK(count3 == 1);
}

TEST_CASE("small C exposes an interior critical point") {
    auto f = coscos();
    auto g = make_expr_field(Manifold::torus(), "cos(2*pi*(x-0.5))+cos(2*pi*y)");
    InterpolationSpec spec;
    spec.f1 = f;
    spec.f2 = g;
    spec.grid = 32;
    double C = pick_C(spec);
    CHECK_NOTHROW(build_interpolation(spec));

    bool tripped = false;
    for (int k = 0; k < 20 && !tripped; ++k) {
        C /= 2.0;
        InterpolationSpec weak = spec;
        weak.C = C;
        try {
            build_interpolation(weak);
        } catch (const InteriorCriticalPoint& e) {
            tripped = true;
            CHECK(e.point[2] > 1e-7);
            CHECK(e.point[2] < 1.0 - 1e-7);
        }
    }
    CHECK(tripped);
}

TEST_CASE("square field edges and corner indices") {
    auto f = coscos();
    SquareSpec sq;
    sq.f1 = f;
    sq.f2 = f;
    sq.f3 = f;
    sq.grid = 16;
    auto built = build_square_field(sq);
    CHECK(built.C == Approx(3.703703703703703).margin(1e-12));
    CHECK(built.edge12->C() == built.C);
    CHECK(built.edge23->C() == built.C);

    // edge restrictions agree with the standalone interpolations
    for (int k = 0; k < 20; ++k) {
        double x = std::fmod(0.13 + 0.57 * k, 1.0), y = std::fmod(0.71 + 0.37 * k, 1.0);
        double u = (k + 0.5) / 20.0;
        Vec left(4), e12(3);
        left << x, y, 0.0, u;
        e12 << x, y, u;
        // value on the s=0 edge equals edge12 plus the h(s)=h(0)=0 offset
        CHECK(built.square->value(left) == Approx(built.edge12->value(e12)).margin(1e-14));
        Vec right(4), e13(3);
        right << x, y, 1.0, u;
        e13 << x, y, u;
        CHECK(built.square->value(right) ==
              Approx(built.edge13->value(e13) + built.C * (-0.5)).margin(1e-12));
    }

    FindCpOptions so;
    so.s_lo = -0.15;
    so.s_hi = 1.15;
    so.extra_seeds = 5;
    auto cps = find_critical_points(*built.square, 10, so);
    REQUIRE(cps.size() == 16);
    int hist[5] = {0, 0, 0, 0, 0};
    for (const auto& cp : cps) {
        hist[cp.index]++;
        for (int i = 2; i < 4; ++i)
            CHECK((std::abs(cp.coords[i]) < 1e-9 || std::abs(cp.coords[i] - 1.0) < 1e-9));
    }
    CHECK(hist[0] == 1);
    CHECK(hist[1] == 4);
    CHECK(hist[2] == 6);
    CHECK(hist[3] == 4);
    CHECK(hist[4] == 1);
}
