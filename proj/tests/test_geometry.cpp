#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "morsepi/geometry.hpp"

using namespace morsepi;
using Catch::Approx;

namespace {
Vec v2(double a, double b) {
    Vec p(2);
    p << a, b;
    return p;
}
Vec v3(double a, double b, double c) {
    Vec p(3);
    p << a, b, c;
    return p;
}
}  // namespace

TEST_CASE("torus wrap and lattice displacement") {
    auto m = Manifold::torus();
    CHECK(m.dim() == 2);
    CHECK(m.intrinsic_dim() == 2);
    CHECK(m.periodic(0));
    CHECK(m.periodic(1));

    Vec p = m.normalize(v2(1.3, -0.25));
    CHECK(p[0] == Approx(0.3).margin(1e-15));
    CHECK(p[1] == Approx(0.75).margin(1e-15));

    Vec d = m.displacement(v2(0.9, 0.1), v2(0.1, 0.9));
    CHECK(d[0] == Approx(0.2).margin(1e-15));
    CHECK(d[1] == Approx(-0.2).margin(1e-15));
    CHECK(m.distance(v2(0.9, 0.1), v2(0.1, 0.9)) == Approx(0.28284271247461901).margin(1e-15));

    IVec off = m.lift_offset(v2(0.1, 0.9), v2(0.9, 0.1));
    CHECK(off[0] == 1);
    CHECK(off[1] == -1);
    Vec lifted = m.apply_offset(v2(0.1, 0.9), off);
    CHECK(lifted[0] == Approx(1.1));
    CHECK(lifted[1] == Approx(-0.1));
    // cp + offset differs from q by the short representative only
    CHECK((v2(0.9, 0.1) - lifted).cwiseAbs().maxCoeff() < 0.5);
}

TEST_CASE("sphere normalization and frames") {
    auto m = Manifold::sphere();
    CHECK(m.dim() == 3);
    CHECK(m.intrinsic_dim() == 2);
    CHECK_FALSE(m.periodic(0));

    Vec p = m.normalize(v3(2, 0, 0));
    CHECK(p.norm() == Approx(1.0).margin(1e-15));
    CHECK(p[0] == Approx(1.0));

    auto frame = m.tangent_frame(v3(1, 0, 0));
    REQUIRE(frame.size() == 2);
    for (const Vec& e : frame) {
        CHECK(e.norm() == Approx(1.0).margin(1e-14));
        CHECK(std::abs(e.dot(v3(1, 0, 0))) < 1e-14);
    }
    CHECK(std::abs(frame[0].dot(frame[1])) < 1e-14);

    // determinism
    auto frame2 = m.tangent_frame(v3(1, 0, 0));
    CHECK((frame[0] - frame2[0]).norm() == 0.0);

    Vec t = m.project_tangent(v3(0, 0, 1), v3(0.3, 0.4, 0.5));
    CHECK(t[2] == Approx(0.0).margin(1e-15));
    CHECK(t[0] == Approx(0.3));

    CHECK_THROWS_AS(m.normalize(v3(0, 0, 0)), GeometryError);
}

TEST_CASE("products") {
    auto mr = Manifold::product_r(Manifold::torus());
    CHECK(mr.dim() == 3);
    CHECK(mr.intrinsic_dim() == 3);
    CHECK(mr.base_chart_dim() == 2);
    CHECK(mr.periodic(0));
    CHECK_FALSE(mr.periodic(2));
    CHECK(mr.base() == Manifold::torus());

    auto ms = Manifold::product_square(Manifold::sphere());
    CHECK(ms.dim() == 5);
    CHECK(ms.intrinsic_dim() == 4);

    CHECK_THROWS_AS(Manifold::product_r(mr), GeometryError);

    // s coordinate never wraps
    Vec p(3);
    p << 0.5, 0.5, 7.25;
    CHECK(mr.normalize(p)[2] == 7.25);
    IVec off = mr.lift_offset(p, p);
    CHECK(off[2] == 0);
}

TEST_CASE("field variable validation") {
    CHECK_NOTHROW(make_expr_field(Manifold::torus(), "cos(2*pi*x)+cos(2*pi*y)"));
    CHECK_THROWS_AS(make_expr_field(Manifold::torus(), "x"), NotPeriodic);
    CHECK_THROWS_AS(make_expr_field(Manifold::torus(), "cos(2*pi*x)+y"), NotPeriodic);
    CHECK_THROWS_AS(make_expr_field(Manifold::torus(), "s"), GeometryError);
    CHECK_THROWS_AS(make_expr_field(Manifold::torus(), "z"), GeometryError);
    CHECK_NOTHROW(make_expr_field(Manifold::sphere(), "z"));
    CHECK_NOTHROW(make_expr_field(Manifold::product_r(Manifold::torus()), "cos(2*pi*x)+cos(2*pi*y)-pow(s,2)"));
    CHECK_THROWS_AS(make_expr_field(Manifold::product_r(Manifold::torus()), "s+x"), NotPeriodic);
    CHECK_THROWS_AS(make_expr_field(Manifold::product_r(Manifold::torus()), "t"), GeometryError);
    CHECK_NOTHROW(make_expr_field(Manifold::product_square(Manifold::torus()),
                                  "cos(2*pi*x)+cos(2*pi*y)+pow(s,3)-1.5*pow(s,2)+pow(t,3)-1.5*pow(t,2)"));
}

TEST_CASE("sphere gradient of the height function") {
    auto m = Manifold::sphere();
    auto f = make_expr_field(m, "z");
    Vec g = grad(*f, v3(1, 0, 0));
    CHECK(g[0] == Approx(0.0).margin(1e-15));
    CHECK(g[1] == Approx(0.0).margin(1e-15));
    CHECK(g[2] == Approx(1.0).margin(1e-15));
    // poles are critical
    CHECK(grad(*f, v3(0, 0, 1)).norm() == Approx(0.0).margin(1e-15));
    CHECK(grad(*f, v3(0, 0, -1)).norm() == Approx(0.0).margin(1e-15));
}

TEST_CASE("intrinsic hessian with sphere curvature correction") {
    auto m = Manifold::sphere();
    auto f = make_expr_field(m, "z");
    Mat hn = hessian(*f, v3(0, 0, 1));
    REQUIRE(hn.rows() == 2);
    CHECK(hn(0, 0) == Approx(-1.0).margin(1e-14));
    CHECK(hn(1, 1) == Approx(-1.0).margin(1e-14));
    CHECK(hn(0, 1) == Approx(0.0).margin(1e-14));
    Mat hs = hessian(*f, v3(0, 0, -1));
    CHECK(hs(0, 0) == Approx(1.0).margin(1e-14));
    CHECK(hs(1, 1) == Approx(1.0).margin(1e-14));
}

TEST_CASE("torus hessian at the maximum") {
    auto f = make_expr_field(Manifold::torus(), "cos(2*pi*x)+cos(2*pi*y)");
    Mat h = hessian(*f, v2(0, 0));
    CHECK(h(0, 0) == Approx(-39.478417604357432).margin(1e-12));
    CHECK(h(1, 1) == Approx(-39.478417604357432).margin(1e-12));
    CHECK(h(0, 1) == Approx(0.0).margin(1e-14));
    CHECK_THROWS_AS(hessian(*f, v2(0.3, 0.3)), NotNearCritical);
}

TEST_CASE("gradient matches finite differences in the chart") {
    auto m = Manifold::product_r(Manifold::torus());
    auto f = make_expr_field(m, "cos(2*pi*x)*cos(2*pi*y)+s*sin(2*pi*x)-0.5*pow(s,2)");
    Vec p(3);
    p << 0.23, 0.71, 0.4;
    Vec g = f->gradient_raw(p);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i) {
        Vec pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        double fd = (f->value(pp) - f->value(pm)) / (2 * h);
        CHECK(g[i] == Approx(fd).margin(1e-8));
    }
    Mat hr = f->hessian_raw(p);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            Vec pp = p, pm = p;
            pp[j] += h;
            pm[j] -= h;
            double fd = (f->gradient_raw(pp)[i] - f->gradient_raw(pm)[i]) / (2 * h);
            CHECK(hr(i, j) == Approx(fd).margin(1e-7));
        }
}

TEST_CASE("value dimension checks") {
    auto m = Manifold::torus();
    auto f = make_expr_field(m, "cos(2*pi*x)");
    Vec p(3);
    p << 0, 0, 0;
    CHECK_THROWS_AS(m.normalize(p), GeometryError);
}
