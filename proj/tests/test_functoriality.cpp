#include <morsepi/functoriality.hpp>

#include <catch2/catch_amalgamated.hpp>
#include <map>
#include <string>
#include <vector>

using namespace morsepi;

namespace {

const char* kSquare = "cos(2*pi*x)+cos(2*pi*y)";
const char* kTranslated = "cos(2*pi*(x-0.3))+cos(2*pi*(y-0.2))";

MorseComplexData build(const Manifold& m, const std::string& expr) {
    auto f = make_expr_field(m, expr);
    return build_complex(*f);
}

const MorseComplexData& torus_complex() {
    static MorseComplexData d = build(Manifold::torus(), kSquare);
    return d;
}

StepMap identity_map(const MorseComplexData& d) {
    StepMap sm;
    sm.source = d;
    sm.target = d;
    for (const CriticalPoint& c : d.cps)
        if (c.index == 0) sm.base_transport[c.id] = c.id;
    for (const Step& s : d.steps) sm.images[s.id] = Word{{s.id, 1}};
    return sm;
}

}  // namespace

TEST_CASE("wall classification separates the three mechanisms") {
    const MorseComplexData& d = torus_complex();
    StepMap lo = identity_map(d);

    StepMap bd = lo;
    Word pair_word{{0, 1}, {1, 1}, {1, -1}};
    bd.images[0] = pair_word;
    LambdaWall w1 = classify_wall(lo, bd, 0.5);
    CHECK(w1.kind == WallKind::BirthDeath);
    CHECK(w1.step == 0);

    StepMap b2 = lo;
    Word spliced{{0, 1}, {1, 1}, {0, 1}, {1, -1}, {0, -1}};
    b2.images[0] = spliced;
    LambdaWall w2 = classify_wall(lo, b2, 0.5);
    CHECK(w2.kind == WallKind::BreakIndex2Target);
    CHECK(w2.step == 0);

    StepMap b0 = lo;
    Word conj_a{{0, 1}, {1, 1}, {0, 1}, {1, -1}, {0, -1}};
    Word conj_b{{0, 1}, {1, 1}, {0, -1}};
    b0.images[0] = conj_a;
    b0.images[1] = conj_b;
    LambdaWall w3 = classify_wall(lo, b0, 0.7);
    CHECK(w3.kind == WallKind::BreakIndex0Source);
    Word sigma{{0, 1}, {1, 1}};
    CHECK(w3.sigma == sigma);

    StepMap bad = lo;
    Word swap_a{{1, 1}};
    Word swap_b{{0, 1}};
    bad.images[0] = swap_a;
    bad.images[1] = swap_b;
    CHECK_THROWS_AS(classify_wall(lo, bad, 0.9), UnclassifiedWall);

    CHECK_THROWS_AS(classify_wall(lo, lo, 0.9), UnclassifiedWall);
}

TEST_CASE("diagram verification composes wall conjugators in order") {
    const MorseComplexData& d = torus_complex();
    StepMap id = identity_map(d);
    Word sigma{{1, 1}};

    StepMap conj = id;
    for (auto& [g, w] : conj.images) w = detail::conjugate(sigma, w);

    LambdaSweep sweep;
    sweep.lambdas = {0.1, 1.5};
    sweep.maps = {id, conj};
    LambdaWall wall;
    wall.lambda = 0.7;
    wall.kind = WallKind::BreakIndex0Source;
    wall.sigma = sigma;
    sweep.walls = {wall};

    DiagramReport rep = verify_diagram(sweep, id, conj, id);
    CHECK(rep.commutes);
    CHECK(rep.psi == sigma);
    CHECK(rep.inconclusive == 0);

    StepMap wrong = id;
    Word swap_a{{1, 1}};
    Word swap_b{{0, 1}};
    wrong.images[0] = swap_a;
    wrong.images[1] = swap_b;
    LambdaSweep plain;
    plain.lambdas = {0.1, 1.5};
    plain.maps = {id, id};
    DiagramReport bad = verify_diagram(plain, id, id, wrong);
    CHECK(!bad.commutes);
    CHECK(bad.note.find("fails on step") != std::string::npos);
}

TEST_CASE("iso verification accepts identities and rejects drifting pairs") {
    const MorseComplexData& d = torus_complex();
    StepMap id = identity_map(d);
    IsoReport good = verify_iso(id, id);
    CHECK(good.ok);
    CHECK(good.conjugator.empty());

    StepMap shear = id;
    Word sheared{{0, 1}, {1, 1}};
    shear.images[0] = sheared;
    IsoReport bad = verify_iso(shear, shear, 4);
    CHECK(!bad.ok);
    CHECK(bad.inconclusive == 0);
}

TEST_CASE("map composition keeps endpoints coherent") {
    const MorseComplexData& d = torus_complex();
    StepMap id = identity_map(d);
    StepMap twice = compose_maps(id, id);
    CHECK(maps_equal(twice, id));
}

TEST_CASE("angle domain and grid floor are enforced") {
    Manifold m = Manifold::torus();
    auto f1 = make_expr_field(m, kSquare);
    SquareSpec spec{f1, f1, f1};
    SquareBuild sq = build_square_field(spec);
    const MorseComplexData& d = torus_complex();
    CHECK_THROWS_AS(phi_lambda(sq, 0.0, d, d), NonGenericLambda);
    CHECK_THROWS_AS(phi_lambda(sq, 2.0, d, d), NonGenericLambda);
    CHECK_THROWS_AS(sweep_lambda(sq, 8, d, d), GeometryError);
}

TEST_CASE("underweighted square interpolation is rejected") {
    Manifold m = Manifold::torus();
    auto f1 = make_expr_field(m, kSquare);
    auto f3 = make_expr_field(m, kTranslated);
    SquareSpec spec{f1, f1, f3};
    spec.C = 0.5;
    CHECK_THROWS_AS(build_square_field(spec), InteriorCriticalPoint);
}

TEST_CASE("square of equal fields carries the corner critical points") {
    Manifold m = Manifold::torus();
    auto f1 = make_expr_field(m, kSquare);
    SquareSpec spec{f1, f1, f1};
    SquareBuild sq = build_square_field(spec);
    auto cps = find_critical_points(*sq.square, 8);
    REQUIRE(cps.size() == 16);
    std::map<int, int> hist;
    for (const CriticalPoint& c : cps) hist[c.index] += 1;
    CHECK(hist[0] == 1);
    CHECK(hist[1] == 4);
    CHECK(hist[2] == 6);
    CHECK(hist[3] == 4);
    CHECK(hist[4] == 1);
}

TEST_CASE("equal fields give the identity at every angle") {
    Manifold m = Manifold::torus();
    auto f1 = make_expr_field(m, kSquare);
    SquareSpec spec{f1, f1, f1};
    SquareBuild sq = build_square_field(spec);
    const MorseComplexData& d = torus_complex();
    StepMap id = identity_map(d);

    SweepOptions so;
    so.samples = 128;
    LambdaSweep sweep = sweep_lambda(sq, 16, d, d, so);
    CHECK(sweep.walls.empty());
    REQUIRE(sweep.maps.size() == 16);
    for (const StepMap& sm : sweep.maps) CHECK(maps_equal(sm, id));
}

TEST_CASE("translated target square commutes without walls") {
    Manifold m = Manifold::torus();
    auto f1 = make_expr_field(m, kSquare);
    auto f3 = make_expr_field(m, kTranslated);
    SquareSpec spec{f1, f1, f3};
    SquareBuild sq = build_square_field(spec);
    MorseComplexData d1 = torus_complex();
    MorseComplexData d3 = build(m, kTranslated);

    SweepOptions so;
    so.samples = 128;
    LambdaSweep sweep = sweep_lambda(sq, 16, d1, d3, so);
    CHECK(sweep.walls.empty());

    StepMap m12 = continuation_map(d1, d1, *sq.edge12, so);
    StepMap m23 = continuation_map(d1, d3, *sq.edge23, so);
    StepMap m13 = continuation_map(d1, d3, *sq.edge13, so);
    DiagramReport rep = verify_diagram(sweep, m12, m23, m13);
    CHECK(rep.commutes);
    CHECK(rep.psi.empty());
    CHECK(rep.inconclusive == 0);
}

TEST_CASE("continuation there and back is an inner automorphism") {
    Manifold m = Manifold::torus();
    auto f1 = make_expr_field(m, kSquare);
    auto f3 = make_expr_field(m, kTranslated);
    MorseComplexData d1 = torus_complex();
    MorseComplexData d3 = build(m, kTranslated);

    InterpolationSpec fwd;
    fwd.f1 = f1;
    fwd.f2 = f3;
    InterpolationSpec bwd;
    bwd.f1 = f3;
    bwd.f2 = f1;
    SweepOptions so;
    so.samples = 128;
    StepMap m13 = continuation_map(d1, d3, *build_interpolation(fwd), so);
    StepMap m31 = continuation_map(d3, d1, *build_interpolation(bwd), so);

    IsoReport rep = verify_iso(m13, m31, 8);
    CHECK(rep.ok);
    CHECK(rep.conjugator.size() <= 8);
    CHECK(rep.inconclusive == 0);
}
