#include <morsepi/pi1.hpp>

#include <catch2/catch_amalgamated.hpp>
#include <random>

using namespace morsepi;

namespace {

Word make_word(std::initializer_list<std::pair<int, int>> letters) {
    Word w;
    for (auto [s, sg] : letters) w.push_back({s, sg});
    return w;
}

MorseComplexData& torus_complex() {
    static MorseComplexData data = [] {
        auto f = make_expr_field(Manifold::torus(), "cos(2*pi*x)+cos(2*pi*y)");
        return build_complex(*f);
    }();
    return data;
}

MorseComplexData& sphere_complex() {
    static MorseComplexData data = [] {
        auto f = make_expr_field(Manifold::sphere(), "z");
        return build_complex(*f);
    }();
    return data;
}

MorseComplexData& two_basin_complex() {
    static MorseComplexData data = [] {
        auto f = make_expr_field(Manifold::torus(), "cos(2*pi*x)+0.35*cos(4*pi*x)+cos(2*pi*y)");
        return build_complex(*f);
    }();
    return data;
}

void add_cp(MorseComplexData& d, int index) {
    CriticalPoint cp;
    cp.id = static_cast<int>(d.cps.size());
    cp.coords = Vec::Zero(2);
    cp.index = index;
    d.cps.push_back(cp);
}

void add_step(MorseComplexData& d, int through, int start, int end) {
    Step s;
    s.id = static_cast<int>(d.steps.size());
    s.through = through;
    s.start = start;
    s.end = end;
    s.delta_start = IVec::Zero(2);
    s.delta_end = IVec::Zero(2);
    d.steps.push_back(s);
}

// two triangles glued along a chord, forming a square disk
MorseComplexData square_fixture() {
    MorseComplexData d;
    d.provenance = MorseComplexData::Provenance::Handwritten;
    for (int i = 0; i < 4; ++i) add_cp(d, 0);
    for (int i = 0; i < 5; ++i) add_cp(d, 1);
    for (int i = 0; i < 2; ++i) add_cp(d, 2);
    add_step(d, 4, 0, 1);
    add_step(d, 5, 1, 2);
    add_step(d, 6, 0, 2);  // the shared chord
    add_step(d, 7, 2, 3);
    add_step(d, 8, 3, 0);
    d.disks.push_back({9, make_word({{0, 1}, {1, 1}, {2, -1}}), {}});
    d.disks.push_back({10, make_word({{2, 1}, {3, 1}, {4, 1}}), {}});
    d.base = 0;
    return d;
}

// fan-triangulated n-gon: outer edges 0..n-1, chords n..2n-4
MorseComplexData fan_fixture(int n) {
    MorseComplexData d;
    d.provenance = MorseComplexData::Provenance::Handwritten;
    int n_steps = 2 * n - 3;
    for (int i = 0; i < n; ++i) add_cp(d, 0);
    for (int i = 0; i < n_steps; ++i) add_cp(d, 1);
    for (int i = 0; i < n - 2; ++i) add_cp(d, 2);
    for (int i = 0; i < n; ++i) add_step(d, n + i, i, (i + 1) % n);
    for (int j = 2; j <= n - 2; ++j) add_step(d, n + d.steps.size(), 0, j);
    auto chord = [&](int j) { return n + (j - 2); };
    for (int i = 1; i <= n - 2; ++i) {
        Word w;
        if (i == 1) {
            w = make_word({{0, 1}, {1, 1}, {chord(2), -1}});
        } else if (i == n - 2) {
            w = make_word({{chord(n - 2), 1}, {n - 2, 1}, {n - 1, 1}});
        } else {
            w = make_word({{chord(i), 1}, {i, 1}, {chord(i + 1), -1}});
        }
        d.disks.push_back({n + n_steps + (i - 1), w, {}});
    }
    d.base = 0;
    return d;
}

Presentation torus_presentation_abstract() {
    Presentation p;
    p.generators = {0, 1};
    p.relators = {make_word({{0, 1}, {1, 1}, {0, -1}, {1, -1}})};
    p.base = 0;
    return p;
}

}  // namespace

TEST_CASE("free reduction cancels adjacent inverse pairs") {
    CHECK(free_reduce(make_word({{0, 1}, {0, -1}})).empty());
    CHECK(free_reduce(make_word({{0, 1}, {1, 1}, {1, -1}, {0, 1}})) ==
          make_word({{0, 1}, {0, 1}}));
    Word comm = make_word({{0, 1}, {1, 1}, {0, -1}, {1, -1}});
    CHECK(free_reduce(comm) == comm);
    // cascade through the middle
    CHECK(free_reduce(make_word({{0, 1}, {1, 1}, {1, -1}, {0, -1}})).empty());
    // idempotent and length-non-increasing on random words
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> step(0, 2), sign(0, 1), len(0, 12);
    for (int t = 0; t < 50; ++t) {
        Word w;
        int n = len(rng);
        for (int i = 0; i < n; ++i) w.push_back({step(rng), sign(rng) ? 1 : -1});
        Word r = free_reduce(w);
        CHECK(r.size() <= w.size());
        CHECK(free_reduce(r) == r);
    }
}

TEST_CASE("consecutiveness is validated against step endpoints") {
    MorseComplexData d = square_fixture();
    CHECK_NOTHROW(check_consecutive(make_word({{0, 1}, {1, 1}, {2, -1}}), d));
    CHECK_NOTHROW(check_consecutive(make_word({{2, 1}, {1, -1}}), d));
    try {
        check_consecutive(make_word({{0, 1}, {3, 1}}), d);
        FAIL("expected NotConsecutive");
    } catch (const NotConsecutive& e) {
        CHECK(e.position == 1);
    }
}

TEST_CASE("torus complex presents the fundamental group of the torus") {
    Presentation p = presentation(torus_complex());
    CHECK(p.base == 0);
    CHECK(p.tree.empty());  // single minimum
    CHECK(p.generators == std::vector<int>{0, 1});
    REQUIRE(p.relators.size() == 1);
    CHECK(p.relators[0] == make_word({{0, -1}, {1, -1}, {0, 1}, {1, 1}}));
    CHECK(to_text(p) == "< a, b | a^-1 b^-1 a b >");

    Abelianization ab = abelianization(p);
    CHECK(ab.rank == 2);
    CHECK(ab.torsion.empty());
}

TEST_CASE("sphere complex presents the trivial group") {
    Presentation p = presentation(sphere_complex());
    CHECK(p.generators.empty());
    CHECK(p.relators.empty());
    CHECK(to_text(p) == "< | >");
    CHECK(abelianization(p).rank == 0);
}

TEST_CASE("tree absorbs a single connecting step") {
    MorseComplexData d;
    d.provenance = MorseComplexData::Provenance::Handwritten;
    add_cp(d, 0);
    add_cp(d, 0);
    add_cp(d, 1);
    add_step(d, 2, 0, 1);
    d.base = 0;
    Presentation p = presentation(d);
    CHECK(p.generators.empty());
    CHECK(p.tree == std::vector<int>{0});
    CHECK(to_text(p) == "< | >");
}

TEST_CASE("unreachable minimum raises DisconnectedComplex") {
    MorseComplexData d;
    d.provenance = MorseComplexData::Provenance::Handwritten;
    add_cp(d, 0);
    add_cp(d, 0);
    d.base = 0;
    CHECK_THROWS_AS(presentation(d), DisconnectedComplex);
}

TEST_CASE("generator count follows the Euler count of the spanning tree") {
    for (const MorseComplexData* d :
         {&torus_complex(), &sphere_complex(), &two_basin_complex()}) {
        Presentation p = presentation(*d);
        int minima = 0;
        for (const CriticalPoint& cp : d->cps) minima += cp.index == 0;
        CHECK(static_cast<int>(p.generators.size()) ==
              static_cast<int>(d->steps.size()) - (minima - 1));
        // numerical surface scenarios: H1 is Z^2 for the torus, 0 for the sphere
        Abelianization ab = abelianization(p);
        CHECK(ab.rank == (d->manifold.has_sphere_base() ? 0 : 2));
        CHECK(ab.torsion.empty());
    }
}

TEST_CASE("abelianization invariant factors") {
    SECTION("single torsion relator") {
        Presentation p;
        p.generators = {0};
        p.relators = {make_word({{0, 1}, {0, 1}})};
        Abelianization ab = abelianization(p);
        CHECK(ab.rank == 0);
        CHECK(ab.torsion == std::vector<std::int64_t>{2});
    }
    SECTION("klein bottle relator") {
        Presentation p;
        p.generators = {0, 1};
        p.relators = {make_word({{0, 1}, {1, 1}, {0, 1}, {1, -1}})};
        Abelianization ab = abelianization(p);
        CHECK(ab.rank == 1);
        CHECK(ab.torsion == std::vector<std::int64_t>{2});
    }
    SECTION("empty presentation") {
        Presentation p;
        CHECK(abelianization(p).rank == 0);
    }
}

TEST_CASE("word problem verdicts on the torus presentation") {
    Presentation p = torus_presentation_abstract();

    SECTION("the relator itself is trivial") {
        TrivialityVerdict v = is_trivial(make_word({{0, 1}, {1, 1}, {0, -1}, {1, -1}}), p);
        CHECK(v.kind == TrivialityVerdict::Kind::Trivial);
        CHECK(verify_witness(make_word({{0, 1}, {1, 1}, {0, -1}, {1, -1}}), p, v.witness));
    }
    SECTION("a generator is nontrivial with an H1 certificate") {
        TrivialityVerdict v = is_trivial(make_word({{0, 1}}), p);
        CHECK(v.kind == TrivialityVerdict::Kind::Nontrivial);
        CHECK(v.certificate == std::vector<std::int64_t>{1, 0});
    }
    SECTION("a squared commutator word needs a real rewrite") {
        Word w = make_word({{0, 1}, {0, 1}, {1, 1}, {1, 1}, {0, -1}, {0, -1}, {1, -1}, {1, -1}});
        TrivialityVerdict v = is_trivial(w, p);
        CHECK(v.kind == TrivialityVerdict::Kind::Trivial);
        CHECK(!v.witness.empty());
        CHECK(verify_witness(w, p, v.witness));
    }
    SECTION("empty word is trivially trivial") {
        CHECK(is_trivial({}, p).kind == TrivialityVerdict::Kind::Trivial);
    }
    SECTION("budget exhaustion is an honest Unknown") {
        Word w = make_word({{0, 1}, {0, 1}, {1, 1}, {1, 1}, {0, -1}, {0, -1}, {1, -1}, {1, -1}});
        SearchBudget tiny;
        tiny.max_states = 5;
        TrivialityVerdict v = is_trivial(w, p, tiny);
        CHECK(v.kind == TrivialityVerdict::Kind::Unknown);
        CHECK(v.states == 5);
    }
}

TEST_CASE("zero-sum word in a free presentation stays Unknown") {
    Presentation p;
    p.generators = {0, 1};
    TrivialityVerdict v = is_trivial(make_word({{0, 1}, {1, 1}, {0, -1}, {1, -1}}), p);
    CHECK(v.kind == TrivialityVerdict::Kind::Unknown);
}

TEST_CASE("gluing the single torus disk gives a trivial loop") {
    TrivialityVerdict v = glue_disks(torus_complex(), {3}, {});
    CHECK(v.kind == TrivialityVerdict::Kind::Trivial);
}

TEST_CASE("two triangles glue along their chord") {
    MorseComplexData d = square_fixture();
    TrivialityVerdict v = glue_disks(d, {9, 10}, {});
    CHECK(v.kind == TrivialityVerdict::Kind::Trivial);
}

TEST_CASE("disks meeting in two separated segments are rejected") {
    // the two disks of the two-basin torus complex share both vertical
    // saddle steps, which sit opposite each other on each boundary
    const MorseComplexData& d = two_basin_complex();
    REQUIRE(d.disks.size() == 2);
    CHECK_THROWS_AS(glue_disks(d, {d.disks[0].of, d.disks[1].of}, {}), NotDiskLike);
}

TEST_CASE("whole-boundary gluing is rejected") {
    MorseComplexData d;
    d.provenance = MorseComplexData::Provenance::Handwritten;
    add_cp(d, 0);
    add_cp(d, 0);
    add_cp(d, 1);
    add_cp(d, 1);
    add_cp(d, 2);
    add_cp(d, 2);
    add_step(d, 2, 0, 1);
    add_step(d, 3, 1, 0);
    d.disks.push_back({4, make_word({{0, 1}, {1, 1}}), {}});
    d.disks.push_back({5, make_word({{1, -1}, {0, -1}}), {}});
    d.base = 0;
    CHECK_THROWS_AS(glue_disks(d, {4, 5}, {}), NotDiskLike);
}

TEST_CASE("fan-triangulated polygons glue to their outer boundary") {
    std::mt19937 rng(20240818);
    for (int n : {4, 5, 6}) {
        MorseComplexData d = fan_fixture(n);
        CAPTURE(n);

        Presentation p = presentation(d);
        CHECK(static_cast<int>(p.generators.size()) == n - 2);
        Abelianization ab = abelianization(p);
        CHECK(ab.rank == 0);
        CHECK(ab.torsion.empty());

        std::vector<int> order;
        for (int i = 0; i < n - 2; ++i) order.push_back(d.disks[static_cast<size_t>(i)].of);
        TrivialityVerdict v = glue_disks(d, order, {});
        CHECK(v.kind == TrivialityVerdict::Kind::Trivial);

        // glue from a random interior triangle outward; adjacency still holds
        if (n >= 5) {
            std::vector<int> alt;
            std::uniform_int_distribution<int> mid(1, n - 4);
            int m = mid(rng);
            alt.push_back(d.disks[static_cast<size_t>(m)].of);
            for (int lo = m - 1, hi = m + 1; lo >= 0 || hi <= n - 3;) {
                if (lo >= 0) alt.push_back(d.disks[static_cast<size_t>(lo--)].of);
                if (hi <= n - 3) alt.push_back(d.disks[static_cast<size_t>(hi++)].of);
            }
            TrivialityVerdict va = glue_disks(d, alt, {});
            CHECK(va.kind == TrivialityVerdict::Kind::Trivial);
        }
    }
}

TEST_CASE("gluing away from the base needs a conjugator") {
    // shift the fan's base to an outer vertex; the outer loop then needs the
    // tree path back to the base as conjugator
    MorseComplexData d = fan_fixture(5);
    d.base = 2;
    std::vector<int> order;
    for (const DiskBoundary& disk : d.disks) order.push_back(disk.of);
    CHECK_THROWS_AS(glue_disks(d, order, {}), Pi1Error);
    // conjugator: path from v2 to v0 along outer edges 1, 0 backwards
    Word conj = make_word({{1, -1}, {0, -1}});
    TrivialityVerdict v = glue_disks(d, order, conj);
    CHECK(v.kind == TrivialityVerdict::Kind::Trivial);
}
