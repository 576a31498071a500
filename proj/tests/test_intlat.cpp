#include <morsepi/intlat.hpp>

#include <catch2/catch_amalgamated.hpp>
#include <random>

using namespace morsepi;

namespace {

IMat from(std::initializer_list<std::initializer_list<std::int64_t>> rows) {
    IMat m(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (std::int64_t x : row) m(r, c++) = x;
        ++r;
    }
    return m;
}

// exact integer determinant by Laplace expansion; fine for the tiny matrices here
std::int64_t idet(const IMat& m) {
    const Eigen::Index n = m.rows();
    if (n == 1) return m(0, 0);
    std::int64_t acc = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
        if (m(0, k) == 0) continue;
        IMat sub(n - 1, n - 1);
        for (Eigen::Index i = 1; i < n; ++i) {
            Eigen::Index cc = 0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == k) continue;
                sub(i - 1, cc++) = m(i, j);
            }
        }
        acc += (k % 2 ? -1 : 1) * m(0, k) * idet(sub);
    }
    return acc;
}

void check_smith(const IMat& a) {
    SmithResult s = smith_normal_form(a);
    CHECK((s.u * a * s.v - s.d).cwiseAbs().maxCoeff() == 0);
    CHECK(std::abs(idet(s.u)) == 1);
    CHECK(std::abs(idet(s.v)) == 1);
    for (Eigen::Index i = 0; i < s.d.rows(); ++i)
        for (Eigen::Index j = 0; j < s.d.cols(); ++j)
            if (i != j) CHECK(s.d(i, j) == 0);
    Eigen::Index lim = std::min(s.d.rows(), s.d.cols());
    for (Eigen::Index t = 0; t + 1 < lim; ++t) {
        CHECK(s.d(t, t) >= 0);
        if (s.d(t, t) == 0)
            CHECK(s.d(t + 1, t + 1) == 0);
        else
            CHECK(s.d(t + 1, t + 1) % s.d(t, t) == 0);
    }
}

}  // namespace

TEST_CASE("smith normal form on fixed matrices") {
    SECTION("identity") {
        SmithResult s = smith_normal_form(from({{1, 0}, {0, 1}}));
        CHECK(s.d(0, 0) == 1);
        CHECK(s.d(1, 1) == 1);
    }
    SECTION("diagonal gcd fold") {
        SmithResult s = smith_normal_form(from({{2, 0}, {0, 3}}));
        CHECK(s.d(0, 0) == 1);
        CHECK(s.d(1, 1) == 6);
    }
    SECTION("symmetric") {
        SmithResult s = smith_normal_form(from({{6, 4}, {4, 6}}));
        CHECK(s.d(0, 0) == 2);
        CHECK(s.d(1, 1) == 10);
    }
    SECTION("generic 2x2") {
        SmithResult s = smith_normal_form(from({{1, 2}, {3, 4}}));
        CHECK(s.d(0, 0) == 1);
        CHECK(s.d(1, 1) == 2);
    }
    SECTION("nilpotent shear difference") {
        SmithResult s = smith_normal_form(from({{0, 1}, {0, 0}}));
        CHECK(s.d(0, 0) == 1);
        CHECK(s.d(1, 1) == 0);
    }
    SECTION("zero matrix") {
        SmithResult s = smith_normal_form(IMat::Zero(2, 3));
        CHECK(s.d.cwiseAbs().maxCoeff() == 0);
        CHECK(elementary_divisors(IMat::Zero(2, 3)).empty());
    }
    SECTION("single entry") { CHECK(elementary_divisors(from({{2}})) == std::vector<std::int64_t>{2}); }
    SECTION("divisors of the gcd fold") {
        CHECK(elementary_divisors(from({{2, 0}, {0, 3}})) == std::vector<std::int64_t>{1, 6});
    }
}

TEST_CASE("smith normal form properties on random matrices") {
    std::mt19937 rng(20240817);
    std::uniform_int_distribution<int> dim(1, 5), entry(-6, 6);
    for (int trial = 0; trial < 60; ++trial) {
        IMat a(dim(rng), dim(rng));
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = entry(rng);
        CAPTURE(trial, a.rows(), a.cols());
        check_smith(a);
    }
}

TEST_CASE("hermite normal form canonicalizes the row lattice") {
    std::mt19937 rng(991);
    std::uniform_int_distribution<int> entry(-5, 5), pick(0, 2);
    for (int trial = 0; trial < 40; ++trial) {
        IMat a(3, 4);
        for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 4; ++j) a(i, j) = entry(rng);
        HermiteResult h = hermite_normal_form(a);
        CAPTURE(trial, a, h.h);

        REQUIRE(static_cast<size_t>(h.h.rows()) == h.pivots.size());
        for (size_t r = 0; r + 1 < h.pivots.size(); ++r) CHECK(h.pivots[r] < h.pivots[r + 1]);
        for (Eigen::Index r = 0; r < h.h.rows(); ++r) {
            Eigen::Index c = h.pivots[static_cast<size_t>(r)];
            CHECK(h.h(r, c) > 0);
            for (Eigen::Index i = 0; i < r; ++i) {
                CHECK(h.h(i, c) >= 0);
                CHECK(h.h(i, c) < h.h(r, c));
            }
        }

        // every input row reduces to zero against the form
        for (Eigen::Index i = 0; i < 3; ++i) {
            IVecN x = a.row(i).transpose();
            CHECK(reduce_mod(h, x).cwiseAbs().maxCoeff() == 0);
        }

        // unimodular row operations leave the form unchanged
        IMat b = a;
        for (int k = 0; k < 6; ++k) {
            int i = pick(rng), j = pick(rng);
            if (i == j) {
                b.row(i) = -b.row(i);
            } else {
                b.row(i) += entry(rng) * b.row(j);
            }
        }
        HermiteResult hb = hermite_normal_form(b);
        CHECK(h.h == hb.h);

        // coset reduction is invariant under adding lattice vectors
        IVecN x(4);
        for (Eigen::Index j = 0; j < 4; ++j) x[j] = entry(rng);
        IVecN shifted = x;
        for (Eigen::Index i = 0; i < 3; ++i) shifted += entry(rng) * a.row(i).transpose();
        CHECK(reduce_mod(h, x) == reduce_mod(h, shifted));
        CHECK(reduce_mod(h, reduce_mod(h, x)) == reduce_mod(h, x));
    }
}
