#pragma once

// Integer lattice tools: Smith normal form with both transforms, row Hermite
// normal form, and coset reduction. Everything is exact int64 arithmetic with
// overflow faults, which is plenty for the small exponent matrices produced
// by surface complexes.

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace morsepi {

using IMat = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;
using IVecN = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

struct IntLatError : std::runtime_error {
    explicit IntLatError(const std::string& m) : std::runtime_error(m) {}
};

namespace detail {

inline std::int64_t imul(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_mul_overflow(a, b, &r)) throw IntLatError("integer overflow in lattice arithmetic");
    return r;
}

inline std::int64_t isub(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_sub_overflow(a, b, &r)) throw IntLatError("integer overflow in lattice arithmetic");
    return r;
}

// row_i -= q * row_t, applied to a and its left transform
inline void row_op(IMat& a, IMat& u, Eigen::Index i, Eigen::Index t, std::int64_t q) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) a(i, c) = isub(a(i, c), imul(q, a(t, c)));
    for (Eigen::Index c = 0; c < u.cols(); ++c) u(i, c) = isub(u(i, c), imul(q, u(t, c)));
}

inline void col_op(IMat& a, IMat& v, Eigen::Index j, Eigen::Index t, std::int64_t q) {
    for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, j) = isub(a(r, j), imul(q, a(r, t)));
    for (Eigen::Index r = 0; r < v.rows(); ++r) v(r, j) = isub(v(r, j), imul(q, v(r, t)));
}

}  // namespace detail

struct SmithResult {
    IMat u, d, v;  // u * a * v == d, u and v unimodular, d diagonal with d1 | d2 | ...
};

inline SmithResult smith_normal_form(IMat a) {
    const Eigen::Index m = a.rows(), n = a.cols();
    IMat u = IMat::Identity(m, m), v = IMat::Identity(n, n);
    for (Eigen::Index t = 0; t < std::min(m, n); ++t) {
        for (;;) {
            // bring the absolutely smallest nonzero entry of the trailing block to (t,t)
            Eigen::Index pi = -1, pj = -1;
            for (Eigen::Index i = t; i < m; ++i)
                for (Eigen::Index j = t; j < n; ++j)
                    if (a(i, j) != 0 &&
                        (pi < 0 || std::abs(a(i, j)) < std::abs(a(pi, pj)))) {
                        pi = i;
                        pj = j;
                    }
            if (pi < 0) {
                t = std::min(m, n);  // trailing block is zero
                break;
            }
            if (pi != t) {
                a.row(t).swap(a.row(pi));
                u.row(t).swap(u.row(pi));
            }
            if (pj != t) {
                a.col(t).swap(a.col(pj));
                v.col(t).swap(v.col(pj));
            }
            bool clean = true;
            for (Eigen::Index i = t + 1; i < m; ++i)
                if (a(i, t) != 0) {
                    detail::row_op(a, u, i, t, a(i, t) / a(t, t));
                    if (a(i, t) != 0) clean = false;
                }
            for (Eigen::Index j = t + 1; j < n; ++j)
                if (a(t, j) != 0) {
                    detail::col_op(a, v, j, t, a(t, j) / a(t, t));
                    if (a(t, j) != 0) clean = false;
                }
            if (!clean) continue;
            // divisibility: the pivot must divide the whole trailing block
            bool divides = true;
            for (Eigen::Index i = t + 1; i < m && divides; ++i)
                for (Eigen::Index j = t + 1; j < n && divides; ++j)
                    if (a(i, j) % a(t, t) != 0) {
                        for (Eigen::Index c = 0; c < n; ++c)
                            a(t, c) = detail::isub(a(t, c), detail::imul(-1, a(i, c)));
                        for (Eigen::Index c = 0; c < m; ++c)
                            u(t, c) = detail::isub(u(t, c), detail::imul(-1, u(i, c)));
                        divides = false;
                    }
            if (divides) {
                if (a(t, t) < 0) {
                    a.row(t) = -a.row(t);
                    u.row(t) = -u.row(t);
                }
                break;
            }
        }
    }
    return {u, a, v};
}

// invariant factors: the nonzero diagonal entries of the Smith form
inline std::vector<std::int64_t> elementary_divisors(const IMat& a) {
    SmithResult s = smith_normal_form(a);
    std::vector<std::int64_t> out;
    for (Eigen::Index t = 0; t < std::min(s.d.rows(), s.d.cols()); ++t)
        if (s.d(t, t) != 0) out.push_back(s.d(t, t));
    return out;
}

struct HermiteResult {
    IMat h;                           // rank many rows, same row space as the input
    std::vector<Eigen::Index> pivots; // pivot column per row, strictly increasing
};

// Row-style Hermite normal form: positive pivots, entries above a pivot
// reduced into [0, pivot). Canonical for the row lattice.
inline HermiteResult hermite_normal_form(IMat a) {
    const Eigen::Index m = a.rows(), n = a.cols();
    IMat dummy = IMat::Identity(m, m);
    Eigen::Index r = 0;
    std::vector<Eigen::Index> pivots;
    for (Eigen::Index c = 0; c < n && r < m; ++c) {
        for (;;) {
            Eigen::Index best = -1;
            for (Eigen::Index i = r; i < m; ++i)
                if (a(i, c) != 0 && (best < 0 || std::abs(a(i, c)) < std::abs(a(best, c)))) best = i;
            if (best < 0) break;
            if (best != r) {
                a.row(r).swap(a.row(best));
                dummy.row(r).swap(dummy.row(best));
            }
            bool clean = true;
            for (Eigen::Index i = r + 1; i < m; ++i)
                if (a(i, c) != 0) {
                    detail::row_op(a, dummy, i, r, a(i, c) / a(r, c));
                    if (a(i, c) != 0) clean = false;
                }
            if (clean) break;
        }
        if (a(r, c) == 0) continue;
        if (a(r, c) < 0) a.row(r) = -a.row(r);
        for (Eigen::Index i = 0; i < r; ++i) {
            std::int64_t q = a(i, c) / a(r, c);
            if (a(i, c) % a(r, c) < 0) q -= 1;  // floor division for the [0, pivot) window
            if (q != 0) detail::row_op(a, dummy, i, r, q);
        }
        pivots.push_back(c);
        ++r;
    }
    HermiteResult out;
    out.h = a.topRows(r);
    out.pivots = std::move(pivots);
    return out;
}

// Canonical coset representative of x modulo the row lattice of h.
inline IVecN reduce_mod(const HermiteResult& h, IVecN x) {
    for (Eigen::Index r = 0; r < h.h.rows(); ++r) {
        Eigen::Index c = h.pivots[static_cast<size_t>(r)];
        std::int64_t p = h.h(r, c);
        std::int64_t q = x[c] / p;
        if (x[c] % p < 0) q -= 1;
        if (q != 0)
            for (Eigen::Index j = 0; j < x.size(); ++j)
                x[j] = detail::isub(x[j], detail::imul(q, h.h(r, j)));
    }
    return x;
}

}  // namespace morsepi
