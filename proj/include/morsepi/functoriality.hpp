#pragma once

// One-parameter family of continuation maps across a homotopy square of
// surface functions. The square field interpolates 1->2 on one edge and
// 1->3 on the other; phi_lambda reads a continuation map along the seeding
// angle lambda in the slab plane, so lambda -> 0 recovers the direct 1->3
// map and lambda -> pi/2 the composite through 2. Between generic angles
// the map is locally constant; sweep_lambda bisects the finitely many wall
// angles where it jumps and classifies each jump by its word mechanism.
// verify_diagram composes the wall conjugators into a single inner
// automorphism witnessing that the square commutes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "morsepi/continuation.hpp"

namespace morsepi {

struct NonGenericLambda : FlowError {
    double lambda;
    NonGenericLambda(double l, const std::string& m)
        : FlowError("non-generic lambda " + std::to_string(l) + ": " + m), lambda(l) {}
};

struct UnclassifiedWall : Pi1Error {
    double lambda;
    UnclassifiedWall(double l, const std::string& m)
        : Pi1Error("unclassified wall at lambda = " + std::to_string(l) + ": " + m), lambda(l) {}
};

// The three ways a continuation word can jump at a wall angle: a cancelling
// pair is born or dies inside one image, one image absorbs a target relator,
// or the base trajectory switches basins and every image picks up a common
// conjugation.
enum class WallKind { BirthDeath, BreakIndex2Target, BreakIndex0Source };

struct LambdaWall {
    double lambda = 0.0;
    WallKind kind = WallKind::BirthDeath;
    int step = -1;  // source step whose image changes; unused for a base jump
    Word sigma;     // conjugating target word recorded at a base jump
};

struct LambdaSweep {
    std::vector<double> lambdas;
    std::vector<StepMap> maps;
    std::vector<LambdaWall> walls;
};

inline bool maps_equal(const StepMap& a, const StepMap& b) {
    return a.base_transport == b.base_transport && a.images == b.images;
}

inline int base_min(const MorseComplexData& d) {
    if (d.base >= 0) return d.base;
    for (const CriticalPoint& cp : d.cps)
        if (cp.index == 0) return cp.id;
    throw Pi1Error("complex has no minimum");
}

inline StepMap phi_lambda(const SquareBuild& sq, double lambda, const MorseComplexData& d1,
                          const MorseComplexData& d3, const SweepOptions& opts = {}) {
    const double half_pi = 1.57079632679489661923;
    if (!(lambda > 0.0) || !(lambda < half_pi))
        throw NonGenericLambda(lambda, "lambda must lie strictly inside (0, pi/2)");
    const SquareField& F = *sq.square;
    const Manifold& mx = F.manifold();
    Vec updir = Vec::Zero(mx.dim());
    updir[mx.dim() - 2] = std::cos(lambda);
    updir[mx.dim() - 1] = std::sin(lambda);
    auto lifted = detail::slab1_points(F, d3);
    auto traj = plain_trajectories(F, lifted);
    try {
        return detail::assemble_map(d1, d3, *sq.edge12->endpoint1(), mx, F, lifted, traj, updir,
                                    detail::identity_push(), opts, 0.0, nullptr);
    } catch (const WallUnresolved& e) {
        throw NonGenericLambda(lambda, e.what());
    } catch (const EndpointMismatch& e) {
        throw NonGenericLambda(lambda, e.what());
    } catch (const EscapedUnexpectedly& e) {
        throw NonGenericLambda(lambda, e.what());
    }
}

namespace detail {

inline std::pair<Word, Word> strip_common(const Word& x, const Word& y) {
    size_t p = 0;
    while (p < x.size() && p < y.size() && x[p] == y[p]) ++p;
    size_t s = 0;
    while (s < x.size() - p && s < y.size() - p && x[x.size() - 1 - s] == y[y.size() - 1 - s]) ++s;
    return {Word(x.begin() + static_cast<long>(p), x.end() - static_cast<long>(s)),
            Word(y.begin() + static_cast<long>(p), y.end() - static_cast<long>(s))};
}

inline Word cyclic_reduce(Word w) {
    w = free_reduce(w);
    while (w.size() >= 2 && w.front().step == w.back().step && w.front().sign == -w.back().sign) {
        w.erase(w.begin());
        w.pop_back();
    }
    return w;
}

inline bool cyclic_same(const Word& a, const Word& b) {
    if (a.size() != b.size()) return false;
    if (a.empty()) return true;
    for (size_t k = 0; k < b.size(); ++k) {
        bool ok = true;
        for (size_t i = 0; i < a.size() && ok; ++i)
            if (!(a[i] == b[(k + i) % b.size()])) ok = false;
        if (ok) return true;
    }
    return false;
}

// The two sides of a single-image wall, boiled down to one cyclically
// reduced word: empty means the images agree freely.
inline Word wall_difference(const Word& lo, const Word& hi) {
    auto [u, v] = strip_common(free_reduce(lo), free_reduce(hi));
    Word vi = invert(v);
    u.insert(u.end(), vi.begin(), vi.end());
    return cyclic_reduce(u);
}

inline bool is_relator_splice(const Word& lo, const Word& hi, const MorseComplexData& target) {
    Word d = wall_difference(lo, hi);
    if (d.empty()) return false;
    for (const DiskBoundary& disk : target.disks) {
        Word r = cyclic_reduce(disk.word);
        if (r.empty()) continue;
        if (cyclic_same(d, r) || cyclic_same(d, invert(r))) return true;
    }
    return false;
}

// If hi = sigma lo sigma^-1 freely, sigma survives as a prefix of hi or its
// inverse as a suffix (or the mirrored statements on lo), so those segments
// exhaust the candidates worth testing.
inline std::vector<Word> conjugator_candidates(const Word& lo, const Word& hi, int cap) {
    std::vector<Word> out;
    auto push = [&out](Word w) {
        w = free_reduce(w);
        if (w.empty()) return;
        for (const Word& q : out)
            if (q == w) return;
        out.push_back(std::move(w));
    };
    Word l = free_reduce(lo), h = free_reduce(hi);
    long nh = static_cast<long>(h.size()), nl = static_cast<long>(l.size());
    for (long k = 1; k <= std::min<long>(cap, nh); ++k) {
        push(Word(h.begin(), h.begin() + k));
        push(invert(Word(h.end() - k, h.end())));
    }
    for (long k = 1; k <= std::min<long>(cap, nl); ++k) {
        push(invert(Word(l.begin(), l.begin() + k)));
        push(Word(l.end() - k, l.end()));
    }
    return out;
}

inline Word conjugate(const Word& sigma, const Word& w) {
    Word out = sigma;
    out.insert(out.end(), w.begin(), w.end());
    Word si = invert(sigma);
    out.insert(out.end(), si.begin(), si.end());
    return free_reduce(out);
}

inline bool conjugates_all(const StepMap& lo, const StepMap& hi, const Word& sigma,
                           const Presentation& p, const SearchBudget& budget, bool quotient) {
    for (const auto& [g, w] : lo.images) {
        Word want = free_reduce(hi.images.at(g));
        Word got = conjugate(sigma, w);
        if (got == want) continue;
        if (!quotient) return false;
        Word diff = got;
        Word wi = invert(want);
        diff.insert(diff.end(), wi.begin(), wi.end());
        if (is_trivial(diff, p, budget).kind != TrivialityVerdict::Kind::Trivial) return false;
    }
    return true;
}

}  // namespace detail

// Name the mechanism behind one wall from the two flanking maps alone. The
// lambda argument only tags the result and any error.
inline LambdaWall classify_wall(const StepMap& lo, const StepMap& hi, double lambda,
                                const SearchBudget& budget = {}) {
    if (maps_equal(lo, hi)) throw UnclassifiedWall(lambda, "the two flanks are identical");
    std::vector<int> diff;
    for (const auto& [g, w] : lo.images)
        if (!(hi.images.at(g) == w)) diff.push_back(g);
    bool transports_move = !(lo.base_transport == hi.base_transport);

    if (!transports_move && diff.size() == 1) {
        int g = diff.front();
        const Word& wl = lo.images.at(g);
        const Word& wh = hi.images.at(g);
        long dl = static_cast<long>(wl.size()) - static_cast<long>(wh.size());
        if ((dl == 2 || dl == -2) && free_reduce(wl) == free_reduce(wh))
            return {lambda, WallKind::BirthDeath, g, {}};
        if (detail::is_relator_splice(wl, wh, lo.target))
            return {lambda, WallKind::BreakIndex2Target, g, {}};
    }

    std::vector<Word> cands;
    for (int g : diff) {
        auto c = detail::conjugator_candidates(lo.images.at(g), hi.images.at(g), 6);
        cands.insert(cands.end(), c.begin(), c.end());
    }
    for (const Step& s : lo.target.steps) {
        cands.push_back(Word{{s.id, 1}});
        cands.push_back(Word{{s.id, -1}});
    }
    Presentation p = presentation(lo.target);
    for (bool quotient : {false, true})
        for (const Word& sigma : cands)
            if (detail::conjugates_all(lo, hi, sigma, p, budget, quotient))
                return {lambda, WallKind::BreakIndex0Source, -1, sigma};
    throw UnclassifiedWall(lambda, diff.size() == 1
                                       ? "single image change is neither a cancelling pair "
                                         "nor a relator splice"
                                       : "image changes admit no common conjugator");
}

// Maps on an inclusive lambda grid, plus every wall between adjacent grid
// points located by bisection and classified. Coincident walls separate
// during bisection or the classification throws.
inline LambdaSweep sweep_lambda(const SquareBuild& sq, int grid, const MorseComplexData& d1,
                                const MorseComplexData& d3, const SweepOptions& opts = {},
                                const SearchBudget& budget = {}) {
    const double half_pi = 1.57079632679489661923;
    if (grid < 16) throw GeometryError("lambda grid needs at least 16 samples");
    double lo = half_pi * 1e-3, hi = half_pi * (1.0 - 1e-3);
    LambdaSweep out;
    out.lambdas.resize(static_cast<size_t>(grid));
    for (int i = 0; i < grid; ++i)
        out.lambdas[static_cast<size_t>(i)] = lo + (hi - lo) * i / (grid - 1);
    out.maps = parallel_map<StepMap>(grid, [&](int i) {
        return phi_lambda(sq, out.lambdas[static_cast<size_t>(i)], d1, d3, opts);
    });

    auto eval = [&](double lam, double span) {
        for (int k = 1; k <= 3; ++k) {
            try {
                return phi_lambda(sq, lam, d1, d3, opts);
            } catch (const NonGenericLambda&) {
                lam += span * 1e-3 * k;
            }
        }
        return phi_lambda(sq, lam, d1, d3, opts);
    };

    const double tol = 1e-6;
    std::function<void(double, const StepMap&, double, const StepMap&)> refine =
        [&](double l0, const StepMap& m0, double l1, const StepMap& m1) {
            if (maps_equal(m0, m1)) return;
            if (l1 - l0 <= tol) {
                out.walls.push_back(classify_wall(m0, m1, 0.5 * (l0 + l1), budget));
                return;
            }
            double mid = 0.5 * (l0 + l1);
            StepMap mm = eval(mid, l1 - l0);
            refine(l0, m0, mid, mm);
            refine(mid, mm, l1, m1);
        };
    for (int i = 0; i + 1 < grid; ++i)
        refine(out.lambdas[static_cast<size_t>(i)], out.maps[static_cast<size_t>(i)],
               out.lambdas[static_cast<size_t>(i + 1)], out.maps[static_cast<size_t>(i + 1)]);
    return out;
}

inline StepMap compose_maps(const StepMap& outer, const StepMap& inner) {
    StepMap out;
    out.source = inner.source;
    out.target = outer.target;
    for (const auto& [y, t] : inner.base_transport)
        out.base_transport[y] = outer.base_transport.at(t);
    for (const auto& [g, w] : inner.images) out.images[g] = morsepi::apply(outer, w);
    check_endpoint_coherence(out);
    return out;
}

struct DiagramReport {
    bool commutes = false;
    Word psi;  // composed wall conjugators, a word on the third surface
    int inconclusive = 0;
    std::string note;
};

// Fold the base-jump conjugators of a sweep into one word psi and check
// psi (direct image) psi^-1 = composite image for every source generator,
// freely first and in the target quotient when needed.
inline DiagramReport verify_diagram(const LambdaSweep& sweep, const StepMap& m12,
                                    const StepMap& m23, const StepMap& m13,
                                    const SearchBudget& budget = {}) {
    DiagramReport rep;
    Word psi;
    for (const LambdaWall& w : sweep.walls) {
        if (w.kind != WallKind::BreakIndex0Source) continue;
        Word t = w.sigma;  // later walls act after earlier ones, so compose on the left
        t.insert(t.end(), psi.begin(), psi.end());
        psi = std::move(t);
    }
    rep.psi = free_reduce(psi);

    int b1 = base_min(m13.source);
    int direct = m13.base_transport.at(b1);
    int via = m23.base_transport.at(m12.base_transport.at(b1));
    if (!rep.psi.empty()) {
        try {
            check_consecutive(rep.psi, m13.target);
        } catch (const NotConsecutive&) {
            rep.note = "psi is not a consecutive word on the third surface";
            return rep;
        }
        const Step& first = m13.target.steps[static_cast<size_t>(rep.psi.front().step)];
        const Step& last = m13.target.steps[static_cast<size_t>(rep.psi.back().step)];
        if (letter_tail(first, rep.psi.front().sign) != via ||
            letter_head(last, rep.psi.back().sign) != direct) {
            rep.note = "psi does not join the composite base transport to the direct one";
            return rep;
        }
    } else if (via != direct) {
        rep.note = "empty psi but the two routes transport the base to different minima";
        return rep;
    }

    Presentation p = presentation(m13.target);
    bool failed = false;
    for (const auto& [g, w13] : m13.images) {
        Word lhs = detail::conjugate(rep.psi, w13);
        Word rhs = free_reduce(morsepi::apply(m23, m12.images.at(g)));
        if (lhs == rhs) continue;
        Word diff = lhs;
        Word ri = invert(rhs);
        diff.insert(diff.end(), ri.begin(), ri.end());
        auto v = is_trivial(diff, p, budget);
        if (v.kind == TrivialityVerdict::Kind::Trivial) continue;
        if (v.kind == TrivialityVerdict::Kind::Unknown) {
            ++rep.inconclusive;
            rep.note = "triviality search ran out of budget on step " + std::to_string(g);
        } else {
            rep.note = "square fails on step " + std::to_string(g);
            return rep;
        }
        failed = true;
    }
    rep.commutes = !failed;
    return rep;
}

struct IsoReport {
    bool ok = false;
    Word conjugator;  // c with composite(g) = c^-1 g c on the fundamental group
    int inconclusive = 0;
    std::string note;
};

// A pair of mutually inverse continuations must compose to an inner
// automorphism: the abelianized composite is the identity and a bounded
// search finds the conjugating element.
inline IsoReport verify_iso(const StepMap& m12, const StepMap& m21, int max_len = 8,
                            const SearchBudget& budget = {}) {
    IsoReport rep;
    StepMap comp = compose_maps(m21, m12);
    IMat ab = abelianized_matrix(comp);
    for (int i = 0; i < ab.rows(); ++i)
        for (int j = 0; j < ab.cols(); ++j)
            if (ab(i, j) != (i == j ? 1 : 0)) {
                rep.note = "abelianized composite is not the identity";
                return rep;
            }

    int b = base_min(comp.source);
    if (comp.base_transport.at(b) != b) {
        rep.note = "composite moves the base minimum";
        return rep;
    }

    Presentation p = presentation(comp.source);
    std::vector<std::pair<int, Word>> targets;  // generator id, rewritten composite image
    for (int g : p.generators)
        targets.emplace_back(g, rewrite_to_generators(p, comp.images.at(g)));

    auto works = [&](const Word& c, bool quotient) {
        Word ci = invert(c);
        for (const auto& [g, want] : targets) {
            Word got = ci;
            got.push_back({g, 1});
            got.insert(got.end(), c.begin(), c.end());
            got = free_reduce(got);
            if (got == want) continue;
            if (!quotient) return false;
            Word diff = got;
            Word wi = invert(want);
            diff.insert(diff.end(), wi.begin(), wi.end());
            if (is_trivial(diff, p, budget).kind != TrivialityVerdict::Kind::Trivial) return false;
        }
        return true;
    };

    std::vector<SignedStep> letters;
    for (int g : p.generators) {
        letters.push_back({g, 1});
        letters.push_back({g, -1});
    }
    std::int64_t states = 0;
    std::vector<Word> level{Word{}};
    for (int len = 0; len <= max_len; ++len) {
        for (const Word& c : level) {
            if (++states > budget.max_states) {
                rep.inconclusive = 1;
                rep.note = "conjugator search ran out of budget";
                return rep;
            }
            if (works(c, false)) {
                rep.ok = true;
                rep.conjugator = c;
                return rep;
            }
        }
        if (len == max_len) break;
        std::vector<Word> next;
        for (const Word& c : level)
            for (const SignedStep& l : letters) {
                if (!c.empty() && c.back().step == l.step && c.back().sign == -l.sign) continue;
                Word w = c;
                w.push_back(l);
                next.push_back(std::move(w));
            }
        level = std::move(next);
    }

    // free search failed; retry short candidates against the full quotient
    int qlen = std::min(max_len, 4);
    level = {Word{}};
    for (int len = 0; len <= qlen; ++len) {
        for (const Word& c : level) {
            if (works(c, true)) {
                rep.ok = true;
                rep.conjugator = c;
                return rep;
            }
        }
        if (len == qlen) break;
        std::vector<Word> next;
        for (const Word& c : level)
            for (const SignedStep& l : letters) {
                if (!c.empty() && c.back().step == l.step && c.back().sign == -l.sign) continue;
                Word w = c;
                w.push_back(l);
                next.push_back(std::move(w));
            }
        level = std::move(next);
    }
    rep.note = "no conjugator of length at most " + std::to_string(max_len);
    rep.inconclusive = 1;
    return rep;
}

}  // namespace morsepi
