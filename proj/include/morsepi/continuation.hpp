#pragma once

// Continuation morphisms between surface complexes. Minima are transported
// through an interpolation field on M x R, and each source step's image is
// read off a half-disk sweep of the lifted saddle: crossings with stable
// manifolds of slab-1 saddles spell a target word, inverted once globally.
// The grafted variant integrates to a fixed slab, teleports through a chart
// map H, and continues on the target cylinder. verify_theorem_quotient is
// the gate that source relators map to trivial loops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "morsepi/interp.hpp"
#include "morsepi/pi1.hpp"

namespace morsepi {

struct EscapedUnexpectedly : FlowError {
    explicit EscapedUnexpectedly(const std::string& m) : FlowError(m) {}
};

struct WallUnresolved : FlowError {
    explicit WallUnresolved(const std::string& m) : FlowError(m) {}
};

struct EndpointMismatch : FlowError {
    explicit EndpointMismatch(const std::string& m) : FlowError(m) {}
};

struct GraftNotWellDefined : GeometryError {
    explicit GraftNotWellDefined(const std::string& m) : GeometryError(m) {}
};

struct GraftNontransverse : FlowError {
    explicit GraftNontransverse(const std::string& m) : FlowError(m) {}
};

struct TheoremViolation : Pi1Error {
    int disk;
    std::vector<std::int64_t> certificate;
    TheoremViolation(int d, std::vector<std::int64_t> c)
        : Pi1Error("relator image of disk " + std::to_string(d) + " is a nontrivial loop"),
          disk(d),
          certificate(std::move(c)) {}
};

struct StepMap {
    MorseComplexData source, target;
    std::map<int, Word> images;          // source step id -> word in target steps
    std::map<int, int> base_transport;   // source minimum id -> target minimum id
};

// Letterwise image of a word; concatenation-compatible by construction.
inline Word apply(const StepMap& sm, const Word& w) {
    Word out;
    for (const SignedStep& l : w) {
        Word im = sm.images.at(l.step);
        if (l.sign < 0) im = invert(im);
        out.insert(out.end(), im.begin(), im.end());
    }
    return out;
}

// Pure id-chasing gate: transport total onto target minima, every image a
// consecutive target word joining the transported endpoints.
inline void check_endpoint_coherence(const StepMap& sm) {
    for (const CriticalPoint& cp : sm.source.cps)
        if (cp.index == 0 && !sm.base_transport.count(cp.id))
            throw EndpointMismatch("transport misses source minimum " + std::to_string(cp.id));
    for (const auto& [y, t] : sm.base_transport)
        if (t < 0 || t >= static_cast<int>(sm.target.cps.size()) ||
            sm.target.cps[static_cast<size_t>(t)].index != 0)
            throw EndpointMismatch("transport of minimum " + std::to_string(y) +
                                   " is not a target minimum");
    for (const Step& s : sm.source.steps) {
        auto it = sm.images.find(s.id);
        if (it == sm.images.end())
            throw EndpointMismatch("no image word for step " + std::to_string(s.id));
        const Word& w = it->second;
        for (const SignedStep& l : w)
            if (l.step < 0 || l.step >= static_cast<int>(sm.target.steps.size()))
                throw EndpointMismatch("image of step " + std::to_string(s.id) +
                                       " uses an unknown target step");
        try {
            check_consecutive(w, sm.target);
        } catch (const NotConsecutive&) {
            throw EndpointMismatch("image of step " + std::to_string(s.id) + " is not consecutive");
        }
        int a = sm.base_transport.at(s.start), b = sm.base_transport.at(s.end);
        if (w.empty()) {
            if (a != b)
                throw EndpointMismatch("empty image of step " + std::to_string(s.id) +
                                       " joins distinct minima");
            continue;
        }
        if (letter_tail(sm.target.steps[static_cast<size_t>(w.front().step)], w.front().sign) != a ||
            letter_head(sm.target.steps[static_cast<size_t>(w.back().step)], w.back().sign) != b)
            throw EndpointMismatch("image of step " + std::to_string(s.id) +
                                   " joins the wrong transported minima");
    }
}

// Exponent matrix of the induced map on H1 generator bases: column j is the
// abelianized image of source generator j over the target generators.
inline IMat abelianized_matrix(const StepMap& sm) {
    Presentation ps = presentation(sm.source), pt = presentation(sm.target);
    IMat a = IMat::Zero(static_cast<Eigen::Index>(pt.generators.size()),
                        static_cast<Eigen::Index>(ps.generators.size()));
    for (size_t j = 0; j < ps.generators.size(); ++j) {
        Word im = rewrite_to_generators(pt, sm.images.at(ps.generators[j]));
        for (const SignedStep& l : im)
            a(pt.gen_index(l.step), static_cast<Eigen::Index>(j)) += l.sign;
    }
    return a;
}

namespace detail {

inline IVec pad_lift(const IVec& d, int dim) {
    IVec out = IVec::Zero(dim);
    out.head(d.size()) = d;
    return out;
}

// The target complex placed on the s = 1 slab of the cylinder, ids and
// indices preserved. Only these points can capture an upward trajectory, so
// landing labels speak target ids directly.
inline std::vector<CriticalPoint> slab1_points(const ScalarField& F, const MorseComplexData& data) {
    const Manifold& m = F.manifold();
    std::vector<CriticalPoint> out;
    out.reserve(data.cps.size());
    for (const CriticalPoint& cp : data.cps) {
        CriticalPoint l;
        l.id = cp.id;
        l.index = cp.index;
        Vec p = Vec::Zero(m.dim());
        p.head(cp.coords.size()) = cp.coords;
        for (int i = m.base_chart_dim(); i < m.dim(); ++i) p[i] = 1.0;
        l.coords = p;
        l.value = F.value(p);
        out.push_back(std::move(l));
    }
    return out;
}

struct Transport {
    int cp = -1;
    IVec lift;
};

inline Transport transport_core(const Manifold& mx, const Vec& y_coords, double r0,
                                const Vec& updir, const TrajectoryFn& traj,
                                const FlowOptions& fo) {
    Vec seed = Vec::Zero(mx.dim());
    seed.head(y_coords.size()) = y_coords;
    seed += r0 * updir;
    TrajectoryOutcome out;
    try {
        out = traj(seed, fo);
    } catch (const FlowTimedOut& e) {
        throw EscapedUnexpectedly(e.what());
    }
    if (out.kind != TrajectoryOutcome::Kind::ConvergedTo)
        throw EscapedUnexpectedly("base transport trajectory did not reach a slab-1 minimum");
    return {out.cp, out.lift};
}

struct Crossing {
    int step = -1;
    Mediator med;
    int sign = 0;
};

// Every sweep wall is the stable manifold of a slab-1 saddle, so the two
// flank labels must chain through that saddle's step: lo = tail + lift,
// hi = head + lift for one orientation. Solving this for (step, lift, sign)
// usually identifies the crossing outright, without following the wall.
inline std::vector<Crossing> crossing_candidates(const MorseComplexData& target, const Label& lo,
                                                 const Label& hi, int dim) {
    std::vector<Crossing> out;
    if (lo.kind != Label::Kind::Cp || hi.kind != Label::Kind::Cp) return out;
    for (const Step& s : target.steps) {
        if (s.start == lo.id && s.end == hi.id) {
            IVec lift = lo.lift - pad_lift(s.delta_start, dim);
            if (hi.lift == lift + pad_lift(s.delta_end, dim))
                out.push_back({s.id, {s.through, lift}, +1});
        }
        if (s.end == lo.id && s.start == hi.id) {
            IVec lift = lo.lift - pad_lift(s.delta_end, dim);
            if (hi.lift == lift + pad_lift(s.delta_start, dim))
                out.push_back({s.id, {s.through, lift}, -1});
        }
    }
    return out;
}

// Flank labels of a crossing, derived from its step and mediator sheet.
inline std::pair<Label, Label> crossing_labels(const MorseComplexData& target, const Crossing& c,
                                               int dim) {
    const Step& s = target.steps[static_cast<size_t>(c.step)];
    Label wl, wh;
    wl.kind = wh.kind = Label::Kind::Cp;
    if (c.sign > 0) {
        wl.id = s.start;
        wl.lift = c.med.lift + pad_lift(s.delta_start, dim);
        wh.id = s.end;
        wh.lift = c.med.lift + pad_lift(s.delta_end, dim);
    } else {
        wl.id = s.end;
        wl.lift = c.med.lift + pad_lift(s.delta_end, dim);
        wh.id = s.start;
        wh.lift = c.med.lift + pad_lift(s.delta_start, dim);
    }
    return {wl, wh};
}

// One-flank read of a mediating saddle: the trajectory from p must land with
// the expected flank label while passing inside the capture radius of a
// lifted saddle, and the exit branch past branch_radius gives the sign.
inline std::optional<Crossing> read_crossing(const ScalarField& frames_field,
                                             const std::vector<CriticalPoint>& lifted,
                                             const MorseComplexData& target,
                                             const TrajectoryFn& traj, const Vec& p,
                                             const Label& expect, bool is_lower,
                                             const SweepOptions& opts) {
    const Manifold& m = frames_field.manifold();
    FlowOptions fr = opts.flow;
    fr.record_path = true;
    TrajectoryOutcome out;
    try {
        out = traj(p, fr);
    } catch (const FlowTimedOut&) {
        return std::nullopt;
    }
    if (out.kind != TrajectoryOutcome::Kind::ConvergedTo) return std::nullopt;
    if (!(cp_label(out) == expect)) return std::nullopt;
    const NearMiss* best = nullptr;
    for (const NearMiss& nm : out.near_misses) {
        if (lifted[static_cast<size_t>(nm.cp)].index != 1) continue;
        if (!best || nm.dist < best->dist) best = &nm;
    }
    if (!best || best->dist > opts.capture) return std::nullopt;
    const CriticalPoint& saddle = lifted[static_cast<size_t>(best->cp)];
    Vec at = m.apply_offset(saddle.coords, best->lift);
    Vec v = unstable_frame(frames_field, saddle)[0];
    size_t exit_idx = out.path.size() - 1;
    for (size_t i = best->path_index; i < out.path.size(); ++i) {
        if ((out.path[i] - at).norm() > opts.branch_radius) {
            exit_idx = i;
            break;
        }
    }
    double proj = (out.path[exit_idx] - at).dot(v);
    if (std::abs(proj) < 1e-12) return std::nullopt;
    bool exits_minus = proj < 0;
    Crossing c;
    c.med = {best->cp, best->lift};
    c.step = target.step_of_saddle(best->cp);
    c.sign = is_lower == exits_minus ? 1 : -1;
    return c;
}

// Resolve the crossing sequence between two flank states. Unique label
// chasing wins immediately. Otherwise the bracket is advanced one slab level
// at a time, re-bisecting the chord between the exit points at each level;
// this recovers structure that is invisible in the sweep parameter, since
// flank divergence (surface saddle curvature times transit time) compresses
// entire wall clusters into sub-double parameter windows. A third label on
// the chord splits the span and recurses; a one-flank saddle read peels a
// crossing off either end.
inline void resolve_span(const ScalarField& frames_field,
                         const std::vector<CriticalPoint>& lifted,
                         const MorseComplexData& target, const TrajectoryFn& traj, Vec a, Vec b,
                         const Label& la, const Label& lb, int depth, const SweepOptions& opts,
                         std::vector<Crossing>& out) {
    const int dim = static_cast<int>(la.lift.size());
    {
        std::vector<Crossing> cands = crossing_candidates(target, la, lb, dim);
        if (cands.size() == 1) {
            out.push_back(cands[0]);
            return;
        }
    }
    if (depth > 8) throw WallUnresolved("crossing cluster exceeds split depth");
    const Manifold& m = frames_field.manifold();
    const int sdim = m.dim() - 1;
    FlowOptions fo = opts.flow;

    auto full_label = [&](const Vec& p) -> std::optional<Label> {
        try {
            TrajectoryOutcome o = traj(p, fo);
            if (o.kind == TrajectoryOutcome::Kind::ConvergedTo) return cp_label(o);
        } catch (const FlowTimedOut&) {
        }
        return std::nullopt;
    };
    auto infer_rest = [&](const Label& from, const Label& to) {
        std::vector<Crossing> cands = crossing_candidates(target, from, to, dim);
        if (cands.size() != 1)
            throw WallUnresolved("crossing cluster remainder is not a single step");
        out.push_back(cands[0]);
    };

    for (int stage = 0; stage < 64; ++stage) {
        if (auto ca = read_crossing(frames_field, lifted, target, traj, a, la, true, opts)) {
            auto [wl, wh] = crossing_labels(target, *ca, dim);
            if (wl == la) {
                out.push_back(*ca);
                if (wh == lb) return;
                infer_rest(wh, lb);
                return;
            }
        }
        if (auto cb = read_crossing(frames_field, lifted, target, traj, b, lb, false, opts)) {
            auto [wl, wh] = crossing_labels(target, *cb, dim);
            if (wh == lb) {
                if (wl == la) {
                    out.push_back(*cb);
                    return;
                }
                infer_rest(la, wl);
                out.push_back(*cb);
                return;
            }
        }

        // advance one slab level, quadrupling the odds s/(1-s)
        double s_cur = std::max(a[sdim], b[sdim]);
        double odds = 4.0 * s_cur / (1.0 - s_cur);
        double s_next = odds / (1.0 + odds);
        if (1.0 - s_next < 1e-12) break;
        FlowOptions fs = fo;
        fs.slab = s_next;
        auto cross = [&](const Vec& p) -> std::optional<Vec> {
            try {
                TrajectoryOutcome o = traj(p, fs);
                if (o.kind == TrajectoryOutcome::Kind::CrossedSlab) return o.exit_point;
            } catch (const FlowTimedOut&) {
            }
            return std::nullopt;
        };
        auto ac = cross(a), bc = cross(b);
        if (!ac || !bc) break;
        a = *ac;
        b = *bc;
        for (int it = 0; it < 80 && (a - b).norm() > 1e-12; ++it) {
            Vec mid = 0.5 * (a + b);
            auto lm = full_label(mid);
            if (!lm) {
                mid = 0.25 * a + 0.75 * b;
                lm = full_label(mid);
                if (!lm) break;
            }
            if (*lm == la) {
                a = mid;
            } else if (*lm == lb) {
                b = mid;
            } else {
                resolve_span(frames_field, lifted, target, traj, a, mid, la, *lm, depth + 1, opts,
                             out);
                resolve_span(frames_field, lifted, target, traj, mid, b, *lm, lb, depth + 1, opts,
                             out);
                return;
            }
        }
    }
    throw WallUnresolved("crossing cluster could not be resolved by slab shadowing");
}

// Crossing sequence behind one observed label transition of the sweep.
inline std::vector<Crossing> resolve_crossings(const ScalarField& frames_field,
                                               const std::vector<CriticalPoint>& lifted,
                                               const MorseComplexData& target,
                                               const SeedFamily& family, const TrajectoryFn& traj,
                                               const WallLocation& wall,
                                               const SweepOptions& opts) {
    int dim = static_cast<int>(wall.lo.lift.size());
    std::vector<Crossing> single = crossing_candidates(target, wall.lo, wall.hi, dim);
    if (single.size() == 1) return single;

    FlowOptions fo = opts.flow;
    auto full_label = [&](const Vec& p) -> std::optional<Label> {
        try {
            TrajectoryOutcome o = traj(p, fo);
            if (o.kind == TrajectoryOutcome::Kind::ConvergedTo) return cp_label(o);
        } catch (const FlowTimedOut&) {
        }
        return std::nullopt;
    };
    Vec a, b;
    bool ready = false;
    for (double w = 1e-9; w < 1e-4 && !ready; w *= 8.0) {
        a = family(wall.theta - w);
        b = family(wall.theta + w);
        auto la = full_label(a), lb = full_label(b);
        ready = la && lb && *la == wall.lo && *lb == wall.hi;
    }
    if (!ready)
        throw WallUnresolved("no stable flank bracket at theta = " + std::to_string(wall.theta));
    std::vector<Crossing> out;
    resolve_span(frames_field, lifted, target, traj, a, b, wall.lo, wall.hi, 0, opts, out);
    return out;
}

struct HalfSweep {
    Word word;                    // target-step crossings, sweep order
    std::vector<double> thetas;
    std::vector<Label> segments;  // landing labels between crossings
};

// Signed crossing word of the positive half of an unstable 2-disk, swept
// between its two boundary separatrices. want_lo / want_hi are the landing
// labels forced by those separatrices; when the outermost samples disagree,
// extra anchors creep toward the boundary before the sweep gives up.
inline HalfSweep sweep_half_disk(const ScalarField& frames_field,
                                 const std::vector<CriticalPoint>& lifted,
                                 const MorseComplexData& target, const SeedFamily& family,
                                 const TrajectoryFn& traj, const SweepOptions& opts,
                                 const Label& want_lo, const Label& want_hi) {
    const double pi = 3.14159265358979323846;
    LabelFn label_of = [](const TrajectoryOutcome& o) { return cp_label(o); };

    int n = opts.samples;
    std::vector<double> thetas;
    std::vector<Label> labels;
    thetas.reserve(static_cast<size_t>(n) + 2);
    labels.reserve(static_cast<size_t>(n) + 2);
    for (int j = 0; j < n; ++j) {
        double th = pi * (j + 0.5) / n;
        Label l = sample_label(family, traj, th, opts.flow, &th);
        thetas.push_back(th);
        labels.push_back(l);
    }

    auto anchor = [&](const Label& want, bool low) {
        double th = low ? thetas.front() : thetas.back();
        for (int k = 0; k < 4; ++k) {
            th = low ? th / 8.0 : pi - (pi - th) / 8.0;
            try {
                double used = th;
                Label l = sample_label(family, traj, th, opts.flow, &used);
                if (l == want) {
                    if (low) {
                        thetas.insert(thetas.begin(), used);
                        labels.insert(labels.begin(), l);
                    } else {
                        thetas.push_back(used);
                        labels.push_back(l);
                    }
                    return;
                }
            } catch (const UnresolvedWall&) {
            }
        }
        throw EndpointMismatch("sweep does not reach the transported basin near a boundary separatrix");
    };
    if (!(labels.front() == want_lo)) anchor(want_lo, true);
    if (!(labels.back() == want_hi)) anchor(want_hi, false);

    HalfSweep hs;
    hs.segments.push_back(labels.front());
    for (size_t j = 0; j + 1 < labels.size(); ++j) {
        if (labels[j] == labels[j + 1]) continue;
        std::vector<WallLocation> walls;
        find_transitions(family, traj, label_of, thetas[j], labels[j], thetas[j + 1], labels[j + 1],
                         opts.flow, walls);
        for (const WallLocation& wall : walls) {
            int dim = static_cast<int>(wall.lo.lift.size());
            std::vector<Crossing> seq;
            try {
                seq = resolve_crossings(frames_field, lifted, target, family, traj, wall, opts);
            } catch (const WallUnresolved& e) {
                throw WallUnresolved("crossing at theta = " + std::to_string(wall.theta) + ": " +
                                     e.what());
            }
            Label run = wall.lo;
            for (const Crossing& c : seq) {
                auto [wl, wh] = crossing_labels(target, c, dim);
                if (!(wl == run))
                    throw EndpointMismatch(
                        "crossing endpoints disagree with the step through cp " +
                        std::to_string(c.med.cp));
                run = wh;
                hs.word.push_back({c.step, c.sign});
                hs.thetas.push_back(wall.theta);
                hs.segments.push_back(wh);
            }
            if (!(run == wall.hi))
                throw EndpointMismatch("crossing chain at theta = " + std::to_string(wall.theta) +
                                       " does not reach the upper flank");
        }
    }
    return hs;
}

struct SweepTrace {
    std::map<int, std::vector<int>> wall_mediators;  // source step id -> target saddle cp ids
    std::map<int, std::vector<Label>> segments;      // source step id -> landing labels
};

// Action on source step lattice offsets when predicting boundary landings:
// a flank trajectory exits the slab displaced from the transported column by
// the step delta, and any teleport pushes that deck offset forward.
using DeckPush = std::function<IVec(const IVec&)>;

inline DeckPush identity_push() {
    return [](const IVec& d) { return d; };
}

// Transport every minimum, sweep every step, merge by id, and run the
// endpoint coherence gate. src_surface supplies the in-slab unstable
// direction of each source saddle; frames_field the frames of the target
// side mediators. tilt rotates the in-slab seeding direction (grafted
// transversality jitter; zero for plain continuation).
// updir is the unit direction into the slab coordinates used both for base
// transport seeds and for the out-of-surface leg of each sweep disk; the
// cylinder uses the slab axis itself, a square any fixed mixture of its two.
inline StepMap assemble_map(const MorseComplexData& d1, const MorseComplexData& d2,
                            const ScalarField& src_surface, const Manifold& mx,
                            const ScalarField& frames_field,
                            const std::vector<CriticalPoint>& lifted, const TrajectoryFn& traj,
                            const Vec& updir, const DeckPush& push, const SweepOptions& opts,
                            double tilt, SweepTrace* trace) {
    StepMap sm;
    sm.source = d1;
    sm.target = d2;
    const int dim = mx.dim();

    std::map<int, Transport> transport;
    for (const CriticalPoint& cp : d1.cps) {
        if (cp.index != 0) continue;
        Transport t = transport_core(mx, cp.coords, opts.r0, updir, traj, opts.flow);
        transport[cp.id] = t;
        sm.base_transport[cp.id] = t.cp;
    }

    int nsteps = static_cast<int>(d1.steps.size());
    std::vector<HalfSweep> sweeps = parallel_map<HalfSweep>(nsteps, [&](int i) {
        const Step& s = d1.steps[static_cast<size_t>(i)];
        const CriticalPoint& x = d1.cps[static_cast<size_t>(s.through)];
        Vec vx = unstable_frame(src_surface, x)[0];
        Vec u_slab = vx;
        if (tilt != 0.0) {
            Vec perp;
            if (vx.size() == 2) {
                perp = Vec(2);
                perp << -vx[1], vx[0];
            } else {
                perp = Vec(3);
                perp << x.coords[1] * vx[2] - x.coords[2] * vx[1],
                    x.coords[2] * vx[0] - x.coords[0] * vx[2],
                    x.coords[0] * vx[1] - x.coords[1] * vx[0];
                perp.normalize();
            }
            u_slab = std::cos(tilt) * vx + std::sin(tilt) * perp;
        }
        Vec u1 = Vec::Zero(dim);
        u1.head(u_slab.size()) = u_slab;
        Vec u2 = updir;
        Vec center = Vec::Zero(dim);
        center.head(x.coords.size()) = x.coords;
        SeedFamily family = [&mx, &opts, u1, u2, center](double theta) {
            return mx.renormalize_cover(center +
                                        opts.r0 * (std::cos(theta) * u1 + std::sin(theta) * u2));
        };
        const Transport& te = transport.at(s.end);
        const Transport& ts = transport.at(s.start);
        Label want_lo, want_hi;
        want_lo.kind = want_hi.kind = Label::Kind::Cp;
        want_lo.id = te.cp;
        want_lo.lift = te.lift + pad_lift(push(s.delta_end), dim);
        want_hi.id = ts.cp;
        want_hi.lift = ts.lift + pad_lift(push(s.delta_start), dim);
        return sweep_half_disk(frames_field, lifted, d2, family, traj, opts, want_lo, want_hi);
    });

    for (int i = 0; i < nsteps; ++i) {
        const Step& s = d1.steps[static_cast<size_t>(i)];
        sm.images[s.id] = invert(sweeps[static_cast<size_t>(i)].word);
        if (trace) {
            for (const SignedStep& l : sweeps[static_cast<size_t>(i)].word)
                trace->wall_mediators[s.id].push_back(
                    d2.steps[static_cast<size_t>(l.step)].through);
            trace->segments[s.id] = sweeps[static_cast<size_t>(i)].segments;
        }
    }
    check_endpoint_coherence(sm);
    return sm;
}

inline Vec slab_axis(const Manifold& mx) {
    Vec u = Vec::Zero(mx.dim());
    u[mx.dim() - 1] = 1.0;
    return u;
}

}  // namespace detail

// Follow the unique upward trajectory from a source minimum to the target
// slab and name the minimum it reaches.
inline int transport_base(const InterpolationField& F, const CriticalPoint& y,
                          const MorseComplexData& target, const SweepOptions& opts = {}) {
    if (y.index != 0) throw FlowError("transport_base needs an index-0 point of the source surface");
    auto lifted = detail::slab1_points(F, target);
    auto traj = plain_trajectories(F, lifted);
    return detail::transport_core(F.manifold(), y.coords, opts.r0,
                                  detail::slab_axis(F.manifold()), traj, opts.flow)
        .cp;
}

inline StepMap continuation_map(const MorseComplexData& d1, const MorseComplexData& d2,
                                const InterpolationField& F, const SweepOptions& opts = {}) {
    auto lifted = detail::slab1_points(F, d2);
    auto traj = plain_trajectories(F, lifted);
    return detail::assemble_map(d1, d2, *F.endpoint1(), F.manifold(), F, lifted, traj,
                                detail::slab_axis(F.manifold()), detail::identity_push(), opts, 0.0,
                                nullptr);
}

struct QuotientReport {
    struct Item {
        int disk = -1;
        TrivialityVerdict verdict;
    };
    std::vector<Item> items;
    int inconclusive = 0;     // Unknown verdicts (budget ran out)
    bool all_trivial = true;
};

// The quotient gate: every source relator must map to a trivial target loop.
// A Nontrivial verdict is thrown, since it falsifies the construction.
inline QuotientReport verify_theorem_quotient(const StepMap& sm, const SearchBudget& budget = {}) {
    check_endpoint_coherence(sm);
    Presentation pt = presentation(sm.target);
    QuotientReport rep;
    for (const DiskBoundary& disk : sm.source.disks) {
        Word image = apply(sm, disk.word);
        int at = pt.base;
        if (!image.empty())
            at = letter_tail(sm.target.steps[static_cast<size_t>(image.front().step)],
                             image.front().sign);
        Word conj = tree_path(sm.target, pt, pt.base, at);
        Word loop = conj;
        loop.insert(loop.end(), image.begin(), image.end());
        Word back = invert(conj);
        loop.insert(loop.end(), back.begin(), back.end());
        TrivialityVerdict v = is_trivial(loop, pt, budget);
        if (v.kind == TrivialityVerdict::Kind::Nontrivial)
            throw TheoremViolation(disk.of, v.certificate);
        if (v.kind == TrivialityVerdict::Kind::Unknown) {
            rep.all_trivial = false;
            ++rep.inconclusive;
        }
        rep.items.push_back({disk.of, std::move(v)});
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Grafted continuation

struct GraftSpec {
    std::vector<Expr> map_exprs;     // chart expressions of H, one per target coordinate
    double slab = 0.5;
    std::uint64_t jitter_seed = 1;
};

namespace detail {

class GraftMap {
public:
    GraftMap(const GraftSpec& spec, const Manifold& mx, const Manifold& my)
        : x_base_(mx.base()), y_base_(my.base()) {
        if (static_cast<int>(spec.map_exprs.size()) != y_base_.base_chart_dim())
            throw GraftNotWellDefined("graft map needs one expression per target coordinate");
        for (const Expr& e : spec.map_exprs) {
            auto used = e.used_vars();
            for (int i = 0; i < kNumVars; ++i)
                if (used[static_cast<size_t>(i)] && i >= x_base_.base_chart_dim())
                    throw GraftNotWellDefined("graft map may only use source surface coordinates");
            comp_.push_back(e.compile());
        }
        int rows = y_base_.base_kind() == BaseKind::Torus ? 2 : 0;
        int cols = x_base_.base_kind() == BaseKind::Torus ? 2 : 0;
        lat_ = Eigen::MatrixXi::Zero(rows, cols);
        if (cols > 0) check_lattice();
    }

    // Induced map on the deck lattice, read off integer translations.
    DeckPush push() const {
        Eigen::MatrixXi lat = lat_;
        return [lat](const IVec& d) -> IVec { return lat * d; };
    }

    // Evaluated on cover coordinates; never wraps, so it lifts continuously.
    Vec apply(const Vec& xm) const {
        Vec out = apply_raw(xm);
        if (y_base_.has_sphere_base()) out = y_base_.normalize(out);
        return out;
    }

private:
    Vec apply_raw(const Vec& xm) const {
        double buf[kNumVars] = {0, 0, 0, 0, 0};
        for (int i = 0; i < x_base_.base_chart_dim() && i < static_cast<int>(xm.size()); ++i)
            buf[i] = xm[i];
        Vec out(static_cast<Eigen::Index>(comp_.size()));
        for (size_t j = 0; j < comp_.size(); ++j)
            out[static_cast<Eigen::Index>(j)] = comp_[j].eval(buf);
        return out;
    }

    // Unit translations of the source chart must move the image by a fixed
    // lattice vector (integer matrix for linear maps), else H is not a well
    // defined torus map. The vectors assemble the lattice action.
    void check_lattice() {
        bool target_torus = y_base_.base_kind() == BaseKind::Torus;
        for (int axis = 0; axis < x_base_.base_chart_dim(); ++axis) {
            bool have = false;
            for (double px : {0.13, 0.57})
                for (double py : {0.29, 0.71}) {
                    Vec p(2);
                    p << px, py;
                    Vec q = p;
                    q[axis] += 1.0;
                    Vec d = apply_raw(q) - apply_raw(p);
                    for (int k = 0; k < d.size(); ++k) {
                        double frac = target_torus ? d[k] - std::round(d[k]) : d[k];
                        if (std::abs(frac) > 1e-8)
                            throw GraftNotWellDefined(
                                "graft map is not well defined modulo the torus lattice");
                        if (target_torus) {
                            int c = static_cast<int>(std::llround(d[k]));
                            if (!have)
                                lat_(k, axis) = c;
                            else if (lat_(k, axis) != c)
                                throw GraftNotWellDefined(
                                    "graft map has a non-constant lattice action");
                        }
                    }
                    have = true;
                }
        }
    }

    Manifold x_base_, y_base_;
    std::vector<CompiledExpr> comp_;
    Eigen::MatrixXi lat_;
};

// Integrate on the source cylinder to the slab, teleport the surface part
// through H, continue on the target cylinder. The merged outcome reports
// target-side landings and near misses.
inline TrajectoryFn graft_trajectories(const ScalarField& F1, const ScalarField& F2,
                                       const std::vector<CriticalPoint>& lifted_target,
                                       const GraftMap& H, double slab) {
    return [&F1, &F2, &lifted_target, &H, slab](const Vec& seed, const FlowOptions& fo) {
        static const std::vector<CriticalPoint> no_cps;
        // a requested stop below the graft plane stays on the source side
        bool stop_before = fo.slab && *fo.slab <= slab;
        FlowOptions fo1 = fo;
        if (!stop_before) fo1.slab = slab;
        TrajectoryOutcome a = integrate(F1, no_cps, seed, fo1);
        if (stop_before || a.kind != TrajectoryOutcome::Kind::CrossedSlab) return a;
        const Manifold& my = F2.manifold();
        Vec ym = H.apply(a.exit_point.head(F1.manifold().base_chart_dim()));
        Vec q = Vec::Zero(my.dim());
        q.head(ym.size()) = ym;
        q[my.dim() - 1] = slab;
        FlowOptions fo2 = fo;
        TrajectoryOutcome b = integrate(F2, lifted_target, q, fo2);
        b.time += a.time;
        if (fo.record_path) {
            std::vector<Vec> path = std::move(a.path);
            for (NearMiss& nm : b.near_misses) nm.path_index += path.size();
            path.insert(path.end(), b.path.begin(), b.path.end());
            b.path = std::move(path);
        }
        return b;
    };
}

inline double jitter_tilt(std::uint64_t seed, int attempt) {
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(attempt));
    return std::uniform_real_distribution<double>(-1e-3, 1e-3)(rng);
}

}  // namespace detail

// Cylinder field f + C h used on both sides of a graft. C = 1 makes the slab
// dynamics ds/dt = 3 s (1 - s).
inline std::shared_ptr<const InterpolationField> build_graft_cylinder(const FieldPtr& f,
                                                                      double C = 1.0) {
    InterpolationSpec spec;
    spec.f1 = f;
    spec.f2 = f;
    spec.C = C;
    return build_interpolation(spec);
}

inline StepMap grafted_map(const MorseComplexData& d1, const MorseComplexData& d2,
                           const InterpolationField& F1, const InterpolationField& F2,
                           const GraftSpec& graft, const SweepOptions& opts = {}) {
    detail::GraftMap H(graft, F1.manifold(), F2.manifold());
    auto lifted = detail::slab1_points(F2, d2);
    auto traj = detail::graft_trajectories(F1, F2, lifted, H, graft.slab);
    std::string last;
    for (int attempt = 0; attempt <= 3; ++attempt) {
        double tilt = detail::jitter_tilt(graft.jitter_seed, attempt);
        try {
            return detail::assemble_map(d1, d2, *F1.endpoint1(), F1.manifold(), F2, lifted, traj,
                                        detail::slab_axis(F1.manifold()), H.push(), opts, tilt,
                                        nullptr);
        } catch (const FlowError& e) {
            last = e.what();
        }
    }
    throw GraftNontransverse("grafted sweep failed for 4 jitter seeds: " + last);
}

struct DimensionReport {
    struct Entry {
        int source_cp = -1;        // source surface cp id
        int target_cp = -1;        // target surface cp id
        int index_difference = 0;  // cylinder indices: (source index + 1) - target index
        int rigid = 0;             // isolated grafted trajectories observed
        int families = 0;          // 1-parameter landing arcs observed
    };
    std::vector<Entry> entries;
    std::vector<std::string> anomalies;
};

// Count the grafted connections the sweeps actually see and check them
// against the expected dimensions: isolated trajectories need index
// difference 1, 1-parameter families difference 2.
inline DimensionReport dimension_check(const MorseComplexData& d1, const MorseComplexData& d2,
                                       const InterpolationField& F1, const InterpolationField& F2,
                                       const GraftSpec& graft, const SweepOptions& opts = {}) {
    detail::GraftMap H(graft, F1.manifold(), F2.manifold());
    auto lifted = detail::slab1_points(F2, d2);
    auto traj = detail::graft_trajectories(F1, F2, lifted, H, graft.slab);
    detail::SweepTrace trace;
    StepMap sm;
    std::string last;
    bool done = false;
    for (int attempt = 0; attempt <= 3 && !done; ++attempt) {
        trace = {};
        double tilt = detail::jitter_tilt(graft.jitter_seed, attempt);
        try {
            sm = detail::assemble_map(d1, d2, *F1.endpoint1(), F1.manifold(), F2, lifted, traj,
                                      detail::slab_axis(F1.manifold()), H.push(), opts, tilt,
                                      &trace);
            done = true;
        } catch (const FlowError& e) {
            last = e.what();
        }
    }
    if (!done) throw GraftNontransverse("grafted sweep failed for 4 jitter seeds: " + last);

    std::map<std::pair<int, int>, DimensionReport::Entry> acc;
    auto bump = [&](int sc, int tc, bool rigid) {
        auto& e = acc[{sc, tc}];
        e.source_cp = sc;
        e.target_cp = tc;
        e.index_difference =
            (d1.cps[static_cast<size_t>(sc)].index + 1) - d2.cps[static_cast<size_t>(tc)].index;
        if (rigid)
            ++e.rigid;
        else
            ++e.families;
    };
    for (const auto& [y, t] : sm.base_transport) bump(y, t, true);
    for (const auto& [sid, meds] : trace.wall_mediators)
        for (int q : meds) bump(d1.steps[static_cast<size_t>(sid)].through, q, true);
    for (const auto& [sid, segs] : trace.segments)
        for (const Label& l : segs) bump(d1.steps[static_cast<size_t>(sid)].through, l.id, false);

    DimensionReport rep;
    for (const auto& [key, e] : acc) {
        if (e.rigid > 0 && e.index_difference != 1)
            rep.anomalies.push_back("rigid connection " + std::to_string(e.source_cp) + " -> " +
                                    std::to_string(e.target_cp) + " at index difference " +
                                    std::to_string(e.index_difference));
        if (e.families > 0 && e.index_difference != 2)
            rep.anomalies.push_back("1-parameter family " + std::to_string(e.source_cp) + " -> " +
                                    std::to_string(e.target_cp) + " at index difference " +
                                    std::to_string(e.index_difference));
        rep.entries.push_back(e);
    }
    return rep;
}

}  // namespace morsepi
