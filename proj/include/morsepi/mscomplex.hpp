#pragma once

// Combinatorial Morse data of a surface field: steps through index-1 points
// and cyclic boundary words of index-2 unstable disks, extracted by sweeping
// seed circles and bisecting onto basin walls.
//
// Every landing label carries its integer lattice lift, and steps record the
// lift displacement of both endpoints relative to their saddle. Wall signs
// follow the branch rule: crossing a wall with increasing sweep angle
// contributes sigma^{+1} exactly when the lower flank exits the mediating
// saddle along the -v unstable branch.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "morsepi/flow.hpp"
#include "morsepi/util.hpp"

namespace morsepi {

struct StepBroken : FlowError {
    int cp;
    StepBroken(int c, const std::string& m) : FlowError(m), cp(c) {}
};

struct UnresolvedWall : FlowError {
    explicit UnresolvedWall(const std::string& m) : FlowError(m) {}
};

struct Step {
    int id = -1;
    int through = -1;  // index-1 cp
    int start = -1;    // landing of the -v separatrix
    int end = -1;      // landing of the +v separatrix
    IVec delta_start;  // landing lift relative to the saddle's own lift
    IVec delta_end;
};

struct SignedStep {
    int step = -1;
    int sign = 1;
    bool operator==(const SignedStep& o) const { return step == o.step && sign == o.sign; }
};

using Word = std::vector<SignedStep>;

struct DiskBoundary {
    int of = -1;  // index-2 cp
    Word word;    // crossings in sweep order, starting at theta = 0
    std::vector<double> thetas;
};

struct MorseComplexData {
    enum class Provenance { Numerical, Handwritten };

    Manifold manifold = Manifold::torus();
    std::vector<CriticalPoint> cps;
    std::vector<Step> steps;
    std::vector<DiskBoundary> disks;
    int base = -1;
    Provenance provenance = Provenance::Numerical;
    std::uint64_t scenario_hash = 0;
    std::vector<std::string> warnings;

    int step_of_saddle(int cp_id) const {
        for (const Step& s : steps)
            if (s.through == cp_id) return s.id;
        throw FlowError("no step through cp " + std::to_string(cp_id));
    }
};

struct SweepOptions {
    int samples = 512;
    double r0 = 1e-4;
    double capture = 1e-3;       // mediator must approach the saddle this close
    double branch_radius = 0.02; // where the exit branch is sampled
    double smale_warn = 1e-4;    // near-miss distance that smells like a saddle-saddle connection
    FlowOptions flow;
};

namespace detail {

inline Label cp_label(const TrajectoryOutcome& out) {
    Label l;
    if (out.kind == TrajectoryOutcome::Kind::ConvergedTo) {
        l.kind = Label::Kind::Cp;
        l.id = out.cp;
        l.lift = out.lift;
    } else {
        l.kind = Label::Kind::Wall;
        l.id = out.cp;
        l.lift = out.lift;
    }
    return l;
}

// Label a sweep sample, nudging the angle off separatrix hits.
inline Label sample_label(const SeedFamily& family, const TrajectoryFn& traj, double theta,
                          const FlowOptions& opts, double* theta_used = nullptr) {
    static const double nudges[] = {0.0, 1e-7, -1e-7, 1e-6, -1e-6, 1e-5, -1e-5};
    for (double d : nudges) {
        try {
            TrajectoryOutcome out = traj(family(theta + d), opts);
            if (out.kind == TrajectoryOutcome::Kind::ConvergedTo) {
                if (theta_used) *theta_used = theta + d;
                return cp_label(out);
            }
        } catch (const FlowTimedOut&) {
        }
    }
    throw UnresolvedWall("sweep sample at theta = " + std::to_string(theta) +
                         " cannot be labeled (persistent separatrix hit)");
}

struct Mediator {
    int cp = -1;
    IVec lift;
};

struct WallResolution {
    Mediator med;
    int sign = 0;
};

// Bisect the label boundary again under flow options fo, starting from a
// +-1e-6 bracket around the previously located wall. The numerical
// separatrix moves slightly with the integration tolerance, so a wall found
// at the default tolerance must be re-located before tight-tolerance probes
// can shadow it.
inline double refine_wall_theta(const SeedFamily& family, const TrajectoryFn& traj,
                                const WallLocation& wall, const FlowOptions& fo) {
    auto label_at = [&](double th) -> std::optional<Label> {
        try {
            TrajectoryOutcome o = traj(family(th), fo);
            if (o.kind == TrajectoryOutcome::Kind::ConvergedTo) return cp_label(o);
        } catch (const FlowTimedOut&) {
        }
        return std::nullopt;
    };
    double a = wall.theta - 1e-6, b = wall.theta + 1e-6;
    auto la = label_at(a), lb = label_at(b);
    if (!la || !lb || !(*la == wall.lo) || !(*lb == wall.hi)) return wall.theta;
    while (b - a > 1e-14) {
        double mid = 0.5 * (a + b);
        auto lm = label_at(mid);
        if (!lm) break;
        if (*lm == wall.lo)
            a = mid;
        else if (*lm == wall.hi)
            b = mid;
        else
            break;
    }
    return 0.5 * (a + b);
}

// Identify the index-1 point whose stable manifold carries the wall, and
// which of its unstable branches the lower flank follows. Both are read off
// one trajectory that shadows the separatrix: the landing basin names the
// flank (so probe offsets may sit below integrator noise), the closest
// index-1 approach names the mediator, and the exit direction past
// branch_radius gives the branch. Only index-1 points can mediate: they
// alone have codimension-1 stable manifolds, and the sweep seed always
// logs a near miss of its own index-2 center which must not win the argmin.
// When the mediator repels much faster than it attracts, default-tolerance
// trajectories are thrown off the separatrix before reaching it; the second
// pass re-bisects the wall at a tighter tolerance and tries again.
inline WallResolution resolve_wall(const ScalarField& frames_field,
                                   const std::vector<CriticalPoint>& cps, const SeedFamily& family,
                                   const TrajectoryFn& traj, const WallLocation& wall,
                                   const SweepOptions& opts) {
    const Manifold& m = frames_field.manifold();
    static const double rungs[] = {0.0,   -1e-10, 1e-10, -1e-9, 1e-9,
                                   -1e-8, 1e-8,   -1e-7, 1e-7,  -1e-6,
                                   1e-6,  -1e-5,  1e-5,  -1e-4, 1e-4};
    const double tols[] = {opts.flow.rk_tol, 1e-12};
    for (double tol : tols) {
        FlowOptions fo = opts.flow;
        fo.rk_tol = tol;
        fo.record_path = true;
        double theta_c = wall.theta;
        if (tol != opts.flow.rk_tol) theta_c = refine_wall_theta(family, traj, wall, fo);
        for (double dp : rungs) {
            TrajectoryOutcome out;
            try {
                out = traj(family(theta_c + dp), fo);
            } catch (const FlowTimedOut&) {
                continue;
            }
            if (out.kind != TrajectoryOutcome::Kind::ConvergedTo) continue;
            Label got = cp_label(out);
            bool is_lower;
            if (got == wall.lo)
                is_lower = true;
            else if (got == wall.hi)
                is_lower = false;
            else
                continue;
            const NearMiss* best = nullptr;
            for (const NearMiss& nm : out.near_misses) {
                if (cps[static_cast<size_t>(nm.cp)].index != 1) continue;
                if (!best || nm.dist < best->dist) best = &nm;
            }
            if (!best || best->dist > opts.capture) continue;
            const CriticalPoint& saddle = cps[static_cast<size_t>(best->cp)];
            Vec target = m.apply_offset(saddle.coords, best->lift);
            Vec v = unstable_frame(frames_field, saddle)[0];
            size_t exit_idx = out.path.size() - 1;
            for (size_t i = best->path_index; i < out.path.size(); ++i) {
                if ((out.path[i] - target).norm() > opts.branch_radius) {
                    exit_idx = i;
                    break;
                }
            }
            double proj = (out.path[exit_idx] - target).dot(v);
            if (std::abs(proj) < 1e-12) continue;
            // crossing counts +1 when the lower flank leaves along -v
            bool exits_minus = proj < 0;
            return {{best->cp, best->lift}, is_lower == exits_minus ? 1 : -1};
        }
    }
    throw UnresolvedWall("cannot resolve wall at theta = " + std::to_string(wall.theta));
}

// +1 when the lower flank exits the mediating saddle along the -v branch.
}  // namespace detail

// For each index-1 cp, integrate both unstable separatrices. Also collects
// heuristic Smale warnings when a separatrix shaves another saddle.
inline std::vector<Step> extract_steps(const ScalarField& f, const std::vector<CriticalPoint>& cps,
                                       const SweepOptions& opts = {},
                                       std::vector<std::string>* warnings = nullptr) {
    const Manifold& m = f.manifold();
    std::vector<Step> steps;
    for (const CriticalPoint& cp : cps) {
        if (cp.index != 1) continue;
        Vec v = unstable_frame(f, cp)[0];
        Step st;
        st.id = static_cast<int>(steps.size());
        st.through = cp.id;
        for (int side = 0; side < 2; ++side) {
            double sgn = side == 0 ? -1.0 : 1.0;
            Vec seed = m.renormalize_cover(cp.coords + sgn * opts.r0 * v);
            TrajectoryOutcome out;
            try {
                out = integrate(f, cps, seed, opts.flow);
            } catch (const FlowTimedOut&) {
                throw StepBroken(cp.id, "separatrix of cp " + std::to_string(cp.id) + " timed out");
            }
            if (out.kind != TrajectoryOutcome::Kind::ConvergedTo)
                throw StepBroken(cp.id, "separatrix of cp " + std::to_string(cp.id) +
                                            " does not reach a minimum (saddle-saddle connection?)");
            if (side == 0) {
                st.start = out.cp;
                st.delta_start = out.lift;
            } else {
                st.end = out.cp;
                st.delta_end = out.lift;
            }
            if (warnings) {
                for (const NearMiss& nm : out.near_misses) {
                    bool self = nm.cp == cp.id && nm.lift.isZero();
                    if (!self && nm.dist < opts.smale_warn)
                        warnings->push_back("NotSmaleWarning: separatrix of cp " + std::to_string(cp.id) +
                                            " passes within " + std::to_string(nm.dist) + " of cp " +
                                            std::to_string(nm.cp));
                }
            }
        }
        steps.push_back(st);
    }
    return steps;
}

// Sweep the unstable disk boundary of an index-2 point counterclockwise in
// its (u1, u2) eigenframe and assemble the signed crossing word.
inline DiskBoundary extract_disk_boundary(const ScalarField& f, const std::vector<CriticalPoint>& cps,
                                          const std::vector<Step>& steps, int z_id,
                                          const SweepOptions& opts = {}) {
    const Manifold& m = f.manifold();
    const CriticalPoint& w = cps[static_cast<size_t>(z_id)];
    if (w.index != 2) throw FlowError("disk boundary requested for a cp of index != 2");
    auto frame = unstable_frame(f, w);
    const Vec u1 = frame[0], u2 = frame[1];
    SeedFamily family = [&m, &w, &u1, &u2, &opts](double theta) {
        return m.renormalize_cover(w.coords + opts.r0 * (std::cos(theta) * u1 + std::sin(theta) * u2));
    };
    LabelFn label_of = [](const TrajectoryOutcome& o) { return detail::cp_label(o); };
    TrajectoryFn traj = plain_trajectories(f, cps);

    const double two_pi = 6.2831853071795864769;
    int n = opts.samples;
    std::vector<double> thetas(static_cast<size_t>(n));
    std::vector<Label> labels(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        thetas[static_cast<size_t>(j)] = two_pi * (j + 0.5) / n;
        labels[static_cast<size_t>(j)] = detail::sample_label(family, traj, thetas[static_cast<size_t>(j)],
                                                              opts.flow, &thetas[static_cast<size_t>(j)]);
    }

    DiskBoundary disk;
    disk.of = z_id;
    for (int j = 0; j < n; ++j) {
        int k = (j + 1) % n;
        double lo = thetas[static_cast<size_t>(j)];
        double hi = k == 0 ? thetas[0] + two_pi : thetas[static_cast<size_t>(k)];
        const Label& llo = labels[static_cast<size_t>(j)];
        const Label& lhi = labels[static_cast<size_t>(k)];
        if (llo == lhi) continue;
        std::vector<WallLocation> walls;
        find_transitions(family, traj, label_of, lo, llo, hi, lhi, opts.flow, walls);
        for (const WallLocation& wall : walls) {
            auto [med, sign] = detail::resolve_wall(f, cps, family, traj, wall, opts);
            int step_id = -1;
            for (const Step& s : steps)
                if (s.through == med.cp) step_id = s.id;
            if (step_id < 0) throw UnresolvedWall("wall mediated by cp without a step");
            const Step& s = steps[static_cast<size_t>(step_id)];

            // endpoint chaining: the flank labels must be the step's endpoint
            // lifts translated by the mediator's lift
            Label want_lo, want_hi;
            want_lo.kind = want_hi.kind = Label::Kind::Cp;
            if (sign > 0) {
                want_lo.id = s.start;
                want_lo.lift = med.lift + s.delta_start;
                want_hi.id = s.end;
                want_hi.lift = med.lift + s.delta_end;
            } else {
                want_lo.id = s.end;
                want_lo.lift = med.lift + s.delta_end;
                want_hi.id = s.start;
                want_hi.lift = med.lift + s.delta_start;
            }
            if (!(want_lo == wall.lo) || !(want_hi == wall.hi))
                throw UnresolvedWall("wall endpoints disagree with the step through cp " +
                                     std::to_string(med.cp));

            disk.word.push_back({step_id, sign});
            disk.thetas.push_back(wall.theta);
        }
    }
    return disk;
}

struct ComplexOptions {
    int seeds_per_axis = 16;
    FindCpOptions find;
    SweepOptions sweep;
};

inline MorseComplexData build_complex(const ScalarField& f, const ComplexOptions& opts = {},
                                      std::uint64_t scenario_hash = 0) {
    if (f.manifold().extra_dims() != 0)
        throw FlowError("surface complex extraction requires a plain surface field");
    MorseComplexData data;
    data.manifold = f.manifold();
    data.scenario_hash = scenario_hash;
    data.cps = find_critical_points(f, opts.seeds_per_axis, opts.find);
    data.steps = extract_steps(f, data.cps, opts.sweep, &data.warnings);

    std::vector<int> disk_ids;
    for (const CriticalPoint& cp : data.cps)
        if (cp.index == 2) disk_ids.push_back(cp.id);
    auto disks = parallel_map<DiskBoundary>(static_cast<int>(disk_ids.size()), [&](int i) {
        return extract_disk_boundary(f, data.cps, data.steps, disk_ids[static_cast<size_t>(i)],
                                     opts.sweep);
    });
    data.disks = std::move(disks);

    for (const CriticalPoint& cp : data.cps)
        if (cp.index == 0) {
            data.base = cp.id;
            break;
        }
    if (data.base < 0) throw FlowError("no minimum found; cannot choose a base point");
    return data;
}

}  // namespace morsepi
