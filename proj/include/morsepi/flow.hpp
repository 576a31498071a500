#pragma once

// Anti-gradient dynamics: critical point location, trajectory integration
// with event detection, and parameter-family bisection onto basin walls.
//
// Integration runs on the universal cover of periodic directions (points are
// never wrapped mid-flight), so a landing label is a critical point id plus
// an integer lattice offset. That is what makes walls detectable on a torus
// with a single minimum: the landing point is the same mod 1 on both sides of
// a wall, but its lift differs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "morsepi/geometry.hpp"

namespace morsepi {

struct FlowError : std::runtime_error {
    explicit FlowError(const std::string& m) : std::runtime_error(m) {}
};

struct DegenerateCritical : FlowError {
    Vec point;
    explicit DegenerateCritical(const Vec& p)
        : FlowError("degenerate critical point (|eigenvalue| < 1e-6)"), point(p) {}
};

struct FlowTimedOut : FlowError {
    double t_max;
    explicit FlowTimedOut(double t) : FlowError("trajectory exceeded t_max = " + std::to_string(t)), t_max(t) {}
};

struct NoLinger : FlowError {
    explicit NoLinger(const std::string& m) : FlowError(m) {}
};

struct CriticalPoint {
    int id = -1;
    Vec coords;
    int index = 0;
    double value = 0.0;
};

// ---------------------------------------------------------------------------
// Newton polishing and critical point search

inline std::optional<Vec> newton_polish(const ScalarField& f, Vec p, int max_iters = 80) {
    const Manifold& m = f.manifold();
    for (int it = 0; it < max_iters; ++it) {
        Vec g = f.gradient(p);
        if (g.norm() <= 1e-12) break;
        auto [frame, H] = intrinsic_hessian(f, p);
        int n = static_cast<int>(frame.size());
        Vec gf(n);
        for (int i = 0; i < n; ++i) gf[i] = g.dot(frame[static_cast<size_t>(i)]);
        Eigen::FullPivLU<Mat> lu(H);
        if (!lu.isInvertible()) return std::nullopt;
        Vec step = lu.solve(-gf);
        double sn = step.norm();
        if (sn > 0.25) step *= 0.25 / sn;  // damp large jumps
        Vec delta = Vec::Zero(m.dim());
        for (int i = 0; i < n; ++i) delta += step[i] * frame[static_cast<size_t>(i)];
        p = m.renormalize_cover(p + delta);
    }
    if (f.gradient(p).norm() <= 1e-10) return p;
    return std::nullopt;
}

struct FindCpOptions {
    double s_lo = -1.0, s_hi = 2.0;  // seed range along each extra axis
    double s_keep = 3.0;             // discard polished points beyond this
    int extra_seeds = 13;            // seeds along each extra axis
};

namespace detail {

inline std::vector<Vec> seed_grid(const Manifold& m, int per_axis, const FindCpOptions& opt) {
    std::vector<Vec> base;
    if (m.base_kind() == BaseKind::Torus) {
        for (int i = 0; i < per_axis; ++i)
            for (int j = 0; j < per_axis; ++j) {
                Vec p(2);
                p << (i + 0.5) / per_axis, (j + 0.5) / per_axis;
                base.push_back(p);
            }
    } else {
        // deterministic spiral covering of the sphere
        int n = per_axis * per_axis;
        const double ga = 2.39996322972865332;  // golden angle
        for (int k = 0; k < n; ++k) {
            double z = 1.0 - 2.0 * (k + 0.5) / n;
            double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            double phi = ga * k;
            Vec p(3);
            p << r * std::cos(phi), r * std::sin(phi), z;
            base.push_back(p);
        }
    }
    if (m.extra_dims() == 0) return base;
    std::vector<Vec> out;
    int ns = opt.extra_seeds;
    for (const Vec& b : base) {
        for (int i = 0; i < ns; ++i) {
            double s = opt.s_lo + (opt.s_hi - opt.s_lo) * (i + 0.5) / ns;
            if (m.extra_dims() == 1) {
                Vec p(m.dim());
                p.head(b.size()) = b;
                p[m.base_chart_dim()] = s;
                out.push_back(p);
            } else {
                for (int j = 0; j < ns; ++j) {
                    double t = opt.s_lo + (opt.s_hi - opt.s_lo) * (j + 0.5) / ns;
                    Vec p(m.dim());
                    p.head(b.size()) = b;
                    p[m.base_chart_dim()] = s;
                    p[m.base_chart_dim() + 1] = t;
                    out.push_back(p);
                }
            }
        }
    }
    return out;
}

inline bool lex_less(const Vec& a, const Vec& b) {
    for (int i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return true;
        if (a[i] > b[i]) return false;
    }
    return false;
}

}  // namespace detail

// Locate, polish, classify and deterministically number all critical points.
// Ids are ordered by (value, lexicographic coordinates).
inline std::vector<CriticalPoint> find_critical_points(const ScalarField& f, int seeds_per_axis = 16,
                                                       const FindCpOptions& opt = {}) {
    if (seeds_per_axis < 8) throw FlowError("seeds_per_axis must be at least 8");
    const Manifold& m = f.manifold();
    std::vector<Vec> found;
    for (const Vec& seed : detail::seed_grid(m, seeds_per_axis, opt)) {
        auto polished = newton_polish(f, seed);
        if (!polished) continue;
        Vec p = m.normalize(*polished);
        bool in_range = true;
        for (int i = m.base_chart_dim(); i < m.dim(); ++i)
            if (p[i] < -opt.s_keep || p[i] > opt.s_keep) in_range = false;
        if (!in_range) continue;
        bool dup = false;
        for (const Vec& q : found)
            if (m.distance(p, q) < 1e-6) {
                dup = true;
                break;
            }
        if (!dup) found.push_back(p);
    }
    std::vector<CriticalPoint> cps;
    for (const Vec& p : found) {
        auto [frame, H] = intrinsic_hessian(f, p);
        Eigen::SelfAdjointEigenSolver<Mat> es(H);
        int index = 0;
        for (int i = 0; i < es.eigenvalues().size(); ++i) {
            double ev = es.eigenvalues()[i];
            if (std::abs(ev) < 1e-6) throw DegenerateCritical(p);
            if (ev < 0) ++index;
        }
        CriticalPoint cp;
        cp.coords = p;
        cp.index = index;
        cp.value = f.value(p);
        cps.push_back(cp);
    }
    std::sort(cps.begin(), cps.end(), [](const CriticalPoint& a, const CriticalPoint& b) {
        if (a.value != b.value) return a.value < b.value;
        return detail::lex_less(a.coords, b.coords);
    });
    for (size_t i = 0; i < cps.size(); ++i) cps[i].id = static_cast<int>(i);
    return cps;
}

// Orthonormal eigenvectors of the negative Hessian eigenvalues, expressed in
// chart/ambient coordinates and sign-normalized: first component larger than
// 1e-9 in magnitude is positive.
inline std::vector<Vec> unstable_frame(const ScalarField& f, const CriticalPoint& cp) {
    auto [frame, H] = intrinsic_hessian(f, cp.coords);
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    std::vector<Vec> out;
    int n = es.eigenvalues().size();
    for (int i = 0; i < n; ++i) {
        if (es.eigenvalues()[i] >= 0) continue;
        Vec v = Vec::Zero(f.manifold().dim());
        for (int j = 0; j < n; ++j) v += es.eigenvectors()(j, i) * frame[static_cast<size_t>(j)];
        for (int k = 0; k < v.size(); ++k) {
            if (std::abs(v[k]) > 1e-9) {
                if (v[k] < 0) v = -v;
                break;
            }
        }
        out.push_back(v);
    }
    if (static_cast<int>(out.size()) != cp.index)
        throw FlowError("unstable frame size does not match index");
    return out;
}

// ---------------------------------------------------------------------------
// Trajectory integration

struct FlowOptions {
    double rk_tol = 1e-9;       // per-step relative error target
    double h_init = 1e-3;
    double h_min = 1e-13;
    double h_max = 0.5;
    double t_max = 1000.0;
    double eps_cp = 1e-5;       // convergence distance
    double grad_cp = 1e-7;      // convergence gradient bound
    double t_linger = 25.0;     // sustained time near a positive-index point
    double linger_radius = 1e-3;
    double linger_grad = 1e-7;
    double near_radius = 1e-3;  // transient close approaches worth recording
    double s_max = 5.0;         // escape threshold on the line factor
    std::optional<double> slab; // report crossing of this s-value
    bool record_path = false;
    bool perturb_on_linger = false;
    double r0 = 1e-4;           // linger-perturbation radius
    int max_linger_perturbs = 8;
};

struct NearMiss {
    int cp = -1;
    IVec lift;
    double dist = 0.0;
    double t = 0.0;
    size_t path_index = 0;
};

struct TrajectoryOutcome {
    enum class Kind { ConvergedTo, CrossedSlab, Escaped, Lingered };
    Kind kind = Kind::ConvergedTo;
    int cp = -1;                 // ConvergedTo / Lingered
    IVec lift;                   // lattice offset of the landing lift
    int escape_dir = 0;          // -1 or +1
    Vec exit_point;              // CrossedSlab / Escaped exit
    Vec final_point;
    double time = 0.0;
    double max_energy_increase = 0.0;
    std::vector<Vec> path;
    std::vector<NearMiss> near_misses;
    std::vector<int> linger_history;
};

namespace detail {

inline Vec rk4_once(const ScalarField& f, const Vec& y, double h) {
    auto rhs = [&f](const Vec& p) { return Vec(-f.gradient(p)); };
    Vec k1 = rhs(y);
    Vec k2 = rhs(y + 0.5 * h * k1);
    Vec k3 = rhs(y + 0.5 * h * k2);
    Vec k4 = rhs(y + h * k3);
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct Stepper {
    const ScalarField& f;
    double tol;
    double h;

    // One accepted step with step-doubling error control.
    Vec advance(const Vec& y, double h_min, double h_max, double* h_taken) {
        for (;;) {
            Vec full = rk4_once(f, y, h);
            Vec half = rk4_once(f, rk4_once(f, y, h / 2), h / 2);
            double scale = 1.0 + y.cwiseAbs().maxCoeff();
            double err = (full - half).norm() / 15.0;
            if (err <= tol * scale) {
                *h_taken = h;
                double grow = err > 0 ? 0.9 * std::pow(tol * scale / err, 0.2) : 5.0;
                h = std::min(h * std::clamp(grow, 0.2, 5.0), h_max);
                return half;
            }
            h *= std::clamp(0.9 * std::pow(tol * scale / err, 0.2), 0.2, 0.9);
            if (h < h_min) throw FlowError("integrator step size underflow");
        }
    }
};

}  // namespace detail

struct NearestCp {
    int id = -1;
    double dist = 1e300;
    IVec lift;
};

inline NearestCp nearest_cp(const Manifold& m, const std::vector<CriticalPoint>& cps, const Vec& p) {
    NearestCp best;
    for (const CriticalPoint& cp : cps) {
        double d = m.distance(cp.coords, p);
        if (d < best.dist) {
            best.dist = d;
            best.id = cp.id;
        }
    }
    if (best.id >= 0) best.lift = m.lift_offset(cps[static_cast<size_t>(best.id)].coords, p);
    return best;
}

inline TrajectoryOutcome integrate(const ScalarField& f, const std::vector<CriticalPoint>& cps, Vec p,
                                   const FlowOptions& opts = {}) {
    const Manifold& m = f.manifold();
    int s_coord = m.base_chart_dim();  // first extra coordinate, if any
    bool has_line = m.extra_dims() == 1;

    TrajectoryOutcome out;
    out.lift = IVec::Zero(m.dim());
    if (opts.record_path) out.path.push_back(p);

    double energy = f.value(p);
    double linger_acc = 0.0;
    int linger_cp = -1;
    bool linger_tick = false;  // gradient currently below the linger bound
    int perturbs = 0;

    auto near_update = [&](const Vec& q, double t, size_t pidx) -> std::optional<TrajectoryOutcome::Kind> {
        NearestCp nc = nearest_cp(m, cps, q);
        if (nc.id < 0) return std::nullopt;
        const CriticalPoint& cp = cps[static_cast<size_t>(nc.id)];
        double gnorm = f.gradient(q).norm();
        if (cp.index == 0 && nc.dist < opts.eps_cp && gnorm < opts.grad_cp) {
            out.kind = TrajectoryOutcome::Kind::ConvergedTo;
            out.cp = nc.id;
            out.lift = nc.lift;
            return out.kind;
        }
        if (cp.index >= 1) {
            if (nc.dist < opts.near_radius) {
                bool found = false;
                for (NearMiss& nm : out.near_misses) {
                    if (nm.cp == nc.id && nm.lift == nc.lift) {
                        found = true;
                        if (nc.dist < nm.dist) {
                            nm.dist = nc.dist;
                            nm.t = t;
                            nm.path_index = pidx;
                        }
                    }
                }
                if (!found) out.near_misses.push_back({nc.id, nc.lift, nc.dist, t, pidx});
            }
            if (nc.dist < opts.linger_radius) {
                if (linger_cp != nc.id) {
                    linger_cp = nc.id;
                    linger_acc = 0.0;
                }
                // Integrator noise makes |grad| flicker around the bound while
                // the point sits pinned on a saddle; spikes pause accumulation
                // but only leaving the radius resets it.
                linger_tick = gnorm < opts.linger_grad;
                return std::nullopt;
            }
        }
        linger_cp = -1;
        linger_acc = 0.0;
        linger_tick = false;
        return std::nullopt;
    };

    // A start already sitting on a minimum converges in time zero.
    if (near_update(p, 0.0, 0).has_value()) {
        out.final_point = p;
        return out;
    }

    detail::Stepper stepper{f, opts.rk_tol, opts.h_init};
    double t = 0.0;
    for (;;) {
        double h_taken = 0.0;
        Vec p_new = stepper.advance(p, opts.h_min, opts.h_max, &h_taken);
        p_new = m.renormalize_cover(p_new);
        double t_new = t + h_taken;

        // slab crossing, refined by shrinking the step
        if (opts.slab && m.extra_dims() >= 1) {
            double s0 = p[s_coord] - *opts.slab;
            double s1 = p_new[s_coord] - *opts.slab;
            if (s0 != 0.0 && (s0 * s1 < 0.0 || s1 == 0.0)) {
                double a = 0.0, b = h_taken;
                Vec q = p_new;
                for (int it = 0; it < 80 && std::abs(q[s_coord] - *opts.slab) > 1e-12; ++it) {
                    double mid = 0.5 * (a + b);
                    Vec qm = m.renormalize_cover(detail::rk4_once(f, p, mid));
                    if ((qm[s_coord] - *opts.slab) * s0 > 0.0)
                        a = mid;
                    else
                        b = mid;
                    q = qm;
                }
                out.kind = TrajectoryOutcome::Kind::CrossedSlab;
                out.exit_point = q;
                out.final_point = q;
                out.time = t + 0.5 * (a + b);
                if (opts.record_path) out.path.push_back(q);
                return out;
            }
        }

        double e_new = f.value(p_new);
        if (e_new - energy > out.max_energy_increase) out.max_energy_increase = e_new - energy;
        energy = e_new;
        if (opts.record_path) out.path.push_back(p_new);
        p = p_new;
        t = t_new;

        if (has_line && std::abs(p[s_coord]) > opts.s_max) {
            out.kind = TrajectoryOutcome::Kind::Escaped;
            out.escape_dir = p[s_coord] > 0 ? 1 : -1;
            out.exit_point = p;
            out.final_point = p;
            out.time = t;
            return out;
        }

        int before_linger_cp = linger_cp;
        if (near_update(p, t, opts.record_path ? out.path.size() - 1 : 0).has_value()) {
            out.final_point = p;
            out.time = t;
            return out;
        }
        if (linger_cp >= 0) {
            if (linger_cp == before_linger_cp && linger_tick) linger_acc += h_taken;
            if (linger_acc > opts.t_linger) {
                if (opts.perturb_on_linger && perturbs < opts.max_linger_perturbs) {
                    const CriticalPoint& cp = cps[static_cast<size_t>(linger_cp)];
                    Vec v = unstable_frame(f, cp)[0];
                    Vec d = m.displacement(cp.coords, p);
                    double side = d.dot(v) >= 0 ? 1.0 : -1.0;
                    p = m.renormalize_cover(p + side * opts.r0 * v);
                    out.linger_history.push_back(linger_cp);
                    ++perturbs;
                    linger_cp = -1;
                    linger_acc = 0.0;
                } else {
                    out.kind = TrajectoryOutcome::Kind::Lingered;
                    out.cp = linger_cp;
                    out.lift = m.lift_offset(cps[static_cast<size_t>(linger_cp)].coords, p);
                    out.final_point = p;
                    out.time = t;
                    return out;
                }
            }
        }

        if (t > opts.t_max) throw FlowTimedOut(opts.t_max);
    }
}

// ---------------------------------------------------------------------------
// Landing labels and wall bisection

struct Label {
    enum class Kind { Cp, EscapedNeg, EscapedPos, Wall };
    Kind kind = Kind::Cp;
    int id = -1;   // cp id, or base-complex id for escape labels
    IVec lift;

    bool operator==(const Label& o) const { return kind == o.kind && id == o.id && lift == o.lift; }
    bool operator!=(const Label& o) const { return !(*this == o); }
};

using SeedFamily = std::function<Vec(double)>;
using LabelFn = std::function<Label(const TrajectoryOutcome&)>;

// Pluggable trajectory map, so composite dynamics (slab teleports) can reuse
// the bisection machinery. The plain version closes over a field and its
// critical points; both must outlive the functor.
using TrajectoryFn = std::function<TrajectoryOutcome(const Vec&, const FlowOptions&)>;

inline TrajectoryFn plain_trajectories(const ScalarField& f, const std::vector<CriticalPoint>& cps) {
    return [&f, &cps](const Vec& seed, const FlowOptions& o) { return integrate(f, cps, seed, o); };
}

struct WallLocation {
    double theta = 0.0;
    Label lo, hi;
};

// Drive theta onto the boundary of the lo-side basin. A Lingered midpoint sits
// exactly on the wall and short-circuits.
inline double bisect_transition(const SeedFamily& family, const TrajectoryFn& traj, double lo,
                                double hi, const Label& lo_label, const LabelFn& label_of,
                                const FlowOptions& opts, double tol = 1e-10, int max_depth = 60) {
    for (int depth = 0; depth < max_depth && hi - lo > tol; ++depth) {
        double mid = 0.5 * (lo + hi);
        TrajectoryOutcome out = traj(family(mid), opts);
        if (out.kind == TrajectoryOutcome::Kind::Lingered) return mid;
        Label l = label_of(out);
        if (l == lo_label)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

inline double bisect_transition(const ScalarField& f, const std::vector<CriticalPoint>& cps,
                                const SeedFamily& family, double lo, double hi, const Label& lo_label,
                                const LabelFn& label_of, const FlowOptions& opts, double tol = 1e-10,
                                int max_depth = 60) {
    return bisect_transition(family, plain_trajectories(f, cps), lo, hi, lo_label, label_of, opts,
                             tol, max_depth);
}

// All walls in [lo, hi], left to right, found by pinned bisection and
// recursion past each wall. `probe_gap` is how far past a located wall the
// next anchor is placed.
inline void find_transitions(const SeedFamily& family, const TrajectoryFn& traj,
                             const LabelFn& label_of, double lo, Label lo_label, double hi,
                             Label hi_label, const FlowOptions& opts, std::vector<WallLocation>& walls,
                             double probe_gap = 1e-7, int depth = 0) {
    if (lo_label == hi_label) return;
    if (depth > 32) throw NoLinger("wall recursion depth exceeded; labels oscillate");
    double theta = bisect_transition(family, traj, lo, hi, lo_label, label_of, opts);
    double probe_hi = std::min(theta + probe_gap, hi);
    TrajectoryOutcome after = traj(family(probe_hi), opts);
    Label after_label = label_of(after);
    if (after_label == lo_label) throw NoLinger("bisection did not separate basins");
    WallLocation w;
    w.theta = theta;
    w.lo = lo_label;
    w.hi = after_label;
    walls.push_back(w);
    if (after_label != hi_label)
        find_transitions(family, traj, label_of, probe_hi, after_label, hi, hi_label, opts, walls,
                         probe_gap, depth + 1);
}

inline void find_transitions(const ScalarField& f, const std::vector<CriticalPoint>& cps,
                             const SeedFamily& family, const LabelFn& label_of, double lo, Label lo_label,
                             double hi, Label hi_label, const FlowOptions& opts,
                             std::vector<WallLocation>& walls, double probe_gap = 1e-7, int depth = 0) {
    find_transitions(family, plain_trajectories(f, cps), label_of, lo, lo_label, hi, hi_label, opts,
                     walls, probe_gap, depth);
}

}
