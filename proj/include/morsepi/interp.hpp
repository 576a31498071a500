#pragma once

// Interpolation fields F = F~ + C*h on M x R and the two-parameter square
// variant on M x [0,1]^2. The blend is exact (bit-for-bit the endpoint field)
// outside [eps, 1-eps], and C is chosen so the s-derivative can never vanish
// strictly between the slabs.

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "morsepi/flow.hpp"
#include "morsepi/geometry.hpp"

namespace morsepi {

struct ProfileDegenerate : std::runtime_error {
    explicit ProfileDegenerate(const std::string& m) : std::runtime_error(m) {}
};

struct InteriorCriticalPoint : std::runtime_error {
    Vec point;
    explicit InteriorCriticalPoint(const Vec& p)
        : std::runtime_error("interpolation field has a critical point strictly between slabs"), point(p) {}
};

// C^2 monotone cutoff: 0 for s <= eps, 1 for s >= 1-eps.
class Blend {
public:
    explicit Blend(double eps) : eps_(eps) {
        if (eps <= 0.0 || eps > 0.5) throw std::runtime_error("blend eps must be in (0, 1/2]");
    }

    double eps() const { return eps_; }

    double rho(double s) const {
        if (s <= eps_) return 0.0;
        if (s >= 1.0 - eps_) return 1.0;
        double u = (s - eps_) / (1.0 - 2.0 * eps_);
        return ss(ss(u));
    }

    double rho_d(double s) const {
        if (s <= eps_ || s >= 1.0 - eps_) return 0.0;
        double w = 1.0 / (1.0 - 2.0 * eps_);
        double u = (s - eps_) * w;
        return ssd(ss(u)) * ssd(u) * w;
    }

    double rho_dd(double s) const {
        if (s <= eps_ || s >= 1.0 - eps_) return 0.0;
        double w = 1.0 / (1.0 - 2.0 * eps_);
        double u = (s - eps_) * w;
        double v = ss(u);
        return (ssdd(v) * ssd(u) * ssd(u) + ssd(v) * ssdd(u)) * w * w;
    }

private:
    static double ss(double u) { return u * u * (3.0 - 2.0 * u); }
    static double ssd(double u) { return 6.0 * u * (1.0 - u); }
    static double ssdd(double u) { return 6.0 - 12.0 * u; }
    double eps_;
};

// Profile h(s) with its first two derivatives, compiled from an expression in
// the single variable s.
class Profile {
public:
    explicit Profile(const Expr& e) : expr_(e) {
        auto used = e.used_vars();
        for (int i = 0; i < kNumVars; ++i)
            if (used[static_cast<size_t>(i)] && static_cast<Var>(i) != Var::S)
                throw std::runtime_error("profile must be an expression in s only");
        h_ = e.compile();
        Expr d1 = e.diff(Var::S);
        hd_ = d1.compile();
        hdd_ = d1.diff(Var::S).compile();
    }

    const Expr& expr() const { return expr_; }

    double h(double s) const { return eval(h_, s); }
    double hd(double s) const { return eval(hd_, s); }
    double hdd(double s) const { return eval(hdd_, s); }

private:
    static double eval(const CompiledExpr& c, double s) {
        double buf[kNumVars] = {0, 0, 0, 0, 0};
        buf[static_cast<int>(Var::S)] = s;
        return c.eval(buf);
    }
    Expr expr_;
    CompiledExpr h_, hd_, hdd_;
};

inline Expr cubic_profile() { return parse_expr("pow(s,3)-1.5*pow(s,2)"); }

namespace detail {

inline bool same_field(const FieldPtr& a, const FieldPtr& b) {
    if (a == b) return true;
    auto* ea = dynamic_cast<const ExprField*>(a.get());
    auto* eb = dynamic_cast<const ExprField*>(b.get());
    return ea && eb && ea->expr().to_string() == eb->expr().to_string();
}

// F~(m,u) = (1-rho(u)) f1(m) + rho(u) f2(m), exact at the ends. When the two
// fields are the same expression the blend short-circuits everywhere, so the
// u-dynamics decouple exactly.
struct TildePair {
    FieldPtr f1, f2;
    const Blend* blend;
    bool same;

    TildePair(FieldPtr a, FieldPtr b, const Blend* bl)
        : f1(std::move(a)), f2(std::move(b)), blend(bl), same(same_field(f1, f2)) {}

    double value(const Vec& mpt, double u) const {
        if (same || u <= blend->eps()) return f1->value(mpt);
        if (u >= 1.0 - blend->eps()) return f2->value(mpt);
        double r = blend->rho(u);
        return (1.0 - r) * f1->value(mpt) + r * f2->value(mpt);
    }

    Vec grad_m(const Vec& mpt, double u) const {
        if (same || u <= blend->eps()) return f1->gradient_raw(mpt);
        if (u >= 1.0 - blend->eps()) return f2->gradient_raw(mpt);
        double r = blend->rho(u);
        return (1.0 - r) * f1->gradient_raw(mpt) + r * f2->gradient_raw(mpt);
    }

    double du(const Vec& mpt, double u) const {
        if (same) return 0.0;
        double rd = blend->rho_d(u);
        if (rd == 0.0) return 0.0;
        return rd * (f2->value(mpt) - f1->value(mpt));
    }

    Mat hess_mm(const Vec& mpt, double u) const {
        if (same || u <= blend->eps()) return f1->hessian_raw(mpt);
        if (u >= 1.0 - blend->eps()) return f2->hessian_raw(mpt);
        double r = blend->rho(u);
        return (1.0 - r) * f1->hessian_raw(mpt) + r * f2->hessian_raw(mpt);
    }

    Vec dmu(const Vec& mpt, double u) const {
        int d = static_cast<int>(mpt.size());
        if (same) return Vec::Zero(d);
        double rd = blend->rho_d(u);
        if (rd == 0.0) return Vec::Zero(d);
        return rd * (f2->gradient_raw(mpt) - f1->gradient_raw(mpt));
    }

    double duu(const Vec& mpt, double u) const {
        if (same) return 0.0;
        double rdd = blend->rho_dd(u);
        if (rdd == 0.0) return 0.0;
        return rdd * (f2->value(mpt) - f1->value(mpt));
    }
};

}  // namespace detail

struct InterpolationSpec {
    FieldPtr f1, f2;
    double epsilon = 0.1;
    Expr profile = cubic_profile();
    std::optional<double> C;
    int grid = 64;  // samples per base axis when bounding |d_s F~|
};

class InterpolationField : public ScalarField {
public:
    InterpolationField(const InterpolationSpec& spec, double C)
        : ScalarField(Manifold::product_r(spec.f1->manifold())),
          blend_(spec.epsilon),
          profile_(spec.profile),
          pair_(spec.f1, spec.f2, &blend_),
          C_(C) {
        if (!(spec.f2->manifold() == spec.f1->manifold()))
            throw GeometryError("interpolation endpoints live on different manifolds");
    }

    double C() const { return C_; }
    const Blend& blend() const { return blend_; }
    const Profile& profile() const { return profile_; }
    const FieldPtr& endpoint1() const { return pair_.f1; }
    const FieldPtr& endpoint2() const { return pair_.f2; }

    // The blended part alone, short-circuits included.
    double tilde_value(const Vec& p) const { return pair_.value(base_pt(p), p[sdim()]); }

    double value(const Vec& p) const override {
        return pair_.value(base_pt(p), p[sdim()]) + C_ * profile_.h(p[sdim()]);
    }

    Vec gradient_raw(const Vec& p) const override {
        Vec mpt = base_pt(p);
        double s = p[sdim()];
        Vec g(manifold().dim());
        g.head(sdim()) = pair_.grad_m(mpt, s);
        g[sdim()] = pair_.du(mpt, s) + C_ * profile_.hd(s);
        return g;
    }

    Vec gradient(const Vec& p) const override { return manifold().project_tangent(p, gradient_raw(p)); }

    Mat hessian_raw(const Vec& p) const override {
        Vec mpt = base_pt(p);
        double s = p[sdim()];
        int d = manifold().dim();
        Mat h = Mat::Zero(d, d);
        h.topLeftCorner(sdim(), sdim()) = pair_.hess_mm(mpt, s);
        Vec cross = pair_.dmu(mpt, s);
        h.block(0, sdim(), sdim(), 1) = cross;
        h.block(sdim(), 0, 1, sdim()) = cross.transpose();
        h(sdim(), sdim()) = pair_.duu(mpt, s) + C_ * profile_.hdd(s);
        return h;
    }

private:
    int sdim() const { return manifold().base_chart_dim(); }
    Vec base_pt(const Vec& p) const { return p.head(sdim()); }

    Blend blend_;
    Profile profile_;
    detail::TildePair pair_;
    double C_;
};

namespace detail {

inline std::vector<Vec> base_sample_grid(const Manifold& base, int n) {
    FindCpOptions o;
    return seed_grid(base, n, o);
}

}  // namespace detail

// C = (1 + max_grid |d_s F~|) / min_{[eps,1-eps]} |h'|. The numerator bound
// makes C h' dominate the blend's s-derivative, so F has no critical point
// with s strictly between the slabs.
namespace detail {

// Smallest |h'| on [lo, hi]; a sign change between samples means h' vanishes
// inside, which the sampled minimum alone would miss.
inline double min_abs_profile_slope(const Profile& prof, double lo, double hi) {
    double min_hd = 1e300;
    double prev = 0.0;
    const int nh = 1024;
    for (int i = 0; i <= nh; ++i) {
        double s = lo + (hi - lo) * i / nh;
        double hd = prof.hd(s);
        min_hd = std::min(min_hd, std::abs(hd));
        if (i > 0 && prev * hd < 0.0) return 0.0;
        prev = hd;
    }
    return min_hd;
}

}  // namespace detail

inline double pick_C(const InterpolationSpec& spec) {
    Blend blend(spec.epsilon);
    Profile prof(spec.profile);

    double lo = spec.epsilon, hi = 1.0 - spec.epsilon;
    double min_hd = detail::min_abs_profile_slope(prof, lo, hi);
    if (min_hd < 1e-9) throw ProfileDegenerate("|h'| drops below 1e-9 inside the blend window");

    double max_ds = 0.0;
    if (!detail::same_field(spec.f1, spec.f2) && hi > lo) {
        auto grid = detail::base_sample_grid(spec.f1->manifold(), spec.grid);
        const int ns = 64;
        for (int i = 0; i < ns; ++i) {
            double s = lo + (hi - lo) * (i + 0.5) / ns;
            double rd = blend.rho_d(s);
            if (rd == 0.0) continue;
            for (const Vec& m : grid) {
                double ds = rd * (spec.f2->value(m) - spec.f1->value(m));
                max_ds = std::max(max_ds, std::abs(ds));
            }
        }
    }
    return (1.0 + max_ds) / min_hd;
}

namespace detail {

// Newton sweep asserting no critical points with parameter coordinates
// strictly inside (0,1).
inline void check_no_interior(const ScalarField& F, int n_extra) {
    const Manifold& m = F.manifold();
    auto base = base_sample_grid(m.base(), 8);
    std::vector<double> svals = {0.08, 0.25, 0.4, 0.55, 0.7, 0.85, 0.95};
    std::vector<Vec> seeds;
    for (const Vec& b : base) {
        for (double s : svals) {
            if (n_extra == 1) {
                Vec p(m.dim());
                p.head(b.size()) = b;
                p[m.base_chart_dim()] = s;
                seeds.push_back(p);
            } else {
                for (double t : svals) {
                    Vec p(m.dim());
                    p.head(b.size()) = b;
                    p[m.base_chart_dim()] = s;
                    p[m.base_chart_dim() + 1] = t;
                    seeds.push_back(p);
                }
            }
        }
    }
    for (const Vec& seed : seeds) {
        auto polished = newton_polish(F, seed);
        if (!polished) continue;
        for (int i = m.base_chart_dim(); i < m.dim(); ++i) {
            double s = (*polished)[i];
            if (s > 1e-7 && s < 1.0 - 1e-7) throw InteriorCriticalPoint(*polished);
        }
    }
}

}  // namespace detail

inline std::shared_ptr<const InterpolationField> build_interpolation(const InterpolationSpec& spec) {
    double C = spec.C ? *spec.C : pick_C(spec);
    if (C <= 0.0) throw std::runtime_error("interpolation C must be positive");
    auto F = std::make_shared<const InterpolationField>(spec, C);
    detail::check_no_interior(*F, 1);
    return F;
}

// ---------------------------------------------------------------------------
// Two-parameter square field on M x [0,1]^2:
//   F(m,s,s') = (1-rho(s)) F~12(m,s') + rho(s) F~13(m,s') + C (h(s) + h(s'))
// Edges: s'=0 gives f1, s'=1 gives the 2->3 interpolation in s, s=0 the 1->2
// interpolation in s', s=1 the 1->3 interpolation in s'.

struct SquareSpec {
    FieldPtr f1, f2, f3;
    double epsilon = 0.1;
    Expr profile = cubic_profile();
    std::optional<double> C;
    int grid = 64;
};

class SquareField : public ScalarField {
public:
    SquareField(const SquareSpec& spec, double C)
        : ScalarField(Manifold::product_square(spec.f1->manifold())),
          blend_(spec.epsilon),
          profile_(spec.profile),
          p12_(spec.f1, spec.f2, &blend_),
          p13_(spec.f1, spec.f3, &blend_),
          C_(C) {
        if (!(spec.f2->manifold() == spec.f1->manifold()) || !(spec.f3->manifold() == spec.f1->manifold()))
            throw GeometryError("square corners live on different manifolds");
    }

    double C() const { return C_; }
    const Blend& blend() const { return blend_; }
    const Profile& profile() const { return profile_; }

    double value(const Vec& p) const override {
        Vec mpt = base_pt(p);
        double s = p[sdim()], t = p[sdim() + 1];
        double v;
        if (s <= blend_.eps())
            v = p12_.value(mpt, t);
        else if (s >= 1.0 - blend_.eps())
            v = p13_.value(mpt, t);
        else {
            double r = blend_.rho(s);
            v = (1.0 - r) * p12_.value(mpt, t) + r * p13_.value(mpt, t);
        }
        return v + C_ * (profile_.h(s) + profile_.h(t));
    }

    Vec gradient_raw(const Vec& p) const override {
        Vec mpt = base_pt(p);
        double s = p[sdim()], t = p[sdim() + 1];
        double r = blend_.rho(s), rd = blend_.rho_d(s);
        int d = manifold().dim();
        Vec g(d);
        g.head(sdim()) = (1.0 - r) * p12_.grad_m(mpt, t) + r * p13_.grad_m(mpt, t);
        g[sdim()] = rd * (p13_.value(mpt, t) - p12_.value(mpt, t)) + C_ * profile_.hd(s);
        g[sdim() + 1] = (1.0 - r) * p12_.du(mpt, t) + r * p13_.du(mpt, t) + C_ * profile_.hd(t);
        return g;
    }

    Vec gradient(const Vec& p) const override { return manifold().project_tangent(p, gradient_raw(p)); }

    Mat hessian_raw(const Vec& p) const override {
        Vec mpt = base_pt(p);
        double s = p[sdim()], t = p[sdim() + 1];
        double r = blend_.rho(s), rd = blend_.rho_d(s), rdd = blend_.rho_dd(s);
        int d = manifold().dim(), n = sdim();
        Mat h = Mat::Zero(d, d);
        h.topLeftCorner(n, n) = (1.0 - r) * p12_.hess_mm(mpt, t) + r * p13_.hess_mm(mpt, t);
        Vec ms = rd * (p13_.grad_m(mpt, t) - p12_.grad_m(mpt, t));
        Vec mt = (1.0 - r) * p12_.dmu(mpt, t) + r * p13_.dmu(mpt, t);
        h.block(0, n, n, 1) = ms;
        h.block(n, 0, 1, n) = ms.transpose();
        h.block(0, n + 1, n, 1) = mt;
        h.block(n + 1, 0, 1, n) = mt.transpose();
        h(n, n) = rdd * (p13_.value(mpt, t) - p12_.value(mpt, t)) + C_ * profile_.hdd(s);
        double st = rd * (p13_.du(mpt, t) - p12_.du(mpt, t));
        h(n, n + 1) = st;
        h(n + 1, n) = st;
        h(n + 1, n + 1) = (1.0 - r) * p12_.duu(mpt, t) + r * p13_.duu(mpt, t) + C_ * profile_.hdd(t);
        return h;
    }

private:
    int sdim() const { return manifold().base_chart_dim(); }
    Vec base_pt(const Vec& p) const { return p.head(sdim()); }

    Blend blend_;
    Profile profile_;
    detail::TildePair p12_, p13_;
    double C_;
};

inline double pick_C_square(const SquareSpec& spec) {
    Blend blend(spec.epsilon);
    Profile prof(spec.profile);

    double lo = spec.epsilon, hi = 1.0 - spec.epsilon;
    double min_hd = detail::min_abs_profile_slope(prof, lo, hi);
    if (min_hd < 1e-9) throw ProfileDegenerate("|h'| drops below 1e-9 inside the blend window");

    detail::TildePair p12(spec.f1, spec.f2, &blend), p13(spec.f1, spec.f3, &blend);
    auto grid = detail::base_sample_grid(spec.f1->manifold(), spec.grid);
    const int ns = 16;
    double max_d = 0.0;
    for (int i = 0; i < ns; ++i) {
        double s = lo + (hi - lo) * (i + 0.5) / ns;
        double rd = blend.rho_d(s), r = blend.rho(s);
        for (int j = 0; j < ns; ++j) {
            double t = lo + (hi - lo) * (j + 0.5) / ns;
            for (const Vec& m : grid) {
                double ds = rd * (p13.value(m, t) - p12.value(m, t));
                double dt = (1.0 - r) * p12.du(m, t) + r * p13.du(m, t);
                max_d = std::max(max_d, std::max(std::abs(ds), std::abs(dt)));
            }
        }
    }
    return (1.0 + max_d) / min_hd;
}

struct SquareBuild {
    std::shared_ptr<const SquareField> square;
    std::shared_ptr<const InterpolationField> edge12, edge13, edge23;
    double C = 0.0;
};

// The edges reuse the square's C so edge dynamics agree with the square's
// boundary dynamics exactly.
inline SquareBuild build_square_field(const SquareSpec& spec) {
    SquareBuild out;
    out.C = spec.C ? *spec.C : pick_C_square(spec);
    if (out.C <= 0.0) throw std::runtime_error("square C must be positive");
    out.square = std::make_shared<const SquareField>(spec, out.C);
    auto edge = [&](FieldPtr a, FieldPtr b) {
        InterpolationSpec e;
        e.f1 = std::move(a);
        e.f2 = std::move(b);
        e.epsilon = spec.epsilon;
        e.profile = spec.profile;
        e.C = out.C;
        return build_interpolation(e);
    };
    out.edge12 = edge(spec.f1, spec.f2);
    out.edge13 = edge(spec.f1, spec.f3);
    out.edge23 = edge(spec.f2, spec.f3);
    detail::check_no_interior(*out.square, 2);
    return out;
}

}
