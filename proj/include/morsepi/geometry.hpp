#pragma once

// Model surfaces and their products with a line or a unit square.
// Torus charts are R^2 with unit periods; the sphere is carried in ambient
// R^3 coordinates with |p| = 1. Product coordinates append s (and t for the
// square factor) after the base coordinates.
//
// Flow code works on the universal cover of periodic directions: points are
// not wrapped during integration, and `displacement` is always lattice-aware,
// so landing labels can carry their deck-transformation offset.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "morsepi/expr.hpp"

namespace morsepi {

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 5, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 5, 5>;
using IVec = Eigen::Matrix<int, Eigen::Dynamic, 1, 0, 5, 1>;

struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& m) : std::runtime_error(m) {}
};

enum class BaseKind { Torus, Sphere };

class Manifold {
public:
    static Manifold torus() { return Manifold(BaseKind::Torus, 0); }
    static Manifold sphere() { return Manifold(BaseKind::Sphere, 0); }
    static Manifold product_r(const Manifold& base) {
        if (base.extra_ != 0) throw GeometryError("product base must be a plain surface");
        return Manifold(base.base_, 1);
    }
    static Manifold product_square(const Manifold& base) {
        if (base.extra_ != 0) throw GeometryError("product base must be a plain surface");
        return Manifold(base.base_, 2);
    }

    BaseKind base_kind() const { return base_; }
    int extra_dims() const { return extra_; }
    int base_chart_dim() const { return base_ == BaseKind::Torus ? 2 : 3; }
    int dim() const { return base_chart_dim() + extra_; }
    // Dimension as a manifold (sphere loses one chart coordinate).
    int intrinsic_dim() const { return 2 + extra_; }
    bool has_sphere_base() const { return base_ == BaseKind::Sphere; }
    bool periodic(int i) const { return base_ == BaseKind::Torus && i < 2; }
    Manifold base() const { return Manifold(base_, 0); }

    bool operator==(const Manifold& o) const { return base_ == o.base_ && extra_ == o.extra_; }

    // Wrap periodic coordinates into [0,1) and re-project the sphere part.
    Vec normalize(Vec p) const {
        check_dim(p);
        if (base_ == BaseKind::Torus) {
            for (int i = 0; i < 2; ++i) p[i] -= std::floor(p[i]);
        } else {
            project_sphere(p);
        }
        return p;
    }

    // Project only the sphere factor; periodic coordinates are left on the
    // cover. Safe to call every integration step.
    Vec renormalize_cover(Vec p) const {
        if (base_ == BaseKind::Sphere) project_sphere(p);
        return p;
    }

    // Shortest representative of q - p (lattice-aware in periodic directions).
    Vec displacement(const Vec& p, const Vec& q) const {
        check_dim(p);
        check_dim(q);
        Vec d = q - p;
        if (base_ == BaseKind::Torus) {
            for (int i = 0; i < 2; ++i) d[i] -= std::round(d[i]);
        }
        return d;
    }

    double distance(const Vec& p, const Vec& q) const { return displacement(p, q).norm(); }

    // Integer lattice offset such that q ~ cp + offset in the cover, for
    // labels on the universal cover. Zero in non-periodic directions.
    IVec lift_offset(const Vec& cp, const Vec& q) const {
        IVec off = IVec::Zero(dim());
        if (base_ == BaseKind::Torus) {
            for (int i = 0; i < 2; ++i) off[i] = static_cast<int>(std::lround(q[i] - cp[i]));
        }
        return off;
    }

    Vec apply_offset(const Vec& cp, const IVec& off) const {
        Vec p = cp;
        for (int i = 0; i < dim(); ++i) p[i] += off[i];
        return p;
    }

    // Remove the normal component of v at p (sphere part only).
    Vec project_tangent(const Vec& p, Vec v) const {
        if (base_ == BaseKind::Sphere) {
            Eigen::Vector3d n = p.head<3>().normalized();
            double c = v.head<3>().dot(n);
            v.head<3>() -= c * n;
        }
        return v;
    }

    // Orthonormal basis of the tangent space at p, expressed in chart/ambient
    // coordinates. Deterministic in p.
    std::vector<Vec> tangent_frame(const Vec& p) const {
        std::vector<Vec> frame;
        int d = dim();
        if (base_ == BaseKind::Torus) {
            for (int i = 0; i < d; ++i) {
                Vec e = Vec::Zero(d);
                e[i] = 1.0;
                frame.push_back(e);
            }
            return frame;
        }
        Eigen::Vector3d n = p.head<3>().normalized();
        int smallest = 0;
        for (int i = 1; i < 3; ++i)
            if (std::abs(n[i]) < std::abs(n[smallest])) smallest = i;
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e[smallest] = 1.0;
        Eigen::Vector3d u = (e - e.dot(n) * n).normalized();
        Eigen::Vector3d w = n.cross(u);
        Vec fu = Vec::Zero(d), fw = Vec::Zero(d);
        fu.head<3>() = u;
        fw.head<3>() = w;
        frame.push_back(fu);
        frame.push_back(fw);
        for (int i = 3; i < d; ++i) {
            Vec ei = Vec::Zero(d);
            ei[i] = 1.0;
            frame.push_back(ei);
        }
        return frame;
    }

private:
    Manifold(BaseKind b, int extra) : base_(b), extra_(extra) {}

    void check_dim(const Vec& p) const {
        if (p.size() != dim()) throw GeometryError("point dimension mismatch");
    }

    static void project_sphere(Vec& p) {
        double n = p.head<3>().norm();
        if (n == 0.0) throw GeometryError("cannot project zero vector to sphere");
        p.head<3>() /= n;
    }

    BaseKind base_;
    int extra_;
};

class ScalarField {
public:
    explicit ScalarField(Manifold m) : manifold_(m) {}
    virtual ~ScalarField() = default;

    const Manifold& manifold() const { return manifold_; }

    virtual double value(const Vec& p) const = 0;
    // Chart/ambient gradient with the sphere normal component removed.
    virtual Vec gradient(const Vec& p) const = 0;
    // Raw chart/ambient second derivatives; intrinsic correction is applied
    // by intrinsic_hessian below.
    virtual Mat hessian_raw(const Vec& p) const = 0;
    // Raw chart/ambient gradient (no tangent projection).
    virtual Vec gradient_raw(const Vec& p) const = 0;

private:
    Manifold manifold_;
};

using FieldPtr = std::shared_ptr<const ScalarField>;

struct NotPeriodic : GeometryError {
    explicit NotPeriodic(const std::string& m) : GeometryError(m) {}
};

// Field given by a chart expression. Gradient and Hessian tapes are derived
// symbolically at construction.
class ExprField : public ScalarField {
public:
    ExprField(Manifold m, const Expr& e) : ScalarField(m), expr_(e) {
        int d = manifold().dim();
        static const Var chart_vars[5] = {Var::X, Var::Y, Var::Z, Var::S, Var::T};
        // Sphere charts use x,y,z; torus charts x,y; products append s,t.
        vars_.clear();
        int base_n = manifold().base_chart_dim();
        for (int i = 0; i < base_n; ++i) vars_.push_back(chart_vars[i]);
        if (manifold().extra_dims() >= 1) vars_.push_back(Var::S);
        if (manifold().extra_dims() >= 2) vars_.push_back(Var::T);

        auto used = e.used_vars();
        for (int i = 0; i < kNumVars; ++i) {
            bool allowed = false;
            for (Var v : vars_)
                if (static_cast<int>(v) == i) allowed = true;
            if (used[static_cast<size_t>(i)] && !allowed)
                throw GeometryError(std::string("variable '") + var_name(static_cast<Var>(i)) +
                                    "' not available on this manifold");
        }

        val_ = e.compile();
        grads_.resize(static_cast<size_t>(d));
        hess_.resize(static_cast<size_t>(d));
        std::vector<Expr> dfirst;
        for (int i = 0; i < d; ++i) {
            Expr gi = e.diff(vars_[static_cast<size_t>(i)]);
            dfirst.push_back(gi);
            grads_[static_cast<size_t>(i)] = gi.compile();
        }
        for (int i = 0; i < d; ++i) {
            hess_[static_cast<size_t>(i)].resize(static_cast<size_t>(d));
            for (int j = 0; j < d; ++j)
                hess_[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                    dfirst[static_cast<size_t>(i)].diff(vars_[static_cast<size_t>(j)]).compile();
        }

        if (m.base_kind() == BaseKind::Torus) check_periodicity();
    }

    const Expr& expr() const { return expr_; }

    double value(const Vec& p) const override {
        double buf[kNumVars];
        fill(p, buf);
        return val_.eval(buf);
    }

    Vec gradient_raw(const Vec& p) const override {
        double buf[kNumVars];
        fill(p, buf);
        int d = manifold().dim();
        Vec g(d);
        for (int i = 0; i < d; ++i) g[i] = grads_[static_cast<size_t>(i)].eval(buf);
        return g;
    }

    Vec gradient(const Vec& p) const override {
        return manifold().project_tangent(p, gradient_raw(p));
    }

    Mat hessian_raw(const Vec& p) const override {
        double buf[kNumVars];
        fill(p, buf);
        int d = manifold().dim();
        Mat h(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) h(i, j) = hess_[static_cast<size_t>(i)][static_cast<size_t>(j)].eval(buf);
        return h;
    }

private:
    void fill(const Vec& p, double* buf) const {
        for (int i = 0; i < kNumVars; ++i) buf[i] = 0.0;
        for (size_t i = 0; i < vars_.size(); ++i) buf[static_cast<int>(vars_[i])] = p[static_cast<Eigen::Index>(i)];
    }

    // Unit-period check: sample the raw expression at p and p + e_i.
    void check_periodicity() const {
        int d = manifold().dim();
        for (int axis = 0; axis < 2; ++axis) {
            for (int k = 0; k < 16; ++k) {
                Vec p(d);
                // deterministic low-discrepancy samples
                for (int i = 0; i < d; ++i) p[i] = std::fmod(0.5 + 0.37 * (k + 1) * (i + 1), 1.0);
                Vec q = p;
                q[axis] += 1.0;
                if (std::abs(value(p) - value(q)) > 1e-10)
                    throw NotPeriodic("field is not 1-periodic in " + std::string(var_name(static_cast<Var>(axis))));
            }
        }
    }

    Expr expr_;
    std::vector<Var> vars_;
    CompiledExpr val_;
    std::vector<CompiledExpr> grads_;
    std::vector<std::vector<CompiledExpr>> hess_;
};

inline FieldPtr make_expr_field(Manifold m, const std::string& src) {
    return std::make_shared<ExprField>(m, parse_expr(src));
}

struct NotNearCritical : GeometryError {
    explicit NotNearCritical(double gnorm)
        : GeometryError("hessian requested away from a critical point (|grad| = " + std::to_string(gnorm) + ")") {}
};

inline Vec grad(const ScalarField& f, const Vec& p) { return f.gradient(p); }

// Intrinsic Hessian: orthonormal tangent frame plus the symmetric matrix in
// that frame. On a sphere part the second fundamental form contributes a
// -(grad . n) correction on tangential pairs.
inline std::pair<std::vector<Vec>, Mat> intrinsic_hessian(const ScalarField& f, const Vec& p) {
    const Manifold& m = f.manifold();
    std::vector<Vec> frame = m.tangent_frame(p);
    int n = static_cast<int>(frame.size());
    Mat raw = f.hessian_raw(p);
    Mat h(n, n);
    double normal_deriv = 0.0;
    if (m.has_sphere_base()) {
        Eigen::Vector3d nrm = p.head<3>().normalized();
        normal_deriv = f.gradient_raw(p).head<3>().dot(nrm);
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double v = frame[static_cast<size_t>(i)].dot(raw * frame[static_cast<size_t>(j)]);
            if (m.has_sphere_base()) {
                double tangential = frame[static_cast<size_t>(i)].head(3).dot(frame[static_cast<size_t>(j)].head(3));
                v -= normal_deriv * tangential;
            }
            h(i, j) = v;
        }
    }
    return {frame, h};
}

// Public Hessian, gated: only meaningful near critical points.
inline Mat hessian(const ScalarField& f, const Vec& p) {
    double g = f.gradient(p).norm();
    if (g > 1e-6) throw NotNearCritical(g);
    return intrinsic_hessian(f, p).second;
}

}
