#pragma once

// Small box-constrained optimizers: Nelder-Mead on a scalar objective and
// Levenberg-Marquardt on a residual vector.

#include <bargain/errors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace bargain {

struct Box {
    Eigen::VectorXd lower, upper;

    static Box unbounded(Eigen::Index n) {
        const double inf = std::numeric_limits<double>::infinity();
        return {Eigen::VectorXd::Constant(n, -inf), Eigen::VectorXd::Constant(n, inf)};
    }
    Eigen::VectorXd project(const Eigen::VectorXd& v) const { return v.cwiseMax(lower).cwiseMin(upper); }
    bool on_boundary(const Eigen::VectorXd& v, double tol = 1e-8) const {
        for (Eigen::Index k = 0; k < v.size(); ++k)
            if (std::abs(v[k] - lower[k]) <= tol || std::abs(v[k] - upper[k]) <= tol) return true;
        return false;
    }
};

struct OptimResult {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;
using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct NelderMeadOptions {
    int max_iter = 2000;
    double xtol = 1e-10;
    double ftol = 1e-14;
    double initial_step = 0.1;
};

// Points are projected onto the box before evaluation; non-finite values
// count as +inf so the simplex walks away from them.
inline OptimResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const Box& box,
                               const NelderMeadOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    OptimResult out;
    auto eval = [&](const Eigen::VectorXd& v) {
        ++out.evaluations;
        const double y = f(box.project(v));
        return std::isfinite(y) ? y : std::numeric_limits<double>::infinity();
    };
    std::vector<Eigen::VectorXd> pts(n + 1, box.project(x0));
    std::vector<double> val(n + 1);
    for (Eigen::Index k = 0; k < n; ++k) {
        Eigen::VectorXd v = pts[0];
        double h = opt.initial_step * std::max(1.0, std::abs(v[k]));
        if (v[k] + h > box.upper[k]) h = -h;
        v[k] += h;
        pts[k + 1] = box.project(v);
    }
    for (Eigen::Index k = 0; k <= n; ++k) val[k] = eval(pts[k]);
    std::vector<Eigen::Index> idx(n + 1);
    for (out.iterations = 0; out.iterations < opt.max_iter; ++out.iterations) {
        for (Eigen::Index k = 0; k <= n; ++k) idx[k] = k;
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return val[a] < val[b]; });
        const auto best = idx[0], worst = idx[n], second = idx[n - 1];
        double spread = 0.0;
        for (Eigen::Index k = 1; k <= n; ++k) spread = std::max(spread, (pts[idx[k]] - pts[best]).cwiseAbs().maxCoeff());
        if (spread <= opt.xtol || std::abs(val[worst] - val[best]) <= opt.ftol * (1.0 + std::abs(val[best]))) {
            out.converged = true;
            break;
        }
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (Eigen::Index k = 0; k < n; ++k) centroid += pts[idx[k]];
        centroid /= static_cast<double>(n);
        const Eigen::VectorXd xr = box.project(centroid + (centroid - pts[worst]));
        const double fr = eval(xr);
        if (fr < val[best]) {
            const Eigen::VectorXd xe = box.project(centroid + 2.0 * (centroid - pts[worst]));
            const double fe = eval(xe);
            if (fe < fr) { pts[worst] = xe; val[worst] = fe; }
            else { pts[worst] = xr; val[worst] = fr; }
        } else if (fr < val[second]) {
            pts[worst] = xr;
            val[worst] = fr;
        } else {
            const bool outside = fr < val[worst];
            const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                               : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
            const double fc = eval(xc);
            if (fc < std::min(fr, val[worst])) {
                pts[worst] = xc;
                val[worst] = fc;
            } else {
                for (Eigen::Index k = 1; k <= n; ++k) {
                    const auto m = idx[k];
                    pts[m] = pts[best] + 0.5 * (pts[m] - pts[best]);
                    val[m] = eval(pts[m]);
                }
            }
        }
    }
    const auto best = std::min_element(val.begin(), val.end()) - val.begin();
    out.x = box.project(pts[best]);
    out.value = val[best];
    return out;
}

// Forward-difference Jacobian with steps scaled to the parameter and kept
// inside the box.
inline Eigen::MatrixXd numeric_jacobian(const ResidualFn& r, const Eigen::VectorXd& x, const Eigen::VectorXd& r0,
                                        const Box& box, double rel_step = 1e-7) {
    Eigen::MatrixXd J(r0.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        double h = rel_step * std::max(1.0, std::abs(x[k]));
        Eigen::VectorXd xp = x;
        if (x[k] + h > box.upper[k]) h = -h;
        xp[k] += h;
        J.col(k) = (r(xp) - r0) / h;
    }
    return J;
}

struct LevenbergMarquardtOptions {
    int max_iter = 200;
    double gtol = 1e-12; // projected-gradient infinity norm
    double xtol = 1e-12;
    double ftol = 1e-15;
};

// Projected Levenberg-Marquardt on 0.5*|r(x)|^2. Trial steps are projected
// onto the box; bound-active coordinates are frozen when the gradient pushes
// outward.
inline OptimResult levenberg_marquardt(const ResidualFn& r, const Eigen::VectorXd& x0, const Box& box,
                                       const LevenbergMarquardtOptions& opt = {}) {
    OptimResult out;
    Eigen::VectorXd x = box.project(x0);
    Eigen::VectorXd rv = r(x);
    ++out.evaluations;
    double f = rv.squaredNorm();
    double lambda = 1e-3;
    const Eigen::Index n = x.size();
    for (out.iterations = 0; out.iterations < opt.max_iter; ++out.iterations) {
        const Eigen::MatrixXd J = numeric_jacobian(r, x, rv, box);
        out.evaluations += static_cast<int>(n);
        const Eigen::VectorXd g = J.transpose() * rv;
        std::vector<char> active(n, 0);
        double pg = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            const bool at_lo = x[k] <= box.lower[k] && g[k] > 0.0;
            const bool at_hi = x[k] >= box.upper[k] && g[k] < 0.0;
            active[k] = at_lo || at_hi;
            if (!active[k]) pg = std::max(pg, std::abs(g[k]));
        }
        if (pg <= opt.gtol) {
            out.converged = true;
            break;
        }
        Eigen::MatrixXd A = J.transpose() * J;
        bool accepted = false;
        for (int tries = 0; tries < 40 && !accepted; ++tries) {
            Eigen::MatrixXd M = A;
            for (Eigen::Index k = 0; k < n; ++k) M(k, k) += lambda * std::max(A(k, k), 1e-12);
            Eigen::VectorXd rhs = -g;
            for (Eigen::Index k = 0; k < n; ++k)
                if (active[k]) {
                    M.row(k).setZero();
                    M.col(k).setZero();
                    M(k, k) = 1.0;
                    rhs[k] = 0.0;
                }
            const Eigen::VectorXd step = M.ldlt().solve(rhs);
            const Eigen::VectorXd xn = box.project(x + step);
            const Eigen::VectorXd rn = r(xn);
            ++out.evaluations;
            const double fn = rn.allFinite() ? rn.squaredNorm() : std::numeric_limits<double>::infinity();
            if (fn < f) {
                const double dx = (xn - x).cwiseAbs().maxCoeff();
                const double df = f - fn;
                x = xn;
                rv = rn;
                f = fn;
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                if (dx <= opt.xtol * (1.0 + x.cwiseAbs().maxCoeff()) || df <= opt.ftol * (1.0 + f)) {
                    out.converged = true;
                    out.x = x;
                    out.value = f;
                    return out;
                }
            } else {
                lambda *= 4.0;
            }
        }
        if (!accepted) {
            // No descent along any damped direction: stationary up to rounding.
            out.converged = true;
            break;
        }
    }
    out.x = x;
    out.value = f;
    return out;
}

} // namespace bargain
