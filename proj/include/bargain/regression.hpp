#pragma once

// Linear regression with absorbed fixed effects: alternating-projection
// within transform, OLS and 2SLS, and one- or two-way cluster-robust
// covariance.

#include <bargain/errors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace bargain {

// Named numeric columns plus integer-coded factors. Numeric expressions may
// multiply columns ("a*b"); factor names may interact factors ("a#b").
class Frame {
public:
    std::size_t rows() const { return rows_; }

    void add(const std::string& name, std::vector<double> v) {
        check_len(v.size(), name);
        num_[name] = std::move(v);
    }
    void add_factor(const std::string& name, std::vector<std::int64_t> codes) {
        check_len(codes.size(), name);
        cat_[name] = std::move(codes);
    }
    void add_factor(const std::string& name, const std::vector<std::string>& labels) {
        check_len(labels.size(), name);
        std::unordered_map<std::string, std::int64_t> code;
        std::vector<std::int64_t> out(labels.size());
        for (std::size_t r = 0; r < labels.size(); ++r)
            out[r] = code.emplace(labels[r], static_cast<std::int64_t>(code.size())).first->second;
        cat_[name] = std::move(out);
    }
    bool has(const std::string& name) const { return num_.count(name) > 0; }

    std::vector<double> column(const std::string& expr) const {
        std::vector<double> out(rows_, 1.0);
        std::size_t start = 0;
        while (true) {
            const auto pos = expr.find('*', start);
            const std::string term = expr.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
            const auto it = num_.find(term);
            if (it == num_.end()) throw DataError("unknown column '" + term + "'");
            for (std::size_t r = 0; r < rows_; ++r) out[r] *= it->second[r];
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        return out;
    }

    std::vector<std::int64_t> factor(const std::string& expr) const {
        std::vector<std::vector<std::int64_t>> parts;
        std::size_t start = 0;
        while (true) {
            const auto pos = expr.find('#', start);
            const std::string term = expr.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
            const auto it = cat_.find(term);
            if (it == cat_.end()) throw DataError("unknown factor '" + term + "'");
            parts.push_back(it->second);
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        if (parts.size() == 1) return parts[0];
        std::map<std::vector<std::int64_t>, std::int64_t> code;
        std::vector<std::int64_t> out(rows_);
        std::vector<std::int64_t> key(parts.size());
        for (std::size_t r = 0; r < rows_; ++r) {
            for (std::size_t k = 0; k < parts.size(); ++k) key[k] = parts[k][r];
            out[r] = code.emplace(key, static_cast<std::int64_t>(code.size())).first->second;
        }
        return out;
    }

    Frame subset(const std::vector<std::size_t>& keep) const {
        Frame f;
        f.rows_ = keep.size();
        f.sized_ = true;
        for (const auto& [k, v] : num_) {
            std::vector<double> o(keep.size());
            for (std::size_t r = 0; r < keep.size(); ++r) o[r] = v[keep[r]];
            f.num_[k] = std::move(o);
        }
        for (const auto& [k, v] : cat_) {
            std::vector<std::int64_t> o(keep.size());
            for (std::size_t r = 0; r < keep.size(); ++r) o[r] = v[keep[r]];
            f.cat_[k] = std::move(o);
        }
        return f;
    }

private:
    void check_len(std::size_t n, const std::string& name) {
        if (!sized_) {
            rows_ = n;
            sized_ = true;
        } else if (n != rows_) {
            throw DataError("column '" + name + "' has " + std::to_string(n) + " rows, frame has " +
                            std::to_string(rows_));
        }
    }
    std::size_t rows_ = 0;
    bool sized_ = false;
    std::map<std::string, std::vector<double>> num_;
    std::map<std::string, std::vector<std::int64_t>> cat_;
};

// Compact 0..G-1 codes for a factor.
inline std::vector<std::int64_t> compact_codes(const std::vector<std::int64_t>& raw, std::int64_t* n_levels = nullptr) {
    std::unordered_map<std::int64_t, std::int64_t> code;
    std::vector<std::int64_t> out(raw.size());
    for (std::size_t r = 0; r < raw.size(); ++r)
        out[r] = code.emplace(raw[r], static_cast<std::int64_t>(code.size())).first->second;
    if (n_levels) *n_levels = static_cast<std::int64_t>(code.size());
    return out;
}

struct WithinResult {
    Eigen::MatrixXd data;
    int iterations = 0;
    double max_group_mean = 0.0;
};

// Removes weighted group means of every FE dimension by alternating
// projections until the largest remaining group mean is at most tol.
inline WithinResult within_transform(const Eigen::MatrixXd& data, const std::vector<std::vector<std::int64_t>>& fe,
                                     const Eigen::VectorXd& weights = {}, double tol = 1e-10, int max_iter = 10000) {
    const Eigen::Index n = data.rows();
    const Eigen::VectorXd w = weights.size() ? weights : Eigen::VectorXd::Ones(n);
    if (w.size() != n) throw DataError("within_transform: weight length mismatch");
    WithinResult out{data, 0, 0.0};
    if (fe.empty()) return out;
    std::vector<std::vector<std::int64_t>> codes;
    std::vector<std::int64_t> levels;
    for (const auto& f : fe) {
        if (static_cast<Eigen::Index>(f.size()) != n) throw DataError("within_transform: factor length mismatch");
        std::int64_t g = 0;
        codes.push_back(compact_codes(f, &g));
        levels.push_back(g);
    }
    std::vector<Eigen::VectorXd> wsum;
    for (std::size_t d = 0; d < fe.size(); ++d) {
        Eigen::VectorXd ws = Eigen::VectorXd::Zero(levels[d]);
        for (Eigen::Index r = 0; r < n; ++r) ws[codes[d][r]] += w[r];
        wsum.push_back(ws);
    }
    Eigen::MatrixXd& X = out.data;
    const Eigen::Index m = X.cols();
    auto sweep = [&](std::size_t d, bool apply) {
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(levels[d], m);
        for (Eigen::Index r = 0; r < n; ++r) mean.row(codes[d][r]) += w[r] * X.row(r);
        double worst = 0.0;
        for (Eigen::Index g = 0; g < levels[d]; ++g) {
            if (wsum[d][g] > 0.0) mean.row(g) /= wsum[d][g];
            worst = std::max(worst, mean.row(g).cwiseAbs().maxCoeff());
        }
        if (apply)
            for (Eigen::Index r = 0; r < n; ++r) X.row(r) -= mean.row(codes[d][r]);
        return worst;
    };
    for (out.iterations = 1; out.iterations <= max_iter; ++out.iterations) {
        for (std::size_t d = 0; d < fe.size(); ++d) sweep(d, true);
        if (fe.size() == 1) {
            out.max_group_mean = sweep(0, false);
            return out;
        }
        double worst = 0.0;
        for (std::size_t d = 0; d < fe.size(); ++d) worst = std::max(worst, sweep(d, false));
        out.max_group_mean = worst;
        if (worst <= tol) return out;
    }
    throw ConvergenceError("within_transform: alternating projections did not converge (max group mean " +
                               std::to_string(out.max_group_mean) + ")",
                           out.max_group_mean);
}

// Rows that sit alone in some level of some FE dimension, removed
// repeatedly until none are left.
inline std::vector<std::size_t> non_singleton_rows(const std::vector<std::vector<std::int64_t>>& fe, std::size_t n) {
    std::vector<char> keep(n, 1);
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& f : fe) {
            std::unordered_map<std::int64_t, int> count;
            for (std::size_t r = 0; r < n; ++r)
                if (keep[r]) ++count[f[r]];
            for (std::size_t r = 0; r < n; ++r)
                if (keep[r] && count[f[r]] == 1) {
                    keep[r] = 0;
                    changed = true;
                }
        }
    }
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < n; ++r)
        if (keep[r]) out.push_back(r);
    return out;
}

struct RegressionSpec {
    std::string dependent;
    std::vector<std::string> regressors;  // includes the endogenous ones
    std::vector<std::string> endogenous;  // subset of regressors
    std::vector<std::string> instruments; // excluded instruments
    std::vector<std::string> fixed_effects;
    std::vector<std::string> clusters; // zero, one or two dimensions
    std::string weight;
    bool intercept = true; // only used when there are no fixed effects
    bool drop_singletons = true;
    double fe_tol = 1e-10;
};

struct FitResult {
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    Eigen::MatrixXd vcov;
    double r2 = 0.0;
    std::size_t n_obs = 0;
    std::size_t n_singletons_dropped = 0;
    std::vector<std::size_t> n_clusters;
    // 2SLS only, one entry per endogenous regressor.
    std::vector<double> first_stage_f;
    std::vector<double> conditional_f;

    std::size_t index(const std::string& name) const {
        for (std::size_t k = 0; k < names.size(); ++k)
            if (names[k] == name) return k;
        throw DataError("no coefficient named '" + name + "'");
    }
    double b(const std::string& name) const { return coef[static_cast<Eigen::Index>(index(name))]; }
    double se(const std::string& name) const {
        const auto k = static_cast<Eigen::Index>(index(name));
        return std::sqrt(std::max(vcov(k, k), 0.0));
    }
};

namespace detail {

inline Eigen::MatrixXd psd_truncate(const Eigen::MatrixXd& V) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (V + V.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Sum over clusters of (X_g' u_g)(X_g' u_g)' times G/(G-1)*(N-1)/(N-K).
inline Eigen::MatrixXd cluster_meat(const Eigen::MatrixXd& S, const std::vector<std::int64_t>& cl, std::size_t n_params,
                                    std::size_t* n_groups) {
    std::int64_t G = 0;
    const auto code = compact_codes(cl, &G);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(G, S.cols());
    for (Eigen::Index r = 0; r < S.rows(); ++r) sums.row(code[r]) += S.row(r);
    if (n_groups) *n_groups = static_cast<std::size_t>(G);
    const double N = static_cast<double>(S.rows());
    const double K = static_cast<double>(n_params);
    const double c = (G / (G - 1.0)) * ((N - 1.0) / (N - K));
    return c * sums.transpose() * sums;
}

// Score rows S = X_hat .* u. Returns the robust meat under the requested
// clustering (HC1 without clusters).
inline Eigen::MatrixXd robust_meat(const Eigen::MatrixXd& S, const std::vector<std::vector<std::int64_t>>& clusters,
                                   std::size_t n_params, std::vector<std::size_t>* counts) {
    const double N = static_cast<double>(S.rows());
    const double K = static_cast<double>(n_params);
    if (clusters.empty()) return N / (N - K) * S.transpose() * S;
    std::vector<std::size_t> g(clusters.size());
    Eigen::MatrixXd meat = cluster_meat(S, clusters[0], n_params, &g[0]);
    if (clusters.size() == 2) {
        meat += cluster_meat(S, clusters[1], n_params, &g[1]);
        std::vector<std::int64_t> both(clusters[0].size());
        std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> code;
        for (std::size_t r = 0; r < both.size(); ++r)
            both[r] = code.emplace(std::make_pair(clusters[0][r], clusters[1][r]), static_cast<std::int64_t>(code.size()))
                          .first->second;
        meat -= cluster_meat(S, both, n_params, nullptr);
    }
    for (auto c : g)
        if (c < 2) throw DataError("cluster-robust covariance needs at least 2 clusters per dimension");
    if (counts) *counts = g;
    return meat;
}

inline void check_rank(const Eigen::MatrixXd& X, const std::vector<std::string>& names, const std::string& what) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) {
        std::string list;
        for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
        throw SingularError(what + " is rank deficient after fixed-effect absorption (columns: " + list + ")");
    }
}

// Wald statistic for H0: the given coefficients are zero, divided by their
// count; covariance is the robust one from the same clustering.
inline double robust_f(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<Eigen::Index>& test,
                       const std::vector<std::vector<std::int64_t>>& clusters) {
    const Eigen::MatrixXd XtX = X.transpose() * X;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(XtX);
    const Eigen::VectorXd b = ldlt.solve(X.transpose() * y);
    const Eigen::VectorXd u = y - X * b;
    const Eigen::MatrixXd S = X.array().colwise() * u.array();
    const Eigen::MatrixXd bread = ldlt.solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
    const Eigen::MatrixXd V =
        psd_truncate(bread * robust_meat(S, clusters, static_cast<std::size_t>(X.cols()), nullptr) * bread);
    const auto q = static_cast<Eigen::Index>(test.size());
    Eigen::VectorXd bt(q);
    Eigen::MatrixXd Vt(q, q);
    for (Eigen::Index a = 0; a < q; ++a) {
        bt[a] = b[test[a]];
        for (Eigen::Index c = 0; c < q; ++c) Vt(a, c) = V(test[a], test[c]);
    }
    const Eigen::VectorXd sol = Vt.completeOrthogonalDecomposition().solve(bt);
    return bt.dot(sol) / static_cast<double>(q);
}

} // namespace detail

// OLS when spec.endogenous is empty, otherwise 2SLS with spec.instruments as
// the excluded instruments.
inline FitResult fit(const RegressionSpec& spec, const Frame& frame) {
    for (const auto& e : spec.endogenous)
        if (std::find(spec.regressors.begin(), spec.regressors.end(), e) == spec.regressors.end())
            throw DataError("endogenous variable '" + e + "' is not among the regressors");
    if (spec.instruments.size() < spec.endogenous.size())
        throw DataError("2SLS needs at least as many instruments as endogenous regressors");
    if (spec.clusters.size() > 2) throw DataError("at most two cluster dimensions are supported");

    std::vector<std::vector<std::int64_t>> fe;
    for (const auto& f : spec.fixed_effects) fe.push_back(frame.factor(f));
    std::vector<std::size_t> keep(frame.rows());
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    if (spec.drop_singletons && !fe.empty()) keep = non_singleton_rows(fe, frame.rows());
    FitResult out;
    out.n_singletons_dropped = frame.rows() - keep.size();
    const Frame f = keep.size() == frame.rows() ? frame : frame.subset(keep);
    if (!fe.empty() && keep.size() != frame.rows()) {
        fe.clear();
        for (const auto& name : spec.fixed_effects) fe.push_back(f.factor(name));
    }
    const auto n = static_cast<Eigen::Index>(f.rows());
    if (n == 0) throw DataError("regression has no observations");

    std::vector<std::string> exog;
    for (const auto& r : spec.regressors)
        if (std::find(spec.endogenous.begin(), spec.endogenous.end(), r) == spec.endogenous.end()) exog.push_back(r);
    const bool add_const = fe.empty() && spec.intercept;

    // Column layout: y | regressors (exog then endog) | excluded instruments
    std::vector<std::string> xnames;
    if (add_const) xnames.push_back("(intercept)");
    for (const auto& r : exog) xnames.push_back(r);
    for (const auto& r : spec.endogenous) xnames.push_back(r);
    const auto kx = static_cast<Eigen::Index>(xnames.size());
    const auto kz_ex = static_cast<Eigen::Index>(spec.instruments.size());
    Eigen::MatrixXd M(n, 1 + kx + kz_ex);
    auto put = [&](Eigen::Index c, const std::vector<double>& v) {
        for (Eigen::Index r = 0; r < n; ++r) M(r, c) = v[r];
    };
    put(0, f.column(spec.dependent));
    Eigen::Index c = 1;
    if (add_const) M.col(c++).setOnes();
    for (const auto& r : exog) put(c++, f.column(r));
    for (const auto& r : spec.endogenous) put(c++, f.column(r));
    for (const auto& z : spec.instruments) put(c++, f.column(z));
    if (!M.allFinite()) throw DataError("regression data contain non-finite values");

    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    if (!spec.weight.empty()) {
        const auto wv = f.column(spec.weight);
        for (Eigen::Index r = 0; r < n; ++r) {
            if (!(wv[r] >= 0.0)) throw DataError("regression weights must be non-negative");
            w[r] = wv[r];
        }
    }
    if (!fe.empty()) M = within_transform(M, fe, w, spec.fe_tol).data;
    const Eigen::VectorXd sw = w.cwiseSqrt();
    M = M.array().colwise() * sw.array();

    const Eigen::VectorXd y = M.col(0);
    const Eigen::MatrixXd X = M.middleCols(1, kx);
    detail::check_rank(X, xnames, "regressor matrix");
    const auto n_exog = kx - static_cast<Eigen::Index>(spec.endogenous.size());
    Eigen::MatrixXd Xhat = X;
    Eigen::MatrixXd Z;
    if (!spec.endogenous.empty()) {
        Z.resize(n, n_exog + kz_ex);
        Z << X.leftCols(n_exog), M.rightCols(kz_ex);
        std::vector<std::string> znames(xnames.begin(), xnames.begin() + n_exog);
        znames.insert(znames.end(), spec.instruments.begin(), spec.instruments.end());
        detail::check_rank(Z, znames, "instrument matrix");
        const Eigen::MatrixXd Pi = Z.colPivHouseholderQr().solve(X);
        Xhat = Z * Pi;
        detail::check_rank(Xhat, xnames, "first-stage fitted regressors");
    }
    const Eigen::MatrixXd A = Xhat.transpose() * X;
    const Eigen::MatrixXd bread = A.inverse();
    out.coef = bread * (Xhat.transpose() * y);
    const Eigen::VectorXd u = y - X * out.coef;
    std::vector<std::vector<std::int64_t>> cl;
    for (const auto& name : spec.clusters) cl.push_back(f.factor(name));
    const Eigen::MatrixXd S = Xhat.array().colwise() * u.array();
    const Eigen::MatrixXd meat = detail::robust_meat(S, cl, static_cast<std::size_t>(kx), &out.n_clusters);
    out.vcov = bread * meat * bread.transpose();
    if (!cl.empty()) out.vcov = detail::psd_truncate(out.vcov);
    out.vcov = 0.5 * (out.vcov + out.vcov.transpose());
    out.names = xnames;
    out.n_obs = static_cast<std::size_t>(n);
    const double ybar = add_const ? sw.dot(y) / w.sum() : 0.0;
    const double sst = add_const ? (y - ybar * sw).squaredNorm() : y.squaredNorm();
    out.r2 = sst > 0.0 ? 1.0 - u.squaredNorm() / sst : 1.0;

    if (!spec.endogenous.empty()) {
        const auto p = static_cast<Eigen::Index>(spec.endogenous.size());
        std::vector<Eigen::Index> excluded;
        for (Eigen::Index k = 0; k < kz_ex; ++k) excluded.push_back(n_exog + k);
        for (Eigen::Index k = 0; k < p; ++k) {
            const Eigen::VectorXd xk = X.col(n_exog + k);
            out.first_stage_f.push_back(detail::robust_f(Z, xk, excluded, cl));
            if (p == 1) {
                out.conditional_f.push_back(out.first_stage_f.back());
                continue;
            }
            // Conditional first stage: partial out the other endogenous
            // regressors by 2SLS, then test the instruments on the residual.
            Eigen::MatrixXd others(n, p - 1);
            for (Eigen::Index a = 0, col = 0; a < p; ++a)
                if (a != k) others.col(col++) = X.col(n_exog + a);
            Eigen::MatrixXd W(n, n_exog + p - 1);
            W << X.leftCols(n_exog), others;
            const Eigen::MatrixXd What = Z * Z.colPivHouseholderQr().solve(W);
            const Eigen::VectorXd d = (What.transpose() * W).ldlt().solve(What.transpose() * xk);
            const Eigen::VectorXd e = xk - W * d;
            const double wald = detail::robust_f(Z, e, excluded, cl) * static_cast<double>(kz_ex);
            out.conditional_f.push_back(wald / static_cast<double>(kz_ex - p + 1));
        }
    }
    return out;
}

inline FitResult ols(RegressionSpec spec, const Frame& frame) {
    spec.endogenous.clear();
    spec.instruments.clear();
    return fit(spec, frame);
}

inline FitResult tsls(const RegressionSpec& spec, const Frame& frame) {
    if (spec.endogenous.empty()) throw DataError("tsls: no endogenous regressor given");
    return fit(spec, frame);
}

} // namespace bargain
