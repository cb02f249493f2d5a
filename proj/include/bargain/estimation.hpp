#pragma once

// Structural estimation of (phi, theta) from within-exporter log price gaps:
// nonlinear least squares, two-step GMM with instruments, the theta = 1
// restricted estimator, and logistic pair-specific bargaining power.

#include <bargain/errors.hpp>
#include <bargain/optimize.hpp>
#include <bargain/panel.hpp>
#include <bargain/parallel.hpp>
#include <bargain/pricing.hpp>
#include <bargain/regression.hpp>

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace bargain {

// Observed log price gap between two buyers of the same exporter, product
// and year, with the shares (and covariates) of both matches.
struct PairMoment {
    std::string exporter, product;
    int year = 0;
    std::string buyer_j, buyer_l;
    std::size_t row_j = 0, row_l = 0; // indices into the source panel
    double gap = 0.0;                 // ln p_ij - ln p_il
    BilateralShares sh_j, sh_l;
    std::vector<double> cov_j, cov_l;
};

// One moment per unordered buyer pair within each (exporter, product, year);
// buyers are ordered by id so that j < l.
inline std::vector<PairMoment> build_pair_moments(const SharePanel& panel) {
    std::map<std::tuple<std::string, std::string, int>, std::vector<std::size_t>> cells;
    for (std::size_t r = 0; r < panel.rows.size(); ++r) {
        const auto& row = panel.rows[r];
        cells[{row.exporter, row.product, row.year}].push_back(r);
    }
    std::vector<PairMoment> out;
    for (auto& [key, idx] : cells) {
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return panel.rows[a].importer < panel.rows[b].importer; });
        for (std::size_t a = 0; a < idx.size(); ++a) {
            for (std::size_t b = a + 1; b < idx.size(); ++b) {
                const auto& rj = panel.rows[idx[a]];
                const auto& rl = panel.rows[idx[b]];
                if (rj.importer == rl.importer)
                    throw DataError("duplicate (exporter, importer, product, year) row for " + rj.exporter + "->" +
                                    rj.importer);
                PairMoment m;
                m.exporter = rj.exporter;
                m.product = rj.product;
                m.year = rj.year;
                m.buyer_j = rj.importer;
                m.buyer_l = rl.importer;
                m.row_j = idx[a];
                m.row_l = idx[b];
                m.gap = std::log(rj.price) - std::log(rl.price);
                m.sh_j = {rj.s, rj.x};
                m.sh_l = {rl.s, rl.x};
                m.cov_j = rj.covariates;
                m.cov_l = rl.covariates;
                out.push_back(std::move(m));
            }
        }
    }
    return out;
}

// exp(X kappa) / (1 + exp(X kappa)) with X = (1, covariates).
inline double logistic_phi(const std::vector<double>& covariates, const std::vector<double>& kappa) {
    if (kappa.size() != covariates.size() + 1)
        throw DomainError("logistic_phi: kappa needs one entry per covariate plus a constant");
    double xb = kappa[0];
    for (std::size_t k = 0; k < covariates.size(); ++k) xb += kappa[k + 1] * covariates[k];
    if (!std::isfinite(xb)) throw DomainError("logistic_phi: non-finite index");
    return logistic(xb);
}

// Reference coefficients for the pair-specific form (no fixed effects): constant,
// log longevity, log transactions, multiple-product dummy, lagged log
// relative outside option.
inline std::vector<double> reference_kappa() { return {4.118, -0.360, -0.264, -0.180, -0.235}; }
inline std::vector<std::string> reference_kappa_names() {
    return {"constant", "longevity", "transactions", "multi_product", "lagged_outside_option"};
}

enum class PhiForm { Constant, Logistic };

// How the parameter vector maps to (phi per match, theta).
struct ModelSpec {
    PhiForm phi_form = PhiForm::Constant;
    bool logit_phi = true;      // constant phi estimated as ln(phi/(1-phi))
    bool theta_free = true;
    double theta_fixed = 1.0;   // used when theta_free is false
    std::size_t n_covariates = 0;

    std::size_t n_phi() const { return phi_form == PhiForm::Constant ? 1 : n_covariates + 1; }
    std::size_t n_params() const { return n_phi() + (theta_free ? 1 : 0); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        if (phi_form == PhiForm::Constant) out.push_back(logit_phi ? "phi_bar" : "phi");
        else {
            out.push_back("kappa_constant");
            for (std::size_t k = 0; k < n_covariates; ++k) out.push_back("kappa_" + std::to_string(k + 1));
        }
        if (theta_free) out.push_back("theta");
        return out;
    }
    double theta(const Eigen::VectorXd& par) const { return theta_free ? par[static_cast<Eigen::Index>(n_phi())] : theta_fixed; }
    double phi(const Eigen::VectorXd& par, const std::vector<double>& cov) const {
        if (phi_form == PhiForm::Constant) return logit_phi ? logistic(par[0]) : par[0];
        double xb = par[0];
        for (std::size_t k = 0; k < n_covariates; ++k) xb += par[static_cast<Eigen::Index>(k + 1)] * cov[k];
        return logistic(xb);
    }
};

namespace detail {

// Parameter-free pieces of the markup, cached per match side.
struct MarkupCache {
    double mu_olig, lambda, x;
};

inline MarkupCache markup_cache(const BilateralShares& sh, const CalibratedParams& p) {
    const double eps = residual_demand_elasticity(sh, p);
    return {oligopoly_markup(eps), lambda_components(sh, p).lambda, sh.x};
}

inline double fast_log_markup(const MarkupCache& c, double phi, double theta) {
    const double md = oligopsony_markdown(c.x, theta);
    const double w = phi * c.lambda / ((1.0 - phi) + phi * c.lambda);
    return std::log((1.0 - w) * c.mu_olig + w * md);
}

} // namespace detail

// Residuals g_m = gap_m - (ln mu_j - ln mu_l) as a function of parameters.
class MomentModel {
public:
    MomentModel(const std::vector<PairMoment>& moments, const ModelSpec& spec, const CalibratedParams& p)
        : moments_(moments), spec_(spec) {
        p.validate();
        if (moments.empty()) throw DataError("no pair moments: every exporter needs at least two buyers");
        for (const auto& m : moments) {
            if (spec.phi_form == PhiForm::Logistic &&
                (m.cov_j.size() != spec.n_covariates || m.cov_l.size() != spec.n_covariates))
                throw DataError("pair moment covariate count does not match the model");
            cache_j_.push_back(detail::markup_cache(m.sh_j, p));
            cache_l_.push_back(detail::markup_cache(m.sh_l, p));
        }
    }

    std::size_t size() const { return moments_.size(); }
    const ModelSpec& spec() const { return spec_; }

    Eigen::VectorXd residuals(const Eigen::VectorXd& par) const {
        const double theta = spec_.theta(par);
        Eigen::VectorXd r(static_cast<Eigen::Index>(moments_.size()));
        const bool constant = spec_.phi_form == PhiForm::Constant;
        const double phi_c = constant ? spec_.phi(par, {}) : 0.0;
        for (std::size_t k = 0; k < moments_.size(); ++k) {
            const double pj = constant ? phi_c : spec_.phi(par, moments_[k].cov_j);
            const double pl = constant ? phi_c : spec_.phi(par, moments_[k].cov_l);
            r[static_cast<Eigen::Index>(k)] = moments_[k].gap - (detail::fast_log_markup(cache_j_[k], pj, theta) -
                                                                 detail::fast_log_markup(cache_l_[k], pl, theta));
        }
        return r;
    }

    // Central-difference Jacobian of the residuals.
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& par, const Box& box) const {
        Eigen::MatrixXd J(static_cast<Eigen::Index>(size()), par.size());
        for (Eigen::Index k = 0; k < par.size(); ++k) {
            const double h = 1e-6 * std::max(1.0, std::abs(par[k]));
            Eigen::VectorXd a = par, b = par;
            a[k] = std::min(par[k] + h, box.upper[k]);
            b[k] = std::max(par[k] - h, box.lower[k]);
            J.col(k) = (residuals(a) - residuals(b)) / (a[k] - b[k]);
        }
        return J;
    }

private:
    const std::vector<PairMoment>& moments_;
    ModelSpec spec_;
    std::vector<detail::MarkupCache> cache_j_, cache_l_;
};

struct ImpliedPhi {
    double mean = 0.0, median = 0.0, se_mean = 0.0, se_median = 0.0;
};

struct EstimateResult {
    std::string method;
    ModelSpec spec;
    std::vector<std::string> names;
    Eigen::VectorXd estimate;
    Eigen::MatrixXd vcov;
    double theta = 1.0;
    double phi = 0.0; // constant-phi models only
    std::vector<double> kappa;
    ImpliedPhi implied;
    double objective = 0.0;
    bool converged = false;
    bool boundary = false;
    int starts = 0;
    int starts_converged = 0;
    std::size_t n_moments = 0;
    std::size_t degenerate_moments = 0;
    std::size_t n_instruments = 0;
    std::vector<std::string> instruments;
    std::vector<std::string> notes;

    double se(std::size_t k) const { return std::sqrt(std::max(vcov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)), 0.0)); }
};

struct NlsOptions {
    double phi_lower = 0.01, phi_upper = 0.99;
    double theta_lower = 0.01, theta_upper = 1.0;
    double kappa_bound = 30.0;
    bool logit_phi = false;
    PhiForm phi_form = PhiForm::Constant;
    bool theta_free = true;
    double theta_fixed = 1.0;
    int simplex_iterations = 400;
    std::vector<double> kappa_start; // default: zeros
};

namespace detail {

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline Box parameter_box(const ModelSpec& spec, const NlsOptions& o) {
    Box b = Box::unbounded(static_cast<Eigen::Index>(spec.n_params()));
    if (spec.phi_form == PhiForm::Constant) {
        b.lower[0] = spec.logit_phi ? logit(o.phi_lower) : o.phi_lower;
        b.upper[0] = spec.logit_phi ? logit(o.phi_upper) : o.phi_upper;
    } else {
        for (std::size_t k = 0; k < spec.n_phi(); ++k) {
            b.lower[static_cast<Eigen::Index>(k)] = -o.kappa_bound;
            b.upper[static_cast<Eigen::Index>(k)] = o.kappa_bound;
        }
    }
    if (spec.theta_free) {
        b.lower[b.lower.size() - 1] = o.theta_lower;
        b.upper[b.upper.size() - 1] = o.theta_upper;
    }
    return b;
}

// Eight starting points spread over the box; fewer when theta is fixed.
inline std::vector<Eigen::VectorXd> start_points(const ModelSpec& spec, const NlsOptions& o) {
    std::vector<Eigen::VectorXd> out;
    const std::vector<double> phis = spec.theta_free ? std::vector<double>{0.2, 0.5, 0.8, 0.95}
                                                     : std::vector<double>{0.1, 0.3, 0.5, 0.7, 0.9, 0.97};
    const std::vector<double> thetas = spec.theta_free ? std::vector<double>{0.3, 0.8} : std::vector<double>{0.0};
    for (double ph : phis) {
        for (double th : thetas) {
            Eigen::VectorXd v(static_cast<Eigen::Index>(spec.n_params()));
            if (spec.phi_form == PhiForm::Constant) {
                v[0] = spec.logit_phi ? logit(ph) : ph;
            } else {
                for (std::size_t k = 0; k < spec.n_phi(); ++k)
                    v[static_cast<Eigen::Index>(k)] = k < o.kappa_start.size() ? o.kappa_start[k] : 0.0;
                v[0] += o.kappa_start.empty() ? logit(ph) : 0.0;
            }
            if (spec.theta_free) v[v.size() - 1] = th;
            out.push_back(v);
        }
    }
    return out;
}

// Simplex from every start, then Levenberg-Marquardt polish of the best.
inline OptimResult minimize_least_squares(const ResidualFn& r, const std::vector<Eigen::VectorXd>& starts, const Box& box,
                                          int simplex_iterations, int* n_converged) {
    const Objective f = [&](const Eigen::VectorXd& v) { return r(v).squaredNorm(); };
    NelderMeadOptions nm;
    nm.max_iter = simplex_iterations;
    nm.xtol = 1e-7;
    nm.ftol = 1e-12;
    nm.initial_step = 0.15;
    OptimResult best;
    int conv = 0;
    for (const auto& s : starts) {
        const auto res = nelder_mead(f, s, box, nm);
        if (res.converged) ++conv;
        if (res.value < best.value) best = res;
    }
    if (n_converged) *n_converged = conv;
    auto polished = levenberg_marquardt(r, best.x, box);
    if (polished.value > best.value) {
        best.converged = best.converged || polished.converged;
        return best;
    }
    polished.converged = polished.converged || best.converged;
    return polished;
}

inline std::size_t count_degenerate(const std::vector<PairMoment>& moments) {
    std::size_t n = 0;
    for (const auto& m : moments)
        if (m.sh_j.s == m.sh_l.s && m.sh_j.x == m.sh_l.x) ++n;
    return n;
}

inline void fill_phi_fields(EstimateResult& res) {
    const auto& sp = res.spec;
    res.theta = sp.theta(res.estimate);
    if (sp.phi_form == PhiForm::Constant) {
        res.phi = sp.phi(res.estimate, {});
        const double se0 = res.se(0);
        const double d = sp.logit_phi ? res.phi * (1.0 - res.phi) : 1.0;
        res.implied = {res.phi, res.phi, d * se0, d * se0};
    } else {
        res.kappa.assign(res.estimate.data(), res.estimate.data() + sp.n_phi());
    }
}

} // namespace detail

// Sum of squared residuals over the box 0.01 <= phi <= 0.99, 0.01 <= theta <= 1.
inline EstimateResult nls_joint(const std::vector<PairMoment>& moments, const CalibratedParams& p,
                                const NlsOptions& opt = {}) {
    ModelSpec spec;
    spec.phi_form = opt.phi_form;
    spec.logit_phi = opt.logit_phi;
    spec.theta_free = opt.theta_free;
    spec.theta_fixed = opt.theta_fixed;
    if (spec.phi_form == PhiForm::Logistic) spec.n_covariates = moments.empty() ? 0 : moments.front().cov_j.size();
    const MomentModel model(moments, spec, p);
    const Box box = detail::parameter_box(spec, opt);
    const ResidualFn r = [&](const Eigen::VectorXd& v) { return model.residuals(v); };
    EstimateResult res;
    res.method = spec.theta_free ? "nls" : "nls_theta_fixed";
    res.spec = spec;
    res.names = spec.names();
    const auto starts = detail::start_points(spec, opt);
    res.starts = static_cast<int>(starts.size());
    const OptimResult best = detail::minimize_least_squares(r, starts, box, opt.simplex_iterations, &res.starts_converged);
    res.estimate = best.x;
    res.objective = best.value;
    res.converged = best.converged;
    res.boundary = box.on_boundary(best.x, 1e-6);
    res.n_moments = moments.size();
    res.degenerate_moments = detail::count_degenerate(moments);
    // Heteroskedasticity-robust sandwich.
    const Eigen::MatrixXd J = model.jacobian(best.x, box);
    const Eigen::VectorXd u = model.residuals(best.x);
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::MatrixXd S = J.array().colwise() * u.array();
    const Eigen::MatrixXd bread = JtJ.completeOrthogonalDecomposition().pseudoInverse();
    res.vcov = bread * (S.transpose() * S) * bread;
    detail::fill_phi_fields(res);
    if (res.boundary) res.notes.push_back("solution on the parameter box boundary");
    if (res.starts_converged < res.starts)
        res.notes.push_back(std::to_string(res.starts - res.starts_converged) + " of " + std::to_string(res.starts) +
                            " simplex starts stopped at the iteration cap");
    return res;
}

// phi only, theta fixed at 1.
inline EstimateResult estimate_restricted_theta1(const std::vector<PairMoment>& moments, const CalibratedParams& p,
                                                 NlsOptions opt = {}) {
    opt.theta_free = false;
    opt.theta_fixed = 1.0;
    auto res = nls_joint(moments, p, opt);
    res.method = "nls_theta1";
    return res;
}

// ------------------------------------------------------------------- GMM

struct GmmConfig {
    // Available: const, n_importers, n_exporters, mean_s, median_s, mean_x,
    // median_x (leave-focal-out within product-year), and the focal shares
    // s_j, s_l, x_j, x_l.
    std::vector<std::string> instruments{"const",  "n_importers", "n_exporters", "mean_s",
                                         "median_s", "mean_x",    "median_x"};
    // Any of product, year, buyer.
    std::vector<std::string> demean;
    PhiForm phi_form = PhiForm::Constant;
    bool logit_phi = true;
    bool theta_free = true;
    double theta_fixed = 1.0;
    int simplex_iterations = 400;
    double theta_lower = 0.01, theta_upper = 1.0;
    double phi_lower = 0.01, phi_upper = 0.99;
    double kappa_bound = 30.0;
    std::vector<double> kappa_start;
};

namespace detail {

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Eigen::MatrixXd build_instruments(const std::vector<PairMoment>& moments, const SharePanel& panel,
                                         const std::vector<std::string>& names) {
    std::map<std::pair<std::string, int>, std::vector<std::size_t>> cell;
    for (std::size_t r = 0; r < panel.rows.size(); ++r) cell[{panel.rows[r].product, panel.rows[r].year}].push_back(r);
    const auto n = static_cast<Eigen::Index>(moments.size());
    Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(names.size()));
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& m = moments[static_cast<std::size_t>(k)];
        const auto& rows = cell.at({m.product, m.year});
        std::set<std::string> imp, exp;
        std::vector<double> s, x;
        for (auto r : rows) {
            imp.insert(panel.rows[r].importer);
            exp.insert(panel.rows[r].exporter);
            if (r == m.row_j || r == m.row_l) continue;
            s.push_back(panel.rows[r].s);
            x.push_back(panel.rows[r].x);
        }
        for (std::size_t c = 0; c < names.size(); ++c) {
            const std::string& nm = names[c];
            double v = 0.0;
            if (nm == "const") v = 1.0;
            else if (nm == "n_importers") v = static_cast<double>(imp.size());
            else if (nm == "n_exporters") v = static_cast<double>(exp.size());
            else if (nm == "s_j") v = m.sh_j.s;
            else if (nm == "s_l") v = m.sh_l.s;
            else if (nm == "x_j") v = m.sh_j.x;
            else if (nm == "x_l") v = m.sh_l.x;
            else if (nm == "mean_s" || nm == "median_s" || nm == "mean_x" || nm == "median_x") {
                const auto& src = nm.back() == 's' ? s : x;
                if (src.empty())
                    throw DataError("instrument " + nm + " undefined: product " + m.product + ", year " +
                                    std::to_string(m.year) + " has no matches outside the focal pair");
                v = nm[1] == 'e' && nm[2] == 'a' ? std::accumulate(src.begin(), src.end(), 0.0) / src.size()
                                                  : median_of(src);
            } else {
                throw ConfigError("unknown instrument '" + nm + "'");
            }
            Z(k, static_cast<Eigen::Index>(c)) = v;
        }
    }
    return Z;
}

inline std::vector<std::vector<std::int64_t>> moment_fixed_effects(const std::vector<PairMoment>& moments,
                                                                   const std::vector<std::string>& dims) {
    std::vector<std::vector<std::int64_t>> fe;
    for (const auto& d : dims) {
        std::map<std::string, std::int64_t> code;
        std::vector<std::int64_t> v;
        for (const auto& m : moments) {
            std::string key;
            if (d == "product") key = m.product;
            else if (d == "year") key = std::to_string(m.year);
            else if (d == "buyer") key = m.buyer_j;
            else throw ConfigError("unknown demeaning dimension '" + d + "'");
            v.push_back(code.emplace(key, static_cast<std::int64_t>(code.size())).first->second);
        }
        fe.push_back(std::move(v));
    }
    return fe;
}

} // namespace detail

// Two-step GMM on m(b) = Z~' g(b) / n, where Z~ are the instruments after
// removing the requested fixed effects (equivalent to demeaning g, since
// the projection is symmetric and idempotent). Step one weights by
// (Z~'Z~/n)^-1, step two by the inverse of the robust S from step-one
// residuals.
inline EstimateResult gmm_estimate(const std::vector<PairMoment>& moments, const SharePanel& panel,
                                   const GmmConfig& cfg, const CalibratedParams& p) {
    ModelSpec spec;
    spec.phi_form = cfg.phi_form;
    spec.logit_phi = cfg.logit_phi;
    spec.theta_free = cfg.theta_free;
    spec.theta_fixed = cfg.theta_fixed;
    if (spec.phi_form == PhiForm::Logistic) spec.n_covariates = moments.empty() ? 0 : moments.front().cov_j.size();
    const MomentModel model(moments, spec, p);
    const auto n = static_cast<double>(moments.size());

    Eigen::MatrixXd Z = detail::build_instruments(moments, panel, cfg.instruments);
    std::vector<std::string> znames = cfg.instruments;
    if (!cfg.demean.empty()) Z = within_transform(Z, detail::moment_fixed_effects(moments, cfg.demean)).data;
    // Columns wiped out by the fixed effects carry no moment.
    {
        std::vector<Eigen::Index> keep;
        std::vector<std::string> kept;
        for (Eigen::Index c = 0; c < Z.cols(); ++c)
            if (Z.col(c).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, Z.cwiseAbs().maxCoeff())) {
                keep.push_back(c);
                kept.push_back(znames[static_cast<std::size_t>(c)]);
            }
        Eigen::MatrixXd Zk(Z.rows(), static_cast<Eigen::Index>(keep.size()));
        for (std::size_t c = 0; c < keep.size(); ++c) Zk.col(static_cast<Eigen::Index>(c)) = Z.col(keep[c]);
        Z = Zk;
        znames = kept;
    }
    // Linearly dependent columns (e.g. a count that never varies next to the
    // constant) are dropped, keeping the earlier one.
    std::vector<std::string> dropped;
    {
        std::vector<std::string> kept;
        Eigen::MatrixXd acc(Z.rows(), 0);
        for (Eigen::Index c = 0; c < Z.cols(); ++c) {
            Eigen::MatrixXd trial(Z.rows(), acc.cols() + 1);
            trial << acc, Z.col(c);
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
            qr.setThreshold(1e-10);
            if (qr.rank() == trial.cols()) {
                acc = trial;
                kept.push_back(znames[static_cast<std::size_t>(c)]);
            } else {
                dropped.push_back(znames[static_cast<std::size_t>(c)]);
            }
        }
        Z = acc;
        znames = kept;
    }
    if (Z.cols() < static_cast<Eigen::Index>(spec.n_params()))
        throw SingularError("GMM: fewer linearly independent instruments (" + std::to_string(Z.cols()) +
                            ") than parameters (" + std::to_string(spec.n_params()) + ")");

    NlsOptions box_opt;
    box_opt.phi_lower = cfg.phi_lower;
    box_opt.phi_upper = cfg.phi_upper;
    box_opt.theta_lower = cfg.theta_lower;
    box_opt.theta_upper = cfg.theta_upper;
    box_opt.kappa_bound = cfg.kappa_bound;
    box_opt.kappa_start = cfg.kappa_start;
    const Box box = detail::parameter_box(spec, box_opt);
    const auto starts = detail::start_points(spec, box_opt);

    auto run = [&](const Eigen::MatrixXd& W, int* nconv) {
        const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(W).matrixL();
        const ResidualFn r = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            return L.transpose() * (Z.transpose() * model.residuals(v) / n);
        };
        return detail::minimize_least_squares(r, starts, box, cfg.simplex_iterations, nconv);
    };

    const Eigen::MatrixXd W1 = (Z.transpose() * Z / n).inverse();
    int conv1 = 0;
    const OptimResult step1 = run(W1, &conv1);
    const Eigen::VectorXd u1 = model.residuals(step1.x);
    const Eigen::MatrixXd Zu = Z.array().colwise() * u1.array();
    Eigen::MatrixXd S = Zu.transpose() * Zu / n;
    EstimateResult res;
    res.method = "gmm";
    res.spec = spec;
    res.names = spec.names();
    res.instruments = znames;
    res.n_instruments = static_cast<std::size_t>(Z.cols());
    res.n_moments = moments.size();
    res.degenerate_moments = detail::count_degenerate(moments);
    res.starts = static_cast<int>(starts.size()) * 2;
    for (const auto& d : dropped) res.notes.push_back("instrument '" + d + "' is collinear with earlier ones, dropped");
    Eigen::MatrixXd W2;
    OptimResult best = step1;
    if (Eigen::FullPivLU<Eigen::MatrixXd>(S).rank() == S.rows() && S.norm() > 0.0) {
        W2 = S.inverse();
        int conv2 = 0;
        best = run(W2, &conv2);
        res.starts_converged = conv1 + conv2;
    } else {
        // Exact fit at step one (noiseless data): S is singular, keep step one.
        W2 = W1;
        res.starts_converged = conv1 + static_cast<int>(starts.size());
        res.notes.push_back("step-one residuals give a singular S; reporting the step-one estimate");
    }
    res.estimate = best.x;
    res.objective = best.value;
    res.converged = best.converged;
    res.boundary = box.on_boundary(best.x, 1e-6);
    const Eigen::MatrixXd G = Z.transpose() * model.jacobian(best.x, box) / n;
    const Eigen::VectorXd u2 = model.residuals(best.x);
    const Eigen::MatrixXd Zu2 = Z.array().colwise() * u2.array();
    S = Zu2.transpose() * Zu2 / n;
    const Eigen::MatrixXd GWG = G.transpose() * W2 * G;
    const Eigen::MatrixXd bread = GWG.completeOrthogonalDecomposition().pseudoInverse();
    res.vcov = bread * (G.transpose() * W2 * S * W2 * G) * bread / n;
    detail::fill_phi_fields(res);
    if (res.boundary) res.notes.push_back("solution on the parameter box boundary");
    return res;
}

// Mean and median of phi_ijt across panel rows with delta-method standard
// errors. For the median the gradient is taken at the median row.
inline ImpliedPhi implied_phi_stats(const EstimateResult& r, const SharePanel& panel) {
    if (r.spec.phi_form == PhiForm::Constant) return r.implied;
    if (panel.rows.empty()) throw DataError("implied_phi_stats: empty panel");
    std::vector<std::pair<double, std::size_t>> phis;
    Eigen::VectorXd grad_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r.spec.n_params()));
    for (std::size_t i = 0; i < panel.rows.size(); ++i) {
        const auto& cov = panel.rows[i].covariates;
        if (cov.size() != r.spec.n_covariates) throw DataError("implied_phi_stats: covariate count mismatch");
        const double ph = r.spec.phi(r.estimate, cov);
        phis.push_back({ph, i});
        const double d = ph * (1.0 - ph);
        grad_mean[0] += d;
        for (std::size_t c = 0; c < r.spec.n_covariates; ++c) grad_mean[static_cast<Eigen::Index>(c + 1)] += d * cov[c];
    }
    const double N = static_cast<double>(phis.size());
    grad_mean /= N;
    ImpliedPhi out;
    for (const auto& [ph, i] : phis) out.mean += ph / N;
    std::sort(phis.begin(), phis.end());
    const auto& mid = phis[phis.size() / 2];
    out.median = phis.size() % 2 ? mid.first : 0.5 * (phis[phis.size() / 2 - 1].first + mid.first);
    Eigen::VectorXd grad_med = Eigen::VectorXd::Zero(grad_mean.size());
    const double dm = mid.first * (1.0 - mid.first);
    grad_med[0] = dm;
    for (std::size_t c = 0; c < r.spec.n_covariates; ++c)
        grad_med[static_cast<Eigen::Index>(c + 1)] = dm * panel.rows[mid.second].covariates[c];
    out.se_mean = std::sqrt(std::max(0.0, grad_mean.dot(r.vcov * grad_mean)));
    out.se_median = std::sqrt(std::max(0.0, grad_med.dot(r.vcov * grad_med)));
    return out;
}

inline nlohmann::json estimate_to_json(const EstimateResult& r) {
    nlohmann::json est = nlohmann::json::object(), se = nlohmann::json::object();
    for (std::size_t k = 0; k < r.names.size(); ++k) {
        est[r.names[k]] = r.estimate[static_cast<Eigen::Index>(k)];
        se[r.names[k]] = r.se(k);
    }
    std::vector<std::vector<double>> cov;
    for (Eigen::Index a = 0; a < r.vcov.rows(); ++a) {
        cov.emplace_back();
        for (Eigen::Index b = 0; b < r.vcov.cols(); ++b) cov.back().push_back(r.vcov(a, b));
    }
    nlohmann::json j = {{"method", r.method},
                        {"estimates", est},
                        {"standard_errors", se},
                        {"covariance", cov},
                        {"theta", r.theta},
                        {"implied_phi",
                         {{"mean", r.implied.mean},
                          {"median", r.implied.median},
                          {"se_mean", r.implied.se_mean},
                          {"se_median", r.implied.se_median}}},
                        {"diagnostics",
                         {{"objective", r.objective},
                          {"converged", r.converged},
                          {"boundary", r.boundary},
                          {"starts", r.starts},
                          {"starts_converged", r.starts_converged},
                          {"n_moments", r.n_moments},
                          {"degenerate_moments", r.degenerate_moments},
                          {"instruments", r.instruments},
                          {"notes", r.notes}}}};
    if (r.spec.phi_form == PhiForm::Constant) j["phi"] = r.phi;
    else j["kappa"] = r.kappa;
    return j;
}

inline void write_estimate_table(std::ostream& os, const EstimateResult& r) {
    auto fmt = [](double v) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(3) << v;
        return s.str();
    };
    os << "Estimated parameters (" << r.method << ")\n";
    os << std::left << std::setw(24) << "parameter" << std::right << std::setw(12) << "estimate" << std::setw(12)
       << "(s.e.)" << '\n';
    for (std::size_t k = 0; k < r.names.size(); ++k)
        os << std::left << std::setw(24) << r.names[k] << std::right << std::setw(12)
           << fmt(r.estimate[static_cast<Eigen::Index>(k)]) << std::setw(12) << ("(" + fmt(r.se(k)) + ")") << '\n';
    os << "Implied bargaining power\n";
    os << std::left << std::setw(24) << "mean" << std::right << std::setw(12) << fmt(r.implied.mean) << std::setw(12)
       << ("(" + fmt(r.implied.se_mean) + ")") << '\n';
    os << std::left << std::setw(24) << "median" << std::right << std::setw(12) << fmt(r.implied.median)
       << std::setw(12) << ("(" + fmt(r.implied.se_median) + ")") << '\n';
    os << "moments " << r.n_moments << ", objective " << std::scientific << std::setprecision(3) << r.objective
       << (r.converged ? "" : ", NOT converged") << (r.boundary ? ", on boundary" : "") << '\n';
    os << std::defaultfloat;
}

// ----------------------------------------------------------- Monte Carlo

struct ReplicaEstimate {
    int replica = 0;
    double phi = 0.0, theta = 0.0, objective = 0.0;
    bool converged = false, boundary = false;
    double phi_restricted = 0.0; // theta fixed at 1
    bool restricted_boundary = false;
};

struct MonteCarloOptions {
    bool joint = true;
    bool restricted = true;
    int jobs = 1;
};

inline ReplicaEstimate run_replica(const MonteCarloDesign& d, int replica, const MonteCarloOptions& o) {
    const SharePanel panel = generate_montecarlo_replica(d, static_cast<std::uint64_t>(replica));
    const auto moments = build_pair_moments(panel);
    ReplicaEstimate out;
    out.replica = replica;
    if (o.joint) {
        const auto r = nls_joint(moments, d.params);
        out.phi = r.phi;
        out.theta = r.theta;
        out.objective = r.objective;
        out.converged = r.converged;
        out.boundary = r.boundary;
    }
    if (o.restricted) {
        const auto r = estimate_restricted_theta1(moments, d.params);
        out.phi_restricted = r.phi;
        out.restricted_boundary = r.boundary;
    }
    return out;
}

inline std::vector<ReplicaEstimate> run_montecarlo(const MonteCarloDesign& d, const MonteCarloOptions& o = {}) {
    d.validate();
    std::vector<ReplicaEstimate> out(static_cast<std::size_t>(d.n_replicas));
    parallel_for(out.size(), o.jobs, [&](std::size_t r) { out[r] = run_replica(d, static_cast<int>(r), o); });
    return out;
}

struct SampleSummary {
    double mean = 0.0, median = 0.0, sd = 0.0, min = 0.0, max = 0.0;
    std::size_t n = 0;
};

inline SampleSummary summarize(std::vector<double> v) {
    SampleSummary s;
    s.n = v.size();
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    s.median = detail::median_of(v);
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    return s;
}

} // namespace bargain
