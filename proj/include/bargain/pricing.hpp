#pragma once

// Closed-form bilateral pricing: markups, pass-through elasticities and the
// bargaining variants. Everything here is a pure function of (s, x) and the
// parameters.

#include <bargain/errors.hpp>

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace bargain {

// Outer-nest elasticity implied by downstream demand and technology.
inline double derive_eta(double nu, double gamma, double varrho) {
    const double denom = varrho + nu * (1.0 - varrho);
    if (!(denom > 0.0))
        throw DomainError("derive_eta: varrho + nu*(1-varrho) must be positive");
    const double foreign = varrho - gamma;
    return (foreign + nu * (1.0 - foreign)) / denom;
}

struct CalibratedParams {
    double nu = 4.0;
    double gamma = 0.5;
    double rho = 10.0;
    double varrho = 1.0;
    double eta = 2.5;

    static CalibratedParams make(double nu, double gamma, double rho, double varrho) {
        CalibratedParams p{nu, gamma, rho, varrho, derive_eta(nu, gamma, varrho)};
        p.validate();
        return p;
    }

    void validate() const {
        if (!(nu > 1.0)) throw DomainError("nu must exceed 1");
        if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("gamma must lie in (0,1]");
        if (!(varrho > 0.0 && varrho <= 1.0)) throw DomainError("varrho must lie in (0,1]");
        if (!(gamma <= varrho)) throw DomainError("gamma cannot exceed varrho");
        if (!(rho > 1.0)) throw DomainError("rho must exceed 1");
        if (!(eta > 1.0)) throw DomainError("eta must exceed 1");
        if (!(rho > eta)) throw DomainError("rho must exceed eta");
    }
};

// phi is allowed on the closed interval so that the phi -> 0 and phi -> 1
// limits can be evaluated exactly; estimation keeps it interior.
struct StructuralParams {
    double phi = 0.827;
    double theta = 0.454;

    void validate() const {
        if (!(phi >= 0.0 && phi <= 1.0)) throw DomainError("phi must lie in [0,1]");
        if (!(theta > 0.0 && theta <= 1.0)) throw DomainError("theta must lie in (0,1]");
    }
};

struct BilateralShares {
    double s = 0.0; // supplier share
    double x = 0.0; // buyer share

    void validate() const {
        if (!(s >= 0.0 && s <= 1.0)) throw DomainError("supplier share s outside [0,1]");
        if (!(x >= 0.0 && x <= 1.0)) throw DomainError("buyer share x outside [0,1]");
    }
};

struct LambdaComponents {
    double cost_exposure = 0.0;      // lambda^C
    double network_dependence = 0.0; // lambda^N, infinite at s = 0
    double lambda = 1.0;
};

struct MarkupDecomposition {
    double mu_oligopoly = 1.0;
    double mu_oligopsony = 1.0;
    double lambda = 1.0;
    double lambda_cost_exposure = 0.0;
    double lambda_network_dependence = 0.0;
    double omega = 0.0;
    double mu = 1.0;
};

struct ElasticityDecomposition {
    MarkupDecomposition markup;
    double epsilon = 0.0;
    double gamma_oligopoly = 0.0;
    double gamma_oligopsony = 0.0;
    double gamma_omega = 0.0;
    double omega_gamma = 0.0;
    double markup_elasticity = 0.0;
    double cost_elasticity = 0.0;
    double passthrough = 1.0;
    double passthrough_markup_only = 1.0;
    double passthrough_cost_only = 1.0;
};

// Partial derivatives of ln mu with respect to ln s and ln x.
struct MarkupShareDerivatives {
    double d_ln_s = 0.0;
    double d_ln_x = 0.0;
};

struct GeneralizedOutsideOption {
    double delta_ci = 1.0; // exporter fallback cost ratio
    double delta_cj = 1.0; // importer fallback cost ratio
};

inline double residual_demand_elasticity(const BilateralShares& sh, const CalibratedParams& p) {
    sh.validate();
    return (1.0 - sh.s) * p.rho + sh.s * p.eta;
}

inline double oligopoly_markup(double eps) {
    if (!(eps > 1.0)) throw DomainError("oligopoly_markup: elasticity <= 1 gives an unbounded markup");
    return eps / (eps - 1.0);
}

// theta * (1 - (1-x)^(1/theta)) / x, with the x -> 0 limit equal to 1.
inline double oligopsony_markdown(double x, double theta) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("oligopsony_markdown: x outside [0,1]");
    if (!(theta > 0.0 && theta <= 1.0)) throw DomainError("oligopsony_markdown: theta outside (0,1]");
    if (x == 0.0 || theta == 1.0) return 1.0;
    return -theta * std::expm1(std::log1p(-x) / theta) / x;
}

namespace detail {

inline double share_exponent(const CalibratedParams& p) { return (p.eta - 1.0) / (p.rho - 1.0); }

// 1 - (1-s)^a, accurate for small s.
inline double one_minus_pow1m(double s, double a) { return -std::expm1(a * std::log1p(-s)); }

// d ln mu^oligopsony / d ln x
inline double markdown_log_slope(double x, double theta) {
    if (theta == 1.0 || x == 0.0) return 0.0;
    const double ms = oligopsony_markdown(x, theta);
    const double lead = std::exp((1.0 / theta - 1.0) * std::log1p(-x));
    return lead / ms - 1.0;
}

// d ln lambda / d ln s, used only in the interior.
inline double lambda_log_slope(double s, double eps, const CalibratedParams& p) {
    const double a = share_exponent(p);
    const double direct = 1.0 - (eps - p.rho) / (eps - 1.0);
    const double ds = one_minus_pow1m(s, a);
    return direct - a * s * std::exp((a - 1.0) * std::log1p(-s)) / ds;
}

} // namespace detail

inline LambdaComponents lambda_components(const BilateralShares& sh, const CalibratedParams& p) {
    const double eps = residual_demand_elasticity(sh, p);
    LambdaComponents out;
    if (sh.s == 0.0) {
        out.cost_exposure = 0.0;
        out.network_dependence = std::numeric_limits<double>::infinity();
        out.lambda = 1.0;
        return out;
    }
    const double ds = detail::one_minus_pow1m(sh.s, detail::share_exponent(p));
    out.cost_exposure = (p.eta - 1.0) * sh.s / (eps - 1.0);
    out.network_dependence = 1.0 / ds;
    out.lambda = out.cost_exposure / ds;
    return out;
}

inline double bargaining_weight(double lambda, double phi) {
    if (!(lambda > 0.0)) throw DomainError("bargaining_weight: lambda must be positive");
    if (!(phi >= 0.0 && phi <= 1.0)) throw DomainError("bargaining_weight: phi outside [0,1]");
    return phi * lambda / ((1.0 - phi) + phi * lambda);
}

inline MarkupDecomposition bilateral_markup(const BilateralShares& sh, const StructuralParams& sp,
                                            const CalibratedParams& p) {
    sp.validate();
    MarkupDecomposition m;
    const double eps = residual_demand_elasticity(sh, p);
    m.mu_oligopoly = oligopoly_markup(eps);
    m.mu_oligopsony = oligopsony_markdown(sh.x, sp.theta);
    const LambdaComponents lc = lambda_components(sh, p);
    m.lambda = lc.lambda;
    m.lambda_cost_exposure = lc.cost_exposure;
    m.lambda_network_dependence = lc.network_dependence;
    m.omega = bargaining_weight(lc.lambda, sp.phi);
    m.mu = (1.0 - m.omega) * m.mu_oligopoly + m.omega * m.mu_oligopsony;
    if (!(m.mu > 0.0)) throw DomainError("bilateral_markup: non-positive markup");
    return m;
}

inline double gamma_oligopoly(const BilateralShares& sh, const CalibratedParams& p) {
    const double eps = residual_demand_elasticity(sh, p);
    if (!(eps > 1.0)) throw DomainError("gamma_oligopoly: elasticity <= 1");
    return (1.0 / (eps - 1.0)) * ((p.rho - eps) / eps) * (p.rho - 1.0) * (1.0 - sh.s);
}

inline double gamma_oligopsony(const BilateralShares& sh, const StructuralParams& sp,
                               const CalibratedParams& p) {
    sp.validate();
    const double eps = residual_demand_elasticity(sh, p);
    if (sh.x == 1.0) return 0.0;
    return detail::markdown_log_slope(sh.x, sp.theta) * (1.0 - sh.x) * eps;
}

// Elasticity of the bargaining weight, taken as -d ln omega / d ln p.
inline double gamma_omega(const BilateralShares& sh, const StructuralParams& sp, const CalibratedParams& p) {
    sp.validate();
    const double eps = residual_demand_elasticity(sh, p);
    if (sh.s == 0.0 || sh.s == 1.0) return 0.0;
    const double omega = bargaining_weight(lambda_components(sh, p).lambda, sp.phi);
    return (1.0 - omega) * (p.rho - 1.0) * (1.0 - sh.s) * detail::lambda_log_slope(sh.s, eps, p);
}

namespace detail {

struct GammaParts {
    MarkupDecomposition m;
    double eps, g_olig, g_olis, g_omega;
};

inline GammaParts gamma_parts(const BilateralShares& sh, const StructuralParams& sp, const CalibratedParams& p) {
    GammaParts g;
    g.m = bilateral_markup(sh, sp, p);
    g.eps = residual_demand_elasticity(sh, p);
    g.g_olig = gamma_oligopoly(sh, p);
    g.g_olis = gamma_oligopsony(sh, sp, p);
    g.g_omega = gamma_omega(sh, sp, p);
    return g;
}

} // namespace detail

inline double markup_elasticity(const BilateralShares& sh, const StructuralParams& sp, const CalibratedParams& p) {
    const auto g = detail::gamma_parts(sh, sp, p);
    const double wg = g.m.omega * g.m.mu_oligopsony / g.m.mu;
    return (1.0 - wg) * g.g_olig + wg * g.g_olis + (1.0 - g.m.mu_oligopoly / g.m.mu) * g.g_omega;
}

// Same elasticity with each channel weighted by its share of the markup.
inline double markup_elasticity_share_weighted(const BilateralShares& sh, const StructuralParams& sp,
                                               const CalibratedParams& p) {
    const auto g = detail::gamma_parts(sh, sp, p);
    const auto& m = g.m;
    return (1.0 - m.omega) * m.mu_oligopoly / m.mu * g.g_olig + m.omega * m.mu_oligopsony / m.mu * g.g_olis +
           (1.0 - m.mu_oligopoly / m.mu) * g.g_omega;
}

inline MarkupShareDerivatives markup_share_derivatives(const BilateralShares& sh, const StructuralParams& sp,
                                                       const CalibratedParams& p) {
    const MarkupDecomposition m = bilateral_markup(sh, sp, p);
    const double eps = residual_demand_elasticity(sh, p);
    MarkupShareDerivatives d;
    const double olig_slope = sh.s * (p.rho - p.eta) / (eps * (eps - 1.0));
    double weight_slope = 0.0;
    if (sh.s > 0.0 && sh.s < 1.0)
        weight_slope = m.omega * (1.0 - m.omega) * detail::lambda_log_slope(sh.s, eps, p);
    d.d_ln_s = ((1.0 - m.omega) * m.mu_oligopoly * olig_slope + (m.mu_oligopsony - m.mu_oligopoly) * weight_slope) / m.mu;
    d.d_ln_x = m.omega * m.mu_oligopsony / m.mu * detail::markdown_log_slope(sh.x, sp.theta);
    return d;
}

inline double cost_elasticity(const BilateralShares& sh, const StructuralParams& sp, const CalibratedParams& p) {
    sp.validate();
    return (1.0 - sp.theta) / sp.theta * sh.x * residual_demand_elasticity(sh, p);
}

inline ElasticityDecomposition passthrough(const BilateralShares& sh, const StructuralParams& sp,
                                           const CalibratedParams& p) {
    const auto g = detail::gamma_parts(sh, sp, p);
    ElasticityDecomposition e;
    e.markup = g.m;
    e.epsilon = g.eps;
    e.gamma_oligopoly = g.g_olig;
    e.gamma_oligopsony = g.g_olis;
    e.gamma_omega = g.g_omega;
    e.omega_gamma = g.m.omega * g.m.mu_oligopsony / g.m.mu;
    e.markup_elasticity = (1.0 - e.omega_gamma) * g.g_olig + e.omega_gamma * g.g_olis +
                          (1.0 - g.m.mu_oligopoly / g.m.mu) * g.g_omega;
    e.cost_elasticity = (1.0 - sp.theta) / sp.theta * sh.x * g.eps;
    const double denom = 1.0 + e.markup_elasticity + e.cost_elasticity;
    if (!(denom > 0.0))
        throw SingularError("passthrough: 1 + Gamma + Lambda <= 0 at s=" + std::to_string(sh.s) +
                            ", x=" + std::to_string(sh.x));
    e.passthrough = 1.0 / denom;
    // Channel-only counterfactuals are reported as computed, including signs.
    e.passthrough_markup_only = 1.0 / (1.0 + e.markup_elasticity);
    e.passthrough_cost_only = 1.0 / (1.0 + e.cost_elasticity);
    return e;
}

struct HeatmapPoint {
    double s, x, passthrough, markup_elasticity, cost_elasticity, mu;
};

// Row-major over s (outer) and x (inner), both on an even grid including 0 and 1.
inline std::vector<HeatmapPoint> heatmap_grid(const StructuralParams& sp, const CalibratedParams& p, int resolution) {
    if (resolution < 2) throw DomainError("heatmap_grid: resolution must be at least 2");
    std::vector<HeatmapPoint> out;
    out.reserve(static_cast<std::size_t>(resolution) * resolution);
    const double step = 1.0 / (resolution - 1);
    for (int a = 0; a < resolution; ++a) {
        const double s = (a == resolution - 1) ? 1.0 : a * step;
        for (int b = 0; b < resolution; ++b) {
            const double x = (b == resolution - 1) ? 1.0 : b * step;
            const auto e = passthrough({s, x}, sp, p);
            out.push_back({s, x, e.passthrough, e.markup_elasticity, e.cost_elasticity, e.markup.mu});
        }
    }
    return out;
}

inline void write_heatmap_csv(std::ostream& os, const std::vector<HeatmapPoint>& grid) {
    os << "s,x,phi,gamma,lambda_elas,mu\n";
    os.precision(17);
    for (const auto& g : grid)
        os << g.s << ',' << g.x << ',' << g.passthrough << ',' << g.markup_elasticity << ','
           << g.cost_elasticity << ',' << g.mu << '\n';
}

struct EfficientBargainContext {
    double marginal_cost = 0.0;
    double average_cost = 0.0;
};

// Marginal and average cost at output q on the curve c = k q^((1-theta)/theta).
inline EfficientBargainContext efficient_bargain_context(double k, double theta, double q) {
    if (!(k > 0.0 && q > 0.0)) throw DomainError("efficient_bargain_context: k and q must be positive");
    if (!(theta > 0.0 && theta <= 1.0)) throw DomainError("efficient_bargain_context: theta outside (0,1]");
    const double mc = k * std::pow(q, (1.0 - theta) / theta);
    return {mc, theta * mc};
}

inline double efficient_bargain_price(const EfficientBargainContext& c, double phi) {
    if (!(c.marginal_cost >= 0.0 && c.average_cost >= 0.0))
        throw DomainError("efficient_bargain_price: costs must be non-negative");
    if (!(phi >= 0.0 && phi <= 1.0)) throw DomainError("efficient_bargain_price: phi outside [0,1]");
    return (1.0 - phi) * c.marginal_cost + phi * c.average_cost;
}

// Fallback cost ratios under which the generalized markup equals the baseline.
inline GeneralizedOutsideOption baseline_outside_option(const BilateralShares& sh, const StructuralParams& sp,
                                                        const CalibratedParams& p) {
    sh.validate();
    sp.validate();
    GeneralizedOutsideOption g;
    g.delta_ci = std::pow(1.0 - sh.x, (1.0 - sp.theta) / sp.theta);
    g.delta_cj = std::pow(1.0 - sh.s, (p.eta - 1.0) / ((p.rho - 1.0) * (1.0 - p.nu)));
    return g;
}

inline double generalized_markup(const BilateralShares& sh, const StructuralParams& sp, const CalibratedParams& p,
                                 const GeneralizedOutsideOption& g) {
    sh.validate();
    sp.validate();
    if (!(g.delta_ci > 0.0 && g.delta_cj > 0.0))
        throw DomainError("generalized_markup: fallback cost ratios must be positive");
    const double eps = residual_demand_elasticity(sh, p);
    const double mu_olig = oligopoly_markup(eps);

    double mu_olis;
    if (sh.x == 0.0) {
        if (g.delta_ci != 1.0)
            throw DomainError("generalized_markup: x = 0 requires delta_ci = 1 for a finite markdown");
        mu_olis = sp.theta;
    } else {
        mu_olis = sp.theta * ((1.0 - g.delta_ci) + g.delta_ci * sh.x) / sh.x;
    }
    if (!(mu_olis > 0.0)) throw DomainError("generalized_markup: non-positive markdown");

    const double delta_s = 1.0 - std::pow(g.delta_cj, 1.0 - p.nu);
    if (!(delta_s > 0.0))
        throw DomainError("generalized_markup: infeasible outside option (importer gains from trade <= 0)");
    const double lambda = (p.eta - 1.0) * sh.s / ((eps - 1.0) * delta_s);
    const double omega = (lambda > 0.0) ? bargaining_weight(lambda, sp.phi) : 0.0;
    return (1.0 - omega) * mu_olig + omega * mu_olis;
}

} // namespace bargain
