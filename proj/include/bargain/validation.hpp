#pragma once

// Model-predicted tariff responses, the IV goodness-of-fit test, and the
// aggregate pass-through and variance decompositions.

#include <bargain/errors.hpp>
#include <bargain/panel.hpp>
#include <bargain/pricing.hpp>
#include <bargain/regression.hpp>

#include <json.hpp>

#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace bargain {

struct PredictedChange {
    double dlnp = 0.0;             // duty-inclusive price
    double dlnq = 0.0;
    double dlnr = 0.0;             // sales
    double dlnp_markup_only = 0.0; // cost channel shut down
    double dlnp_cost_only = 0.0;   // markup channel shut down
    double passthrough = 1.0;
    double markup_elasticity = 0.0, cost_elasticity = 0.0, epsilon = 0.0;
};

// Sales follow the revenue identity d ln r = (1 - eps) d ln p.
inline PredictedChange predicted_change(const BilateralShares& sh, double dln_tariff, const StructuralParams& sp,
                                        const CalibratedParams& p) {
    const auto e = passthrough(sh, sp, p);
    PredictedChange c;
    c.passthrough = e.passthrough;
    c.markup_elasticity = e.markup_elasticity;
    c.cost_elasticity = e.cost_elasticity;
    c.epsilon = e.epsilon;
    c.dlnp = e.passthrough * dln_tariff;
    c.dlnq = -e.epsilon * c.dlnp;
    c.dlnr = (1.0 - e.epsilon) * c.dlnp;
    c.dlnp_markup_only = e.passthrough_markup_only * dln_tariff;
    c.dlnp_cost_only = e.passthrough_cost_only * dln_tariff;
    return c;
}

// One match observed in the year before and the year of a tariff change.
struct EventObservation {
    std::string exporter, importer, product, country;
    double s = 0.0, x = 0.0;     // base-year shares
    double base_value = 0.0;     // base-year duty-exclusive value
    double dln_tariff = 0.0;     // d ln(1 + tau)
    double dlnp_observed = 0.0;  // duty-inclusive unit value change
    double dlnq_observed = 0.0;
};

inline std::vector<EventObservation> tariff_event_sample(const SharePanel& panel, int event_year) {
    std::map<std::tuple<std::string, std::string, std::string>, const ShareRecord*> base;
    for (const auto& r : panel.rows)
        if (r.year == event_year - 1) base[{r.exporter, r.importer, r.product}] = &r;
    std::vector<EventObservation> out;
    for (const auto& r : panel.rows) {
        if (r.year != event_year) continue;
        const auto it = base.find({r.exporter, r.importer, r.product});
        if (it == base.end()) continue;
        const ShareRecord& b = *it->second;
        EventObservation o;
        o.exporter = r.exporter;
        o.importer = r.importer;
        o.product = r.product;
        o.country = r.country;
        o.s = b.s;
        o.x = b.x;
        o.base_value = b.value;
        o.dln_tariff = std::log1p(r.tariff) - std::log1p(b.tariff);
        o.dlnp_observed = std::log(r.price) + std::log1p(r.tariff) - std::log(b.price) - std::log1p(b.tariff);
        if (r.value > 0.0 && b.value > 0.0)
            o.dlnq_observed = std::log(r.value / r.price) - std::log(b.value / b.price);
        out.push_back(o);
    }
    if (out.empty()) throw DataError("no matches observed in both " + std::to_string(event_year - 1) + " and " +
                                     std::to_string(event_year));
    return out;
}

inline std::vector<PredictedChange> predicted_changes(const std::vector<EventObservation>& obs,
                                                      const StructuralParams& sp, const CalibratedParams& p) {
    std::vector<PredictedChange> out;
    out.reserve(obs.size());
    for (const auto& o : obs) out.push_back(predicted_change({o.s, o.x}, o.dln_tariff, sp, p));
    return out;
}

struct IvTestResult {
    FitResult fit;
    double beta = 0.0, se = 0.0, first_stage_f = 0.0;
    bool weak_instrument = false;
};

// 2SLS of observed on predicted price changes, instrumenting the prediction
// with the statutory tariff change. Factors are named string columns used for
// fixed effects and clustering.
inline IvTestResult iv_fit_test(const std::vector<double>& observed, const std::vector<double>& predicted,
                                const std::vector<double>& tariff_change,
                                const std::map<std::string, std::vector<std::string>>& factors,
                                const std::vector<std::string>& fe_dims, const std::vector<std::string>& cluster_dims,
                                double weak_f_threshold = 10.0) {
    Frame f;
    f.add("observed", observed);
    f.add("predicted", predicted);
    f.add("tariff", tariff_change);
    for (const auto& [name, v] : factors) f.add_factor(name, v);
    double spread = 0.0;
    for (double t : tariff_change) spread = std::max(spread, std::abs(t - tariff_change.front()));
    if (tariff_change.empty() || spread == 0.0)
        throw SingularError("iv_fit_test: no tariff variation, the tariff coefficient is not identified");
    RegressionSpec spec;
    spec.dependent = "observed";
    spec.regressors = {"predicted"};
    spec.endogenous = {"predicted"};
    spec.instruments = {"tariff"};
    spec.fixed_effects = fe_dims;
    spec.clusters = cluster_dims;
    IvTestResult out;
    out.fit = tsls(spec, f);
    out.beta = out.fit.b("predicted");
    out.se = out.fit.se("predicted");
    out.first_stage_f = out.fit.first_stage_f.at(0);
    out.weak_instrument = out.first_stage_f < weak_f_threshold;
    return out;
}

struct AggregateDecomposition {
    // Aggregate pass-through = 1 + slope of the duty-exclusive predicted
    // change on the tariff change, value-weighted.
    double passthrough_full = 0.0, passthrough_markup_only = 0.0, passthrough_cost_only = 0.0;
    // Shares of Var(Lambda + Gamma) attributed to each channel.
    double share_cost = 0.0, share_markup = 0.0;
    std::size_t n_obs = 0, n_treated = 0;
};

inline AggregateDecomposition aggregate_decomposition(const std::vector<EventObservation>& obs,
                                                      const StructuralParams& sp, const CalibratedParams& p) {
    AggregateDecomposition out;
    const auto pred = predicted_changes(obs, sp, p);
    std::vector<double> w, dt, full, mk, co, lam, gam, tot;
    double treated_weight = 0.0;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        w.push_back(obs[k].base_value);
        dt.push_back(obs[k].dln_tariff);
        full.push_back(pred[k].dlnp - obs[k].dln_tariff);
        mk.push_back(pred[k].dlnp_markup_only - obs[k].dln_tariff);
        co.push_back(pred[k].dlnp_cost_only - obs[k].dln_tariff);
        lam.push_back(pred[k].cost_elasticity);
        gam.push_back(pred[k].markup_elasticity);
        tot.push_back(pred[k].cost_elasticity + pred[k].markup_elasticity);
        if (obs[k].dln_tariff != 0.0) {
            treated_weight += obs[k].base_value;
            ++out.n_treated;
        }
    }
    if (!(treated_weight > 0.0)) throw DataError("aggregate_decomposition: no treated import value");
    out.n_obs = obs.size();
    auto slope = [&](const std::vector<double>& y) {
        Frame f;
        f.add("y", y);
        f.add("dt", dt);
        f.add("w", w);
        RegressionSpec s;
        s.dependent = "y";
        s.regressors = {"dt"};
        s.weight = "w";
        return ols(s, f).b("dt");
    };
    out.passthrough_full = 1.0 + slope(full);
    out.passthrough_markup_only = 1.0 + slope(mk);
    out.passthrough_cost_only = 1.0 + slope(co);
    // Weighted covariance shares; they add up to one by construction.
    double W = 0.0, ml = 0.0, mg = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        W += w[k];
        ml += w[k] * lam[k];
        mg += w[k] * gam[k];
    }
    ml /= W;
    mg /= W;
    double cov_l = 0.0, cov_g = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double dl = lam[k] - ml, dg = gam[k] - mg;
        cov_l += w[k] * dl * (dl + dg);
        cov_g += w[k] * dg * (dl + dg);
    }
    const double var = cov_l + cov_g;
    if (!(var > 0.0)) throw DataError("aggregate_decomposition: Lambda + Gamma has no variance");
    out.share_cost = cov_l / var;
    out.share_markup = cov_g / var;
    return out;
}

inline nlohmann::json decomposition_to_json(const AggregateDecomposition& d) {
    return {{"passthrough", {{"full", d.passthrough_full},
                             {"markup_only", d.passthrough_markup_only},
                             {"cost_only", d.passthrough_cost_only}}},
            {"variance_shares", {{"cost", d.share_cost}, {"markup", d.share_markup}}},
            {"n_obs", d.n_obs},
            {"n_treated", d.n_treated}};
}

} // namespace bargain
