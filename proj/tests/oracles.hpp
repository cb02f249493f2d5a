#pragma once

// Independent numerical oracles for the closed forms. Nothing here calls the
// elasticity formulas; they only use the markup level and the demand system.

#include <bargain/pricing.hpp>

#include <cmath>
#include <functional>

namespace oracle {

// Exact response of one match to a change t in its own log price, all other
// prices fixed. CES shares inside the importer's nest, foreign bundle with
// elasticity eta, exporter output on a decreasing-returns curve.
struct PathPoint {
    double s, x, dln_cost;
};

inline PathPoint own_price_path(double s0, double x0, double t, double theta, const bargain::CalibratedParams& p) {
    const double scaled = s0 * std::exp((1.0 - p.rho) * t);
    const double r = scaled + 1.0 - s0;
    const double ln_pf = std::log(r) / (1.0 - p.rho);
    const double dlnq = -p.rho * t + (p.rho - p.eta) * ln_pf;
    const double grown = x0 * std::exp(dlnq);
    const double total = grown + 1.0 - x0;
    return {scaled / r, grown / total, (1.0 - theta) / theta * std::log(total)};
}

// Central difference of -d f(path(t)) / dt at t = 0. The five-point stencil
// tolerates a larger step, which keeps rounding error small near zeros.
inline double neg_slope(const std::function<double(const PathPoint&)>& f, double s0, double x0, double theta,
                        const bargain::CalibratedParams& p, double h = 1e-6, bool five_point = false) {
    auto at = [&](double t) { return f(own_price_path(s0, x0, t, theta, p)); };
    if (five_point) return -(at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12.0 * h);
    return -(at(h) - at(-h)) / (2.0 * h);
}

struct FdElasticities {
    double gamma_oligopoly, gamma_oligopsony, gamma_omega, cost, markup;
};

inline FdElasticities fd_elasticities(double s0, double x0, const bargain::StructuralParams& sp,
                                      const bargain::CalibratedParams& p, double h = 1e-6, bool five_point = false) {
    using bargain::bilateral_markup;
    const double th = sp.theta;
    FdElasticities e{};
    e.gamma_oligopoly = neg_slope(
        [&](const PathPoint& q) { return std::log(bilateral_markup({q.s, q.x}, sp, p).mu_oligopoly); }, s0, x0, th,
        p, h, five_point);
    e.gamma_oligopsony = neg_slope(
        [&](const PathPoint& q) { return std::log(bilateral_markup({q.s, q.x}, sp, p).mu_oligopsony); }, s0, x0,
        th, p, h, five_point);
    e.gamma_omega = neg_slope(
        [&](const PathPoint& q) { return std::log(bilateral_markup({q.s, q.x}, sp, p).omega); }, s0, x0, th, p,
        h, five_point);
    e.cost = neg_slope([&](const PathPoint& q) { return q.dln_cost; }, s0, x0, th, p, h, five_point);
    e.markup = neg_slope([&](const PathPoint& q) { return std::log(bilateral_markup({q.s, q.x}, sp, p).mu); }, s0,
                         x0, th, p, h, five_point);
    return e;
}

// Two suppliers selling to one importer with constant-returns downstream
// production. Used to rebuild lambda from profits and gains from trade.
struct TwoSupplierImporter {
    bargain::CalibratedParams p;
    double productivity = 1.0, demand = 1.0, domestic_price = 1.0;

    double foreign_index(double p1, double p2, bool with_first = true) const {
        const double sum = (with_first ? std::pow(p1, 1.0 - p.rho) : 0.0) + std::pow(p2, 1.0 - p.rho);
        return std::pow(sum, 1.0 / (1.0 - p.rho));
    }
    double profit_from_index(double pf) const {
        const double g = p.gamma;
        const double cost = std::pow(pf / g, g) * std::pow(domestic_price / (1.0 - g), 1.0 - g) / productivity;
        const double q = std::pow(p.nu / (p.nu - 1.0), -p.nu) * std::pow(cost, -p.nu) * demand;
        return (p.nu / (p.nu - 1.0) - 1.0) * cost * q;
    }
    double profit(double p1, double p2) const { return profit_from_index(foreign_index(p1, p2)); }
    double outside_profit(double p2) const { return profit_from_index(foreign_index(0.0, p2, false)); }
    double ln_quantity_first(double p1, double p2) const {
        const double pf = foreign_index(p1, p2);
        const double g = p.gamma;
        const double cost = std::pow(pf / g, g) * std::pow(domestic_price / (1.0 - g), 1.0 - g) / productivity;
        const double q = std::pow(p.nu / (p.nu - 1.0), -p.nu) * std::pow(cost, -p.nu) * demand;
        const double qf = g * cost * q / pf;
        return std::log(qf) - p.rho * std::log(p1 / pf);
    }

    // lambda = (pi / GFT) * (-d ln pi / d ln p1) / (eps - 1) by finite differences.
    double lambda(double p1, double p2, double h = 1e-5) const {
        const double up = std::exp(h), dn = std::exp(-h);
        const double dlnpi = (std::log(profit(p1 * up, p2)) - std::log(profit(p1 * dn, p2))) / (2 * h);
        const double eps = -(ln_quantity_first(p1 * up, p2) - ln_quantity_first(p1 * dn, p2)) / (2 * h);
        const double pi = profit(p1, p2);
        return pi / (pi - outside_profit(p2)) * (-dlnpi) / (eps - 1.0);
    }
    double share_first(double p1, double p2) const {
        return std::pow(p1, 1.0 - p.rho) / std::pow(foreign_index(p1, p2), 1.0 - p.rho);
    }
};

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

} // namespace oracle
