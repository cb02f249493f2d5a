#pragma once

// Nash-in-Nash price equilibrium on a fixed bipartite exporter/importer
// network, plus finite-difference and spillover pass-through.

#include <bargain/errors.hpp>
#include <bargain/pricing.hpp>

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace bargain {

struct Exporter {
    std::string id;
    double cost_shifter = 1.0; // k_i
};

struct Importer {
    std::string id;
    double productivity = 1.0;   // phi_j
    double demand_shifter = 1.0; // D_j
    double domestic_price = 1.0; // p^d_j
};

struct Edge {
    std::string exporter;
    std::string importer;
    double taste = 1.0;  // varsigma_ij
    double tariff = 1.0; // gross tariff T >= 1
    // Match-specific multiplicative cost shock; 1 in the plain model.
    double cost_noise = 1.0;
};

struct TradeNetwork {
    std::vector<Exporter> exporters;
    std::vector<Importer> importers;
    std::vector<Edge> edges;

    // Finite-difference re-solves perturb tariffs on both sides of 1, so the
    // T >= 1 check can be switched off internally.
    void validate(bool require_tariff_floor = true) const;
    std::size_t edge_index(const std::string& exporter, const std::string& importer) const;
    std::size_t exporter_index(const std::string& id) const;
};

struct SolverConfig {
    enum class Sweep { GaussSeidel, Jacobi };
    double damping = 1.0;
    double tol = 1e-10;
    int max_iter = 10000;
    Sweep sweep = Sweep::GaussSeidel;

    void validate() const {
        if (!(damping > 0.0 && damping <= 1.0)) throw DomainError("solver damping must lie in (0,1]");
        if (!(tol > 0.0)) throw DomainError("solver tolerance must be positive");
        if (max_iter < 1) throw DomainError("solver max_iter must be positive");
    }
};

struct EquilibriumState {
    TradeNetwork network;
    // per edge
    std::vector<double> price, quantity, s, x;
    // per exporter
    std::vector<double> exporter_output, marginal_cost;
    // per importer
    std::vector<double> foreign_price_index, foreign_bundle, output, unit_cost;
    int iterations = 0;
    double residual = 0.0;
};

inline void TradeNetwork::validate(bool require_tariff_floor) const {
    std::set<std::string> ex_ids, im_ids;
    for (const auto& e : exporters) {
        if (e.id.empty()) throw DomainError("exporter with empty id");
        if (!ex_ids.insert(e.id).second) throw DomainError("duplicate exporter id " + e.id);
        if (!(e.cost_shifter > 0.0)) throw DomainError("exporter " + e.id + ": cost shifter must be positive");
    }
    for (const auto& m : importers) {
        if (m.id.empty()) throw DomainError("importer with empty id");
        if (!im_ids.insert(m.id).second) throw DomainError("duplicate importer id " + m.id);
        if (!(m.productivity > 0.0 && m.demand_shifter > 0.0 && m.domestic_price > 0.0))
            throw DomainError("importer " + m.id + ": productivity, demand and domestic price must be positive");
    }
    std::set<std::pair<std::string, std::string>> seen;
    std::set<std::string> ex_used, im_used;
    for (const auto& e : edges) {
        if (!ex_ids.count(e.exporter)) throw DomainError("edge references unknown exporter " + e.exporter);
        if (!im_ids.count(e.importer)) throw DomainError("edge references unknown importer " + e.importer);
        if (!seen.insert({e.exporter, e.importer}).second)
            throw DomainError("duplicate edge " + e.exporter + "->" + e.importer);
        if (!(e.taste > 0.0)) throw DomainError("edge taste shifter must be positive");
        if (!(e.tariff > 0.0)) throw DomainError("gross tariff must be positive");
        if (require_tariff_floor && !(e.tariff >= 1.0)) throw DomainError("gross tariff must be at least 1");
        if (!(e.cost_noise > 0.0)) throw DomainError("edge cost shock must be positive");
        ex_used.insert(e.exporter);
        im_used.insert(e.importer);
    }
    if (ex_used.size() != exporters.size()) throw DomainError("every exporter needs at least one edge");
    if (im_used.size() != importers.size()) throw DomainError("every importer needs at least one edge");
}

inline std::size_t TradeNetwork::edge_index(const std::string& exporter, const std::string& importer) const {
    for (std::size_t e = 0; e < edges.size(); ++e)
        if (edges[e].exporter == exporter && edges[e].importer == importer) return e;
    throw DomainError("no edge " + exporter + "->" + importer);
}

inline std::size_t TradeNetwork::exporter_index(const std::string& id) const {
    for (std::size_t i = 0; i < exporters.size(); ++i)
        if (exporters[i].id == id) return i;
    throw DomainError("no exporter " + id);
}

namespace detail {

class NetworkModel {
public:
    NetworkModel(const TradeNetwork& net, const StructuralParams& sp, const CalibratedParams& p)
        : net_(net), sp_(sp), p_(p) {
        net.validate(false);
        sp.validate();
        p.validate();
        std::unordered_map<std::string, std::size_t> ex, im;
        for (std::size_t i = 0; i < net.exporters.size(); ++i) ex[net.exporters[i].id] = i;
        for (std::size_t j = 0; j < net.importers.size(); ++j) im[net.importers[j].id] = j;
        const std::size_t E = net.edges.size();
        src_.resize(E);
        dst_.resize(E);
        by_exporter_.assign(net.exporters.size(), {});
        by_importer_.assign(net.importers.size(), {});
        for (std::size_t e = 0; e < E; ++e) {
            src_[e] = ex.at(net.edges[e].exporter);
            dst_[e] = im.at(net.edges[e].importer);
            by_exporter_[src_[e]].push_back(e);
            by_importer_[dst_[e]].push_back(e);
        }
        suppliers_.assign(net.importers.size(), {});
        for (std::size_t j = 0; j < by_importer_.size(); ++j) {
            for (auto e : by_importer_[j]) suppliers_[j].push_back(src_[e]);
        }
        ln_p_.assign(E, 0.0);
        ln_q_.assign(E, 0.0);
        s_.assign(E, 0.0);
        x_.assign(E, 0.0);
        q_i_.assign(net.exporters.size(), 0.0);
        c_i_.assign(net.exporters.size(), 0.0);
        pf_.assign(net.importers.size(), 0.0);
        qf_.assign(net.importers.size(), 0.0);
        q_j_.assign(net.importers.size(), 0.0);
        c_j_.assign(net.importers.size(), 0.0);
    }

    std::size_t edges() const { return src_.size(); }
    const std::vector<std::size_t>& exporter_edges(std::size_t i) const { return by_exporter_[i]; }
    const std::vector<std::size_t>& importer_edges(std::size_t j) const { return by_importer_[j]; }
    std::size_t exporter_of(std::size_t e) const { return src_[e]; }
    std::size_t importer_of(std::size_t e) const { return dst_[e]; }
    TradeNetwork& network() { return net_; }

    void load(const EquilibriumState& st) {
        for (std::size_t e = 0; e < edges(); ++e) ln_p_[e] = std::log(st.price[e]);
        refresh_all();
    }

    void initialize() {
        for (std::size_t e = 0; e < edges(); ++e) ln_p_[e] = ln_fixed_cost(e) + std::log(net_.exporters[src_[e]].cost_shifter);
        refresh_all();
        for (std::size_t e = 0; e < edges(); ++e) ln_p_[e] = ln_fixed_cost(e) + std::log(c_i_[src_[e]]);
        refresh_all();
    }

    void refresh_all() {
        for (std::size_t j = 0; j < by_importer_.size(); ++j) refresh_importer(j);
        for (std::size_t i = 0; i < by_exporter_.size(); ++i) refresh_exporter(i);
    }

    void refresh_importer(std::size_t j) {
        const auto& list = by_importer_[j];
        const double rho = p_.rho;
        double top = -std::numeric_limits<double>::infinity();
        for (auto e : list) top = std::max(top, weight_log(e));
        double sum = 0.0;
        for (auto e : list) sum += std::exp(weight_log(e) - top);
        const double ln_sum = top + std::log(sum);
        const double ln_pf = ln_sum / (1.0 - rho);
        for (auto e : list) s_[e] = std::exp(weight_log(e) - ln_sum);

        const Importer& m = net_.importers[j];
        const double nu = p_.nu, g = p_.gamma, vr = p_.varrho;
        const double delta = vr + nu * (1.0 - vr);
        double inner = -std::log(m.productivity) + g * (ln_pf - std::log(g));
        if (vr - g > 0.0) inner += (vr - g) * (std::log(m.domestic_price) - std::log(vr - g));
        const double ln_markup_down = std::log(nu / (nu - 1.0));
        const double ln_cj = inner / delta - nu * (1.0 - vr) / delta * ln_markup_down +
                             (1.0 - vr) / delta * std::log(m.demand_shifter);
        const double ln_qj = -nu * ln_markup_down - nu * ln_cj + std::log(m.demand_shifter);
        const double ln_qf = std::log(g) + ln_cj + ln_qj - ln_pf;
        pf_[j] = std::exp(ln_pf);
        c_j_[j] = std::exp(ln_cj);
        q_j_[j] = std::exp(ln_qj);
        qf_[j] = std::exp(ln_qf);
        for (auto e : list) {
            ln_q_[e] = ln_qf + rho * std::log(net_.edges[e].taste) - rho * (ln_p_[e] - ln_pf);
            if (!std::isfinite(ln_q_[e])) throw DomainError("non-finite quantity on edge " + edge_name(e));
        }
    }

    void refresh_exporter(std::size_t i) {
        const auto& list = by_exporter_[i];
        double total = 0.0;
        for (auto e : list) total += std::exp(ln_q_[e]);
        if (!(total > 0.0) || !std::isfinite(total))
            throw DomainError("non-positive output for exporter " + net_.exporters[i].id);
        q_i_[i] = total;
        for (auto e : list) x_[e] = std::exp(ln_q_[e]) / total;
        c_i_[i] = net_.exporters[i].cost_shifter * std::pow(total, (1.0 - sp_.theta) / sp_.theta);
        if (!(c_i_[i] > 0.0) || !std::isfinite(c_i_[i]))
            throw DomainError("non-positive marginal cost for exporter " + net_.exporters[i].id);
    }

    double target_log_price(std::size_t e) const {
        const auto m = bilateral_markup(clamped_shares(e), sp_, p_);
        return std::log(m.mu) + std::log(c_i_[src_[e]]) + ln_fixed_cost(e);
    }

    // Own-price slope correction: the local map has slope 1 - 1/Phi, so a
    // Newton step on the edge is Phi times the gap.
    double local_gain(std::size_t e) const {
        try {
            const double phi = passthrough(clamped_shares(e), sp_, p_).passthrough;
            return (phi > 0.0 && std::isfinite(phi)) ? phi : 1.0;
        } catch (const SingularError&) {
            return 1.0;
        }
    }

    // Move one edge price and refresh the affected blocks.
    void set_log_price(std::size_t e, double v) {
        ln_p_[e] = v;
        const std::size_t j = dst_[e];
        refresh_importer(j);
        for (auto i : suppliers_[j]) refresh_exporter(i);
    }

    double log_price(std::size_t e) const { return ln_p_[e]; }
    double log_quantity(std::size_t e) const { return ln_q_[e]; }

    double residual(const std::vector<std::size_t>& free) const {
        double r = 0.0;
        for (auto e : free) r = std::max(r, std::abs(target_log_price(e) - ln_p_[e]));
        return r;
    }

    // Solve for the prices of the free edges with every other price held fixed.
    std::pair<int, double> solve(const std::vector<std::size_t>& free, const SolverConfig& cfg) {
        cfg.validate();
        // Exporters whose edges are all free get a common log shift each sweep;
        // it removes the slow mode where all of one exporter's prices are off
        // together and its marginal cost pushes back hard.
        std::vector<char> is_free(edges(), 0);
        for (auto e : free) is_free[e] = 1;
        std::vector<std::size_t> shiftable;
        for (std::size_t i = 0; i < by_exporter_.size(); ++i) {
            const auto& l = by_exporter_[i];
            if (l.size() > 1 && std::all_of(l.begin(), l.end(), [&](std::size_t e) { return is_free[e]; }))
                shiftable.push_back(i);
        }
        double res = residual(free);
        int it = 0;
        while (res > cfg.tol) {
            if (it >= cfg.max_iter)
                throw ConvergenceError("equilibrium solver did not converge after " + std::to_string(it) +
                                           " sweeps (residual " + std::to_string(res) + ")",
                                       res);
            ++it;
            for (auto i : shiftable) align_exporter(i);
            if (cfg.sweep == SolverConfig::Sweep::GaussSeidel) {
                for (auto e : free) {
                    const double gap = target_log_price(e) - ln_p_[e];
                    set_log_price(e, ln_p_[e] + clamp_step(cfg.damping * local_gain(e) * gap));
                }
            } else {
                std::vector<double> step(free.size());
                for (std::size_t k = 0; k < free.size(); ++k) {
                    const auto e = free[k];
                    step[k] = clamp_step(cfg.damping * local_gain(e) * (target_log_price(e) - ln_p_[e]));
                }
                for (std::size_t k = 0; k < free.size(); ++k) ln_p_[free[k]] += step[k];
                refresh_all();
            }
            res = residual(free);
            if (!std::isfinite(res)) throw ConvergenceError("equilibrium solver diverged", res);
        }
        return {it, res};
    }

    // Shift all of exporter i's log prices by a common amount so that the
    // mean gap to the target price is zero. The mean gap falls in the shift,
    // so a bracket plus regula falsi (Illinois) is safe.
    void align_exporter(std::size_t i) {
        const auto& list = by_exporter_[i];
        std::vector<double> base(list.size());
        for (std::size_t k = 0; k < list.size(); ++k) base[k] = ln_p_[list[k]];
        std::vector<std::size_t> touched;
        for (auto e : list) touched.push_back(dst_[e]);
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        auto mean_gap = [&](double d) {
            for (std::size_t k = 0; k < list.size(); ++k) ln_p_[list[k]] = base[k] + d;
            for (auto j : touched) {
                refresh_importer(j);
                for (auto r : suppliers_[j]) refresh_exporter(r);
            }
            double g = 0.0;
            for (auto e : list) g += target_log_price(e) - ln_p_[e];
            return g / static_cast<double>(list.size());
        };
        double a = 0.0, ha = mean_gap(0.0);
        if (std::abs(ha) < 1e-13) return;
        double step = std::clamp(ha, -1.0, 1.0);
        double b = a + step, hb = mean_gap(b);
        for (int k = 0; k < 80 && (ha > 0) == (hb > 0); ++k) {
            a = b;
            ha = hb;
            step *= 2.0;
            b = a + step;
            hb = mean_gap(b);
        }
        if ((ha > 0) == (hb > 0)) {
            mean_gap(0.0);
            return;
        }
        int side = 0;
        double c = b, hc = hb;
        for (int k = 0; k < 100; ++k) {
            c = (a * hb - b * ha) / (hb - ha);
            hc = mean_gap(c);
            if (std::abs(hc) < 1e-13 || std::abs(b - a) < 1e-14) break;
            if ((hc > 0) == (hb > 0)) {
                b = c;
                hb = hc;
                if (side == -1) ha *= 0.5;
                side = -1;
            } else {
                a = c;
                ha = hc;
                if (side == 1) hb *= 0.5;
                side = 1;
            }
        }
        mean_gap(c);
    }

    EquilibriumState snapshot(int iterations, double residual) const {
        EquilibriumState st;
        st.network = net_;
        const std::size_t E = edges();
        st.price.resize(E);
        st.quantity.resize(E);
        for (std::size_t e = 0; e < E; ++e) {
            st.price[e] = std::exp(ln_p_[e]);
            st.quantity[e] = std::exp(ln_q_[e]);
        }
        st.s = s_;
        st.x = x_;
        st.exporter_output = q_i_;
        st.marginal_cost = c_i_;
        st.foreign_price_index = pf_;
        st.foreign_bundle = qf_;
        st.output = q_j_;
        st.unit_cost = c_j_;
        st.iterations = iterations;
        st.residual = residual;
        return st;
    }

    BilateralShares shares(std::size_t e) const { return clamped_shares(e); }

private:
    double weight_log(std::size_t e) const {
        return p_.rho * std::log(net_.edges[e].taste) + (1.0 - p_.rho) * ln_p_[e];
    }
    double ln_fixed_cost(std::size_t e) const {
        return std::log(net_.edges[e].tariff) + std::log(net_.edges[e].cost_noise);
    }
    static double clamp_step(double d) { return std::clamp(d, -1.0, 1.0); }
    BilateralShares clamped_shares(std::size_t e) const {
        return {std::clamp(s_[e], 0.0, 1.0), std::clamp(x_[e], 0.0, 1.0)};
    }
    std::string edge_name(std::size_t e) const { return net_.edges[e].exporter + "->" + net_.edges[e].importer; }

    TradeNetwork net_;
    StructuralParams sp_;
    CalibratedParams p_;
    std::vector<std::size_t> src_, dst_;
    std::vector<std::vector<std::size_t>> by_exporter_, by_importer_, suppliers_;
    std::vector<double> ln_p_, ln_q_, s_, x_;
    std::vector<double> q_i_, c_i_, pf_, qf_, q_j_, c_j_;
};

inline std::vector<std::size_t> all_edges(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t e = 0; e < n; ++e) v[e] = e;
    return v;
}

} // namespace detail

inline EquilibriumState solve_equilibrium(const TradeNetwork& net, const StructuralParams& sp,
                                          const CalibratedParams& p, const SolverConfig& cfg = {}) {
    net.validate();
    detail::NetworkModel model(net, sp, p);
    model.initialize();
    const auto [it, res] = model.solve(detail::all_edges(model.edges()), cfg);
    return model.snapshot(it, res);
}

// d ln p / d ln T on one edge with every other price in the network fixed,
// by central differences of two single-edge re-solves.
inline double direct_passthrough_fd(const EquilibriumState& st, std::size_t edge, double dlnT,
                                    const StructuralParams& sp, const CalibratedParams& p, SolverConfig cfg = {}) {
    if (dlnT == 0.0) throw DomainError("direct_passthrough_fd: zero tariff step");
    if (edge >= st.network.edges.size()) throw DomainError("direct_passthrough_fd: edge index out of range");
    cfg.tol = std::min(cfg.tol, 1e-14);
    cfg.damping = 1.0;
    cfg.max_iter = 100;
    cfg.sweep = SolverConfig::Sweep::GaussSeidel;
    double out[2];
    for (int side = 0; side < 2; ++side) {
        TradeNetwork net = st.network;
        net.edges[edge].tariff *= std::exp(side == 0 ? dlnT : -dlnT);
        detail::NetworkModel model(net, sp, p);
        model.load(st);
        try {
            model.solve({edge}, cfg);
        } catch (const ConvergenceError& err) {
            // Rounding can stall the scalar update a hair above 1e-14.
            if (!(err.residual() < 1e-12)) throw;
        }
        out[side] = model.log_price(edge);
    }
    return (out[0] - out[1]) / (2.0 * dlnT);
}

inline double direct_passthrough_fd(const EquilibriumState& st, const std::string& exporter,
                                    const std::string& importer, double dlnT, const StructuralParams& sp,
                                    const CalibratedParams& p, SolverConfig cfg = {}) {
    return direct_passthrough_fd(st, st.network.edge_index(exporter, importer), dlnT, sp, p, cfg);
}

// Response of all of one exporter's prices to a common shock to its cost
// shifter, other exporters' prices fixed. Central differences in ln k.
inline std::vector<double> exporter_shock_response_fd(const EquilibriumState& st, std::size_t exporter,
                                                      double dlnk, const StructuralParams& sp,
                                                      const CalibratedParams& p, SolverConfig cfg = {}) {
    if (dlnk == 0.0) throw DomainError("exporter_shock_response_fd: zero step");
    cfg.tol = std::min(cfg.tol, 1e-14);
    cfg.max_iter = std::min(cfg.max_iter, 2000);
    std::vector<double> out[2];
    std::vector<std::size_t> free;
    for (int side = 0; side < 2; ++side) {
        TradeNetwork net = st.network;
        net.exporters.at(exporter).cost_shifter *= std::exp(side == 0 ? dlnk : -dlnk);
        detail::NetworkModel model(net, sp, p);
        model.load(st);
        free = model.exporter_edges(exporter);
        try {
            model.solve(free, cfg);
        } catch (const ConvergenceError& err) {
            if (!(err.residual() < 1e-12)) throw;
        }
        for (auto e : free) out[side].push_back(model.log_price(e));
    }
    std::vector<double> r(free.size());
    for (std::size_t k = 0; k < free.size(); ++k) r[k] = (out[0][k] - out[1][k]) / (2.0 * dlnk);
    return r;
}

// Price and quantity of one edge after its gross tariff moves to new_tariff,
// every other price held at its level in st.
inline std::pair<double, double> direct_tariff_response(const EquilibriumState& st, std::size_t edge,
                                                        double new_tariff, const StructuralParams& sp,
                                                        const CalibratedParams& p, SolverConfig cfg = {}) {
    if (edge >= st.network.edges.size()) throw DomainError("direct_tariff_response: edge index out of range");
    cfg.tol = std::min(cfg.tol, 1e-12);
    cfg.max_iter = std::min(cfg.max_iter, 500);
    TradeNetwork net = st.network;
    net.edges[edge].tariff = new_tariff;
    detail::NetworkModel model(net, sp, p);
    model.load(st);
    try {
        model.solve({edge}, cfg);
    } catch (const ConvergenceError& err) {
        // The scalar update can stall a hair above a tight tolerance.
        if (!(err.residual() < 1e-9)) throw;
    }
    return {std::exp(model.log_price(edge)), std::exp(model.log_quantity(edge))};
}

struct SpilloverPassthrough {
    std::vector<std::size_t> edges; // the exporter's edges, in network order
    std::vector<double> direct;     // Phi-tilde, own-edge term including rival responses
    std::vector<double> full;       // Psi
};

// Full pass-through of a shock common to all of an exporter's matches,
// including feedback through its other buyers and rivals' share responses.
inline SpilloverPassthrough full_passthrough_system(const EquilibriumState& st, std::size_t exporter,
                                                   const StructuralParams& sp, const CalibratedParams& p) {
    detail::NetworkModel model(st.network, sp, p);
    model.load(st);
    if (exporter >= st.network.exporters.size()) throw DomainError("full_passthrough_system: bad exporter index");
    const auto& list = model.exporter_edges(exporter);
    const std::size_t n = list.size();
    const double kappa = (1.0 - sp.theta) / sp.theta;
    SpilloverPassthrough out;
    out.edges = list;
    out.direct.resize(n);
    std::vector<double> gx(n), xe(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t e = list[k];
        const auto sh = model.shares(e);
        const double eps = residual_demand_elasticity(sh, p);
        const auto d = markup_share_derivatives(sh, sp, p);
        double rivals = 0.0;
        for (auto r : model.importer_edges(model.importer_of(e))) {
            if (r == e) continue;
            const auto rs = model.shares(r);
            rivals += rs.s * markup_share_derivatives(rs, sp, p).d_ln_s;
        }
        const double denom = 1.0 + d.d_ln_s * (p.rho - 1.0) * ((1.0 - sh.s) - sh.s * (p.rho - 1.0) * rivals) +
                             d.d_ln_x * eps * (1.0 - sh.x) + kappa * eps * sh.x;
        if (!(std::abs(denom) > 0.0)) throw SingularError("full_passthrough_system: zero own-edge denominator");
        out.direct[k] = 1.0 / denom;
        gx[k] = d.d_ln_x;
        xe[k] = sh.x * eps;
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b(n);
    for (std::size_t a = 0; a < n; ++a) {
        b(a) = out.direct[a];
        for (std::size_t z = 0; z < n; ++z)
            if (z != a) A(a, z) -= out.direct[a] * (gx[a] - kappa) * xe[z];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-14)
        throw SingularError("full_passthrough_system: singular spillover system for exporter " +
                            st.network.exporters[exporter].id);
    const Eigen::VectorXd psi = lu.solve(b);
    out.full.assign(psi.data(), psi.data() + n);
    return out;
}

// ---------------------------------------------------------------- generation

struct RandomNetworkConfig {
    int n_exporters = 20;
    int n_importers = 15;
    int min_buyers = 1;
    int max_buyers = 4;
    double sd_log_cost = 0.3;
    double sd_log_taste = 0.3;
    double sd_log_demand = 0.5;
    double sd_log_productivity = 0.2;
    double tariff_probability = 0.3;
    double tariff_rate = 0.25;
};

inline TradeNetwork random_network(const RandomNetworkConfig& cfg, std::uint64_t seed) {
    if (cfg.n_exporters < 1 || cfg.n_importers < 1) throw DomainError("random_network: need at least one node per side");
    if (cfg.min_buyers < 1 || cfg.max_buyers < cfg.min_buyers) throw DomainError("random_network: bad buyer range");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::bernoulli_distribution hit(cfg.tariff_probability);
    TradeNetwork net;
    for (int i = 0; i < cfg.n_exporters; ++i)
        net.exporters.push_back({"E" + std::to_string(i), std::exp(cfg.sd_log_cost * z(rng))});
    for (int j = 0; j < cfg.n_importers; ++j)
        net.importers.push_back({"I" + std::to_string(j), std::exp(cfg.sd_log_productivity * z(rng)),
                                 std::exp(cfg.sd_log_demand * z(rng)), 1.0});
    std::set<std::pair<int, int>> links;
    std::uniform_int_distribution<int> deg(cfg.min_buyers, std::min(cfg.max_buyers, cfg.n_importers));
    std::uniform_int_distribution<int> pick_j(0, cfg.n_importers - 1), pick_i(0, cfg.n_exporters - 1);
    for (int i = 0; i < cfg.n_exporters; ++i) {
        const int m = deg(rng);
        std::set<int> chosen;
        while (static_cast<int>(chosen.size()) < m) chosen.insert(pick_j(rng));
        for (int j : chosen) links.insert({i, j});
    }
    std::vector<int> covered(cfg.n_importers, 0);
    for (const auto& [i, j] : links) covered[j] = 1;
    for (int j = 0; j < cfg.n_importers; ++j)
        if (!covered[j]) links.insert({pick_i(rng), j});
    for (const auto& [i, j] : links) {
        Edge e;
        e.exporter = net.exporters[i].id;
        e.importer = net.importers[j].id;
        e.taste = std::exp(cfg.sd_log_taste * z(rng));
        e.tariff = hit(rng) ? 1.0 + cfg.tariff_rate : 1.0;
        net.edges.push_back(e);
    }
    return net;
}

// ----------------------------------------------------------------------- I/O

inline nlohmann::json params_to_json(const StructuralParams& sp, const CalibratedParams& p) {
    return {{"nu", p.nu}, {"gamma", p.gamma}, {"rho", p.rho}, {"varrho", p.varrho},
            {"phi", sp.phi}, {"theta", sp.theta}};
}

inline std::pair<StructuralParams, CalibratedParams> params_from_json(const nlohmann::json& j) {
    CalibratedParams p = CalibratedParams::make(j.value("nu", 4.0), j.value("gamma", 0.5), j.value("rho", 10.0),
                                                j.value("varrho", 1.0));
    StructuralParams sp{j.value("phi", 0.827), j.value("theta", 0.454)};
    sp.validate();
    return {sp, p};
}

inline nlohmann::json network_to_json(const TradeNetwork& net) {
    nlohmann::json out;
    out["exporters"] = nlohmann::json::array();
    for (const auto& e : net.exporters) out["exporters"].push_back({{"id", e.id}, {"cost_shifter", e.cost_shifter}});
    out["importers"] = nlohmann::json::array();
    for (const auto& m : net.importers)
        out["importers"].push_back({{"id", m.id},
                                    {"productivity", m.productivity},
                                    {"demand_shifter", m.demand_shifter},
                                    {"domestic_price", m.domestic_price}});
    out["edges"] = nlohmann::json::array();
    for (const auto& e : net.edges) {
        nlohmann::json row{{"exporter", e.exporter}, {"importer", e.importer}, {"taste", e.taste}, {"tariff", e.tariff}};
        if (e.cost_noise != 1.0) row["cost_noise"] = e.cost_noise;
        out["edges"].push_back(row);
    }
    return out;
}

inline TradeNetwork network_from_json(const nlohmann::json& j) {
    TradeNetwork net;
    try {
        for (const auto& e : j.at("exporters")) net.exporters.push_back({e.at("id"), e.value("cost_shifter", 1.0)});
        for (const auto& m : j.at("importers"))
            net.importers.push_back({m.at("id"), m.value("productivity", 1.0), m.value("demand_shifter", 1.0),
                                     m.value("domestic_price", 1.0)});
        for (const auto& e : j.at("edges"))
            net.edges.push_back({e.at("exporter"), e.at("importer"), e.value("taste", 1.0), e.value("tariff", 1.0),
                                 e.value("cost_noise", 1.0)});
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("network JSON: ") + ex.what());
    }
    net.validate();
    return net;
}

inline void write_equilibrium_csv(std::ostream& os, const EquilibriumState& st, const StructuralParams& sp,
                                  const CalibratedParams& p) {
    os << "exporter,importer,price,quantity,s,x,markup,marginal_cost,tariff\n";
    os.precision(17);
    std::map<std::string, std::size_t> ex;
    for (std::size_t i = 0; i < st.network.exporters.size(); ++i) ex[st.network.exporters[i].id] = i;
    for (std::size_t e = 0; e < st.network.edges.size(); ++e) {
        const auto& edge = st.network.edges[e];
        const double mu = bilateral_markup({std::clamp(st.s[e], 0.0, 1.0), std::clamp(st.x[e], 0.0, 1.0)}, sp, p).mu;
        os << edge.exporter << ',' << edge.importer << ',' << st.price[e] << ',' << st.quantity[e] << ',' << st.s[e]
           << ',' << st.x[e] << ',' << mu << ',' << st.marginal_cost[ex[edge.exporter]] << ',' << edge.tariff << '\n';
    }
}

} // namespace bargain
