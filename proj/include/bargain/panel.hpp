#pragma once

// Synthetic data: Monte Carlo share blocks, multi-year transaction panels
// priced by the network equilibrium, share construction, sample filters and
// CSV I/O.

#include <bargain/errors.hpp>
#include <bargain/network.hpp>
#include <bargain/pricing.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace bargain {

struct TransactionRecord {
    std::string importer, exporter, product, country;
    int year = 0;
    double value = 0.0;    // duty-exclusive
    double quantity = 0.0;
    double tariff = 0.0;   // ad valorem
};

struct ShareRecord {
    std::string importer, exporter, product;
    int year = 0;
    double price = 0.0; // duty-exclusive unit value
    double s = 0.0, x = 0.0, alpha = 1.0;
    // Carried through when the panel comes from transaction records.
    std::string country;
    double tariff = 0.0;
    double value = 0.0;
    std::vector<double> covariates;
};

struct SharePanel {
    std::vector<ShareRecord> rows;
    std::vector<std::string> covariate_names;
    std::size_t excluded_cells = 0; // zero-denominator cells dropped by compute_shares
};

// ------------------------------------------------------------ Monte Carlo

struct MonteCarloDesign {
    int n_exporters = 200;
    int importers_per_exporter = 2; // markets are K exporters x K importers, all linked
    int n_replicas = 501;
    StructuralParams truth{0.827, 0.454};
    CalibratedParams params{};
    std::string share_law = "uniform";
    double noise_sd = 0.05; // sd of the log match-level cost shock
    // Optional pair-specific bargaining power phi = logistic(X kappa) with X
    // = (1, z_1, ..., z_m), z standard normal. Empty means constant truth.phi.
    std::vector<double> kappa;
    std::uint64_t seed = 20240501;

    void validate() const {
        if (n_exporters < 1 || n_replicas < 1) throw ConfigError("Monte Carlo design needs exporters and replicas");
        if (importers_per_exporter < 2)
            throw ConfigError("importers_per_exporter must be at least 2: one buyer gives no within-exporter contrast");
        if (n_exporters % importers_per_exporter != 0)
            throw ConfigError("n_exporters must be a multiple of importers_per_exporter");
        if (share_law != "uniform") throw ConfigError("unknown share law '" + share_law + "'");
        if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be non-negative");
        truth.validate();
        params.validate();
    }
};

inline double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Independent stream per replica derived from the design seed.
inline std::mt19937_64 replica_stream(std::uint64_t seed, std::uint64_t replica) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(replica), static_cast<std::uint32_t>(replica >> 32), 0x5eedu};
    return std::mt19937_64(seq);
}

// One replica: markets of K exporters and K importers with every pair
// linked. s is normalized over exporters within each importer, x over
// importers within each exporter. Marginal cost is 1 times the cost shock.
inline SharePanel generate_montecarlo_replica(const MonteCarloDesign& d, std::uint64_t replica) {
    d.validate();
    auto rng = replica_stream(d.seed, replica);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    const int K = d.importers_per_exporter;
    const int markets = d.n_exporters / K;
    const std::size_t m = d.kappa.empty() ? 0 : d.kappa.size() - 1;
    SharePanel out;
    for (std::size_t c = 0; c < m; ++c) out.covariate_names.push_back("z" + std::to_string(c + 1));
    std::vector<double> a(static_cast<std::size_t>(K * K));
    for (int mk = 0; mk < markets; ++mk) {
        // Draws from U(0,1]; an exact zero would give a zero share.
        for (auto& v : a) v = 1.0 - u(rng);
        std::vector<double> col(K, 0.0), row(K, 0.0);
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) col[j] += a[i * K + j];
        std::vector<double> b(a.size());
        for (auto& v : b) v = 1.0 - u(rng);
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) row[i] += b[i * K + j];
        for (int i = 0; i < K; ++i) {
            for (int j = 0; j < K; ++j) {
                ShareRecord r;
                r.exporter = "E" + std::to_string(mk * K + i);
                r.importer = "I" + std::to_string(mk * K + j);
                r.product = "M" + std::to_string(mk);
                r.year = 0;
                r.s = a[i * K + j] / col[j];
                r.x = b[i * K + j] / row[i];
                double phi = d.truth.phi;
                if (!d.kappa.empty()) {
                    double xb = d.kappa[0];
                    for (std::size_t c = 0; c < m; ++c) {
                        r.covariates.push_back(z(rng));
                        xb += d.kappa[c + 1] * r.covariates.back();
                    }
                    phi = logistic(xb);
                }
                const double mu = bilateral_markup({r.s, r.x}, {phi, d.truth.theta}, d.params).mu;
                r.price = mu * std::exp(d.noise_sd * z(rng));
                r.value = r.price;
                out.rows.push_back(std::move(r));
            }
        }
    }
    return out;
}

inline std::vector<SharePanel> generate_montecarlo_blocks(const MonteCarloDesign& d) {
    d.validate();
    std::vector<SharePanel> out;
    out.reserve(static_cast<std::size_t>(d.n_replicas));
    for (int r = 0; r < d.n_replicas; ++r) out.push_back(generate_montecarlo_replica(d, static_cast<std::uint64_t>(r)));
    return out;
}

// -------------------------------------------------------- transaction panel

struct PanelConfig {
    int n_products = 40;
    int n_countries = 4;
    int exporters_per_product = 12; // mean over products
    int importers_per_product = 16; // mean over products
    // Product sizes are the means times U(1 - spread, 1 + spread), rounded.
    double product_size_spread = 0.6;
    int n_importers = 120; // pool that products draw their buyers from
    int min_buyers = 2;
    int max_buyers = 6;
    int first_year = 2015;
    int n_years = 3; // the last year carries the tariff event
    double sd_log_cost = 0.3;
    double sd_log_taste = 0.3;
    double sd_log_demand = 0.5;
    double sd_log_productivity = 0.2;
    double cost_noise_sd = 0.1;   // match-year cost shock
    double demand_shock_sd = 0.0; // importer-year demand shock
    double baseline_tariff = 0.0;
    double treated_share = 0.5;
    double tariff_increase = 0.25;
    // "direct": each treated match re-prices with every other price held at
    // its no-event level, which is the response the pass-through elasticity
    // describes. "equilibrium": the whole network is re-solved.
    std::string event_response = "direct";
    StructuralParams truth{0.827, 0.454};
    CalibratedParams params{};
    SolverConfig solver{};
    std::uint64_t seed = 7;

    int max_importers() const {
        return static_cast<int>(std::lround(importers_per_product * (1.0 + product_size_spread)));
    }

    void validate() const {
        if (n_products < 1 || n_countries < 1 || exporters_per_product < 1 || importers_per_product < 1)
            throw ConfigError("panel dimensions must be positive");
        if (!(product_size_spread >= 0.0 && product_size_spread < 1.0))
            throw ConfigError("product_size_spread must lie in [0,1)");
        if (n_importers < max_importers()) throw ConfigError("importer pool smaller than the largest product");
        if (min_buyers < 1 || max_buyers < min_buyers || min_buyers > importers_per_product)
            throw ConfigError("bad buyer range");
        if (n_years < 2) throw ConfigError("panel needs at least two years");
        if (!(cost_noise_sd >= 0.0 && demand_shock_sd >= 0.0)) throw ConfigError("shock sds must be non-negative");
        if (!(baseline_tariff >= 0.0 && tariff_increase >= 0.0)) throw ConfigError("tariffs must be non-negative");
        if (!(treated_share >= 0.0 && treated_share <= 1.0)) throw ConfigError("treated_share must lie in [0,1]");
        if (event_response != "direct" && event_response != "equilibrium")
            throw ConfigError("event_response must be 'direct' or 'equilibrium'");
        truth.validate();
        params.validate();
        solver.validate();
    }
};

// Model quantities behind each generated record, aligned with records.
struct PanelTruth {
    double markup = 1.0;
    double marginal_cost = 1.0; // exporter-level c_i
    double cost_noise = 1.0;    // match-year shock
    double gross_tariff = 1.0;
    double s = 0.0, x = 0.0;
    double passthrough = 1.0;
};

struct GeneratedPanel {
    std::vector<TransactionRecord> records;
    std::vector<PanelTruth> truth;
    std::vector<TradeNetwork> product_networks; // final-year network per product
};

inline GeneratedPanel generate_panel_detailed(const PanelConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> prod(cfg.n_importers), dem(cfg.n_importers);
    for (int j = 0; j < cfg.n_importers; ++j) {
        prod[j] = std::exp(cfg.sd_log_productivity * z(rng));
        dem[j] = std::exp(cfg.sd_log_demand * z(rng));
    }
    // Treatment is drawn per country x product.
    std::vector<std::vector<char>> treated(cfg.n_products, std::vector<char>(cfg.n_countries, 0));
    for (auto& row : treated)
        for (auto& t : row) t = u(rng) < cfg.treated_share;

    GeneratedPanel out;
    std::uniform_real_distribution<double> size(1.0 - cfg.product_size_spread, 1.0 + cfg.product_size_spread);
    for (int h = 0; h < cfg.n_products; ++h) {
        const std::string product = "H" + std::to_string(h);
        const int n_exp = std::max(1, static_cast<int>(std::lround(cfg.exporters_per_product * size(rng))));
        const int n_imp = std::max(cfg.min_buyers, static_cast<int>(std::lround(cfg.importers_per_product * size(rng))));
        std::uniform_int_distribution<int> deg(cfg.min_buyers, std::min(cfg.max_buyers, n_imp));
        // Buyers of this product drawn from the pool.
        std::vector<int> pool(cfg.n_importers);
        for (int j = 0; j < cfg.n_importers; ++j) pool[j] = j;
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(n_imp);
        std::sort(pool.begin(), pool.end());

        TradeNetwork net;
        std::vector<int> country_of;
        for (int i = 0; i < n_exp; ++i) {
            const int c = i % cfg.n_countries;
            country_of.push_back(c);
            net.exporters.push_back({"X" + std::to_string(h) + "_" + std::to_string(i), std::exp(cfg.sd_log_cost * z(rng))});
        }
        for (int j : pool) net.importers.push_back({"J" + std::to_string(j), prod[j], dem[j], 1.0});
        std::set<std::pair<int, int>> links;
        std::uniform_int_distribution<int> pick_j(0, n_imp - 1);
        std::uniform_int_distribution<int> pick_i(0, n_exp - 1);
        for (int i = 0; i < n_exp; ++i) {
            const int m = deg(rng);
            std::set<int> chosen;
            while (static_cast<int>(chosen.size()) < m) chosen.insert(pick_j(rng));
            for (int j : chosen) links.insert({i, j});
        }
        std::vector<char> covered(n_imp, 0);
        for (const auto& [i, j] : links) covered[j] = 1;
        for (int j = 0; j < n_imp; ++j)
            if (!covered[j]) links.insert({pick_i(rng), j});
        std::vector<int> edge_exporter;
        for (const auto& [i, j] : links) {
            Edge e;
            e.exporter = net.exporters[i].id;
            e.importer = net.importers[j].id;
            e.taste = std::exp(cfg.sd_log_taste * z(rng));
            net.edges.push_back(e);
            edge_exporter.push_back(i);
        }
        const std::vector<double> base_demand = [&] {
            std::vector<double> v;
            for (const auto& m : net.importers) v.push_back(m.demand_shifter);
            return v;
        }();

        for (int t = 0; t < cfg.n_years; ++t) {
            const bool event = t == cfg.n_years - 1;
            for (std::size_t j = 0; j < net.importers.size(); ++j)
                net.importers[j].demand_shifter = base_demand[j] * std::exp(cfg.demand_shock_sd * z(rng));
            for (std::size_t e = 0; e < net.edges.size(); ++e) {
                const int c = country_of[edge_exporter[e]];
                const double tau = cfg.baseline_tariff + (event && treated[h][c] ? cfg.tariff_increase : 0.0);
                net.edges[e].tariff = 1.0 + tau;
                net.edges[e].cost_noise = std::exp(cfg.cost_noise_sd * z(rng));
            }
            const bool direct = event && cfg.event_response == "direct";
            std::vector<double> event_tariff;
            if (direct) {
                for (auto& ed : net.edges) {
                    event_tariff.push_back(ed.tariff);
                    ed.tariff = 1.0 + cfg.baseline_tariff;
                }
            }
            const EquilibriumState st = solve_equilibrium(net, cfg.truth, cfg.params, cfg.solver);
            std::vector<double> price = st.price, quantity = st.quantity;
            if (direct) {
                for (std::size_t e = 0; e < net.edges.size(); ++e) {
                    net.edges[e].tariff = event_tariff[e];
                    if (event_tariff[e] == st.network.edges[e].tariff) continue;
                    std::tie(price[e], quantity[e]) =
                        direct_tariff_response(st, e, event_tariff[e], cfg.truth, cfg.params, cfg.solver);
                }
            }
            for (std::size_t e = 0; e < net.edges.size(); ++e) {
                const auto& ed = net.edges[e];
                const std::size_t i = static_cast<std::size_t>(edge_exporter[e]);
                TransactionRecord r;
                r.importer = ed.importer;
                r.exporter = ed.exporter;
                r.product = product;
                r.country = "C" + std::to_string(country_of[i]);
                r.year = cfg.first_year + t;
                r.quantity = quantity[e];
                r.value = price[e] / ed.tariff * quantity[e];
                r.tariff = ed.tariff - 1.0;
                out.records.push_back(r);
                PanelTruth tr;
                // Shares and elasticities at the no-event equilibrium in direct mode.
                const BilateralShares sh{std::clamp(st.s[e], 0.0, 1.0), std::clamp(st.x[e], 0.0, 1.0)};
                tr.markup = bilateral_markup(sh, cfg.truth, cfg.params).mu;
                tr.marginal_cost = st.marginal_cost[i];
                tr.cost_noise = ed.cost_noise;
                tr.gross_tariff = ed.tariff;
                tr.s = sh.s;
                tr.x = sh.x;
                tr.passthrough = passthrough(sh, cfg.truth, cfg.params).passthrough;
                out.truth.push_back(tr);
            }
            if (event) out.product_networks.push_back(net);
        }
    }
    return out;
}

inline std::vector<TransactionRecord> generate_panel(const PanelConfig& cfg) {
    return generate_panel_detailed(cfg).records;
}

// ------------------------------------------------------------------ shares

// Sums transactions to one record per (importer, exporter, product, year);
// the tariff is value-weighted.
inline std::vector<TransactionRecord> aggregate_annual(const std::vector<TransactionRecord>& records) {
    std::map<std::tuple<std::string, std::string, std::string, int>, TransactionRecord> acc;
    std::map<std::tuple<std::string, std::string, std::string, int>, double> tariff_value;
    for (const auto& r : records) {
        if (r.importer.empty() || r.exporter.empty() || r.product.empty())
            throw DataError("transaction record with empty id");
        if (!(r.value > 0.0) || !(r.quantity > 0.0))
            throw DataError("transaction record with non-positive value or quantity (" + r.exporter + "->" +
                            r.importer + ", " + r.product + ", " + std::to_string(r.year) + ")");
        if (!(r.tariff >= 0.0)) throw DataError("transaction record with negative tariff");
        const auto key = std::make_tuple(r.importer, r.exporter, r.product, r.year);
        auto it = acc.find(key);
        if (it == acc.end()) {
            acc.emplace(key, r);
            tariff_value[key] = r.tariff * r.value;
        } else {
            if (it->second.country != r.country)
                throw DataError("exporter " + r.exporter + " reported with two countries");
            it->second.value += r.value;
            it->second.quantity += r.quantity;
            tariff_value[key] += r.tariff * r.value;
        }
    }
    std::vector<TransactionRecord> out;
    out.reserve(acc.size());
    for (auto& [key, r] : acc) {
        r.tariff = tariff_value[key] / r.value;
        out.push_back(r);
    }
    return out;
}

// s: duty-inclusive value share within (importer, product, year).
// x: quantity share within (exporter, product, year).
// alpha: duty-inclusive value share of the product within (importer, year).
inline SharePanel compute_shares(const std::vector<TransactionRecord>& records) {
    const auto agg = aggregate_annual(records);
    using K3 = std::tuple<std::string, std::string, int>;
    std::map<K3, double> buyer_total, supplier_total;
    std::map<std::pair<std::string, int>, double> importer_total;
    auto incl = [](const TransactionRecord& r) { return r.value * (1.0 + r.tariff); };
    for (const auto& r : agg) {
        buyer_total[{r.importer, r.product, r.year}] += incl(r);
        supplier_total[{r.exporter, r.product, r.year}] += r.quantity;
        importer_total[{r.importer, r.year}] += incl(r);
    }
    SharePanel out;
    for (const auto& r : agg) {
        const double bt = buyer_total[{r.importer, r.product, r.year}];
        const double st = supplier_total[{r.exporter, r.product, r.year}];
        const double it = importer_total[{r.importer, r.year}];
        if (!(bt > 0.0 && st > 0.0 && it > 0.0)) {
            ++out.excluded_cells;
            continue;
        }
        ShareRecord s;
        s.importer = r.importer;
        s.exporter = r.exporter;
        s.product = r.product;
        s.year = r.year;
        s.price = r.value / r.quantity;
        s.s = incl(r) / bt;
        s.x = r.quantity / st;
        s.alpha = bt / it;
        s.country = r.country;
        s.tariff = r.tariff;
        s.value = r.value;
        out.rows.push_back(std::move(s));
    }
    return out;
}

// ----------------------------------------------------------------- filters

struct FilterPolicy {
    bool trim_unit_values = true;
    double lower_percentile = 1.0;
    double upper_percentile = 99.0;
    bool drop_large_changes = true;
    double max_abs_log_change = 4.0;
    bool require_consecutive = true;
    bool require_two_buyers = true;
};

struct FilterReport {
    std::size_t trimmed = 0, large_changes = 0, non_consecutive = 0, single_buyer = 0;
};

// Linear interpolation between order statistics (the usual "type 7" rule).
inline double percentile(std::vector<double> v, double pct) {
    if (v.empty()) throw DataError("percentile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<TransactionRecord> apply_filters(const std::vector<TransactionRecord>& input,
                                                    const FilterPolicy& policy = {}, FilterReport* report = nullptr) {
    FilterReport rep;
    std::vector<TransactionRecord> recs = aggregate_annual(input);
    auto uv = [](const TransactionRecord& r) { return r.value / r.quantity; };

    if (policy.trim_unit_values) {
        std::map<std::string, std::vector<double>> by_product;
        for (const auto& r : recs) by_product[r.product].push_back(uv(r));
        std::map<std::string, std::pair<double, double>> band;
        for (const auto& [h, v] : by_product)
            band[h] = {percentile(v, policy.lower_percentile), percentile(v, policy.upper_percentile)};
        std::vector<TransactionRecord> kept;
        for (const auto& r : recs) {
            const auto [lo, hi] = band[r.product];
            if (uv(r) < lo || uv(r) > hi) ++rep.trimmed;
            else kept.push_back(r);
        }
        recs.swap(kept);
    }

    using Key = std::tuple<std::string, std::string, std::string, int>;
    if (policy.drop_large_changes) {
        std::map<Key, double> lnp;
        for (const auto& r : recs) lnp[{r.importer, r.exporter, r.product, r.year}] = std::log(uv(r));
        std::vector<TransactionRecord> kept;
        for (const auto& r : recs) {
            const auto prev = lnp.find({r.importer, r.exporter, r.product, r.year - 1});
            if (prev != lnp.end() && std::abs(std::log(uv(r)) - prev->second) > policy.max_abs_log_change) ++rep.large_changes;
            else kept.push_back(r);
        }
        recs.swap(kept);
    }

    if (policy.require_consecutive) {
        std::set<Key> present;
        for (const auto& r : recs) present.insert({r.importer, r.exporter, r.product, r.year});
        std::vector<TransactionRecord> kept;
        for (const auto& r : recs) {
            const bool ok = present.count({r.importer, r.exporter, r.product, r.year - 1}) ||
                            present.count({r.importer, r.exporter, r.product, r.year + 1});
            if (ok) kept.push_back(r);
            else ++rep.non_consecutive;
        }
        recs.swap(kept);
    }

    if (policy.require_two_buyers) {
        std::map<std::tuple<std::string, std::string, int>, int> buyers;
        for (const auto& r : recs) ++buyers[{r.exporter, r.product, r.year}];
        auto count = [&](const TransactionRecord& r, int dt) {
            const auto it = buyers.find({r.exporter, r.product, r.year + dt});
            return it == buyers.end() ? 0 : it->second;
        };
        std::vector<TransactionRecord> kept;
        for (const auto& r : recs) {
            const bool ok = count(r, 0) >= 2 && (count(r, -1) >= 2 || count(r, 1) >= 2);
            if (ok) kept.push_back(r);
            else ++rep.single_buyer;
        }
        recs.swap(kept);
    }
    if (report) *report = rep;
    return recs;
}

// Shares computed on the full panel, then restricted to the rows that pass
// the filters, so that dropping a match does not change its partners' shares.
inline SharePanel filtered_share_panel(const std::vector<TransactionRecord>& records, const FilterPolicy& policy = {},
                                       FilterReport* report = nullptr) {
    SharePanel all = compute_shares(records);
    std::set<std::tuple<std::string, std::string, std::string, int>> keep;
    for (const auto& r : apply_filters(records, policy, report)) keep.insert({r.importer, r.exporter, r.product, r.year});
    SharePanel out;
    out.covariate_names = all.covariate_names;
    out.excluded_cells = all.excluded_cells;
    for (auto& r : all.rows)
        if (keep.count({r.importer, r.exporter, r.product, r.year})) out.rows.push_back(std::move(r));
    return out;
}

// --------------------------------------------------------------------- CSV

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, std::size_t row, const std::string& col) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("row " + std::to_string(row) + ", column '" + col + "': cannot parse '" + s + "' as a number");
    }
}

inline int parse_int(const std::string& s, std::size_t row, const std::string& col) {
    const double v = parse_double(s, row, col);
    if (v != std::floor(v)) throw DataError("row " + std::to_string(row) + ", column '" + col + "': not an integer");
    return static_cast<int>(v);
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::size_t col(const std::string& name) const {
        for (std::size_t k = 0; k < header.size(); ++k)
            if (header[k] == name) return k;
        throw DataError("missing column '" + name + "'");
    }
};

inline CsvTable read_csv(std::istream& is) {
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty CSV input");
    t.header = split_csv(line);
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        auto f = split_csv(line);
        if (f.size() != t.header.size())
            throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(f.size()));
        t.rows.push_back(std::move(f));
    }
    return t;
}

} // namespace detail

inline void write_transactions_csv(std::ostream& os, const std::vector<TransactionRecord>& recs) {
    os.precision(17);
    os << "importer,exporter,product,country,year,value,quantity,tariff\n";
    for (const auto& r : recs)
        os << r.importer << ',' << r.exporter << ',' << r.product << ',' << r.country << ',' << r.year << ','
           << r.value << ',' << r.quantity << ',' << r.tariff << '\n';
}

inline std::vector<TransactionRecord> read_transactions_csv(std::istream& is) {
    const auto t = detail::read_csv(is);
    const std::size_t ci = t.col("importer"), ce = t.col("exporter"), ch = t.col("product"), cc = t.col("country"),
                      cy = t.col("year"), cv = t.col("value"), cq = t.col("quantity"), ct = t.col("tariff");
    std::vector<TransactionRecord> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& f = t.rows[r];
        const std::size_t row = r + 2;
        TransactionRecord rec{f[ci], f[ce], f[ch], f[cc], detail::parse_int(f[cy], row, "year"),
                              detail::parse_double(f[cv], row, "value"), detail::parse_double(f[cq], row, "quantity"),
                              detail::parse_double(f[ct], row, "tariff")};
        if (rec.importer.empty() || rec.exporter.empty() || rec.product.empty())
            throw DataError("row " + std::to_string(row) + ": empty id");
        if (!(rec.value > 0.0 && rec.quantity > 0.0))
            throw DataError("row " + std::to_string(row) + ": value and quantity must be positive");
        out.push_back(rec);
    }
    return out;
}

// Fixed columns first; country, tariff, value and covariates follow as
// optional extras.
inline void write_share_panel_csv(std::ostream& os, const SharePanel& p) {
    os.precision(17);
    os << "importer,exporter,product,year,price,s,x,alpha,country,tariff,value";
    for (const auto& c : p.covariate_names) os << ',' << c;
    os << '\n';
    for (const auto& r : p.rows) {
        os << r.importer << ',' << r.exporter << ',' << r.product << ',' << r.year << ',' << r.price << ',' << r.s
           << ',' << r.x << ',' << r.alpha << ',' << r.country << ',' << r.tariff << ',' << r.value;
        for (double v : r.covariates) os << ',' << v;
        os << '\n';
    }
}

inline SharePanel read_share_panel_csv(std::istream& is) {
    const auto t = detail::read_csv(is);
    const std::vector<std::string> fixed{"importer", "exporter", "product", "year", "price", "s", "x", "alpha"};
    std::vector<std::size_t> c;
    for (const auto& name : fixed) c.push_back(t.col(name));
    const std::set<std::string> extras{"country", "tariff", "value"};
    auto find = [&](const std::string& name) -> long {
        for (std::size_t k = 0; k < t.header.size(); ++k)
            if (t.header[k] == name) return static_cast<long>(k);
        return -1;
    };
    const long c_country = find("country"), c_tariff = find("tariff"), c_value = find("value");
    SharePanel p;
    std::vector<std::size_t> cov_cols;
    for (std::size_t k = 0; k < t.header.size(); ++k)
        if (std::find(fixed.begin(), fixed.end(), t.header[k]) == fixed.end() && !extras.count(t.header[k])) {
            cov_cols.push_back(k);
            p.covariate_names.push_back(t.header[k]);
        }
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& f = t.rows[r];
        const std::size_t row = r + 2;
        ShareRecord s;
        s.importer = f[c[0]];
        s.exporter = f[c[1]];
        s.product = f[c[2]];
        s.year = detail::parse_int(f[c[3]], row, "year");
        s.price = detail::parse_double(f[c[4]], row, "price");
        s.s = detail::parse_double(f[c[5]], row, "s");
        s.x = detail::parse_double(f[c[6]], row, "x");
        s.alpha = detail::parse_double(f[c[7]], row, "alpha");
        if (!(s.price > 0.0)) throw DataError("row " + std::to_string(row) + ", column 'price': must be positive");
        if (!(s.s > 0.0 && s.s <= 1.0) || !(s.x > 0.0 && s.x <= 1.0))
            throw DataError("row " + std::to_string(row) + ": shares must lie in (0,1]");
        if (!(s.alpha > 0.0 && s.alpha <= 1.0))
            throw DataError("row " + std::to_string(row) + ", column 'alpha': must lie in (0,1]");
        if (c_country >= 0) s.country = f[static_cast<std::size_t>(c_country)];
        if (c_tariff >= 0) s.tariff = detail::parse_double(f[static_cast<std::size_t>(c_tariff)], row, "tariff");
        if (c_value >= 0) s.value = detail::parse_double(f[static_cast<std::size_t>(c_value)], row, "value");
        for (std::size_t k = 0; k < cov_cols.size(); ++k)
            s.covariates.push_back(detail::parse_double(f[cov_cols[k]], row, p.covariate_names[k]));
        p.rows.push_back(std::move(s));
    }
    return p;
}

inline nlohmann::json panel_config_to_json(const PanelConfig& c) {
    return {{"n_products", c.n_products},
            {"n_countries", c.n_countries},
            {"exporters_per_product", c.exporters_per_product},
            {"importers_per_product", c.importers_per_product},
            {"product_size_spread", c.product_size_spread},
            {"n_importers", c.n_importers},
            {"min_buyers", c.min_buyers},
            {"max_buyers", c.max_buyers},
            {"first_year", c.first_year},
            {"n_years", c.n_years},
            {"sd_log_cost", c.sd_log_cost},
            {"sd_log_taste", c.sd_log_taste},
            {"sd_log_demand", c.sd_log_demand},
            {"sd_log_productivity", c.sd_log_productivity},
            {"cost_noise_sd", c.cost_noise_sd},
            {"demand_shock_sd", c.demand_shock_sd},
            {"baseline_tariff", c.baseline_tariff},
            {"treated_share", c.treated_share},
            {"tariff_increase", c.tariff_increase},
            {"event_response", c.event_response},
            {"phi", c.truth.phi},
            {"theta", c.truth.theta},
            {"seed", c.seed}};
}

} // namespace bargain
