#pragma once

// Run configuration for the command-line pipeline: one JSON document with a
// schema version and one block per stage. Unknown keys are rejected so that
// typos do not silently fall back to defaults.

#include <bargain/errors.hpp>
#include <bargain/estimation.hpp>
#include <bargain/panel.hpp>
#include <bargain/pricing.hpp>

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace bargain {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kVersion = "1.0.0";

struct HeatmapConfig {
    int resolution = 101;
    std::vector<double> phi_values{0.0, 0.5, 1.0};
    std::vector<double> theta_values{0.5, 1.0};
};

struct EstimateConfig {
    std::string method = "gmm"; // gmm, nls, nls_theta1
    std::string input;          // share panel CSV; default <out>/shares.csv
    bool exclude_event_year = true;
    GmmConfig gmm{};
};

struct MonteCarloConfig {
    MonteCarloDesign design{};
    bool restricted = true;
    int histogram_bins = 40;
};

struct ValidateConfig {
    std::string input;    // share panel CSV; default <out>/shares.csv
    std::string estimate; // estimate JSON; default <out>/estimate.json
    int event_year = 0;   // 0: last year in the panel
    std::vector<std::string> fixed_effects{"product"};
    std::vector<std::string> clusters{"product_country"};
    double weak_f = 10.0;
};

struct DecomposeConfig {
    std::string input;
    std::string estimate;
    int event_year = 0;
    std::string params_source = "estimate"; // estimate or config
};

struct RunConfig {
    int schema_version = kConfigSchemaVersion;
    CalibratedParams params{};
    StructuralParams truth{0.827, 0.454};
    HeatmapConfig heatmap{};
    PanelConfig panel{};
    FilterPolicy filters{};
    bool apply_filters = false; // generated panels have no recording errors to clean
    EstimateConfig estimate{};
    MonteCarloConfig montecarlo{};
    ValidateConfig validate{};
    DecomposeConfig decompose{};
};

namespace detail {

// Pulls typed fields out of one JSON object and reports the path of any
// missing-type or unknown key.
class Fields {
public:
    Fields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }
    ~Fields() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown key");
    }
    template <class T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }
    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }
    Fields sub(const std::string& key) { return Fields(j_.at(key), path_ + "." + key); }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void read_params(Fields f, CalibratedParams& p) {
    double nu = p.nu, gamma = p.gamma, rho = p.rho, varrho = p.varrho;
    f.get("nu", nu);
    f.get("gamma", gamma);
    f.get("rho", rho);
    f.get("varrho", varrho);
    p = CalibratedParams::make(nu, gamma, rho, varrho);
}

inline void read_truth(Fields f, StructuralParams& s) {
    f.get("phi", s.phi);
    f.get("theta", s.theta);
    s.validate();
}

inline void read_panel(Fields f, PanelConfig& c) {
    f.get("n_products", c.n_products);
    f.get("n_countries", c.n_countries);
    f.get("exporters_per_product", c.exporters_per_product);
    f.get("importers_per_product", c.importers_per_product);
    f.get("product_size_spread", c.product_size_spread);
    f.get("n_importers", c.n_importers);
    f.get("min_buyers", c.min_buyers);
    f.get("max_buyers", c.max_buyers);
    f.get("first_year", c.first_year);
    f.get("n_years", c.n_years);
    f.get("sd_log_cost", c.sd_log_cost);
    f.get("sd_log_taste", c.sd_log_taste);
    f.get("sd_log_demand", c.sd_log_demand);
    f.get("sd_log_productivity", c.sd_log_productivity);
    f.get("cost_noise_sd", c.cost_noise_sd);
    f.get("demand_shock_sd", c.demand_shock_sd);
    f.get("baseline_tariff", c.baseline_tariff);
    f.get("treated_share", c.treated_share);
    f.get("tariff_increase", c.tariff_increase);
    f.get("event_response", c.event_response);
    f.get("seed", c.seed);
    if (f.has("solver")) {
        auto s = f.sub("solver");
        s.get("tol", c.solver.tol);
        s.get("max_iter", c.solver.max_iter);
        s.get("damping", c.solver.damping);
    }
}

inline void read_filters(Fields f, FilterPolicy& p) {
    f.get("trim_unit_values", p.trim_unit_values);
    f.get("lower_percentile", p.lower_percentile);
    f.get("upper_percentile", p.upper_percentile);
    f.get("drop_large_changes", p.drop_large_changes);
    f.get("max_abs_log_change", p.max_abs_log_change);
    f.get("require_consecutive", p.require_consecutive);
    f.get("require_two_buyers", p.require_two_buyers);
    if (!(p.lower_percentile >= 0.0 && p.lower_percentile < p.upper_percentile && p.upper_percentile <= 100.0))
        throw ConfigError("config.filters: percentiles must satisfy 0 <= lower < upper <= 100");
}

inline PhiForm parse_phi_form(const std::string& s, const std::string& path) {
    if (s == "constant") return PhiForm::Constant;
    if (s == "logistic") return PhiForm::Logistic;
    throw ConfigError(path + ": phi_form must be 'constant' or 'logistic'");
}

inline void read_estimate(Fields f, EstimateConfig& e) {
    f.get("method", e.method);
    f.get("input", e.input);
    f.get("exclude_event_year", e.exclude_event_year);
    f.get("instruments", e.gmm.instruments);
    f.get("demean", e.gmm.demean);
    std::string form = "constant";
    f.get("phi_form", form);
    e.gmm.phi_form = parse_phi_form(form, "config.estimate.phi_form");
    f.get("theta_lower", e.gmm.theta_lower);
    f.get("theta_upper", e.gmm.theta_upper);
    f.get("phi_lower", e.gmm.phi_lower);
    f.get("phi_upper", e.gmm.phi_upper);
    f.get("kappa_start", e.gmm.kappa_start);
    if (e.method != "gmm" && e.method != "nls" && e.method != "nls_theta1")
        throw ConfigError("config.estimate.method must be gmm, nls or nls_theta1");
}

inline void read_montecarlo(Fields f, MonteCarloConfig& m) {
    auto& d = m.design;
    f.get("n_exporters", d.n_exporters);
    f.get("importers_per_exporter", d.importers_per_exporter);
    f.get("n_replicas", d.n_replicas);
    f.get("share_law", d.share_law);
    f.get("noise_sd", d.noise_sd);
    f.get("kappa", d.kappa);
    f.get("seed", d.seed);
    f.get("restricted", m.restricted);
    f.get("histogram_bins", m.histogram_bins);
    if (m.histogram_bins < 1) throw ConfigError("config.montecarlo.histogram_bins must be positive");
}

inline void read_validate(Fields f, ValidateConfig& v) {
    f.get("input", v.input);
    f.get("estimate", v.estimate);
    f.get("event_year", v.event_year);
    f.get("fixed_effects", v.fixed_effects);
    f.get("clusters", v.clusters);
    f.get("weak_f", v.weak_f);
    const std::set<std::string> dims{"product", "country", "exporter", "importer", "product_country"};
    for (const auto& d : v.fixed_effects)
        if (!dims.count(d)) throw ConfigError("config.validate.fixed_effects: unknown dimension '" + d + "'");
    for (const auto& d : v.clusters)
        if (!dims.count(d)) throw ConfigError("config.validate.clusters: unknown dimension '" + d + "'");
}

inline void read_decompose(Fields f, DecomposeConfig& d) {
    f.get("input", d.input);
    f.get("estimate", d.estimate);
    f.get("event_year", d.event_year);
    f.get("params_source", d.params_source);
    if (d.params_source != "estimate" && d.params_source != "config")
        throw ConfigError("config.decompose.params_source must be 'estimate' or 'config'");
}

} // namespace detail

// Parameters and truth are shared by every stage: the panel generator and the
// Monte Carlo design take their structural values from the top level.
inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::Fields f(j, "config");
    f.get("schema_version", c.schema_version);
    if (c.schema_version != kConfigSchemaVersion)
        throw ConfigError("config.schema_version: expected " + std::to_string(kConfigSchemaVersion) + ", got " +
                          std::to_string(c.schema_version));
    if (f.has("params")) detail::read_params(f.sub("params"), c.params);
    if (f.has("truth")) detail::read_truth(f.sub("truth"), c.truth);
    if (f.has("heatmap")) {
        auto h = f.sub("heatmap");
        h.get("resolution", c.heatmap.resolution);
        h.get("phi_values", c.heatmap.phi_values);
        h.get("theta_values", c.heatmap.theta_values);
    }
    if (f.has("panel")) detail::read_panel(f.sub("panel"), c.panel);
    f.get("apply_filters", c.apply_filters);
    if (f.has("filters")) detail::read_filters(f.sub("filters"), c.filters);
    if (f.has("estimate")) detail::read_estimate(f.sub("estimate"), c.estimate);
    if (f.has("montecarlo")) detail::read_montecarlo(f.sub("montecarlo"), c.montecarlo);
    if (f.has("validate")) detail::read_validate(f.sub("validate"), c.validate);
    if (f.has("decompose")) detail::read_decompose(f.sub("decompose"), c.decompose);

    c.panel.truth = c.truth;
    c.panel.params = c.params;
    c.montecarlo.design.truth = c.truth;
    c.montecarlo.design.params = c.params;
    if (c.heatmap.resolution < 2) throw ConfigError("config.heatmap.resolution must be at least 2");
    c.panel.validate();
    c.montecarlo.design.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json panel = panel_config_to_json(c.panel);
    panel.erase("phi");
    panel.erase("theta");
    panel["solver"] = {{"tol", c.panel.solver.tol}, {"max_iter", c.panel.solver.max_iter},
                       {"damping", c.panel.solver.damping}};
    const auto& g = c.estimate.gmm;
    const auto& d = c.montecarlo.design;
    return {{"schema_version", c.schema_version},
            {"params", {{"nu", c.params.nu}, {"gamma", c.params.gamma}, {"rho", c.params.rho},
                        {"varrho", c.params.varrho}}},
            {"truth", {{"phi", c.truth.phi}, {"theta", c.truth.theta}}},
            {"heatmap", {{"resolution", c.heatmap.resolution}, {"phi_values", c.heatmap.phi_values},
                         {"theta_values", c.heatmap.theta_values}}},
            {"panel", panel},
            {"apply_filters", c.apply_filters},
            {"filters", {{"trim_unit_values", c.filters.trim_unit_values},
                         {"lower_percentile", c.filters.lower_percentile},
                         {"upper_percentile", c.filters.upper_percentile},
                         {"drop_large_changes", c.filters.drop_large_changes},
                         {"max_abs_log_change", c.filters.max_abs_log_change},
                         {"require_consecutive", c.filters.require_consecutive},
                         {"require_two_buyers", c.filters.require_two_buyers}}},
            {"estimate", {{"method", c.estimate.method}, {"input", c.estimate.input},
                          {"exclude_event_year", c.estimate.exclude_event_year},
                          {"instruments", g.instruments}, {"demean", g.demean},
                          {"phi_form", g.phi_form == PhiForm::Constant ? "constant" : "logistic"},
                          {"theta_lower", g.theta_lower}, {"theta_upper", g.theta_upper},
                          {"phi_lower", g.phi_lower}, {"phi_upper", g.phi_upper},
                          {"kappa_start", g.kappa_start}}},
            {"montecarlo", {{"n_exporters", d.n_exporters}, {"importers_per_exporter", d.importers_per_exporter},
                            {"n_replicas", d.n_replicas}, {"share_law", d.share_law},
                            {"noise_sd", d.noise_sd}, {"kappa", d.kappa}, {"seed", d.seed},
                            {"restricted", c.montecarlo.restricted},
                            {"histogram_bins", c.montecarlo.histogram_bins}}},
            {"validate", {{"input", c.validate.input}, {"estimate", c.validate.estimate},
                          {"event_year", c.validate.event_year}, {"fixed_effects", c.validate.fixed_effects},
                          {"clusters", c.validate.clusters}, {"weak_f", c.validate.weak_f}}},
            {"decompose", {{"input", c.decompose.input}, {"estimate", c.decompose.estimate},
                           {"event_year", c.decompose.event_year},
                           {"params_source", c.decompose.params_source}}}};
}

// FNV-1a over the canonical (sorted-key) dump of the resolved config.
inline std::string config_hash(const RunConfig& c) {
    const std::string s = config_to_json(c).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

} // namespace bargain
