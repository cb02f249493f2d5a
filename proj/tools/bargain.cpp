// Command-line pipeline: heatmap, simulate, estimate, montecarlo, validate,
// decompose. Every run writes its resolved config and a manifest entry into
// the output directory.

#include <bargain/config.hpp>
#include <bargain/estimation.hpp>
#include <bargain/parallel.hpp>
#include <bargain/validation.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace bargain;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kConvergence = 4, kIo = 5 };

struct Options {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int jobs = 1;
    int resolution = 0;
};

struct Context {
    RunConfig cfg;
    fs::path out;
    std::vector<std::string> outputs;
    json extra = json::object();
};

std::ofstream open_out(Context& ctx, const std::string& name) {
    const fs::path p = ctx.out / name;
    std::ofstream os(p);
    if (!os) throw IoError("cannot write '" + p.string() + "'");
    ctx.outputs.push_back(name);
    return os;
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw IoError("cannot open input file '" + p.string() + "'");
    return is;
}

fs::path input_path(const Context& ctx, const std::string& configured, const std::string& fallback) {
    return configured.empty() ? ctx.out / fallback : fs::path(configured);
}

SharePanel read_panel(const fs::path& p) {
    auto is = open_in(p);
    try {
        return read_share_panel_csv(is);
    } catch (const DataError& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

json read_json(const fs::path& p) {
    auto is = open_in(p);
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

int last_year(const SharePanel& p) {
    if (p.rows.empty()) throw DataError("share panel is empty");
    int y = p.rows.front().year;
    for (const auto& r : p.rows) y = std::max(y, r.year);
    return y;
}

std::string fmt_value(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

// ------------------------------------------------------------------ commands

void cmd_heatmap(Context& ctx, const Options& opt) {
    auto& h = ctx.cfg.heatmap;
    if (opt.resolution) h.resolution = opt.resolution;
    if (h.resolution < 2) throw ConfigError("--resolution must be at least 2");
    fs::create_directories(ctx.out / "heatmap");
    std::vector<std::pair<double, double>> regimes;
    for (double th : h.theta_values)
        for (double ph : h.phi_values) regimes.push_back({ph, th});
    std::vector<std::vector<HeatmapPoint>> grids(regimes.size());
    parallel_for(regimes.size(), opt.jobs, [&](std::size_t k) {
        const StructuralParams sp{regimes[k].first, regimes[k].second};
        sp.validate();
        grids[k] = heatmap_grid(sp, ctx.cfg.params, h.resolution);
    });
    json index = json::array();
    for (std::size_t k = 0; k < regimes.size(); ++k) {
        const std::string name = "heatmap/heatmap_phi" + fmt_value(regimes[k].first) + "_theta" +
                                 fmt_value(regimes[k].second) + ".csv";
        auto os = open_out(ctx, name);
        write_heatmap_csv(os, grids[k]);
        index.push_back({{"phi", regimes[k].first}, {"theta", regimes[k].second}, {"file", name}});
    }
    ctx.extra["grids"] = index;
    std::cout << "wrote " << regimes.size() << " grids of " << h.resolution << "x" << h.resolution << " to "
              << (ctx.out / "heatmap").string() << '\n';
}

void cmd_simulate(Context& ctx, const Options&) {
    const auto& c = ctx.cfg;
    const auto g = generate_panel_detailed(c.panel);
    {
        auto os = open_out(ctx, "transactions.csv");
        write_transactions_csv(os, g.records);
    }
    FilterReport rep;
    const auto shares = c.apply_filters ? filtered_share_panel(g.records, c.filters, &rep) : compute_shares(g.records);
    {
        auto os = open_out(ctx, "shares.csv");
        write_share_panel_csv(os, shares);
    }
    double ms = 0.0, mx = 0.0;
    std::size_t treated = 0;
    for (const auto& r : shares.rows) {
        ms += r.s;
        mx += r.x;
        if (r.tariff > c.panel.baseline_tariff) ++treated;
    }
    const double n = static_cast<double>(std::max<std::size_t>(shares.rows.size(), 1));
    json report = {{"transactions", g.records.size()},
                   {"share_rows", shares.rows.size()},
                   {"treated_rows", treated},
                   {"mean_s", ms / n},
                   {"mean_x", mx / n},
                   {"event_year", c.panel.first_year + c.panel.n_years - 1},
                   {"filters",
                    {{"applied", c.apply_filters},
                     {"trimmed", rep.trimmed},
                     {"large_changes", rep.large_changes},
                     {"non_consecutive", rep.non_consecutive},
                     {"single_buyer", rep.single_buyer}}}};
    auto os = open_out(ctx, "simulate.json");
    os << report.dump(2) << '\n';
    std::cout << "simulated " << g.records.size() << " transactions, " << shares.rows.size()
              << " share rows (mean s " << std::setprecision(3) << ms / n << ", mean x " << mx / n << ")\n";
}

void cmd_estimate(Context& ctx, const Options&) {
    const auto& e = ctx.cfg.estimate;
    const fs::path in = input_path(ctx, e.input, "shares.csv");
    SharePanel panel = read_panel(in);
    if (e.exclude_event_year) {
        const int ev = last_year(panel);
        SharePanel kept;
        kept.covariate_names = panel.covariate_names;
        for (auto& r : panel.rows)
            if (r.year != ev) kept.rows.push_back(std::move(r));
        panel = std::move(kept);
        if (panel.rows.empty()) throw DataError(in.string() + ": no rows before the event year");
    }
    const auto moments = build_pair_moments(panel);
    EstimateResult r;
    if (e.method == "gmm") {
        r = gmm_estimate(moments, panel, e.gmm, ctx.cfg.params);
    } else {
        NlsOptions o;
        o.phi_form = e.gmm.phi_form;
        o.theta_lower = e.gmm.theta_lower;
        o.theta_upper = e.gmm.theta_upper;
        o.phi_lower = e.gmm.phi_lower;
        o.phi_upper = e.gmm.phi_upper;
        o.kappa_start = e.gmm.kappa_start;
        r = e.method == "nls" ? nls_joint(moments, ctx.cfg.params, o)
                              : estimate_restricted_theta1(moments, ctx.cfg.params, o);
    }
    if (r.spec.phi_form == PhiForm::Logistic) r.implied = implied_phi_stats(r, panel);
    json j = estimate_to_json(r);
    j["input"] = in.string();
    j["rows"] = panel.rows.size();
    {
        auto os = open_out(ctx, "estimate.json");
        os << j.dump(2) << '\n';
    }
    auto os = open_out(ctx, "estimate.txt");
    write_estimate_table(os, r);
    write_estimate_table(std::cout, r);
}

StructuralParams params_from_estimate(const json& j, const fs::path& p) {
    if (!j.contains("theta") || !j.contains("implied_phi"))
        throw DataError(p.string() + ": not an estimate report (missing theta or implied_phi)");
    StructuralParams sp;
    sp.theta = j.at("theta").get<double>();
    sp.phi = j.contains("phi") ? j.at("phi").get<double>() : j.at("implied_phi").at("mean").get<double>();
    sp.validate();
    return sp;
}

std::vector<EventObservation> event_sample(const SharePanel& panel, int configured_year) {
    return tariff_event_sample(panel, configured_year ? configured_year : last_year(panel));
}

void cmd_validate(Context& ctx, const Options&) {
    const auto& v = ctx.cfg.validate;
    const fs::path in = input_path(ctx, v.input, "shares.csv");
    const fs::path est = input_path(ctx, v.estimate, "estimate.json");
    const SharePanel panel = read_panel(in);
    const StructuralParams sp = params_from_estimate(read_json(est), est);
    const auto obs = event_sample(panel, v.event_year);

    std::map<std::string, std::vector<std::string>> factors;
    std::vector<double> observed, dt;
    for (const auto& o : obs) {
        observed.push_back(o.dlnp_observed);
        dt.push_back(o.dln_tariff);
        factors["product"].push_back(o.product);
        factors["country"].push_back(o.country);
        factors["exporter"].push_back(o.exporter);
        factors["importer"].push_back(o.importer);
        factors["product_country"].push_back(o.product + "|" + o.country);
    }
    auto run = [&](const StructuralParams& s) {
        const auto pred = predicted_changes(obs, s, ctx.cfg.params);
        std::vector<double> p;
        for (const auto& c : pred) p.push_back(c.dlnp);
        const auto r = iv_fit_test(observed, p, dt, factors, v.fixed_effects, v.clusters, v.weak_f);
        return std::make_pair(r, pred);
    };
    const auto [fit, pred] = run(sp);
    const auto [fit1, pred1] = run({sp.phi, 1.0});
    {
        auto os = open_out(ctx, "predicted_changes.csv");
        os.precision(12);
        os << "exporter,importer,product,country,s,x,dln_tariff,dlnp_observed,dlnp_predicted,dlnq_predicted,"
              "dlnr_predicted,dlnp_predicted_theta1\n";
        for (std::size_t k = 0; k < obs.size(); ++k)
            os << obs[k].exporter << ',' << obs[k].importer << ',' << obs[k].product << ',' << obs[k].country << ','
               << obs[k].s << ',' << obs[k].x << ',' << obs[k].dln_tariff << ',' << obs[k].dlnp_observed << ','
               << pred[k].dlnp << ',' << pred[k].dlnq << ',' << pred[k].dlnr << ',' << pred1[k].dlnp << '\n';
    }
    auto summary = [](const IvTestResult& r, const StructuralParams& s) {
        return json{{"phi", s.phi},
                    {"theta", s.theta},
                    {"beta", r.beta},
                    {"se", r.se},
                    {"first_stage_f", r.first_stage_f},
                    {"weak_instrument", r.weak_instrument},
                    {"within_2se_of_1", std::abs(r.beta - 1.0) <= 2.0 * r.se},
                    {"n_obs", r.fit.n_obs}};
    };
    json j = {{"estimated", summary(fit, sp)},
              {"theta1", summary(fit1, {sp.phi, 1.0})},
              {"fixed_effects", v.fixed_effects},
              {"clusters", v.clusters},
              {"input", in.string()},
              {"estimate", est.string()}};
    auto os = open_out(ctx, "validate.json");
    os << j.dump(2) << '\n';
    std::cout << std::fixed << std::setprecision(3) << "IV fit: beta " << fit.beta << " (" << fit.se << "), first-stage F "
              << std::setprecision(1) << fit.first_stage_f << (fit.weak_instrument ? " [weak]" : "") << ", n "
              << fit.fit.n_obs << '\n'
              << std::setprecision(3) << "theta = 1 prediction: beta " << fit1.beta << " (" << fit1.se << ")\n";
}

void cmd_decompose(Context& ctx, const Options&) {
    const auto& d = ctx.cfg.decompose;
    const fs::path in = input_path(ctx, d.input, "shares.csv");
    const SharePanel panel = read_panel(in);
    StructuralParams sp = ctx.cfg.truth;
    if (d.params_source == "estimate") {
        const fs::path est = input_path(ctx, d.estimate, "estimate.json");
        sp = params_from_estimate(read_json(est), est);
    }
    const auto obs = event_sample(panel, d.event_year);
    const auto r = aggregate_decomposition(obs, sp, ctx.cfg.params);
    json j = decomposition_to_json(r);
    j["phi"] = sp.phi;
    j["theta"] = sp.theta;
    j["params_source"] = d.params_source;
    auto os = open_out(ctx, "decomposition.json");
    os << j.dump(2) << '\n';
    std::cout << std::fixed << std::setprecision(3) << "Aggregate pass-through\n"
              << std::left << std::setw(16) << "full" << std::right << std::setw(10) << 100.0 * r.passthrough_full << '\n'
              << std::left << std::setw(16) << "markup only" << std::right << std::setw(10)
              << 100.0 * r.passthrough_markup_only << '\n'
              << std::left << std::setw(16) << "cost only" << std::right << std::setw(10)
              << 100.0 * r.passthrough_cost_only << '\n'
              << "Variance shares: cost " << r.share_cost << ", markup " << r.share_markup << '\n';
}

void write_histogram(std::ostream& os, const std::vector<double>& v, int bins, double lo, double hi) {
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    for (double x : v) {
        auto b = static_cast<long>(std::floor((x - lo) / (hi - lo) * bins));
        b = std::clamp<long>(b, 0, bins - 1);
        ++count[static_cast<std::size_t>(b)];
    }
    os << "bin_lower,bin_upper,count\n";
    for (int b = 0; b < bins; ++b)
        os << lo + (hi - lo) * b / bins << ',' << lo + (hi - lo) * (b + 1) / bins << ','
           << count[static_cast<std::size_t>(b)] << '\n';
}

void cmd_montecarlo(Context& ctx, const Options& opt) {
    const auto& m = ctx.cfg.montecarlo;
    MonteCarloOptions mo;
    mo.restricted = m.restricted;
    mo.jobs = opt.jobs;
    const auto t0 = std::chrono::steady_clock::now();
    const auto reps = run_montecarlo(m.design, mo);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::vector<double> phi, theta, phi1;
    std::size_t boundary = 0, unconverged = 0, above = 0;
    {
        auto os = open_out(ctx, "replicas.csv");
        os.precision(12);
        os << "replica,phi,theta,objective,converged,boundary,phi_theta1,theta1_boundary\n";
        for (const auto& r : reps) {
            os << r.replica << ',' << r.phi << ',' << r.theta << ',' << r.objective << ',' << r.converged << ','
               << r.boundary << ',' << r.phi_restricted << ',' << r.restricted_boundary << '\n';
            phi.push_back(r.phi);
            theta.push_back(r.theta);
            phi1.push_back(r.phi_restricted);
            boundary += r.boundary;
            unconverged += !r.converged;
            above += r.phi_restricted > m.design.truth.phi;
        }
    }
    auto js = [](const SampleSummary& s) {
        return json{{"mean", s.mean}, {"median", s.median}, {"sd", s.sd}, {"min", s.min}, {"max", s.max}, {"n", s.n}};
    };
    json j = {{"replicas", reps.size()},
              {"truth", {{"phi", m.design.truth.phi}, {"theta", m.design.truth.theta}}},
              {"phi", js(summarize(phi))},
              {"theta", js(summarize(theta))},
              {"boundary_solutions", boundary},
              {"unconverged", unconverged},
              {"seconds", secs}};
    if (m.restricted)
        j["theta1_restricted"] = {{"phi", js(summarize(phi1))},
                                  {"share_above_truth", static_cast<double>(above) / reps.size()}};
    {
        auto os = open_out(ctx, "montecarlo_summary.json");
        os << j.dump(2) << '\n';
    }
    {
        auto os = open_out(ctx, "histogram_phi.csv");
        write_histogram(os, phi, m.histogram_bins, 0.0, 1.0);
    }
    {
        auto os = open_out(ctx, "histogram_theta.csv");
        write_histogram(os, theta, m.histogram_bins, 0.0, 1.0);
    }
    if (m.restricted) {
        auto os = open_out(ctx, "histogram_phi_theta1.csv");
        write_histogram(os, phi1, m.histogram_bins, 0.0, 1.0);
    }
    const auto sp = summarize(phi), st = summarize(theta);
    std::cout << std::fixed << std::setprecision(4) << reps.size() << " replicas in " << std::setprecision(1) << secs
              << " s\n"
              << std::setprecision(4) << "phi   mean " << sp.mean << " median " << sp.median << " sd " << sp.sd << '\n'
              << "theta mean " << st.mean << " median " << st.median << " sd " << st.sd << '\n';
    if (m.restricted)
        std::cout << "theta=1 phi mean " << summarize(phi1).mean << ", above truth in " << above << " of "
                  << reps.size() << '\n';
}

// ------------------------------------------------------------------ manifest

void write_manifest(Context& ctx, const std::string& command, const Options& opt, const std::vector<std::string>& argv) {
    const fs::path path = ctx.out / "manifest.json";
    json m = json::object();
    if (fs::exists(path)) {
        std::ifstream is(path);
        try {
            m = json::parse(is);
        } catch (const json::exception&) {
            m = json::object();
        }
        if (!m.is_object()) m = json::object();
    }
    const json cfg = config_to_json(ctx.cfg);
    std::uint64_t seed = 0;
    if (command == "montecarlo") seed = ctx.cfg.montecarlo.design.seed;
    else if (command == "simulate") seed = ctx.cfg.panel.seed;
    m["version"] = kVersion;
    m["schema_version"] = kConfigSchemaVersion;
    m["runs"][command] = {{"config_hash", config_hash(ctx.cfg)},
                          {"seed", seed},
                          {"jobs", opt.jobs},
                          {"argv", argv},
                          {"outputs", ctx.outputs},
                          {"details", ctx.extra},
                          {"config", cfg}};
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << m.dump(2) << '\n';
    const fs::path resolved = ctx.out / (command + ".config.json");
    std::ofstream rs(resolved);
    if (!rs) throw IoError("cannot write '" + resolved.string() + "'");
    rs << cfg.dump(2) << '\n';
}

int report(const char* kind, const std::exception& e, int code) {
    std::cerr << "error (" << kind << "): " << e.what() << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bilateral bargaining and tariff pass-through: grids, simulation, estimation and validation"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Options opt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "JSON run configuration (defaults apply when omitted)");
        sub->add_option("--out", opt.out, "output directory (default: $BARGAIN_OUT or ./bargain_out)");
        sub->add_option("--seed", opt.seed, "override the seed of the simulation stage");
        sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
    };
    struct Cmd {
        const char* name;
        const char* help;
        void (*fn)(Context&, const Options&);
    };
    const std::vector<Cmd> cmds{
        {"heatmap", "pass-through heatmap grids over (s, x) for each (phi, theta) regime", cmd_heatmap},
        {"simulate", "generate a transaction panel with a tariff event and its share panel", cmd_simulate},
        {"estimate", "estimate (phi, theta) from a share panel", cmd_estimate},
        {"montecarlo", "replicated estimation on simulated share blocks", cmd_montecarlo},
        {"validate", "IV test of predicted against observed tariff responses", cmd_validate},
        {"decompose", "aggregate pass-through and channel decomposition", cmd_decompose},
    };
    std::vector<CLI::App*> subs;
    for (const auto& c : cmds) {
        auto* s = app.add_subcommand(c.name, c.help);
        add_common(s);
        if (std::string(c.name) == "heatmap")
            s->add_option("--resolution", opt.resolution, "grid points per axis")->check(CLI::Range(2, 100000));
        subs.push_back(s);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }
    std::size_t which = 0;
    for (std::size_t k = 0; k < subs.size(); ++k)
        if (subs[k]->parsed()) which = k;
    const Cmd& cmd = cmds[which];
    std::vector<std::string> args(argv, argv + argc);
    opt.seed_given = subs[which]->count("--seed") > 0;

    try {
        Context ctx;
        ctx.cfg = opt.config.empty() ? config_from_json(json::object()) : load_config(opt.config);
        if (opt.seed_given) {
            ctx.cfg.panel.seed = opt.seed;
            ctx.cfg.montecarlo.design.seed = opt.seed;
        }
        std::string out = opt.out;
        if (out.empty()) {
            const char* env = std::getenv("BARGAIN_OUT");
            out = env && *env ? env : "bargain_out";
        }
        ctx.out = out;
        std::error_code ec;
        fs::create_directories(ctx.out, ec);
        if (ec || !fs::is_directory(ctx.out))
            throw IoError("cannot create output directory '" + ctx.out.string() + "'");
        cmd.fn(ctx, opt);
        write_manifest(ctx, cmd.name, opt, args);
        return kOk;
    } catch (const ConfigError& e) {
        return report("config", e, kConfig);
    } catch (const DomainError& e) {
        return report("config", e, kConfig);
    } catch (const DataError& e) {
        return report("data", e, kData);
    } catch (const SingularError& e) {
        return report("data", e, kData);
    } catch (const ConvergenceError& e) {
        return report("convergence", e, kConvergence);
    } catch (const IoError& e) {
        return report("io", e, kIo);
    } catch (const fs::filesystem_error& e) {
        return report("io", e, kIo);
    } catch (const std::exception& e) {
        return report("internal", e, kOther);
    }
}
