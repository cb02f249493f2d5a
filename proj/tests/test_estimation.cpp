#include <bargain/estimation.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace bargain;

namespace {

ShareRecord row(std::string i, std::string e, double price, double s, double x, std::string h = "H", int year = 2000) {
    ShareRecord r;
    r.importer = std::move(i);
    r.exporter = std::move(e);
    r.product = std::move(h);
    r.year = year;
    r.price = price;
    r.s = s;
    r.x = x;
    return r;
}

MonteCarloDesign noiseless(int n_exporters, StructuralParams truth = {0.827, 0.454}) {
    MonteCarloDesign d;
    d.n_exporters = n_exporters;
    d.noise_sd = 0.0;
    d.truth = truth;
    return d;
}

SharePanel pre_event_rows(const SharePanel& p, int last_year) {
    SharePanel out;
    out.covariate_names = p.covariate_names;
    for (const auto& r : p.rows)
        if (r.year < last_year) out.rows.push_back(r);
    return out;
}

} // namespace

TEST(PairMoments, CountsFollowBuyerPairs) {
    SharePanel two;
    two.rows = {row("I1", "A", 2.0, 0.5, 0.4), row("I2", "A", 1.0, 0.3, 0.6)};
    EXPECT_EQ(build_pair_moments(two).size(), 1u);
    SharePanel three;
    three.rows = {row("I1", "A", 2.0, 0.5, 0.3), row("I2", "A", 1.0, 0.3, 0.3), row("I3", "A", 4.0, 0.2, 0.4),
                  row("I1", "B", 1.0, 0.5, 1.0)};
    EXPECT_EQ(build_pair_moments(three).size(), 3u);
}

TEST(PairMoments, GapIsLogPriceDifferenceOrderedByBuyer) {
    SharePanel p;
    p.rows = {row("I2", "A", 1.0, 0.3, 0.6), row("I1", "A", 2.0, 0.5, 0.4)};
    const auto m = build_pair_moments(p);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].buyer_j, "I1");
    EXPECT_DOUBLE_EQ(m[0].gap, std::log(2.0));
    EXPECT_DOUBLE_EQ(m[0].sh_j.s, 0.5);
    EXPECT_DOUBLE_EQ(m[0].sh_l.x, 0.6);
}

TEST(PairMoments, DuplicateRowsRejected) {
    SharePanel p;
    p.rows = {row("I1", "A", 1.0, 0.3, 0.5), row("I1", "A", 2.0, 0.5, 0.5)};
    EXPECT_THROW(build_pair_moments(p), DataError);
}

TEST(LogisticPhi, EdgeCases) {
    EXPECT_DOUBLE_EQ(logistic_phi({}, {0.0}), 0.5);
    EXPECT_DOUBLE_EQ(logistic_phi({1000.0}, {0.0, 1.0}), 1.0);
    EXPECT_DOUBLE_EQ(logistic_phi({-1000.0}, {0.0, 1.0}), 0.0);
    EXPECT_NEAR(logistic_phi({2.0}, {1.0, -0.5}), 0.5, 1e-15);
    EXPECT_THROW(logistic_phi({1.0}, {1.0}), DomainError);
    // The reference coefficients at typical covariate values stay inside (0,1).
    const auto k = reference_kappa();
    for (double c : {0.0, 1.0, 3.0}) {
        const double ph = logistic_phi({c, c, 1.0, c}, k);
        EXPECT_GT(ph, 0.0);
        EXPECT_LT(ph, 1.0);
    }
}

TEST(Nls, ObjectiveVanishesAtTruthOnNoiselessData) {
    const auto d = noiseless(200);
    const auto panel = generate_montecarlo_replica(d, 0);
    const auto moments = build_pair_moments(panel);
    ModelSpec spec;
    spec.logit_phi = false;
    const MomentModel model(moments, spec, d.params);
    Eigen::VectorXd truth(2);
    truth << d.truth.phi, d.truth.theta;
    EXPECT_LE(model.residuals(truth).squaredNorm(), 1e-12);
}

TEST(Nls, RecoversTruthOnNoiselessData) {
    const auto d = noiseless(200);
    const auto panel = generate_montecarlo_replica(d, 0);
    const auto r = nls_joint(build_pair_moments(panel), d.params);
    EXPECT_NEAR(r.phi, d.truth.phi, 1e-6);
    EXPECT_NEAR(r.theta, d.truth.theta, 1e-6);
    EXPECT_LE(r.objective, 1e-12);
    EXPECT_TRUE(r.converged);
    EXPECT_FALSE(r.boundary);
    EXPECT_EQ(r.n_moments, 200u); // one buyer pair per exporter
}

TEST(Nls, LogitAndDirectParameterizationsAgree) {
    MonteCarloDesign d;
    d.n_exporters = 2000;
    const auto panel = generate_montecarlo_replica(d, 5);
    const auto moments = build_pair_moments(panel);
    NlsOptions direct, logit;
    logit.logit_phi = true;
    const auto a = nls_joint(moments, d.params, direct);
    const auto b = nls_joint(moments, d.params, logit);
    ASSERT_FALSE(a.boundary);
    EXPECT_NEAR(a.phi, b.phi, 1e-8);
    EXPECT_NEAR(a.theta, b.theta, 1e-8);
    // Delta-method standard errors of phi agree to first order.
    EXPECT_NEAR(a.implied.se_mean, b.implied.se_mean, 1e-3 * a.implied.se_mean);
}

TEST(Nls, RestrictedModelRecoversPhiWhenThetaIsOne) {
    const auto d = noiseless(200, {0.6, 1.0});
    const auto panel = generate_montecarlo_replica(d, 2);
    const auto r = estimate_restricted_theta1(build_pair_moments(panel), d.params);
    EXPECT_NEAR(r.phi, 0.6, 1e-6);
    EXPECT_DOUBLE_EQ(r.theta, 1.0);
    EXPECT_EQ(r.names, std::vector<std::string>{"phi"});
}

TEST(Nls, HeterogeneousPhiGivesEstimateInsideSupport) {
    MonteCarloDesign d;
    d.n_exporters = 2000;
    d.noise_sd = 0.0;
    d.kappa = {1.5, 0.8};
    const auto panel = generate_montecarlo_replica(d, 1);
    double lo = 1.0, hi = 0.0;
    for (const auto& r : panel.rows) {
        const double ph = logistic_phi(r.covariates, d.kappa);
        lo = std::min(lo, ph);
        hi = std::max(hi, ph);
    }
    const auto r = nls_joint(build_pair_moments(panel), d.params);
    EXPECT_GT(r.phi, lo);
    EXPECT_LT(r.phi, hi);
}

TEST(Nls, LogisticModelRecoversKappaOnNoiselessData) {
    MonteCarloDesign d;
    d.n_exporters = 400;
    d.noise_sd = 0.0;
    d.kappa = {1.5, 0.8};
    const auto panel = generate_montecarlo_replica(d, 1);
    NlsOptions o;
    o.phi_form = PhiForm::Logistic;
    const auto r = nls_joint(build_pair_moments(panel), d.params, o);
    ASSERT_EQ(r.kappa.size(), 2u);
    EXPECT_NEAR(r.kappa[0], 1.5, 1e-4);
    EXPECT_NEAR(r.kappa[1], 0.8, 1e-4);
    EXPECT_NEAR(r.theta, d.truth.theta, 1e-5);

    const auto stats = implied_phi_stats(r, panel);
    double mean = 0.0;
    for (const auto& row : panel.rows) mean += logistic_phi(row.covariates, d.kappa);
    mean /= static_cast<double>(panel.rows.size());
    EXPECT_NEAR(stats.mean, mean, 1e-4);
    EXPECT_GT(stats.median, 0.0);
    EXPECT_LT(stats.median, 1.0);
}

TEST(ImpliedPhi, ZeroSlopesGiveConstantPhi) {
    EstimateResult r;
    r.spec.phi_form = PhiForm::Logistic;
    r.spec.n_covariates = 2;
    r.estimate = Eigen::Vector3d(0.7, 0.0, 0.0);
    r.vcov = Eigen::Matrix3d::Identity() * 0.01;
    SharePanel p;
    for (int k = 0; k < 5; ++k) {
        auto rr = row("I" + std::to_string(k), "A", 1.0, 0.5, 0.5);
        rr.covariates = {0.1 * k, -0.3 * k};
        p.rows.push_back(rr);
    }
    const auto s = implied_phi_stats(r, p);
    EXPECT_NEAR(s.mean, logistic(0.7), 1e-15);
    EXPECT_NEAR(s.median, logistic(0.7), 1e-15);
}

TEST(Gmm, RecoversTruthOnNoiselessPanel) {
    PanelConfig cfg;
    cfg.n_products = 12;
    cfg.cost_noise_sd = 0.0;
    const auto panel = pre_event_rows(compute_shares(generate_panel(cfg)), cfg.first_year + cfg.n_years - 1);
    const auto moments = build_pair_moments(panel);
    const auto r = gmm_estimate(moments, panel, GmmConfig{}, cfg.params);
    EXPECT_NEAR(r.phi, cfg.truth.phi, 1e-6);
    EXPECT_NEAR(r.theta, cfg.truth.theta, 1e-6);
    EXPECT_EQ(r.n_instruments, 7u);
}

TEST(Gmm, FixedProductSizesDropCountInstruments) {
    PanelConfig cfg;
    cfg.n_products = 12;
    cfg.cost_noise_sd = 0.0;
    cfg.product_size_spread = 0.0;
    const auto panel = pre_event_rows(compute_shares(generate_panel(cfg)), cfg.first_year + cfg.n_years - 1);
    const auto r = gmm_estimate(build_pair_moments(panel), panel, GmmConfig{}, cfg.params);
    // With every product the same size the two counts duplicate the constant.
    EXPECT_EQ(r.n_instruments, 5u);
    const auto collinear = std::count_if(r.notes.begin(), r.notes.end(),
                                         [](const std::string& n) { return n.find("collinear") != std::string::npos; });
    EXPECT_EQ(collinear, 2);
    EXPECT_NEAR(r.phi, cfg.truth.phi, 1e-6);
}

TEST(Gmm, ProductDemeaningDropsConstantInstrument) {
    PanelConfig cfg;
    cfg.n_products = 12;
    const auto panel = pre_event_rows(compute_shares(generate_panel(cfg)), cfg.first_year + cfg.n_years - 1);
    const auto moments = build_pair_moments(panel);
    GmmConfig g;
    g.demean = {"product"};
    const auto r = gmm_estimate(moments, panel, g, cfg.params);
    EXPECT_EQ(std::count(r.instruments.begin(), r.instruments.end(), "const"), 0);
    EXPECT_TRUE(std::isfinite(r.phi));
    EXPECT_GT(r.se(0), 0.0);
}

TEST(Gmm, TooFewInstrumentsRejected) {
    PanelConfig cfg;
    cfg.n_products = 4;
    const auto panel = compute_shares(generate_panel(cfg));
    GmmConfig g;
    g.instruments = {"const"};
    EXPECT_THROW(gmm_estimate(build_pair_moments(panel), panel, g, cfg.params), SingularError);
}

TEST(MonteCarloRun, ParallelMatchesSerial) {
    MonteCarloDesign d;
    d.n_exporters = 40;
    d.n_replicas = 4;
    MonteCarloOptions serial, par;
    par.jobs = 3;
    const auto a = run_montecarlo(d, serial);
    const auto b = run_montecarlo(d, par);
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k].phi, b[k].phi);
        EXPECT_EQ(a[k].theta, b[k].theta);
        EXPECT_EQ(a[k].phi_restricted, b[k].phi_restricted);
    }
}

TEST(Summaries, BasicStatistics) {
    const auto s = summarize({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_DOUBLE_EQ(s.median, 2.5);
    EXPECT_DOUBLE_EQ(s.min, 1.0);
    EXPECT_NEAR(s.sd, std::sqrt(5.0 / 3.0), 1e-15);
}
