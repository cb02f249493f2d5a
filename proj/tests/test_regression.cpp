#include <bargain/regression.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace bargain;

namespace {

// Dense dummy-variable design: regressors plus one dummy per level of every
// FE dimension except the first level of dimensions after the first.
Eigen::MatrixXd dummy_design(const Eigen::MatrixXd& X, const std::vector<std::vector<std::int64_t>>& fe) {
    std::vector<Eigen::VectorXd> cols;
    for (std::size_t d = 0; d < fe.size(); ++d) {
        std::int64_t G = 0;
        const auto code = compact_codes(fe[d], &G);
        for (std::int64_t g = d == 0 ? 0 : 1; g < G; ++g) {
            Eigen::VectorXd c = Eigen::VectorXd::Zero(X.rows());
            for (Eigen::Index r = 0; r < X.rows(); ++r) c[r] = code[r] == g ? 1.0 : 0.0;
            cols.push_back(c);
        }
    }
    Eigen::MatrixXd D(X.rows(), X.cols() + static_cast<Eigen::Index>(cols.size()));
    D.leftCols(X.cols()) = X;
    for (std::size_t k = 0; k < cols.size(); ++k) D.col(X.cols() + static_cast<Eigen::Index>(k)) = cols[k];
    return D;
}

struct Synthetic {
    Frame frame;
    Eigen::VectorXd y, x1, x2, z1, z2, w;
    std::vector<std::int64_t> f1, f2, c1, c2;
};

Synthetic make_data(int n, std::uint64_t seed, bool endogenous = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_int_distribution<int> g1(0, 6), g2(0, 4), gc(0, 9);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    Synthetic s;
    s.y.resize(n);
    s.x1.resize(n);
    s.x2.resize(n);
    s.z1.resize(n);
    s.z2.resize(n);
    s.w.resize(n);
    for (int r = 0; r < n; ++r) {
        s.f1.push_back(g1(rng));
        s.f2.push_back(g2(rng));
        s.c1.push_back(gc(rng));
        s.c2.push_back(gc(rng));
        s.z1[r] = z(rng);
        s.z2[r] = z(rng);
        const double v = z(rng);
        s.x1[r] = z(rng) + 0.3 * s.f1.back();
        s.x2[r] = endogenous ? 0.8 * s.z1[r] + 0.5 * s.z2[r] + v : z(rng);
        s.y[r] = 1.5 * s.x1[r] - 0.7 * s.x2[r] + 0.2 * s.f1.back() - 0.4 * s.f2.back() + z(rng) + (endogenous ? v : 0.0);
        s.w[r] = u(rng);
    }
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    s.frame.add("y", vec(s.y));
    s.frame.add("x1", vec(s.x1));
    s.frame.add("x2", vec(s.x2));
    s.frame.add("z1", vec(s.z1));
    s.frame.add("z2", vec(s.z2));
    s.frame.add("w", vec(s.w));
    s.frame.add_factor("f1", s.f1);
    s.frame.add_factor("f2", s.f2);
    s.frame.add_factor("c1", s.c1);
    s.frame.add_factor("c2", s.c2);
    return s;
}

} // namespace

TEST(WithinTransform, SingleDimensionIsExactGroupDemeaning) {
    Eigen::MatrixXd X(6, 1);
    X << 1, 2, 3, 10, 20, 30;
    const std::vector<std::vector<std::int64_t>> fe{{0, 0, 0, 1, 1, 1}};
    const auto r = within_transform(X, fe);
    EXPECT_EQ(r.iterations, 1);
    Eigen::VectorXd expect(6);
    expect << -1, 0, 1, -10, 0, 10;
    EXPECT_LT((r.data.col(0) - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(WithinTransform, ConstantColumnBecomesZero) {
    const auto d = make_data(80, 1);
    Eigen::MatrixXd X = Eigen::MatrixXd::Constant(80, 1, 3.7);
    const auto r = within_transform(X, {d.f1, d.f2});
    EXPECT_LT(r.data.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(WithinTransform, TwoWayBalancedGridMatchesDummyRegression) {
    // 3x3 grid, two observations per cell.
    Eigen::MatrixXd X(18, 1);
    std::vector<std::int64_t> a, b;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 2; ++k) {
                a.push_back(i);
                b.push_back(j);
                X(static_cast<Eigen::Index>(a.size() - 1), 0) = z(rng);
            }
    const auto r = within_transform(X, {a, b});
    const Eigen::MatrixXd D = dummy_design(Eigen::MatrixXd(18, 0), {a, b});
    const Eigen::VectorXd fitted = D * D.colPivHouseholderQr().solve(X.col(0));
    EXPECT_LT((r.data.col(0) - (X.col(0) - fitted)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(WithinTransform, Idempotent) {
    const auto d = make_data(150, 2);
    Eigen::MatrixXd X(150, 2);
    X << d.x1, d.y;
    const auto once = within_transform(X, {d.f1, d.f2}, d.w);
    const auto twice = within_transform(once.data, {d.f1, d.f2}, d.w);
    EXPECT_LT((once.data - twice.data).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(once.max_group_mean, 1e-10);
}

TEST(WithinTransform, NonConvergenceIsReported) {
    const auto d = make_data(150, 2);
    Eigen::MatrixXd X(150, 1);
    X << d.x1;
    EXPECT_THROW(within_transform(X, {d.f1, d.f2}, {}, 1e-300, 2), ConvergenceError);
}

TEST(Ols, RecoversSlopeWithoutFixedEffects) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> x, y;
    for (int r = 0; r < 2000; ++r) {
        x.push_back(z(rng));
        y.push_back(1.0 + 2.0 * x.back() + 0.1 * z(rng));
    }
    Frame f;
    f.add("x", x);
    f.add("y", y);
    RegressionSpec s;
    s.dependent = "y";
    s.regressors = {"x"};
    const auto r = ols(s, f);
    EXPECT_NEAR(r.b("x"), 2.0, 0.01);
    EXPECT_NEAR(r.b("(intercept)"), 1.0, 0.01);
}

TEST(Ols, ExactFitHasUnitR2AndZeroCovariance) {
    Frame f;
    f.add("x", {1, 2, 3, 4, 5, 6});
    f.add("y", {3, 5, 7, 9, 11, 13});
    f.add_factor("g", std::vector<std::int64_t>{0, 0, 1, 1, 2, 2});
    RegressionSpec s;
    s.dependent = "y";
    s.regressors = {"x"};
    s.clusters = {"g"};
    const auto r = ols(s, f);
    EXPECT_NEAR(r.b("x"), 2.0, 1e-12);
    EXPECT_NEAR(r.r2, 1.0, 1e-12);
    EXPECT_LT(r.vcov.cwiseAbs().maxCoeff(), 1e-20);
}

TEST(Ols, AbsorbedMatchesDummyVariablesOnSmallInstances) {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        const auto d = make_data(200, seed);
        RegressionSpec s;
        s.dependent = "y";
        s.regressors = {"x1", "x2"};
        s.fixed_effects = {"f1", "f2"};
        s.drop_singletons = false;
        s.fe_tol = 1e-14;
        s.weight = "w";
        const auto r = ols(s, d.frame);
        Eigen::MatrixXd X(200, 2);
        X << d.x1, d.x2;
        const Eigen::MatrixXd D = dummy_design(X, {d.f1, d.f2});
        const Eigen::VectorXd sw = d.w.cwiseSqrt();
        const Eigen::MatrixXd Dw = D.array().colwise() * sw.array();
        const Eigen::VectorXd b = Dw.colPivHouseholderQr().solve(d.y.cwiseProduct(sw));
        EXPECT_NEAR(r.b("x1"), b[0], 1e-10);
        EXPECT_NEAR(r.b("x2"), b[1], 1e-10);
    }
}

TEST(Tsls, MatchesBruteForceAlgebraWithFixedEffects) {
    for (std::uint64_t seed = 20; seed < 24; ++seed) {
        const auto d = make_data(200, seed, true);
        RegressionSpec s;
        s.dependent = "y";
        s.regressors = {"x1", "x2"};
        s.endogenous = {"x2"};
        s.instruments = {"z1", "z2"};
        s.fixed_effects = {"f1", "f2"};
        s.drop_singletons = false;
        s.fe_tol = 1e-14;
        const auto r = tsls(s, d.frame);
        Eigen::MatrixXd X(200, 2), Zex(200, 3);
        X << d.x1, d.x2;
        Zex << d.x1, d.z1, d.z2;
        const Eigen::MatrixXd D = dummy_design(X, {d.f1, d.f2});
        const Eigen::MatrixXd Z = dummy_design(Zex, {d.f1, d.f2});
        const Eigen::MatrixXd Pz = Z * (Z.transpose() * Z).ldlt().solve(Z.transpose());
        const Eigen::VectorXd b = (D.transpose() * Pz * D).ldlt().solve(D.transpose() * Pz * d.y);
        EXPECT_NEAR(r.b("x1"), b[0], 1e-10);
        EXPECT_NEAR(r.b("x2"), b[1], 1e-10);
        EXPECT_EQ(r.first_stage_f.size(), 1u);
        EXPECT_GT(r.first_stage_f[0], 10.0);
    }
}

TEST(Tsls, InstrumentEqualToRegressorCollapsesToOls) {
    const auto d = make_data(150, 30);
    RegressionSpec s;
    s.dependent = "y";
    s.regressors = {"x1", "x2"};
    s.fixed_effects = {"f1"};
    s.clusters = {"c1"};
    const auto o = ols(s, d.frame);
    s.endogenous = {"x2"};
    s.instruments = {"x2"};
    const auto t = tsls(s, d.frame);
    EXPECT_LT((o.coef - t.coef).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((o.vcov - t.vcov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ClusterCovariance, OneWayMatchesManualSandwich) {
    const auto d = make_data(120, 40);
    RegressionSpec s;
    s.dependent = "y";
    s.regressors = {"x1", "x2"};
    s.clusters = {"c1"};
    const auto r = ols(s, d.frame);
    Eigen::MatrixXd X(120, 3);
    X << Eigen::VectorXd::Ones(120), d.x1, d.x2;
    const Eigen::MatrixXd bread = (X.transpose() * X).inverse();
    const Eigen::VectorXd b = bread * X.transpose() * d.y;
    const Eigen::VectorXd u = d.y - X * b;
    std::int64_t G = 0;
    const auto code = compact_codes(d.c1, &G);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(G, 3);
    for (int k = 0; k < 120; ++k) sums.row(code[k]) += X.row(k) * u[k];
    const double c = (G / (G - 1.0)) * (119.0 / (120.0 - 3.0));
    const Eigen::MatrixXd V = c * bread * sums.transpose() * sums * bread;
    EXPECT_LT((r.vcov - V).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(r.n_clusters.at(0), static_cast<std::size_t>(G));
}

TEST(ClusterCovariance, TwoWayIsSymmetricPsd) {
    const auto d = make_data(200, 41);
    RegressionSpec s;
    s.dependent = "y";
    s.regressors = {"x1", "x2"};
    s.fixed_effects = {"f1"};
    s.clusters = {"c1", "c2"};
    const auto r = ols(s, d.frame);
    EXPECT_LT((r.vcov - r.vcov.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r.vcov);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-15);
    EXPECT_EQ(r.n_clusters.size(), 2u);
}

TEST(Regression, ErrorsAreSurfaced) {
    const auto d = make_data(60, 50);
    RegressionSpec s;
    s.dependent = "y";
    s.regressors = {"x1", "x1*x2", "x1*x2"};
    EXPECT_THROW(ols(s, d.frame), SingularError);
    s.regressors = {"x1"};
    Frame f = d.frame;
    f.add_factor("one", std::vector<std::int64_t>(60, 0));
    s.clusters = {"one"};
    EXPECT_THROW(ols(s, f), DataError);
    s.clusters = {};
    s.regressors = {"missing"};
    EXPECT_THROW(ols(s, d.frame), DataError);
}

TEST(Regression, SingletonsDroppedAndCounted) {
    Frame f;
    f.add("x", {1, 2, 3, 4, 5, 7});
    f.add("y", {2, 4, 7, 8, 10, 1});
    f.add_factor("g", std::vector<std::int64_t>{0, 0, 1, 1, 1, 2});
    RegressionSpec s;
    s.dependent = "y";
    s.regressors = {"x"};
    s.fixed_effects = {"g"};
    const auto r = ols(s, f);
    EXPECT_EQ(r.n_singletons_dropped, 1u);
    EXPECT_EQ(r.n_obs, 5u);
}

TEST(Regression, InteractionsAndFactorProducts) {
    const auto d = make_data(100, 60);
    const auto col = d.frame.column("x1*x2");
    for (int k = 0; k < 100; ++k) EXPECT_DOUBLE_EQ(col[k], d.x1[k] * d.x2[k]);
    const auto fac = d.frame.factor("f1#f2");
    for (int a = 0; a < 100; ++a)
        for (int b = 0; b < 100; ++b)
            EXPECT_EQ(fac[a] == fac[b], d.f1[a] == d.f1[b] && d.f2[a] == d.f2[b]);
}
