#include <bargain/config.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace bargain;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
    try {
        config_from_json(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(Config, EmptyObjectGivesValidDefaults) {
    const auto c = config_from_json(json::object());
    EXPECT_EQ(c.schema_version, kConfigSchemaVersion);
    EXPECT_EQ(c.panel.truth.phi, c.truth.phi);
    EXPECT_EQ(c.montecarlo.design.truth.theta, c.truth.theta);
    EXPECT_FALSE(c.apply_filters);
    EXPECT_EQ(c.estimate.method, "gmm");
}

TEST(Config, UnknownKeysAreReportedWithTheirPath) {
    EXPECT_NE(config_error({{"panle", json::object()}}).find("panle"), std::string::npos);
    const auto msg = config_error({{"panel", {{"n_product", 3}}}});
    EXPECT_NE(msg.find("config.panel"), std::string::npos);
    EXPECT_NE(msg.find("n_product"), std::string::npos);
    EXPECT_NE(config_error({{"panel", {{"solver", {{"tolerance", 1e-8}}}}}}).find("tolerance"), std::string::npos);
}

TEST(Config, InvalidValuesRejected) {
    EXPECT_FALSE(config_error({{"schema_version", 2}}).empty());
    EXPECT_FALSE(config_error({{"estimate", {{"method", "ml"}}}}).empty());
    EXPECT_FALSE(config_error({{"validate", {{"clusters", {"year"}}}}}).empty());
    EXPECT_FALSE(config_error({{"panel", {{"product_size_spread", 1.0}}}}).empty());
    EXPECT_FALSE(config_error({{"panel", {{"n_products", "many"}}}}).empty());
    EXPECT_THROW(config_from_json({{"truth", {{"phi", 1.5}}}}), DomainError);
}

TEST(Config, SharedParametersReachEveryStage) {
    const auto c = config_from_json({{"truth", {{"phi", 0.6}, {"theta", 1.0}}}, {"params", {{"varrho", 0.8}}}});
    EXPECT_EQ(c.panel.truth.phi, 0.6);
    EXPECT_EQ(c.montecarlo.design.truth.theta, 1.0);
    EXPECT_NEAR(c.panel.params.eta, derive_eta(4.0, 0.5, 0.8), 1e-15);
}

TEST(Config, JsonRoundTripPreservesHash) {
    const auto a = config_from_json({{"panel", {{"n_products", 9}, {"seed", 44}}}, {"estimate", {{"method", "nls"}}}});
    const auto b = config_from_json(config_to_json(a));
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_NE(config_hash(a), config_hash(config_from_json(json::object())));
}

TEST(Config, LoadReportsMissingAndMalformedFiles) {
    EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
    const auto p = std::filesystem::temp_directory_path() / "bargain_bad_config.json";
    std::ofstream(p) << "{ \"panel\": ";
    EXPECT_THROW(load_config(p.string()), ConfigError);
    std::filesystem::remove(p);
}
