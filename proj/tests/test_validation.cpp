#include <bargain/validation.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace bargain;

namespace {

const CalibratedParams kParams{};
const StructuralParams kTruth{0.827, 0.454};

std::vector<EventObservation> synthetic_events(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::vector<EventObservation> out;
    for (int k = 0; k < n; ++k) {
        EventObservation o;
        o.exporter = "E" + std::to_string(k % 40);
        o.importer = "I" + std::to_string(k % 25);
        o.product = "H" + std::to_string(k % 7);
        o.country = "C" + std::to_string(k % 4);
        o.s = u(rng);
        o.x = u(rng);
        o.base_value = 1.0 + 10.0 * u(rng);
        o.dln_tariff = (k % 4 < 2) ? std::log(1.25) : 0.0;
        out.push_back(o);
    }
    return out;
}

} // namespace

TEST(PredictedChange, ZeroTariffChangeGivesZeros) {
    const auto c = predicted_change({0.4, 0.3}, 0.0, kTruth, kParams);
    EXPECT_EQ(c.dlnp, 0.0);
    EXPECT_EQ(c.dlnq, 0.0);
    EXPECT_EQ(c.dlnr, 0.0);
    EXPECT_EQ(c.dlnp_markup_only, 0.0);
    EXPECT_EQ(c.dlnp_cost_only, 0.0);
}

TEST(PredictedChange, CompletePassThroughWithoutEitherChannel) {
    // No bargaining weight on the buyer side, constant returns and an
    // atomistic supplier: both elasticities vanish.
    const auto c = predicted_change({0.0, 0.3}, 0.2, {0.0, 1.0}, kParams);
    EXPECT_NEAR(c.passthrough, 1.0, 1e-12);
    EXPECT_NEAR(c.dlnp, 0.2, 1e-12);
}

TEST(PredictedChange, QuantityAndSalesIdentities) {
    const auto c = predicted_change({0.5, 0.4}, 0.1, kTruth, kParams);
    EXPECT_NEAR(c.dlnq, -c.epsilon * c.dlnp, 1e-15);
    EXPECT_NEAR(c.dlnr, c.dlnp + c.dlnq, 1e-15);
    EXPECT_NEAR(c.dlnp, c.passthrough * 0.1, 1e-15);
    EXPECT_NEAR(1.0 / c.passthrough, 1.0 + c.markup_elasticity + c.cost_elasticity, 1e-12);
}

TEST(IvFit, ExactPredictionGivesUnitSlope) {
    const auto obs = synthetic_events(400, 1);
    const auto pred = predicted_changes(obs, kTruth, kParams);
    std::vector<double> observed, predicted, dt;
    std::map<std::string, std::vector<std::string>> factors;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        predicted.push_back(pred[k].dlnp);
        observed.push_back(pred[k].dlnp);
        dt.push_back(obs[k].dln_tariff);
        factors["product"].push_back(obs[k].product);
        factors["country"].push_back(obs[k].country);
    }
    const auto r = iv_fit_test(observed, predicted, dt, factors, {"product"}, {"country"});
    EXPECT_NEAR(r.beta, 1.0, 1e-10);
    EXPECT_LT(r.se, 1e-8);
    EXPECT_FALSE(r.weak_instrument);
}

TEST(IvFit, NoTariffVariationIsNotIdentified) {
    const std::vector<double> y{0.1, 0.2, 0.3}, dt{0.2, 0.2, 0.2};
    EXPECT_THROW(iv_fit_test(y, y, dt, {}, {}, {}), SingularError);
}

TEST(IvFit, NoisyObservationsCenterOnOne) {
    const auto obs = synthetic_events(4000, 2);
    const auto pred = predicted_changes(obs, kTruth, kParams);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z(0.0, 0.02);
    std::vector<double> observed, predicted, dt;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        predicted.push_back(pred[k].dlnp);
        observed.push_back(pred[k].dlnp + z(rng));
        dt.push_back(obs[k].dln_tariff);
    }
    const auto r = iv_fit_test(observed, predicted, dt, {}, {}, {});
    EXPECT_LT(std::abs(r.beta - 1.0), 4.0 * r.se);
}

TEST(Decomposition, VarianceSharesSumToOne) {
    const auto d = aggregate_decomposition(synthetic_events(300, 4), kTruth, kParams);
    EXPECT_NEAR(d.share_cost + d.share_markup, 1.0, 1e-12);
    EXPECT_EQ(d.n_obs, 300u);
    EXPECT_EQ(d.n_treated, 150u);
}

TEST(Decomposition, ConstantReturnsLeaveNoCostChannel) {
    const auto d = aggregate_decomposition(synthetic_events(300, 5), {0.827, 1.0}, kParams);
    EXPECT_NEAR(d.share_cost, 0.0, 1e-12);
    EXPECT_NEAR(d.share_markup, 1.0, 1e-12);
    EXPECT_NEAR(d.passthrough_cost_only, 1.0, 1e-12);
}

TEST(Decomposition, AggregatePassThroughIsValueWeightedAverage) {
    // Every observation treated by the same amount: the weighted slope
    // through the treated and untreated groups is the weighted mean.
    auto obs = synthetic_events(200, 6);
    double w = 0.0, num = 0.0;
    for (auto& o : obs) {
        if (o.dln_tariff == 0.0) continue;
        const auto c = predicted_change({o.s, o.x}, o.dln_tariff, kTruth, kParams);
        w += o.base_value;
        num += o.base_value * c.passthrough;
    }
    const auto d = aggregate_decomposition(obs, kTruth, kParams);
    EXPECT_NEAR(d.passthrough_full, num / w, 1e-12);
}

TEST(Decomposition, NoTreatedValueRejected) {
    auto obs = synthetic_events(20, 7);
    for (auto& o : obs) o.dln_tariff = 0.0;
    EXPECT_THROW(aggregate_decomposition(obs, kTruth, kParams), DataError);
}

TEST(EventSample, MatchesBaseAndEventYears) {
    SharePanel p;
    auto add = [&](std::string i, int year, double price, double tariff, double value) {
        ShareRecord r;
        r.importer = std::move(i);
        r.exporter = "A";
        r.product = "H";
        r.year = year;
        r.price = price;
        r.s = 0.5;
        r.x = 0.5;
        r.tariff = tariff;
        r.value = value;
        p.rows.push_back(r);
    };
    add("I1", 2016, 2.0, 0.0, 10.0);
    add("I1", 2017, 2.2, 0.25, 11.0);
    add("I2", 2017, 1.0, 0.25, 5.0); // no base year
    const auto obs = tariff_event_sample(p, 2017);
    ASSERT_EQ(obs.size(), 1u);
    EXPECT_NEAR(obs[0].dln_tariff, std::log(1.25), 1e-15);
    EXPECT_NEAR(obs[0].dlnp_observed, std::log(2.2 * 1.25 / 2.0), 1e-15);
    EXPECT_NEAR(obs[0].dlnq_observed, std::log(5.0 / 5.0), 1e-15);
    EXPECT_DOUBLE_EQ(obs[0].base_value, 10.0);
    EXPECT_THROW(tariff_event_sample(p, 2020), DataError);
}
