#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sncl/gates.hpp"

using namespace sncl;

namespace {

GateParams gate_with(std::vector<double> mu, std::vector<double> log_lambda) {
    GateParams g = GateParams::init(1, static_cast<int>(mu.size()));
    g.mu->data = std::move(mu);
    g.log_lambda->data = std::move(log_lambda);
    return g;
}

} // namespace

TEST_CASE("deterministic gating multiplies by mu") {
    GateParams gate = gate_with({0.5, 1.0}, {kInitLogLambda, kInitLogLambda});
    Graph g;
    auto h = Tensor::make({1, 2}, {2, -1});
    auto out = gate_forward(g, h, gate, GateMode::kDeterministic, nullptr);
    CHECK(out->data == std::vector<double>{1, -1});
}

TEST_CASE("sampling with vanishing variance reproduces deterministic gating") {
    GateParams gate = gate_with({0.8, 1.1, 0.3}, {-40, -40, -40});
    auto h = Tensor::make({2, 3}, {1, 2, 3, -1, -2, -3});
    Graph g;
    auto det = gate_forward(g, h, gate, GateMode::kDeterministic, nullptr);
    Rng rng(42);
    auto sampled = gate_forward(g, h, gate, GateMode::kSample, &rng);
    for (std::size_t i = 0; i < det->data.size(); ++i) {
        CHECK(sampled->data[i] == doctest::Approx(det->data[i]).epsilon(1e-8));
    }
}

TEST_CASE("gate channel count must match the activations") {
    GateParams gate = GateParams::init(1, 4);
    Graph g;
    Rng rng(0);
    CHECK_THROWS_AS(gate_forward(g, Tensor::make({2, 3}), gate, GateMode::kSample, &rng),
                    ShapeError);
}

TEST_CASE("sample-mode gradient of the gate wrt mu averages to one") {
    // E[dg/dmu] = E[1 + sqrt(lambda) eps] = 1; Monte Carlo over 1e5 draws.
    const int channels = 1000;
    const int rounds = 100;
    const double lambda = 0.25;
    GateParams gate = GateParams::init(1, channels);
    std::fill(gate.log_lambda->data.begin(), gate.log_lambda->data.end(), std::log(lambda));
    auto h = Tensor::full({1, channels}, 1.0);

    Rng rng(2024);
    double sum = 0.0;
    std::size_t count = 0;
    for (int r = 0; r < rounds; ++r) {
        gate.mu->grad.clear();
        Graph g;
        auto out = gate_forward(g, h, gate, GateMode::kSample, &rng);
        g.backward(g.sum(out));
        for (double v : gate.mu->grad) {
            sum += v;
            ++count;
        }
    }
    const double mean = sum / count;
    const double sigma_mean = std::sqrt(lambda / static_cast<double>(count));
    CHECK(std::abs(mean - 1.0) < 3.0 * sigma_mean);
}

TEST_CASE("sampled gating is reproducible under a fixed seed") {
    GateParams gate = GateParams::init(1, 8);
    auto h = Tensor::full({2, 8}, 0.5);
    auto run = [&] {
        Rng rng(77);
        Graph g;
        return gate_forward(g, h, gate, GateMode::kSample, &rng)->data;
    };
    CHECK(run() == run());
}

TEST_CASE("vbs loss closed forms") {
    // 1/lambda = 0 for every channel
    GateParams zero = gate_with({1, 1}, {800, 800});
    Graph g;
    CHECK(vbs_loss(g, {zero})->item() == 0.0);

    // single gate, lambda = 1 -> 0.5 ln 2
    GateParams one = gate_with({1}, {0});
    CHECK(vbs_loss(g, {one})->item() == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));

    // 1/lambda = {1, 3, 0} -> 0.5 (ln 2 + ln 4)
    GateParams mixed = gate_with({1, 1, 1}, {0, -std::log(3.0), 800});
    CHECK(vbs_loss(g, {mixed})->item() ==
          doctest::Approx(0.5 * (std::log(2.0) + std::log(4.0))).epsilon(1e-12));
}

TEST_CASE("vbs loss needs at least one gate layer") {
    Graph g;
    CHECK_THROWS_AS(vbs_loss(g, {}), ContractError);
}

TEST_CASE("vbs loss is nonnegative, zero only at 1/lambda = 0") {
    Rng rng(5);
    std::uniform_real_distribution<double> u(-6.0, 6.0);
    for (int trial = 0; trial < 50; ++trial) {
        GateParams gate = GateParams::init(1, 5);
        for (auto& a : gate.log_lambda->data) a = u(rng);
        Graph g;
        CHECK(vbs_loss(g, {gate})->item() > 0.0);
    }
}

TEST_CASE("vbs loss is non-decreasing and concave in 1/lambda") {
    // Evaluate on a grid of 1/lambda values; log(1 + x) must rise with
    // shrinking slope.
    std::vector<double> values;
    for (int i = 0; i <= 40; ++i) {
        const double inv_lambda = i * 0.25;
        GateParams gate = gate_with({1}, {inv_lambda > 0 ? -std::log(inv_lambda) : 800});
        Graph g;
        values.push_back(vbs_loss(g, {gate})->item());
    }
    for (std::size_t i = 1; i < values.size(); ++i) {
        CHECK(values[i] >= values[i - 1]);
    }
    for (std::size_t i = 2; i < values.size(); ++i) {
        const double d1 = values[i - 1] - values[i - 2];
        const double d2 = values[i] - values[i - 1];
        CHECK(d2 <= d1 + 1e-12);
    }
}

TEST_CASE("vbs loss ignores mu exactly") {
    GateParams gate = gate_with({2.5, -1.0}, {0.3, -0.7});
    gate.mu->grad.clear();
    Graph g;
    g.backward(vbs_loss(g, {gate}));
    CHECK(gate.mu->grad.empty()); // mu never enters the regularizer graph
    CHECK_FALSE(gate.log_lambda->grad.empty());
}

TEST_CASE("vbs loss gradient matches finite differences") {
    Rng rng(9);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    GateParams gate = GateParams::init(1, 6);
    for (auto& a : gate.log_lambda->data) a = u(rng);

    auto f = [&] {
        Graph g;
        return vbs_loss(g, {gate})->item();
    };
    Graph g;
    g.backward(vbs_loss(g, {gate}));
    CHECK(oracle::max_grad_rel_err(f, gate.log_lambda) < 1e-6);
}

TEST_CASE("prune mask thresholds inverse lambda") {
    GateParams gate = gate_with({1, 1}, {-std::log(1e-5), -std::log(0.5)});
    const auto mask = prune_mask(gate, 1e-2);
    CHECK(mask == std::vector<bool>{true, false});

    // threshold below every 1/lambda -> nothing pruned
    const auto none = prune_mask(gate, 1e-9);
    CHECK(none == std::vector<bool>{false, false});

    CHECK_THROWS_AS(prune_mask(gate, 0.0), ConfigError);
    CHECK_THROWS_AS(prune_mask(gate, -1.0), ConfigError);
}

TEST_CASE("sparsity report counts partition the channels") {
    GateParams fresh = GateParams::init(1, 10);
    auto report = sparsity_report({fresh}, kDefaultPruneThreshold);
    REQUIRE(report.size() == 1);
    CHECK(report[0].pruned == 0);
    CHECK(report[0].active == 10);
    CHECK(report[0].mean_inv_lambda == doctest::Approx(100.0).epsilon(1e-9));

    GateParams mixed = gate_with({1, 1}, {-std::log(1e-5), -std::log(0.5)});
    report = sparsity_report({mixed}, 1e-2);
    CHECK(report[0].pruned == 1);
    CHECK(report[0].active == 1);
    CHECK(report[0].pruned + report[0].active == mixed.channels);
}
