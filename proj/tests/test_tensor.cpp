#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sncl/tensor.hpp"

using namespace sncl;

TEST_CASE("matmul identity") {
    Graph g;
    auto eye = Tensor::make({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::make({2, 2}, {1, 2, 3, 4});
    auto c = g.matmul(eye, m);
    CHECK(c->data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul matches the naive oracle") {
    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{5, 6};
    const auto want = oracle::naive_matmul(a, b, 2, 2, 1);
    CHECK(want == std::vector<double>{17, 39}); // frozen from the oracle

    Graph g;
    auto c = g.matmul(Tensor::make({2, 2}, a), Tensor::make({2, 1}, b));
    CHECK(c->data == want);
}

TEST_CASE("matmul rejects mismatched inner dimensions, naming both shapes") {
    Graph g;
    auto a = Tensor::make({2, 3});
    auto b = Tensor::make({2, 2});
    try {
        g.matmul(a, b);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradients match central differences") {
    Rng rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    auto a = Tensor::make({1, 3}, true);
    auto b = Tensor::make({3, 2}, true);
    for (auto& v : a->data) v = n(rng);
    for (auto& v : b->data) v = n(rng);

    auto f = [&] {
        Graph g;
        return g.sum(g.matmul(a, b))->item();
    };
    Graph g;
    g.backward(g.sum(g.matmul(a, b)));
    CHECK(oracle::max_grad_rel_err(f, a) < 1e-6);
    CHECK(oracle::max_grad_rel_err(f, b) < 1e-6);
}

TEST_CASE("elementwise add identity") {
    Graph g;
    auto out = g.add(Tensor::make({3}, {1, 2, 3}), Tensor::make({3}, {0, 0, 0}));
    CHECK(out->data == std::vector<double>{1, 2, 3});
}

TEST_CASE("per-channel product") {
    Graph g;
    auto h = Tensor::make({1, 2}, {2, -1});
    auto scale = Tensor::make({2}, {0.5, 1});
    auto out = g.mul(h, scale);
    CHECK(out->data == std::vector<double>{1, -1});
}

TEST_CASE("non-broadcastable shapes raise a dimension error") {
    Graph g;
    CHECK_THROWS_AS(g.add(Tensor::make({2, 3}), Tensor::make({2})), ShapeError);
    CHECK_THROWS_AS(g.mul(Tensor::make({4}), Tensor::make({3})), ShapeError);
}

TEST_CASE("broadcast-mul gradient sums over each channel's positions") {
    Rng rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    auto a = Tensor::make({3, 2});
    for (auto& v : a->data) v = n(rng);
    auto c = Tensor::make({2}, true);
    c->data = {0.7, -1.3};

    auto f = [&] {
        Graph g;
        return g.sum(g.mul(a, c))->item();
    };
    Graph g;
    g.backward(g.sum(g.mul(a, c)));

    // d/dc_j = sum over rows of a[:, j]
    for (int j = 0; j < 2; ++j) {
        double col = 0.0;
        for (int i = 0; i < 3; ++i) col += a->data[i * 2 + j];
        CHECK(c->grad[j] == doctest::Approx(col).epsilon(1e-12));
    }
    CHECK(oracle::max_grad_rel_err(f, c) < 1e-6);
}

TEST_CASE("relu definition and dead region") {
    Graph g;
    auto out = g.relu(Tensor::make({3}, {-1, 0, 2}));
    CHECK(out->data == std::vector<double>{0, 0, 2});

    auto x = Tensor::make({3}, {-1, -2, -3}, true);
    Graph g2;
    g2.backward(g2.sum(g2.relu(x)));
    CHECK(x->grad == std::vector<double>{0, 0, 0});
}

TEST_CASE("relu gradient away from the kink") {
    auto x = Tensor::make({4}, {-1.5, 0.75, 2.0, -0.25}, true);
    auto f = [&] {
        Graph g;
        return g.sum(g.relu(x))->item();
    };
    Graph g;
    g.backward(g.sum(g.relu(x)));
    CHECK(oracle::max_grad_rel_err(f, x) < 1e-6);
}

TEST_CASE("cross entropy on uniform logits is ln K") {
    Graph g;
    auto logits = Tensor::make({2, 10});
    CeLoss ce = g.softmax_cross_entropy(logits, {3, 7});
    CHECK(ce.loss->item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(ce.per_sample[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(ce.per_sample[1] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy on confident logits") {
    Graph g;
    auto logits = Tensor::make({1, 2}, {10, -10});
    CeLoss ce = g.softmax_cross_entropy(logits, {0});
    // log1p(exp(-20)), evaluated at f64
    CHECK(ce.loss->item() == doctest::Approx(2.0611536181902037e-9).epsilon(1e-6));
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
    Rng rng(3);
    std::normal_distribution<double> n(0.0, 2.0);
    auto logits = Tensor::make({2, 4}, true);
    for (auto& v : logits->data) v = n(rng);
    const std::vector<int> labels{2, 0};

    Graph g;
    g.backward(g.softmax_cross_entropy(logits, labels).loss);

    for (int i = 0; i < 2; ++i) {
        double m = logits->data[i * 4];
        for (int k = 1; k < 4; ++k) m = std::max(m, logits->data[i * 4 + k]);
        double z = 0.0;
        for (int k = 0; k < 4; ++k) z += std::exp(logits->data[i * 4 + k] - m);
        for (int k = 0; k < 4; ++k) {
            const double p = std::exp(logits->data[i * 4 + k] - m) / z;
            const double want = (p - (labels[i] == k ? 1.0 : 0.0)) / 2.0;
            CHECK(logits->grad[i * 4 + k] == doctest::Approx(want).epsilon(1e-10));
        }
    }

    auto f = [&] {
        Graph g2;
        return g2.softmax_cross_entropy(logits, labels).loss->item();
    };
    CHECK(oracle::max_grad_rel_err(f, logits) < 1e-6);
}

TEST_CASE("cross entropy shift invariance") {
    Rng rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    auto logits = Tensor::make({3, 5});
    for (auto& v : logits->data) v = n(rng);
    const std::vector<int> labels{0, 4, 2};

    Graph g;
    const double base = g.softmax_cross_entropy(logits, labels).loss->item();
    const double shifted = g.softmax_cross_entropy(g.shift(logits, 17.5), labels).loss->item();
    CHECK(std::abs(base - shifted) < 1e-10);
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    Graph g;
    auto logits = Tensor::make({1, 3});
    CHECK_THROWS_AS(g.softmax_cross_entropy(logits, {3}), ValueError);
    CHECK_THROWS_AS(g.softmax_cross_entropy(logits, {-1}), ValueError);
}

TEST_CASE("sum_sq_diff values and gradient") {
    Graph g;
    auto a = Tensor::make({2}, {1, 2}, true);
    auto b = Tensor::make({2}, {0, 0});
    CHECK(g.sum_sq_diff(a, a)->item() == 0.0);
    CHECK(g.sum_sq_diff(a, b)->item() == 5.0);

    auto f = [&] {
        Graph g2;
        return g2.sum_sq_diff(a, b)->item();
    };
    Graph g3;
    g3.backward(g3.sum_sq_diff(a, b));
    CHECK(a->grad == std::vector<double>{2, 4}); // 2(a - b)
    CHECK(oracle::max_grad_rel_err(f, a) < 1e-6);

    CHECK_THROWS_AS(g.sum_sq_diff(a, Tensor::make({3})), ShapeError);
}

TEST_CASE("backward on a constant leaves gradients at zero") {
    auto w = Tensor::make({2}, {1, 2}, true);
    Graph g;
    auto c = Tensor::scalar(3.0);
    g.backward(c);
    CHECK(w->grad.empty());
}

TEST_CASE("backward rejects non-scalar losses") {
    Graph g;
    auto v = g.relu(Tensor::make({3}, {1, 2, 3}));
    CHECK_THROWS_AS(g.backward(v), ContractError);
}

TEST_CASE("composite mlp loss gradient matches central differences") {
    Rng rng(21);
    std::normal_distribution<double> n(0.0, 0.8);
    auto x = Tensor::make({4, 5});
    for (auto& v : x->data) v = n(rng);
    auto w1 = Tensor::make({5, 6}, true);
    auto b1 = Tensor::make({6}, true);
    auto w2 = Tensor::make({6, 3}, true);
    auto b2 = Tensor::make({3}, true);
    for (auto& v : w1->data) v = n(rng);
    for (auto& v : b1->data) v = n(rng);
    for (auto& v : w2->data) v = n(rng);
    const std::vector<int> labels{0, 2, 1, 1};

    auto f = [&] {
        Graph g;
        auto h = g.relu(g.add(g.matmul(x, w1), b1));
        auto logits = g.add(g.matmul(h, w2), b2);
        return g.softmax_cross_entropy(logits, labels).loss->item();
    };
    Graph g;
    auto h = g.relu(g.add(g.matmul(x, w1), b1));
    auto logits = g.add(g.matmul(h, w2), b2);
    g.backward(g.softmax_cross_entropy(logits, labels).loss);

    for (const auto& p : {w1, b1, w2, b2}) {
        CHECK(oracle::max_grad_rel_err(f, p) < 1e-4);
    }
}

TEST_CASE("two backward calls double every gradient") {
    auto w = Tensor::make({2, 2}, {0.3, -0.4, 1.2, 0.9}, true);
    auto x = Tensor::make({1, 2}, {1.0, 2.0});
    Graph g;
    auto loss = g.sum(g.relu(g.matmul(x, w)));
    g.backward(loss);
    const std::vector<double> once = w->grad;
    g.backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(w->grad[i] == 2.0 * once[i]);
    }
}

TEST_CASE("backward is bit-deterministic") {
    Rng rng(33);
    std::normal_distribution<double> n(0.0, 1.0);
    auto w = Tensor::make({8, 8}, true);
    auto x = Tensor::make({4, 8});
    for (auto& v : w->data) v = n(rng);
    for (auto& v : x->data) v = n(rng);
    const std::vector<int> labels{1, 0, 7, 3};

    auto run = [&] {
        w->grad.clear();
        Graph g;
        g.backward(g.softmax_cross_entropy(g.matmul(x, w), labels).loss);
        return w->grad;
    };
    CHECK(run() == run());
}

TEST_CASE("ops keep finite values on finite inputs") {
    Rng rng(13);
    std::normal_distribution<double> n(0.0, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = Tensor::make({3, 4});
        auto b = Tensor::make({4, 3});
        for (auto& v : a->data) v = n(rng);
        for (auto& v : b->data) v = n(rng);
        Graph g;
        CHECK(g.matmul(a, b)->all_finite());
        CHECK(g.relu(a)->all_finite());
        CHECK(g.softplus(a)->all_finite());
        CHECK(g.softmax_cross_entropy(a, {0, 1, 2}).loss->all_finite());
    }
}
