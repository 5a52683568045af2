#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sncl/trainer.hpp"

using namespace sncl;

namespace {

LabeledSetPtr shared(LabeledSet&& s) { return std::make_shared<LabeledSet>(std::move(s)); }

// Small permuted-blob stream: enough structure for forgetting to show up,
// small enough to train in milliseconds.
TaskStream small_stream(int tasks = 2, std::uint64_t seed = 3, int per_class_train = 60) {
    auto [train, test] = synth_blob_split(4, per_class_train, 25, 36, 0.18, seed);
    StreamOptions opt;
    opt.test_per_task = 60;
    return build_pmnist(shared(std::move(train)), shared(std::move(test)), tasks, seed, opt);
}

GatedMlp stream_model(const TaskStream& stream, bool gated, std::uint64_t seed) {
    MlpConfig cfg;
    cfg.input_dim = stream.input_dim;
    cfg.hidden = 24;
    cfg.classes = stream.num_classes;
    cfg.gated = gated;
    Rng rng(seed);
    return GatedMlp(cfg, rng);
}

TrainOptions fast_options() {
    TrainOptions opt;
    opt.lr = 0.2;
    opt.batch_size = 16;
    return opt;
}

RunMetrics run_method(Method m, const TaskStream& stream, std::uint64_t seed,
                      const TrainOptions& opt, const StepCallback& probe = nullptr) {
    MethodConfig cfg = MethodConfig::preset(m);
    GatedMlp model = stream_model(stream, cfg.gates_on, seed);
    std::unique_ptr<ReplayBuffer> buffer;
    if (cfg.sampler != SamplerKind::kNone) buffer = std::make_unique<ReplayBuffer>(50);
    return train_stream(model, stream, cfg, buffer.get(), seed, opt, probe);
}

} // namespace

TEST_CASE("method presets satisfy their structural constraints") {
    for (Method m : {Method::kSgd, Method::kEr, Method::kDer, Method::kSncl}) {
        MethodConfig cfg = MethodConfig::preset(m);
        CHECK_NOTHROW(cfg.validate());
        CHECK(method_from_name(method_name(m)) == m);
    }
    MethodConfig bad = MethodConfig::preset(Method::kEr);
    bad.weights.beta = 0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    MethodConfig sgd = MethodConfig::preset(Method::kSgd);
    sgd.weights.alpha = 0.5;
    CHECK_THROWS_AS(sgd.validate(), ConfigError);
    CHECK_THROWS_AS(method_from_name("nope"), ConfigError);
}

TEST_CASE("loss_current equals ln K on uniform logits and ~0 on perfect ones") {
    Graph g;
    ForwardTrace trace;
    trace.logits = Tensor::make({3, 4});
    CeLoss uniform = loss_current(g, trace, {0, 1, 2});
    CHECK(uniform.loss->item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    trace.logits = Tensor::make({2, 4});
    trace.logits->data = {30, 0, 0, 0, 0, 0, 30, 0};
    CeLoss perfect = loss_current(g, trace, {0, 2});
    CHECK(perfect.loss->item() < 1e-10);

    // batch mean equals the mean of per-sample losses
    trace.logits = Tensor::make({3, 4});
    Rng rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : trace.logits->data) v = n(rng);
    CeLoss mixed = loss_current(g, trace, {1, 3, 0});
    double mean = 0.0;
    for (double l : mixed.per_sample) mean += l / 3.0;
    CHECK(mixed.loss->item() == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("loss_memory_ce is the same functional as loss_current") {
    Graph g;
    ForwardTrace trace;
    trace.logits = Tensor::make({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(loss_memory_ce(g, trace, {0, 1}).loss->item() ==
          loss_current(g, trace, {0, 1}).loss->item());
}

TEST_CASE("fer_z is zero at capture and grows with drift") {
    Graph g;
    ForwardTrace trace;
    trace.logits = Tensor::make({1, 2}, {1, 0});
    auto z_hat = Tensor::make({1, 2}, {1, 0});
    CHECK(loss_fer_z(g, trace, z_hat)->item() == 0.0);

    auto z_zero = Tensor::make({1, 2}, {0, 0});
    CHECK(loss_fer_z(g, trace, z_zero)->item() == 1.0);
}

TEST_CASE("fer_z gradient is 2(z - z_hat)/batch") {
    Rng rng(8);
    std::normal_distribution<double> n(0.0, 1.0);
    auto logits = Tensor::make({4, 3}, true);
    auto z_hat = Tensor::make({4, 3});
    for (auto& v : logits->data) v = n(rng);
    for (auto& v : z_hat->data) v = n(rng);
    ForwardTrace trace;
    trace.logits = logits;

    Graph g;
    g.backward(loss_fer_z(g, trace, z_hat));
    for (std::size_t i = 0; i < logits->data.size(); ++i) {
        CHECK(logits->grad[i] ==
              doctest::Approx(2.0 * (logits->data[i] - z_hat->data[i]) / 4.0).epsilon(1e-12));
    }
    auto f = [&] {
        Graph g2;
        return loss_fer_z(g2, trace, z_hat)->item();
    };
    CHECK(oracle::max_grad_rel_err(f, logits) < 1e-6);
}

TEST_CASE("fer_h sums squared drift over layers and channels") {
    Graph g;
    ForwardTrace trace;
    trace.features = {Tensor::make({1, 2}, {1, 1})};
    CHECK(loss_fer_h(g, trace, {Tensor::make({1, 2}, {1, 1})})->item() == 0.0);
    CHECK(loss_fer_h(g, trace, {Tensor::make({1, 2}, {0, 0})})->item() == 2.0);

    // pruned channel contributes (0 - h_hat)^2 exactly
    trace.features = {Tensor::make({1, 2}, {0, 1})};
    auto stored = Tensor::make({1, 2}, {0.6, 1.0});
    CHECK(loss_fer_h(g, trace, {stored})->item() == doctest::Approx(0.36).epsilon(1e-12));

    CHECK_THROWS_AS(loss_fer_h(g, trace, {stored, stored}), ShapeError);
}

TEST_CASE("total_loss composes the weighted terms") {
    Graph g;
    auto current = Tensor::scalar(1.0);
    auto mem = Tensor::scalar(2.0);
    auto ferz = Tensor::scalar(3.0);
    auto ferh = Tensor::scalar(4.0);
    auto vbs = Tensor::scalar(5.0);

    // all weights zero: exactly the current loss
    CHECK(total_loss(g, current, nullptr, nullptr, nullptr, nullptr, {})->item() == 1.0);

    LossWeights w{0.5, 0.25, 0.1, 0.01};
    const double want = 1.0 + 0.01 * 5.0 + 0.5 * 2.0 + 0.25 * 3.0 + 0.1 * 4.0;
    CHECK(total_loss(g, current, mem, ferz, ferh, vbs, w)->item() ==
          doctest::Approx(want).epsilon(1e-12));

    // missing term with a non-zero weight is a contract violation
    CHECK_THROWS_AS(total_loss(g, current, nullptr, nullptr, nullptr, nullptr, w), ContractError);
}

TEST_CASE("doubling beta doubles the fer_z gradient contribution") {
    Rng rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    auto w = Tensor::make({3, 2}, true);
    auto x = Tensor::make({2, 3});
    auto z_hat = Tensor::make({2, 2});
    for (auto& v : w->data) v = n(rng);
    for (auto& v : x->data) v = n(rng);
    for (auto& v : z_hat->data) v = n(rng);

    auto grad_with_beta = [&](double beta) {
        w->grad.clear();
        Graph g;
        ForwardTrace trace;
        trace.logits = g.matmul(x, w);
        CeLoss cur = g.softmax_cross_entropy(trace.logits, {0, 1});
        TensorPtr ferz = loss_fer_z(g, trace, z_hat);
        LossWeights lw;
        lw.beta = beta;
        g.backward(total_loss(g, cur.loss, nullptr, ferz, nullptr, nullptr, lw));
        return w->grad;
    };
    const auto g1 = grad_with_beta(0.25);
    const auto g0 = grad_with_beta(0.0);
    const auto g2 = grad_with_beta(0.5);
    for (std::size_t i = 0; i < g1.size(); ++i) {
        const double c1 = g1[i] - g0[i];
        const double c2 = g2[i] - g0[i];
        CHECK(c2 == doctest::Approx(2.0 * c1).epsilon(1e-9));
    }
}

TEST_CASE("sgd_step basics") {
    auto p = Tensor::make({2}, {1.0, -2.0}, true);
    sgd_step({p}, 0.1); // no accumulated gradient: untouched
    CHECK(p->data == std::vector<double>{1.0, -2.0});

    p->ensure_grad();
    p->grad = {0.5, -1.0};
    sgd_step({p}, 0.1);
    CHECK(p->data[0] == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(p->data[1] == doctest::Approx(-1.9).epsilon(1e-12));

    // two half-lr steps on fixed grads match one full-lr step
    auto a = Tensor::make({1}, std::vector<double>{1.0}, true);
    auto b = Tensor::make({1}, std::vector<double>{1.0}, true);
    a->ensure_grad();
    b->ensure_grad();
    a->grad = b->grad = {0.3};
    sgd_step({a}, 0.05);
    sgd_step({a}, 0.05);
    sgd_step({b}, 0.1);
    CHECK(a->data[0] == doctest::Approx(b->data[0]).epsilon(1e-15));

    p->grad = {std::nan(""), 0.0};
    CHECK_THROWS_AS(sgd_step({p}, 0.1), ValueError);
    p->grad = {0.0, 0.0};
    CHECK_THROWS_AS(sgd_step({p}, 0.0), ConfigError);
}

TEST_CASE("sgd drives a 1-d quadratic to its minimum") {
    // f(x) = (x - 3)^2, analytic minimum at 3
    auto x = Tensor::make({1}, std::vector<double>{-4.0}, true);
    auto target = Tensor::make({1}, std::vector<double>{3.0});
    for (int i = 0; i < 200; ++i) {
        x->zero_grad();
        Graph g;
        g.backward(g.sum_sq_diff(x, target));
        sgd_step({x}, 0.1);
    }
    CHECK(x->data[0] == doctest::Approx(3.0).epsilon(1e-8));
}

TEST_CASE("er per-step loss equals current plus alpha times memory ce") {
    // With beta = gamma = eta = 0 the trainer's composite loss reduces to
    // the two cross entropies; verified on a fixed forward.
    TaskStream stream = small_stream();
    GatedMlp model = stream_model(stream, false, 1);
    ReplayBuffer buffer(20);
    Rng rng(2);
    BatchData warm = fetch_train(stream, 0, 0, 8);
    for (int i = 0; i < warm.batch; ++i) {
        std::vector<double> xi(warm.x.begin() + i * warm.dim, warm.x.begin() + (i + 1) * warm.dim);
        buffer.reservoir_update(capture(model, xi, warm.y[i], 0.5), rng);
    }

    BatchData cur = fetch_train(stream, 0, 8, 8);
    auto x = Tensor::make({cur.batch, cur.dim}, cur.x);
    const auto idx = buffer.sample_replay_batch(8, rng);
    auto rx = Tensor::make({static_cast<int>(idx.size()), stream.input_dim});
    std::vector<int> ry;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const MemoryItem& item = buffer.item(idx[i]);
        std::copy(item.x.begin(), item.x.end(), rx->data.begin() + i * stream.input_dim);
        ry.push_back(item.y);
    }

    const double alpha = 0.5;
    Graph g;
    ForwardTrace ct = model.forward(g, x, GateMode::kDeterministic);
    ForwardTrace rt = model.forward(g, rx, GateMode::kDeterministic);
    CeLoss cur_ce = loss_current(g, ct, cur.y);
    CeLoss mem_ce = loss_memory_ce(g, rt, ry);
    LossWeights w;
    w.alpha = alpha;
    const double composite =
        total_loss(g, cur_ce.loss, mem_ce.loss, nullptr, nullptr, nullptr, w)->item();
    CHECK(std::abs(composite - (cur_ce.loss->item() + alpha * mem_ce.loss->item())) < 1e-12);
}

TEST_CASE("with beta and gamma zero the stored targets never touch gradients") {
    TaskStream stream = small_stream();
    GatedMlp model = stream_model(stream, false, 9);
    BatchData cur = fetch_train(stream, 0, 0, 6);
    auto x = Tensor::make({cur.batch, cur.dim}, cur.x);

    auto grads_with_targets = [&](double z_fill) {
        model.zero_grad();
        Graph g;
        ForwardTrace t = model.forward(g, x, GateMode::kDeterministic);
        CeLoss ce = g.softmax_cross_entropy(t.logits, cur.y);
        // stored targets exist but carry zero weight
        auto z_hat = Tensor::full({cur.batch, stream.num_classes}, z_fill);
        TensorPtr ferz = loss_fer_z(g, t, z_hat);
        LossWeights w{0.4, 0.0, 0.0, 0.0};
        TensorPtr loss = total_loss(g, ce.loss, ce.loss, ferz, nullptr, nullptr, w);
        g.backward(loss);
        std::vector<double> all;
        for (const TensorPtr& p : model.parameters()) {
            all.insert(all.end(), p->grad.begin(), p->grad.end());
        }
        return all;
    };
    CHECK(grads_with_targets(0.0) == grads_with_targets(123.0));
}

TEST_CASE("train_stream composes half current half replay batches") {
    TaskStream stream = small_stream(2, 7, 64);
    TrainOptions opt = fast_options();
    int full_steps = 0, replay_steps = 0;
    RunMetrics metrics = run_method(Method::kEr, stream, 5, opt, [&](const StepProbe& p) {
        if (p.replay_samples > 0) {
            CHECK(p.current_samples == 8);
            CHECK(p.replay_samples == 8);
            ++replay_steps;
        }
        ++full_steps;
    });
    CHECK(full_steps == metrics.steps);
    CHECK(replay_steps == metrics.replay_steps);
    CHECK(replay_steps > 0);
    CHECK(metrics.steps > replay_steps); // the very first batch has no replay
}

TEST_CASE("train_stream rejects an empty stream and a missing buffer") {
    TaskStream empty;
    GatedMlp model = stream_model(small_stream(), false, 1);
    MethodConfig cfg = MethodConfig::preset(Method::kSgd);
    CHECK_THROWS_AS(train_stream(model, empty, cfg, nullptr, 1), ConfigError);

    TaskStream stream = small_stream();
    MethodConfig er = MethodConfig::preset(Method::kEr);
    CHECK_THROWS_AS(train_stream(model, stream, er, nullptr, 1), ConfigError);
}

TEST_CASE("sgd forgets the first task while sncl retains it") {
    TrainOptions opt = fast_options();
    double sgd_first_drop = 0.0;
    double sgd_final_sum = 0.0, sncl_final_sum = 0.0;
    const int seeds = 5;
    for (int seed = 0; seed < seeds; ++seed) {
        TaskStream stream = small_stream(2, 100 + seed, 80);
        RunMetrics sgd = run_method(Method::kSgd, stream, seed, opt);
        RunMetrics sncl = run_method(Method::kSncl, stream, seed, opt);
        // accuracy[0]: task 1 right after phase 1 vs after phase 2
        sgd_first_drop += sgd.accuracy[0][0] - sgd.accuracy[0][1];
        sgd_final_sum += sgd.accuracy[0][1];
        sncl_final_sum += sncl.accuracy[0][1];
    }
    CHECK(sgd_first_drop / seeds > 0.05); // forgetting observed
    CHECK(sncl_final_sum > sgd_final_sum); // replay + gates retain task 1
}

TEST_CASE("identical seeds give bit-identical metrics") {
    TaskStream stream = small_stream(2, 55, 48);
    TrainOptions opt = fast_options();
    RunMetrics a = run_method(Method::kSncl, stream, 11, opt);
    RunMetrics b = run_method(Method::kSncl, stream, 11, opt);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.avg_accuracy == b.avg_accuracy);
    CHECK(a.forgetting == b.forgetting);
    REQUIRE(a.sparsity.size() == b.sparsity.size());
    for (std::size_t i = 0; i < a.sparsity.size(); ++i) {
        CHECK(a.sparsity[i].pruned_fraction == b.sparsity[i].pruned_fraction);
    }
}

TEST_CASE("forgetting is non-negative by construction") {
    TaskStream stream = small_stream(3, 19, 40);
    RunMetrics m = run_method(Method::kSgd, stream, 3, fast_options());
    for (double f : m.forgetting) CHECK(f >= 0.0);
    // avg accuracy equals the mean of the final column
    double mean = 0.0;
    for (const auto& row : m.accuracy) mean += row.back();
    mean /= m.accuracy.size();
    CHECK(m.avg_accuracy == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("evaluate: chance level, task-il dominance, memorization") {
    // full test split so every class keeps exactly 25 samples
    auto [tr, te] = synth_blob_split(4, 40, 25, 36, 0.18, 77);
    TaskStream stream = build_pmnist(std::make_shared<LabeledSet>(std::move(tr)),
                                     std::make_shared<LabeledSet>(std::move(te)), 2, 77);

    // untrained model with zeroed weights predicts class 0 everywhere;
    // on the balanced split that is chance level 1/K
    GatedMlp model = stream_model(stream, false, 5);
    for (const TensorPtr& p : model.parameters()) std::fill(p->data.begin(), p->data.end(), 0.0);
    const auto chance = evaluate(model, stream, Setting::kDomainIl);
    for (double acc : chance) CHECK(acc == doctest::Approx(0.25).epsilon(1e-12));

    // task-il accuracy dominates class-il on a split stream
    auto [train, test] = synth_blob_split(4, 40, 20, 16, 0.2, 31);
    TaskStream split = build_split(std::make_shared<LabeledSet>(std::move(train)),
                                   std::make_shared<LabeledSet>(std::move(test)),
                                   {{0, 1}, {2, 3}}, 3);
    GatedMlp split_model = stream_model(split, false, 8);
    MethodConfig cfg = MethodConfig::preset(Method::kSgd);
    train_stream(split_model, split, cfg, nullptr, 4, fast_options());
    const auto class_il = evaluate(split_model, split, Setting::kClassIl);
    const auto task_il = evaluate(split_model, split, Setting::kTaskIl);
    for (std::size_t t = 0; t < class_il.size(); ++t) {
        CHECK(task_il[t] >= class_il[t]);
    }
}

TEST_CASE("a memorizing model scores 1.0 on its training points") {
    // train == test: blobs with zero spread collapse to the centers
    auto train = std::make_shared<LabeledSet>(synth_blobs(3, 20, 16, 1e-6, 8));
    TaskStream stream = build_pmnist(train, train, 1, 8);
    GatedMlp model = stream_model(stream, false, 2);
    MethodConfig cfg = MethodConfig::preset(Method::kSgd);
    TrainOptions opt = fast_options();
    opt.epochs = 30;
    train_stream(model, stream, cfg, nullptr, 2, opt);
    const auto accs = evaluate(model, stream, Setting::kDomainIl);
    CHECK(accs[0] == 1.0);
}
