#include "sncl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace sncl {

Method method_from_name(const std::string& name) {
    if (name == "sgd") return Method::kSgd;
    if (name == "er") return Method::kEr;
    if (name == "der") return Method::kDer;
    if (name == "sncl") return Method::kSncl;
    throw ConfigError("unknown method '" + name + "' (expected sgd|er|der|sncl)");
}

std::string method_name(Method m) {
    switch (m) {
        case Method::kSgd: return "sgd";
        case Method::kEr: return "er";
        case Method::kDer: return "der";
        case Method::kSncl: return "sncl";
    }
    return "?";
}

MethodConfig MethodConfig::preset(Method m) {
    MethodConfig cfg;
    cfg.method = m;
    switch (m) {
        case Method::kSgd:
            break;
        case Method::kEr:
            cfg.weights = {0.5, 0.0, 0.0, 0.0};
            cfg.sampler = SamplerKind::kReservoir;
            break;
        case Method::kDer:
            cfg.weights = {0.5, 0.1, 0.0, 0.0};
            cfg.sampler = SamplerKind::kReservoir;
            break;
        case Method::kSncl:
            cfg.weights = {0.5, 0.1, 0.01, 1e-4};
            cfg.sampler = SamplerKind::kLrs;
            cfg.gates_on = true;
            break;
    }
    return cfg;
}

void MethodConfig::validate() const {
    const LossWeights& w = weights;
    if (w.alpha < 0 || w.beta < 0 || w.gamma < 0 || w.eta < 0 ||
        !std::isfinite(w.alpha + w.beta + w.gamma + w.eta)) {
        throw ConfigError("loss weights must be finite and non-negative");
    }
    switch (method) {
        case Method::kSgd:
            if (w.alpha != 0 || w.beta != 0 || w.gamma != 0 || sampler != SamplerKind::kNone) {
                throw ConfigError("sgd runs without replay terms or a buffer");
            }
            break;
        case Method::kEr:
            if (!(w.alpha > 0) || w.beta != 0 || w.gamma != 0 || w.eta != 0) {
                throw ConfigError("er needs alpha > 0 and beta = gamma = eta = 0");
            }
            if (sampler == SamplerKind::kNone) throw ConfigError("er needs a buffer sampler");
            break;
        case Method::kDer:
            if (!(w.beta > 0)) throw ConfigError("der needs beta > 0");
            if (sampler == SamplerKind::kNone) throw ConfigError("der needs a buffer sampler");
            break;
        case Method::kSncl:
            // eta = 0 stays legal so the sparsity weight can be ablated.
            if (!(w.alpha > 0 && w.beta > 0 && w.gamma > 0)) {
                throw ConfigError("sncl needs the replay terms active");
            }
            if (sampler != SamplerKind::kLrs || !gates_on) {
                throw ConfigError("sncl needs the loss-aware sampler and gates on");
            }
            break;
    }
}

CeLoss loss_current(Graph& g, const ForwardTrace& trace, const std::vector<int>& labels) {
    return g.softmax_cross_entropy(trace.logits, labels);
}

CeLoss loss_memory_ce(Graph& g, const ForwardTrace& replay_trace,
                      const std::vector<int>& replay_labels) {
    return g.softmax_cross_entropy(replay_trace.logits, replay_labels);
}

TensorPtr loss_fer_z(Graph& g, const ForwardTrace& replay_trace, const TensorPtr& z_hats) {
    const int batch = replay_trace.logits->rows();
    return g.scale(g.sum_sq_diff(replay_trace.logits, z_hats), 1.0 / batch);
}

TensorPtr loss_fer_h(Graph& g, const ForwardTrace& replay_trace,
                     const std::vector<TensorPtr>& h_hats) {
    if (replay_trace.features.size() != h_hats.size()) {
        throw ShapeError("loss_fer_h: " + std::to_string(replay_trace.features.size()) +
                         " feature layers vs " + std::to_string(h_hats.size()) + " stored");
    }
    const int batch = replay_trace.features.front()->rows();
    TensorPtr total;
    for (std::size_t l = 0; l < h_hats.size(); ++l) {
        TensorPtr term = g.sum_sq_diff(replay_trace.features[l], h_hats[l]);
        total = total ? g.add(total, term) : term;
    }
    return g.scale(total, 1.0 / batch);
}

TensorPtr total_loss(Graph& g, const TensorPtr& current, const TensorPtr& memory_ce,
                     const TensorPtr& fer_z, const TensorPtr& fer_h, const TensorPtr& vbs,
                     const LossWeights& w) {
    TensorPtr loss = current;
    auto accumulate = [&](const TensorPtr& term, double weight, const char* name) {
        if (!term) {
            if (weight != 0.0) {
                throw ContractError(std::string("total_loss: missing ") + name +
                                    " term with non-zero weight");
            }
            return;
        }
        if (weight == 0.0) return;
        loss = g.add(loss, g.scale(term, weight));
    };
    accumulate(vbs, w.eta, "vbs");
    accumulate(memory_ce, w.alpha, "memory_ce");
    accumulate(fer_z, w.beta, "fer_z");
    accumulate(fer_h, w.gamma, "fer_h");
    return loss;
}

void sgd_step(const std::vector<TensorPtr>& params, double lr) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    for (const TensorPtr& p : params) {
        if (p->grad.empty()) continue;
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            const double gi = p->grad[i];
            if (!std::isfinite(gi)) {
                throw ValueError("non-finite gradient encountered; aborting run");
            }
            p->data[i] -= lr * gi;
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct ReplayBatch {
    TensorPtr x;
    std::vector<int> y;
    TensorPtr z_hats;
    std::vector<TensorPtr> h_hats;
    std::vector<std::int64_t> steps;
};

ReplayBatch gather_replay(const ReplayBuffer& buffer, const std::vector<std::size_t>& idx,
                          int input_dim) {
    ReplayBatch rb;
    const int n = static_cast<int>(idx.size());
    rb.x = Tensor::make({n, input_dim});
    const MemoryItem& first = buffer.item(idx[0]);
    rb.z_hats = Tensor::make({n, static_cast<int>(first.z_hat.size())});
    for (std::size_t l = 0; l < first.h_hat.size(); ++l) {
        rb.h_hats.push_back(Tensor::make({n, static_cast<int>(first.h_hat[l].size())}));
    }
    for (int i = 0; i < n; ++i) {
        const MemoryItem& item = buffer.item(idx[i]);
        std::copy(item.x.begin(), item.x.end(), rb.x->data.begin() + i * input_dim);
        std::copy(item.z_hat.begin(), item.z_hat.end(),
                  rb.z_hats->data.begin() + i * static_cast<std::ptrdiff_t>(item.z_hat.size()));
        for (std::size_t l = 0; l < item.h_hat.size(); ++l) {
            std::copy(item.h_hat[l].begin(), item.h_hat[l].end(),
                      rb.h_hats[l]->data.begin() + i * static_cast<std::ptrdiff_t>(item.h_hat[l].size()));
        }
        rb.y.push_back(item.y);
        rb.steps.push_back(item.insert_step);
    }
    return rb;
}

void record_eval(RunMetrics& metrics, const GatedMlp& model, const TaskStream& stream) {
    const std::vector<double> accs = evaluate(model, stream, stream.setting);
    if (metrics.accuracy.empty()) metrics.accuracy.resize(accs.size());
    for (std::size_t i = 0; i < accs.size(); ++i) metrics.accuracy[i].push_back(accs[i]);

    SparsitySnapshot snap;
    if (model.config().gated) {
        snap.layers = sparsity_report(model.gates(), model.config().prune_threshold);
        int pruned = 0, total = 0;
        for (const LayerSparsity& l : snap.layers) {
            pruned += l.pruned;
            total += l.pruned + l.active;
        }
        snap.pruned_fraction = total > 0 ? double(pruned) / total : 0.0;
    }
    metrics.sparsity.push_back(std::move(snap));
}

} // namespace

RunMetrics train_stream(GatedMlp& model, const TaskStream& stream, const MethodConfig& cfg,
                        ReplayBuffer* buffer, std::uint64_t seed, const TrainOptions& opt,
                        const StepCallback& probe) {
    if (stream.phases.empty()) throw ConfigError("train_stream: empty stream");
    cfg.validate();
    const bool uses_buffer = cfg.sampler != SamplerKind::kNone;
    if (uses_buffer && buffer == nullptr) {
        throw ConfigError("train_stream: method needs a replay buffer");
    }
    const auto t0 = std::chrono::steady_clock::now();

    Rng rng(mix_seed(seed, 0x7a1e));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    RunMetrics metrics;
    // log_lambda trains at its own rate; everything else at opt.lr.
    std::vector<TensorPtr> weight_params, gate_scale_params;
    for (const TensorPtr& p : model.parameters()) {
        bool is_log_lambda = false;
        if (model.config().gated) {
            for (const GateParams& gate : model.gates()) {
                if (p == gate.log_lambda) is_log_lambda = true;
            }
        }
        (is_log_lambda ? gate_scale_params : weight_params).push_back(p);
    }

    const int cur_size = (opt.batch_size + 1) / 2;
    const int replay_size = opt.batch_size / 2;
    const GateMode train_mode = cfg.gates_on ? GateMode::kSample : GateMode::kDeterministic;
    std::int64_t batches_since_eval = 0;
    std::int64_t observed_samples = 0;

    for (std::size_t phase = 0; phase < stream.phases.size(); ++phase) {
        const std::size_t phase_len = stream.phases[phase].train.size();
        for (int epoch = 0; epoch < std::max(1, opt.epochs); ++epoch) {
            for (std::size_t offset = 0; offset < phase_len; offset += cur_size) {
                BatchData cur = fetch_train(stream, phase, offset, cur_size);
                if (cur.batch == 0) continue;
                auto x = Tensor::make({cur.batch, cur.dim}, std::move(cur.x));

                Graph g;
                ForwardTrace trace = model.forward(g, x, train_mode, &rng);
                CeLoss current = loss_current(g, trace, cur.y);

                TensorPtr memory_ce, fer_z, fer_h, vbs;
                CeLoss replay_ce;
                ReplayBatch replay;
                bool replayed = false;
                if (uses_buffer && !buffer->empty() && replay_size > 0) {
                    const std::vector<std::size_t> idx =
                        buffer->sample_replay_batch(replay_size, rng);
                    replay = gather_replay(*buffer, idx, stream.input_dim);
                    ForwardTrace rt = model.forward(g, replay.x, train_mode, &rng);
                    replay_ce = loss_memory_ce(g, rt, replay.y);
                    memory_ce = replay_ce.loss;
                    if (cfg.weights.beta > 0) fer_z = loss_fer_z(g, rt, replay.z_hats);
                    if (cfg.weights.gamma > 0) fer_h = loss_fer_h(g, rt, replay.h_hats);
                    replayed = true;
                }
                if (cfg.weights.eta > 0 && model.config().gated) {
                    vbs = vbs_loss(g, model.gates());
                }

                // Replay terms contribute zero while the buffer is empty.
                LossWeights w = cfg.weights;
                if (!replayed) w.alpha = w.beta = w.gamma = 0.0;
                TensorPtr loss = total_loss(g, current.loss, memory_ce, fer_z, fer_h, vbs, w);

                // Snapshot the incoming batch at the parameters that produced
                // its training loss, so stored logits stay calibrated rather
                // than freshly overfit to the very sample they describe.
                std::vector<MemoryItem> captured;
                if (uses_buffer && !opt.capture_post_step) {
                    double admit = 1.0;
                    if (cfg.sampler == SamplerKind::kLrs) {
                        admit = opt.lrs_subsample;
                        if (opt.lrs_reservoir_admission) {
                            admit *= std::min(1.0, double(buffer->capacity()) /
                                                       double(std::max<std::int64_t>(
                                                           1, observed_samples)));
                        }
                    }
                    for (int i = 0; i < cur.batch; ++i) {
                        if (admit < 1.0 && unit(rng) >= admit) continue;
                        std::vector<double> xi(x->data.begin() + i * cur.dim,
                                               x->data.begin() + (i + 1) * cur.dim);
                        captured.push_back(capture(model, xi, cur.y[i], current.per_sample[i]));
                    }
                }
                model.zero_grad();
                g.backward(loss);
                if (opt.grad_clip > 0) {
                    double sq = 0.0;
                    for (const TensorPtr& p : weight_params) {
                        for (double gv : p->grad) sq += gv * gv;
                    }
                    for (const TensorPtr& p : gate_scale_params) {
                        for (double gv : p->grad) sq += gv * gv;
                    }
                    if (sq > opt.grad_clip * opt.grad_clip) {
                        const double f = opt.grad_clip / std::sqrt(sq);
                        for (const TensorPtr& p : weight_params) {
                            for (double& gv : p->grad) gv *= f;
                        }
                        for (const TensorPtr& p : gate_scale_params) {
                            for (double& gv : p->grad) gv *= f;
                        }
                    }
                }
                sgd_step(weight_params, opt.lr);
                if (!gate_scale_params.empty()) sgd_step(gate_scale_params, opt.gate_lr);

                if (uses_buffer) {
                    if (opt.capture_post_step) {
                        double admit = 1.0;
                        if (cfg.sampler == SamplerKind::kLrs) {
                            admit = opt.lrs_subsample;
                            if (opt.lrs_reservoir_admission) {
                                admit *= std::min(1.0, double(buffer->capacity()) /
                                                           double(std::max<std::int64_t>(
                                                               1, observed_samples)));
                            }
                        }
                        for (int i = 0; i < cur.batch; ++i) {
                            if (admit < 1.0 && unit(rng) >= admit) continue;
                            std::vector<double> xi(x->data.begin() + i * cur.dim,
                                                   x->data.begin() + (i + 1) * cur.dim);
                            captured.push_back(
                                capture(model, xi, cur.y[i], current.per_sample[i]));
                        }
                    }
                    if (cfg.sampler == SamplerKind::kLrs) {
                        buffer->lrs_update(std::move(captured));
                    } else {
                        for (MemoryItem& item : captured) {
                            buffer->reservoir_update(std::move(item), rng);
                        }
                    }
                    if (replayed && opt.refresh_losses) {
                        buffer->refresh_loss(replay.steps, replay_ce.per_sample);
                    }
                }
                observed_samples += cur.batch;

                ++metrics.steps;
                if (replayed) ++metrics.replay_steps;
                if (probe) {
                    probe({cur.batch, replayed ? static_cast<int>(replay.y.size()) : 0,
                           loss->item()});
                }
                ++batches_since_eval;
                if (!stream.has_boundaries && batches_since_eval >= opt.eval_every) {
                    record_eval(metrics, model, stream);
                    batches_since_eval = 0;
                }
            }
        }
        if (stream.has_boundaries) record_eval(metrics, model, stream);
    }
    if (!stream.has_boundaries && batches_since_eval > 0) {
        record_eval(metrics, model, stream);
    }

    for (const auto& row : metrics.accuracy) {
        const double final_acc = row.back();
        const double best = *std::max_element(row.begin(), row.end());
        metrics.avg_accuracy += final_acc;
        metrics.forgetting.push_back(best - final_acc);
        metrics.avg_forgetting += best - final_acc;
    }
    if (!metrics.accuracy.empty()) {
        metrics.avg_accuracy /= static_cast<double>(metrics.accuracy.size());
        metrics.avg_forgetting /= static_cast<double>(metrics.accuracy.size());
    }
    if (buffer != nullptr) metrics.stale_refreshes = buffer->stale_refresh_count();
    metrics.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

std::vector<double> evaluate(const GatedMlp& model, const TaskStream& stream, Setting setting) {
    constexpr std::size_t kEvalBatch = 256;
    std::vector<double> accs;
    accs.reserve(stream.eval_splits.size());
    for (std::size_t split = 0; split < stream.eval_splits.size(); ++split) {
        const EvalSplit& es = stream.eval_splits[split];
        std::size_t correct = 0, total = 0;
        for (std::size_t offset = 0; offset < es.samples.size(); offset += kEvalBatch) {
            BatchData batch = fetch_eval(stream, split, offset, kEvalBatch);
            if (batch.batch == 0) break;
            auto x = Tensor::make({batch.batch, batch.dim}, std::move(batch.x));
            Graph g;
            ForwardTrace trace = model.forward(g, x, GateMode::kDeterministic);
            std::vector<int> preds;
            if (setting == Setting::kTaskIl) {
                preds = argmax_rows(*masked_logits(trace, es.classes));
            } else {
                preds = argmax_rows(*trace.logits);
            }
            for (int i = 0; i < batch.batch; ++i) {
                if (preds[i] == batch.y[i]) ++correct;
            }
            total += batch.batch;
        }
        accs.push_back(total > 0 ? double(correct) / double(total) : 0.0);
    }
    return accs;
}

} // namespace sncl
