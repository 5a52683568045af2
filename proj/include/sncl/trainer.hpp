#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sncl/datasets.hpp"
#include "sncl/gates.hpp"
#include "sncl/mlp.hpp"
#include "sncl/replay.hpp"

namespace sncl {

/// alpha: memory CE, beta: logit replay, gamma: feature replay, eta: gate
/// sparsity. All non-negative; a zero weight removes the term (and its
/// gradient) entirely.
struct LossWeights {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double eta = 0.0;
};

enum class Method { kSgd, kEr, kDer, kSncl };
enum class SamplerKind { kNone, kReservoir, kLrs };

Method method_from_name(const std::string& name);
std::string method_name(Method m);

struct MethodConfig {
    Method method = Method::kSgd;
    LossWeights weights;
    SamplerKind sampler = SamplerKind::kNone;
    bool gates_on = false;

    static MethodConfig preset(Method m);
    void validate() const; // structural constraints per method
};

struct TrainOptions {
    double lr = 0.1;
    double gate_lr = 0.1;  // applied to log_lambda only
    int batch_size = 32;   // split half current / half replay
    int epochs = 1;
    int eval_every = 100;  // batches, boundary-free streams only
    // Global L2 gradient-norm ceiling (0 disables). The replay square
    // losses can spike right after a distribution shift; the ceiling only
    // engages on those spikes.
    double grad_clip = 12.0;
    bool refresh_losses = true;
    // LRS admission policy: by default each incoming sample joins the
    // stored set B at the reservoir rate M/n, so the buffer keeps its
    // uniform-over-history coverage and the class/loss balancing only
    // decides placement. false offers the whole batch every step.
    bool lrs_reservoir_admission = true;
    double lrs_subsample = 1.0; // extra thinning of B
    // Snapshot stored targets before (default) or after the SGD step.
    bool capture_post_step = false;
};

struct SparsitySnapshot {
    double pruned_fraction = 0.0;
    std::vector<LayerSparsity> layers;
};

struct RunMetrics {
    // accuracy[t_eval][e]: accuracy on eval split t_eval at eval point e.
    std::vector<std::vector<double>> accuracy;
    double avg_accuracy = 0.0;          // mean over splits at the final point
    std::vector<double> forgetting;     // best-ever minus final, per split
    double avg_forgetting = 0.0;
    std::vector<SparsitySnapshot> sparsity; // one per eval point
    std::int64_t steps = 0;
    std::int64_t replay_steps = 0;      // steps that carried a replay half
    std::int64_t stale_refreshes = 0;
    double wall_clock_sec = 0.0;        // informational; never serialized
};

struct StepProbe {
    int current_samples = 0;
    int replay_samples = 0;
    double total_loss = 0.0;
};
using StepCallback = std::function<void(const StepProbe&)>;

// Loss terms. Empty replay contributions are expressed by not building the
// term at all; see train_stream.
CeLoss loss_current(Graph& g, const ForwardTrace& trace, const std::vector<int>& labels);
CeLoss loss_memory_ce(Graph& g, const ForwardTrace& replay_trace,
                      const std::vector<int>& replay_labels);

/// Mean over the replay batch of ||z - z_hat||^2.
TensorPtr loss_fer_z(Graph& g, const ForwardTrace& replay_trace, const TensorPtr& z_hats);

/// Mean over the replay batch of the squared feature drift summed over all
/// gated layers and channels.
TensorPtr loss_fer_h(Graph& g, const ForwardTrace& replay_trace,
                     const std::vector<TensorPtr>& h_hats);

/// current + eta*vbs + alpha*memory_ce + beta*fer_z + gamma*fer_h. Null
/// terms are skipped; their weight must then be zero.
TensorPtr total_loss(Graph& g, const TensorPtr& current, const TensorPtr& memory_ce,
                     const TensorPtr& fer_z, const TensorPtr& fer_h, const TensorPtr& vbs,
                     const LossWeights& w);

/// p <- p - lr * grad for every parameter with an accumulated gradient.
/// Throws ValueError on a non-finite gradient.
void sgd_step(const std::vector<TensorPtr>& params, double lr);

/// Full continual pass over the stream: half current / half replay batches,
/// Sample-mode forwards, one SGD step per batch, capture + memory update at
/// the end of every batch, Deterministic evaluation after each phase (or
/// every eval_every batches when the stream has no boundaries).
RunMetrics train_stream(GatedMlp& model, const TaskStream& stream, const MethodConfig& cfg,
                        ReplayBuffer* buffer, std::uint64_t seed, const TrainOptions& opt = {},
                        const StepCallback& probe = nullptr);

/// Accuracy per eval split. Task-IL restricts the argmax to the split's
/// class set; the other settings use the raw logits.
std::vector<double> evaluate(const GatedMlp& model, const TaskStream& stream, Setting setting);

} // namespace sncl
