#pragma once

#include <vector>

#include "sncl/tensor.hpp"

namespace sncl {

/// Multiplicative gate values are distributed N(mu, lambda*mu^2) per
/// channel; lambda is stored as log_lambda so it stays positive. A channel
/// counts as pruned once its inverse relative variance 1/lambda falls
/// below the prune threshold.
struct GateParams {
    int layer_index = 0;
    int channels = 0;
    TensorPtr mu;         // [C], trainable
    TensorPtr log_lambda; // [C], trainable

    static GateParams init(int layer_index, int channels);
};

// Sample draws reparameterized gates (training); Deterministic multiplies
// by mu with pruned channels masked (evaluation and memory capture).
enum class GateMode { kSample, kDeterministic };

inline constexpr double kDefaultPruneThreshold = 0.05;
inline constexpr double kInitMu = 1.0;
inline constexpr double kInitLogLambda = -4.605170185988091; // ln(1e-2)

struct GateOptions {
    double prune_threshold = kDefaultPruneThreshold;
    bool per_sample = false; // one epsilon per channel per sample instead of per batch
};

/// Applies the gates to h_tilde [B x C]. In Sample mode the gate values are
/// g_c = mu_c * (1 + sqrt(lambda_c) * eps_c) with eps ~ N(0,1) drawn once
/// per channel per mini-batch; gradients flow into mu and log_lambda.
TensorPtr gate_forward(Graph& g, const TensorPtr& h_tilde, const GateParams& gates,
                       GateMode mode, Rng* rng, const GateOptions& opt = {});

/// 0.5 * sum over layers and channels of log(1 + 1/lambda), computed as
/// 0.5 * softplus(-log_lambda). Differentiable in log_lambda, independent
/// of mu, and nonnegative.
TensorPtr vbs_loss(Graph& g, const std::vector<GateParams>& all_gates);

/// mask[c] is true (pruned) iff 1/lambda_c < threshold.
std::vector<bool> prune_mask(const GateParams& gates, double threshold);

struct LayerSparsity {
    int layer_index = 0;
    int active = 0;
    int pruned = 0;
    double mean_inv_lambda = 0.0;
};

std::vector<LayerSparsity> sparsity_report(const std::vector<GateParams>& all_gates,
                                           double threshold);

} // namespace sncl
