#pragma once

#include <string>
#include <vector>

#include "sncl/gates.hpp"
#include "sncl/tensor.hpp"

namespace sncl {

struct MlpConfig {
    int input_dim = 784;
    int hidden = 100;
    int classes = 10;
    bool gated = true;
    double prune_threshold = kDefaultPruneThreshold;
    bool per_sample_gates = false;
};

/// Logits plus the gated hidden activations actually used downstream,
/// one entry per hidden layer.
struct ForwardTrace {
    TensorPtr logits;                 // [B x K]
    std::vector<TensorPtr> features;  // [B x H] for layers 1 and 2
};

/// Classifier with two gated hidden layers (input -> H -> H -> K). ReLU in
/// the hidden layers, gates applied after each ReLU, single shared output
/// head; the logits layer is never gated.
class GatedMlp {
public:
    GatedMlp(const MlpConfig& cfg, Rng& rng);

    ForwardTrace forward(Graph& g, const TensorPtr& x, GateMode mode, Rng* rng = nullptr) const;

    /// Deterministic-mode argmax over logits; ties go to the lowest class id.
    std::vector<int> predict(const TensorPtr& x) const;

    std::vector<TensorPtr> parameters() const; // weights, biases, gate params
    void zero_grad() const;

    std::vector<GateParams>& gates() { return gates_; }
    const std::vector<GateParams>& gates() const { return gates_; }
    const MlpConfig& config() const { return cfg_; }

    // Versioned JSON checkpoint: shapes, flat parameter arrays, gate params.
    void save(const std::string& path) const;
    static GatedMlp load(const std::string& path);

private:
    GatedMlp() = default;

    MlpConfig cfg_;
    TensorPtr w1_, b1_, w2_, b2_, w3_, b3_;
    std::vector<GateParams> gates_;
};

/// Copies logits with entries outside `allowed_classes` pushed to an
/// effectively -inf value, so argmax (and any softmax) only sees the
/// allowed set. Used for task-aware evaluation.
TensorPtr masked_logits(const ForwardTrace& trace, const std::vector<int>& allowed_classes);

std::vector<int> argmax_rows(const Tensor& logits);

} // namespace sncl
