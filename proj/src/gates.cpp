#include "sncl/gates.hpp"

#include <cmath>

namespace sncl {

GateParams GateParams::init(int layer_index, int channels) {
    GateParams g;
    g.layer_index = layer_index;
    g.channels = channels;
    g.mu = Tensor::full({channels}, kInitMu, /*requires_grad=*/true);
    g.log_lambda = Tensor::full({channels}, kInitLogLambda, /*requires_grad=*/true);
    return g;
}

TensorPtr gate_forward(Graph& g, const TensorPtr& h_tilde, const GateParams& gates,
                       GateMode mode, Rng* rng, const GateOptions& opt) {
    if (h_tilde->ndim() != 2 || h_tilde->shape[1] != gates.channels) {
        throw ShapeError("gate_forward: activations " + shape_str(h_tilde->shape) +
                         " vs " + std::to_string(gates.channels) + " gate channels");
    }
    if (mode == GateMode::kDeterministic) {
        // h = h_tilde * mu, with pruned channels forced to zero.
        const std::vector<bool> mask = prune_mask(gates, opt.prune_threshold);
        auto keep = Tensor::make({gates.channels});
        for (int c = 0; c < gates.channels; ++c) keep->data[c] = mask[c] ? 0.0 : 1.0;
        return g.mul(h_tilde, g.mul(gates.mu, keep));
    }
    if (rng == nullptr) throw ContractError("gate_forward: Sample mode requires an rng");
    // g_c = mu_c * (1 + exp(log_lambda_c / 2) * eps_c)
    TensorPtr sqrt_lambda = g.exp(g.scale(gates.log_lambda, 0.5));
    std::normal_distribution<double> normal(0.0, 1.0);
    if (opt.per_sample) {
        const int batch = h_tilde->shape[0];
        auto eps = Tensor::make({batch, gates.channels});
        for (auto& e : eps->data) e = normal(*rng);
        TensorPtr gate = g.mul(g.shift(g.mul(eps, sqrt_lambda), 1.0), gates.mu);
        return g.mul(h_tilde, gate);
    }
    auto eps = Tensor::make({gates.channels});
    for (auto& e : eps->data) e = normal(*rng);
    TensorPtr gate = g.mul(gates.mu, g.shift(g.mul(eps, sqrt_lambda), 1.0));
    return g.mul(h_tilde, gate);
}

TensorPtr vbs_loss(Graph& g, const std::vector<GateParams>& all_gates) {
    if (all_gates.empty()) throw ContractError("vbs_loss: no gate layers");
    TensorPtr total;
    for (const GateParams& gate : all_gates) {
        TensorPtr layer = g.sum(g.softplus(g.scale(gate.log_lambda, -1.0)));
        total = total ? g.add(total, layer) : layer;
    }
    return g.scale(total, 0.5);
}

std::vector<bool> prune_mask(const GateParams& gates, double threshold) {
    if (!(threshold > 0.0)) {
        throw ConfigError("prune threshold must be positive, got " + std::to_string(threshold));
    }
    std::vector<bool> mask(gates.channels);
    for (int c = 0; c < gates.channels; ++c) {
        mask[c] = std::exp(-gates.log_lambda->data[c]) < threshold;
    }
    return mask;
}

std::vector<LayerSparsity> sparsity_report(const std::vector<GateParams>& all_gates,
                                           double threshold) {
    std::vector<LayerSparsity> report;
    report.reserve(all_gates.size());
    for (const GateParams& gate : all_gates) {
        const std::vector<bool> mask = prune_mask(gate, threshold);
        LayerSparsity s;
        s.layer_index = gate.layer_index;
        double sum_inv = 0.0;
        for (int c = 0; c < gate.channels; ++c) {
            if (mask[c]) {
                ++s.pruned;
            } else {
                ++s.active;
            }
            sum_inv += std::exp(-gate.log_lambda->data[c]);
        }
        s.mean_inv_lambda = gate.channels > 0 ? sum_inv / gate.channels : 0.0;
        report.push_back(s);
    }
    return report;
}

} // namespace sncl
