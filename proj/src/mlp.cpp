#include "sncl/mlp.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace sncl {

namespace {

constexpr double kMaskedLogit = -1e30;

TensorPtr glorot(int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    auto w = Tensor::make({fan_in, fan_out}, /*requires_grad=*/true);
    for (auto& v : w->data) v = u(rng);
    return w;
}

} // namespace

GatedMlp::GatedMlp(const MlpConfig& cfg, Rng& rng) : cfg_(cfg) {
    w1_ = glorot(cfg.input_dim, cfg.hidden, rng);
    b1_ = Tensor::make({cfg.hidden}, true);
    w2_ = glorot(cfg.hidden, cfg.hidden, rng);
    b2_ = Tensor::make({cfg.hidden}, true);
    w3_ = glorot(cfg.hidden, cfg.classes, rng);
    b3_ = Tensor::make({cfg.classes}, true);
    gates_.push_back(GateParams::init(1, cfg.hidden));
    gates_.push_back(GateParams::init(2, cfg.hidden));
}

ForwardTrace GatedMlp::forward(Graph& g, const TensorPtr& x, GateMode mode, Rng* rng) const {
    if (x->ndim() != 2 || x->shape[1] != cfg_.input_dim) {
        throw ShapeError("forward: input " + shape_str(x->shape) + " vs expected width " +
                         std::to_string(cfg_.input_dim));
    }
    GateOptions opt;
    opt.prune_threshold = cfg_.prune_threshold;
    opt.per_sample = cfg_.per_sample_gates;

    ForwardTrace trace;
    TensorPtr h = g.relu(g.add(g.matmul(x, w1_), b1_));
    if (cfg_.gated) h = gate_forward(g, h, gates_[0], mode, rng, opt);
    trace.features.push_back(h);
    h = g.relu(g.add(g.matmul(h, w2_), b2_));
    if (cfg_.gated) h = gate_forward(g, h, gates_[1], mode, rng, opt);
    trace.features.push_back(h);
    trace.logits = g.add(g.matmul(h, w3_), b3_);
    return trace;
}

std::vector<int> GatedMlp::predict(const TensorPtr& x) const {
    Graph g;
    ForwardTrace trace = forward(g, x, GateMode::kDeterministic);
    return argmax_rows(*trace.logits);
}

std::vector<TensorPtr> GatedMlp::parameters() const {
    std::vector<TensorPtr> params = {w1_, b1_, w2_, b2_, w3_, b3_};
    if (cfg_.gated) {
        for (const GateParams& gate : gates_) {
            params.push_back(gate.mu);
            params.push_back(gate.log_lambda);
        }
    }
    return params;
}

void GatedMlp::zero_grad() const {
    for (const TensorPtr& p : parameters()) p->zero_grad();
}

TensorPtr masked_logits(const ForwardTrace& trace, const std::vector<int>& allowed_classes) {
    if (allowed_classes.empty()) throw ConfigError("masked_logits: empty class set");
    const int classes = trace.logits->cols();
    std::vector<bool> allowed(classes, false);
    for (int c : allowed_classes) {
        if (c < 0 || c >= classes) {
            throw ConfigError("masked_logits: class " + std::to_string(c) + " out of range");
        }
        allowed[c] = true;
    }
    auto out = Tensor::make(trace.logits->shape);
    const int batch = trace.logits->rows();
    for (int i = 0; i < batch; ++i) {
        for (int k = 0; k < classes; ++k) {
            const std::size_t idx = static_cast<std::size_t>(i) * classes + k;
            out->data[idx] = allowed[k] ? trace.logits->data[idx] : kMaskedLogit;
        }
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const int batch = logits.shape[0];
    const int classes = logits.shape[1];
    std::vector<int> out(batch);
    for (int i = 0; i < batch; ++i) {
        const double* row = logits.data.data() + static_cast<std::size_t>(i) * classes;
        int best = 0;
        for (int k = 1; k < classes; ++k) {
            if (row[k] > row[best]) best = k;
        }
        out[i] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

using nlohmann::ordered_json;

ordered_json tensor_json(const TensorPtr& t) {
    return ordered_json{{"shape", t->shape}, {"data", t->data}};
}

TensorPtr tensor_from_json(const ordered_json& j, bool requires_grad) {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    return Tensor::make(std::move(shape), std::move(data), requires_grad);
}

} // namespace

void GatedMlp::save(const std::string& path) const {
    ordered_json j;
    j["format"] = "sncl-checkpoint";
    j["version"] = 1;
    j["config"] = {{"input_dim", cfg_.input_dim},
                   {"hidden", cfg_.hidden},
                   {"classes", cfg_.classes},
                   {"gated", cfg_.gated},
                   {"prune_threshold", cfg_.prune_threshold},
                   {"per_sample_gates", cfg_.per_sample_gates}};
    j["params"] = {{"w1", tensor_json(w1_)}, {"b1", tensor_json(b1_)},
                   {"w2", tensor_json(w2_)}, {"b2", tensor_json(b2_)},
                   {"w3", tensor_json(w3_)}, {"b3", tensor_json(b3_)}};
    ordered_json gates = ordered_json::array();
    for (const GateParams& gate : gates_) {
        gates.push_back({{"layer", gate.layer_index},
                         {"mu", tensor_json(gate.mu)},
                         {"log_lambda", tensor_json(gate.log_lambda)}});
    }
    j["gates"] = std::move(gates);
    std::ofstream out(path);
    if (!out) throw ValueError("cannot open checkpoint for writing: " + path);
    out << j.dump(2) << '\n';
}

GatedMlp GatedMlp::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValueError("cannot open checkpoint: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("invalid checkpoint json: ") + e.what());
    }
    if (j.value("format", "") != "sncl-checkpoint" || j.value("version", 0) != 1) {
        throw ParseError("unsupported checkpoint format in " + path);
    }
    GatedMlp m;
    const auto& cfg = j.at("config");
    m.cfg_.input_dim = cfg.at("input_dim").get<int>();
    m.cfg_.hidden = cfg.at("hidden").get<int>();
    m.cfg_.classes = cfg.at("classes").get<int>();
    m.cfg_.gated = cfg.at("gated").get<bool>();
    m.cfg_.prune_threshold = cfg.at("prune_threshold").get<double>();
    m.cfg_.per_sample_gates = cfg.at("per_sample_gates").get<bool>();
    const auto& p = j.at("params");
    m.w1_ = tensor_from_json(p.at("w1"), true);
    m.b1_ = tensor_from_json(p.at("b1"), true);
    m.w2_ = tensor_from_json(p.at("w2"), true);
    m.b2_ = tensor_from_json(p.at("b2"), true);
    m.w3_ = tensor_from_json(p.at("w3"), true);
    m.b3_ = tensor_from_json(p.at("b3"), true);
    for (const auto& gj : j.at("gates")) {
        GateParams gate;
        gate.layer_index = gj.at("layer").get<int>();
        gate.mu = tensor_from_json(gj.at("mu"), true);
        gate.log_lambda = tensor_from_json(gj.at("log_lambda"), true);
        gate.channels = static_cast<int>(gate.mu->data.size());
        m.gates_.push_back(std::move(gate));
    }
    return m;
}

} // namespace sncl
