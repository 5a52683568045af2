#include "sncl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sncl {

namespace {

std::size_t checked_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

} // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

TensorPtr Tensor::make(Shape shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    std::size_t n = checked_numel(shape);
    t->shape = std::move(shape);
    t->data.assign(n, 0.0);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::make(Shape shape, std::vector<double> values, bool requires_grad) {
    std::size_t n = checked_numel(shape);
    if (n != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::full(Shape shape, double value, bool requires_grad) {
    auto t = make(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Tensor::scalar(double value) { return make({1}, std::vector<double>{value}); }

std::size_t Tensor::numel() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

int Tensor::rows() const {
    if (ndim() != 2) throw ShapeError("rows() on tensor of shape " + shape_str(shape));
    return shape[0];
}

int Tensor::cols() const {
    if (ndim() != 2) throw ShapeError("cols() on tensor of shape " + shape_str(shape));
    return shape[1];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape));
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Graph

namespace {

enum class Broadcast { kNone, kScalar, kChannel };

Broadcast broadcast_kind(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape == b->shape) return Broadcast::kNone;
    if (b->numel() == 1) return Broadcast::kScalar;
    if (a->ndim() == 2 && b->ndim() == 1 && b->shape[0] == a->shape[1]) return Broadcast::kChannel;
    throw ShapeError("shapes " + shape_str(a->shape) + " and " + shape_str(b->shape) +
                     " are not elementwise compatible");
}

} // namespace

int Graph::node_of(const TensorPtr& t) {
    auto it = ids_.find(t.get());
    if (it != ids_.end()) return it->second;
    Record rec;
    rec.op = Op::kLeaf;
    rec.out = t;
    return push(std::move(rec));
}

TensorPtr Graph::new_output(Shape shape, bool requires_grad) {
    return Tensor::make(std::move(shape), requires_grad);
}

int Graph::push(Record rec) {
    int id = static_cast<int>(nodes_.size());
    ids_.emplace(rec.out.get(), id);
    nodes_.push_back(std::move(rec));
    return id;
}

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->shape[1] != b->shape[0]) {
        throw ShapeError("matmul shapes " + shape_str(a->shape) + " and " + shape_str(b->shape));
    }
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    TensorPtr out = new_output({m, n}, a->requires_grad || b->requires_grad);
    const double* pa = a->data.data();
    const double* pb = b->data.data();
    double* pc = out->data.data();
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const double aik = pa[i * k + kk];
            const double* brow = pb + kk * n;
            double* crow = pc + i * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    Record rec;
    rec.op = Op::kMatMul;
    rec.a = node_of(a);
    rec.b = node_of(b);
    rec.out = out;
    push(std::move(rec));
    return out;
}

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
    Broadcast bc = broadcast_kind(a, b);
    TensorPtr out = new_output(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = a->numel();
    switch (bc) {
        case Broadcast::kNone:
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
            break;
        case Broadcast::kScalar:
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[0];
            break;
        case Broadcast::kChannel: {
            const int c = a->shape[1];
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i % c];
            break;
        }
    }
    Record rec;
    rec.op = Op::kAdd;
    rec.a = node_of(a);
    rec.b = node_of(b);
    rec.out = out;
    push(std::move(rec));
    return out;
}

TensorPtr Graph::sub(const TensorPtr& a, const TensorPtr& b) {
    Broadcast bc = broadcast_kind(a, b);
    TensorPtr out = new_output(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = a->numel();
    switch (bc) {
        case Broadcast::kNone:
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[i];
            break;
        case Broadcast::kScalar:
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[0];
            break;
        case Broadcast::kChannel: {
            const int c = a->shape[1];
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[i % c];
            break;
        }
    }
    Record rec;
    rec.op = Op::kSub;
    rec.a = node_of(a);
    rec.b = node_of(b);
    rec.out = out;
    push(std::move(rec));
    return out;
}

TensorPtr Graph::mul(const TensorPtr& a, const TensorPtr& b) {
    Broadcast bc = broadcast_kind(a, b);
    TensorPtr out = new_output(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = a->numel();
    switch (bc) {
        case Broadcast::kNone:
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
            break;
        case Broadcast::kScalar:
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[0];
            break;
        case Broadcast::kChannel: {
            const int c = a->shape[1];
            for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i % c];
            break;
        }
    }
    Record rec;
    rec.op = Op::kMul;
    rec.a = node_of(a);
    rec.b = node_of(b);
    rec.out = out;
    push(std::move(rec));
    return out;
}

TensorPtr Graph::relu(const TensorPtr& a) {
    TensorPtr out = new_output(a->shape, a->requires_grad);
    for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    Record rec;
    rec.op = Op::kRelu;
    rec.a = node_of(a);
    rec.out = out;
    push(std::move(rec));
    return out;
}

CeLoss Graph::softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels) {
    if (logits->ndim() != 2) {
        throw ShapeError("softmax_cross_entropy expects [BxK] logits, got " + shape_str(logits->shape));
    }
    const int batch = logits->shape[0];
    const int classes = logits->shape[1];
    if (static_cast<int>(labels.size()) != batch) {
        throw ShapeError("label count " + std::to_string(labels.size()) + " vs batch " +
                         std::to_string(batch));
    }
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw ValueError("label " + std::to_string(y) + " out of range [0, " +
                             std::to_string(classes) + ")");
        }
    }
    std::vector<double> probs(static_cast<std::size_t>(batch) * classes);
    std::vector<double> per_sample(batch);
    double total = 0.0;
    for (int i = 0; i < batch; ++i) {
        const double* row = logits->data.data() + static_cast<std::size_t>(i) * classes;
        double m = row[0];
        for (int k = 1; k < classes; ++k) m = std::max(m, row[k]);
        double z = 0.0;
        for (int k = 0; k < classes; ++k) z += std::exp(row[k] - m);
        const double log_z = m + std::log(z);
        double* prow = probs.data() + static_cast<std::size_t>(i) * classes;
        for (int k = 0; k < classes; ++k) prow[k] = std::exp(row[k] - log_z);
        per_sample[i] = log_z - row[labels[i]];
        total += per_sample[i];
    }
    TensorPtr out = new_output({1}, logits->requires_grad);
    out->data[0] = total / batch;
    Record rec;
    rec.op = Op::kSoftmaxCe;
    rec.a = node_of(logits);
    rec.out = out;
    rec.labels = labels;
    rec.cache = std::move(probs);
    push(std::move(rec));
    return {out, std::move(per_sample)};
}

TensorPtr Graph::sum_sq_diff(const TensorPtr& a, const TensorPtr& target) {
    if (a->shape != target->shape) {
        throw ShapeError("sum_sq_diff shapes " + shape_str(a->shape) + " and " +
                         shape_str(target->shape));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a->data.size(); ++i) {
        const double d = a->data[i] - target->data[i];
        total += d * d;
    }
    TensorPtr out = new_output({1}, a->requires_grad);
    out->data[0] = total;
    Record rec;
    rec.op = Op::kSumSqDiff;
    rec.a = node_of(a);
    rec.b = node_of(target);
    rec.out = out;
    push(std::move(rec));
    return out;
}

TensorPtr Graph::exp(const TensorPtr& a) {
    TensorPtr out = new_output(a->shape, a->requires_grad);
    for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = std::exp(a->data[i]);
    Record rec;
    rec.op = Op::kExp;
    rec.a = node_of(a);
    rec.out = out;
    push(std::move(rec));
    return out;
}

TensorPtr Graph::softplus(const TensorPtr& a) {
    TensorPtr out = new_output(a->shape, a->requires_grad);
    for (std::size_t i = 0; i < a->data.size(); ++i) {
        const double x = a->data[i];
        out->data[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    Record rec;
    rec.op = Op::kSoftplus;
    rec.a = node_of(a);
    rec.out = out;
    push(std::move(rec));
    return out;
}

TensorPtr Graph::sum(const TensorPtr& a) {
    double total = 0.0;
    for (double v : a->data) total += v;
    TensorPtr out = new_output({1}, a->requires_grad);
    out->data[0] = total;
    Record rec;
    rec.op = Op::kSum;
    rec.a = node_of(a);
    rec.out = out;
    push(std::move(rec));
    return out;
}

TensorPtr Graph::scale(const TensorPtr& a, double c) {
    TensorPtr out = new_output(a->shape, a->requires_grad);
    for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * c;
    Record rec;
    rec.op = Op::kScale;
    rec.a = node_of(a);
    rec.out = out;
    rec.c = c;
    push(std::move(rec));
    return out;
}

TensorPtr Graph::shift(const TensorPtr& a, double c) {
    TensorPtr out = new_output(a->shape, a->requires_grad);
    for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + c;
    Record rec;
    rec.op = Op::kShift;
    rec.a = node_of(a);
    rec.out = out;
    rec.c = c;
    push(std::move(rec));
    return out;
}

void Graph::backward(const TensorPtr& loss) {
    if (loss->numel() != 1) {
        throw ContractError("backward requires a scalar loss, got " + shape_str(loss->shape));
    }
    const int root = node_of(loss);
    std::vector<std::vector<double>> adj(nodes_.size());
    adj[root].assign(1, 1.0);

    auto want = [&](int id) { return nodes_[id].out->requires_grad; };
    auto reach = [&](int id, std::size_t n) -> std::vector<double>& {
        if (adj[id].empty()) adj[id].assign(n, 0.0);
        return adj[id];
    };

    for (int id = root; id >= 0; --id) {
        if (adj[id].empty()) continue; // not on the path to the loss
        const Record& rec = nodes_[id];
        const std::vector<double>& d = adj[id];
        switch (rec.op) {
            case Op::kLeaf:
                break;
            case Op::kMatMul: {
                const TensorPtr& a = nodes_[rec.a].out;
                const TensorPtr& b = nodes_[rec.b].out;
                const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
                if (want(rec.a)) {
                    std::vector<double>& da = reach(rec.a, a->numel());
                    for (int i = 0; i < m; ++i) {
                        for (int kk = 0; kk < k; ++kk) {
                            double s = 0.0;
                            const double* drow = d.data() + static_cast<std::size_t>(i) * n;
                            const double* brow = b->data.data() + static_cast<std::size_t>(kk) * n;
                            for (int j = 0; j < n; ++j) s += drow[j] * brow[j];
                            da[static_cast<std::size_t>(i) * k + kk] += s;
                        }
                    }
                }
                if (want(rec.b)) {
                    std::vector<double>& db = reach(rec.b, b->numel());
                    for (int i = 0; i < m; ++i) {
                        const double* arow = a->data.data() + static_cast<std::size_t>(i) * k;
                        const double* drow = d.data() + static_cast<std::size_t>(i) * n;
                        for (int kk = 0; kk < k; ++kk) {
                            const double aik = arow[kk];
                            double* dbrow = db.data() + static_cast<std::size_t>(kk) * n;
                            for (int j = 0; j < n; ++j) dbrow[j] += aik * drow[j];
                        }
                    }
                }
                break;
            }
            case Op::kAdd:
            case Op::kSub:
            case Op::kMul: {
                const TensorPtr& a = nodes_[rec.a].out;
                const TensorPtr& b = nodes_[rec.b].out;
                const Broadcast bc = broadcast_kind(a, b);
                const std::size_t n = a->numel();
                const double sgn = rec.op == Op::kSub ? -1.0 : 1.0;
                if (want(rec.a)) {
                    std::vector<double>& da = reach(rec.a, n);
                    if (rec.op == Op::kMul) {
                        switch (bc) {
                            case Broadcast::kNone:
                                for (std::size_t i = 0; i < n; ++i) da[i] += d[i] * b->data[i];
                                break;
                            case Broadcast::kScalar:
                                for (std::size_t i = 0; i < n; ++i) da[i] += d[i] * b->data[0];
                                break;
                            case Broadcast::kChannel: {
                                const int c = a->shape[1];
                                for (std::size_t i = 0; i < n; ++i) da[i] += d[i] * b->data[i % c];
                                break;
                            }
                        }
                    } else {
                        for (std::size_t i = 0; i < n; ++i) da[i] += d[i];
                    }
                }
                if (want(rec.b)) {
                    std::vector<double>& db = reach(rec.b, b->numel());
                    if (rec.op == Op::kMul) {
                        switch (bc) {
                            case Broadcast::kNone:
                                for (std::size_t i = 0; i < n; ++i) db[i] += d[i] * a->data[i];
                                break;
                            case Broadcast::kScalar:
                                for (std::size_t i = 0; i < n; ++i) db[0] += d[i] * a->data[i];
                                break;
                            case Broadcast::kChannel: {
                                const int c = a->shape[1];
                                for (std::size_t i = 0; i < n; ++i) db[i % c] += d[i] * a->data[i];
                                break;
                            }
                        }
                    } else {
                        switch (bc) {
                            case Broadcast::kNone:
                                for (std::size_t i = 0; i < n; ++i) db[i] += sgn * d[i];
                                break;
                            case Broadcast::kScalar:
                                for (std::size_t i = 0; i < n; ++i) db[0] += sgn * d[i];
                                break;
                            case Broadcast::kChannel: {
                                const int c = a->shape[1];
                                for (std::size_t i = 0; i < n; ++i) db[i % c] += sgn * d[i];
                                break;
                            }
                        }
                    }
                }
                break;
            }
            case Op::kRelu: {
                if (!want(rec.a)) break;
                const TensorPtr& a = nodes_[rec.a].out;
                std::vector<double>& da = reach(rec.a, a->numel());
                for (std::size_t i = 0; i < a->data.size(); ++i) {
                    if (a->data[i] > 0.0) da[i] += d[i];
                }
                break;
            }
            case Op::kSoftmaxCe: {
                if (!want(rec.a)) break;
                const TensorPtr& logits = nodes_[rec.a].out;
                const int batch = logits->shape[0];
                const int classes = logits->shape[1];
                std::vector<double>& da = reach(rec.a, logits->numel());
                const double g = d[0] / batch;
                for (int i = 0; i < batch; ++i) {
                    const double* prow = rec.cache.data() + static_cast<std::size_t>(i) * classes;
                    double* drow = da.data() + static_cast<std::size_t>(i) * classes;
                    for (int k = 0; k < classes; ++k) drow[k] += g * prow[k];
                    drow[rec.labels[i]] -= g;
                }
                break;
            }
            case Op::kSumSqDiff: {
                if (!want(rec.a)) break;
                const TensorPtr& a = nodes_[rec.a].out;
                const TensorPtr& t = nodes_[rec.b].out;
                std::vector<double>& da = reach(rec.a, a->numel());
                for (std::size_t i = 0; i < a->data.size(); ++i) {
                    da[i] += d[0] * 2.0 * (a->data[i] - t->data[i]);
                }
                break;
            }
            case Op::kExp: {
                if (!want(rec.a)) break;
                std::vector<double>& da = reach(rec.a, rec.out->numel());
                for (std::size_t i = 0; i < rec.out->data.size(); ++i) da[i] += d[i] * rec.out->data[i];
                break;
            }
            case Op::kSoftplus: {
                if (!want(rec.a)) break;
                const TensorPtr& a = nodes_[rec.a].out;
                std::vector<double>& da = reach(rec.a, a->numel());
                for (std::size_t i = 0; i < a->data.size(); ++i) {
                    da[i] += d[i] / (1.0 + std::exp(-a->data[i]));
                }
                break;
            }
            case Op::kSum: {
                if (!want(rec.a)) break;
                const TensorPtr& a = nodes_[rec.a].out;
                std::vector<double>& da = reach(rec.a, a->numel());
                for (std::size_t i = 0; i < a->data.size(); ++i) da[i] += d[0];
                break;
            }
            case Op::kScale: {
                if (!want(rec.a)) break;
                std::vector<double>& da = reach(rec.a, rec.out->numel());
                for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i] * rec.c;
                break;
            }
            case Op::kShift: {
                if (!want(rec.a)) break;
                std::vector<double>& da = reach(rec.a, rec.out->numel());
                for (std::size_t i = 0; i < da.size(); ++i) da[i] += d[i];
                break;
            }
        }
    }

    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const Record& rec = nodes_[id];
        if (rec.op != Op::kLeaf || !rec.out->requires_grad || adj[id].empty()) continue;
        rec.out->ensure_grad();
        for (std::size_t i = 0; i < adj[id].size(); ++i) rec.out->grad[i] += adj[id][i];
    }
}

} // namespace sncl
