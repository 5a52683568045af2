#pragma once

#include <array>
#include <memory>
#include <unordered_map>
#include <vector>

#include "sncl/common.hpp"

namespace sncl {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;
using Shape = std::vector<int>;

/// Dense row-major f64 tensor. Rank 1 and 2 are all the gated MLP needs.
/// Gradients accumulate into `grad` when `requires_grad` is set; `grad`
/// stays empty until the first backward pass touches the tensor.
class Tensor {
public:
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // same length as data once allocated

    static TensorPtr make(Shape shape, bool requires_grad = false);
    static TensorPtr make(Shape shape, std::vector<double> values, bool requires_grad = false);
    static TensorPtr full(Shape shape, double value, bool requires_grad = false);
    static TensorPtr scalar(double value);

    int ndim() const { return static_cast<int>(shape.size()); }
    std::size_t numel() const;
    int rows() const; // rank-2 only
    int cols() const; // rank-2 only

    /// Value of a one-element tensor; throws ContractError otherwise.
    double item() const;

    void ensure_grad();
    void zero_grad() { grad.assign(grad.size(), 0.0); }
    bool all_finite() const;
};

std::string shape_str(const Shape& s);

struct CeLoss {
    TensorPtr loss;                  // scalar, mean over the batch
    std::vector<double> per_sample;  // [B], for loss-aware bookkeeping
};

/// Define-by-run reverse-mode tape. A Graph is built fresh for every
/// forward pass and owns the op records in topological (creation) order;
/// backward walks them in exact reverse. Confined to one thread.
class Graph {
public:
    enum class Op {
        kLeaf,
        kMatMul,
        kAdd,
        kSub,
        kMul,
        kRelu,
        kSoftmaxCe,
        kSumSqDiff,
        kExp,
        kSoftplus,
        kSum,
        kScale,
        kShift,
    };

    /// a [m x k] times b [k x n]. Backward: dA += dC.B^T, dB += A^T.dC.
    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

    // Pointwise ops. `b` may have the same shape as `a`, be a one-element
    // tensor, or be a rank-1 [C] vector broadcast across the rows of a
    // rank-2 a [B x C]; broadcast gradients are sum-reduced over the rows.
    TensorPtr add(const TensorPtr& a, const TensorPtr& b);
    TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
    TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

    /// max(0, x); subgradient at exactly 0 is 0.
    TensorPtr relu(const TensorPtr& a);

    /// Mean over the batch of -log softmax(logits)[label], stabilized by
    /// max-subtraction. Also returns the per-sample losses.
    CeLoss softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels);

    /// sum((a - target)^2). `target` is treated as a constant: the gradient
    /// 2(a - target) flows into `a` only.
    TensorPtr sum_sq_diff(const TensorPtr& a, const TensorPtr& target);

    TensorPtr exp(const TensorPtr& a);
    TensorPtr softplus(const TensorPtr& a); // ln(1 + e^x), overflow-safe
    TensorPtr sum(const TensorPtr& a);      // full reduction to a scalar
    TensorPtr scale(const TensorPtr& a, double c);
    TensorPtr shift(const TensorPtr& a, double c);

    /// Accumulates dLoss/dt into t->grad for every leaf with requires_grad.
    /// Deterministic: same graph, same result. Calling twice without
    /// zeroing doubles the accumulated gradients.
    void backward(const TensorPtr& loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Record {
        Op op = Op::kLeaf;
        int a = -1;
        int b = -1;
        TensorPtr out;
        double c = 0.0;              // kScale / kShift constant
        std::vector<int> labels;     // kSoftmaxCe
        std::vector<double> cache;   // kSoftmaxCe probabilities
    };

    int node_of(const TensorPtr& t); // registers a leaf on first use
    TensorPtr new_output(Shape shape, bool requires_grad);
    int push(Record rec);

    std::vector<Record> nodes_;
    std::unordered_map<const Tensor*, int> ids_;
};

} // namespace sncl
