// Reverse-mode differentiable tensor core.
//
// Tensors are handles onto graph nodes; forward ops record a backprop closure
// (dynamic tape). backward() walks reachable nodes once, in reverse creation
// order. Leaf gradients accumulate across backward() calls until zero_grad();
// interior gradients are scratch and reset on every backward().
//
// float64 only, row-major, no broadcasting beyond add_rowvec. Shape mismatches
// throw ShapeError naming both shapes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace crossmodal {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first use; values.size() afterwards
    bool requires_grad = false;
    std::uint64_t id = 0;  // creation order; backward sorts by it
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // accumulates this->grad into parents

    bool leaf() const { return !backprop; }
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->values.size(); }
    std::size_t rows() const;  // 2-D only
    std::size_t cols() const;  // 2-D only
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& values() const { return node_->values; }
    std::vector<double>& values() { return node_->values; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const { return node_->grad; }
    void ensure_grad();  // allocate zeros if absent
    void zero_grad();
    double item() const;  // scalar only

    // Populates d(this)/d(leaf) for every reachable requires_grad leaf.
    // this must be scalar; repeated calls accumulate into leaf grads.
    void backward();

    std::shared_ptr<TensorNode> node() const { return node_; }

  private:
    std::shared_ptr<TensorNode> node_;
};

// ---- differentiable operations -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m×k]·[k×n] → [m×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m×k]·[n×k]ᵀ → [m×n]
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor divide(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& x, const Tensor& bias);  // [m×n] + [1×n]
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor scale_rows(const Tensor& x, const std::vector<double>& w);  // constant per-row weights
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor softmax_rows(const Tensor& x);  // row-max stabilized
// Rows scaled to unit L2 norm; an exactly zero row stays zero and gets zero grad.
Tensor l2_normalize_rows(const Tensor& x);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// x is an H×W image flattened to (H·W)×F; output row p holds the 3×3
// neighborhood of pixel p concatenated slot-major, zero-padded at borders.
Tensor unfold_3x3(const Tensor& x, std::size_t height, std::size_t width);
Tensor colsum(const Tensor& x);   // [m×n] → [1×n]
Tensor sum_all(const Tensor& x);  // → scalar
Tensor mean_all(const Tensor& x);
Tensor detach(const Tensor& x);  // constant leaf copy, no grad
// mean over rows of (1 − cosine(a_row, b_row)); a zero-norm side makes the
// pair contribute exactly 1 (cosine defined as 0) with zero gradient.
Tensor cosine_distance_mean(const Tensor& a, const Tensor& b);

// Constant-leaf row gather (no graph through x); for teacher-side reads.
Tensor gather_rows_const(const Tensor& x, const std::vector<std::size_t>& idx);

// Fused mean softmax cross-entropy over rows whose label != ignore_id.
// count == 0 yields a constant zero scalar (the "empty" convention).
struct MaskedCE {
    Tensor loss;
    std::size_t count = 0;
    bool empty() const { return count == 0; }
};
MaskedCE masked_softmax_ce(const Tensor& logits, const std::vector<int>& labels, int ignore_id);

// ---- optimizer -------------------------------------------------------------

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

// Decoupled weight decay; eps added after the root:
//   w ← w − lr·(m̂/(√v̂+ε) + wd·w)
class AdamW {
  public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg);
    void step();  // parameter without an allocated grad → TrainError
    void zero_grad();
    std::size_t step_count() const { return t_; }
    const std::vector<Tensor>& params() const { return params_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamWConfig cfg_;
    std::size_t t_ = 0;
};

// Global L2 norm over all grads (missing grads count as zero).
double grad_global_norm(const std::vector<Tensor>& params);
// Scales grads to max_norm when the global norm exceeds it; returns the
// pre-clip norm either way.
double clip_grad_global_norm(const std::vector<Tensor>& params, double max_norm);

}  // namespace crossmodal
