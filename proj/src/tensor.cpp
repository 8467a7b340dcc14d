#include "crossmodal/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "crossmodal/error.hpp"
#include "crossmodal/kernels.hpp"

namespace crossmodal {
namespace {

std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

std::shared_ptr<TensorNode> make_leaf(std::vector<std::size_t> shape, std::vector<double> values,
                                      bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    n->id = next_id();
    return n;
}

Tensor make_op(std::vector<std::size_t> shape, std::vector<double> values,
               std::vector<std::shared_ptr<TensorNode>> parents,
               std::function<void(TensorNode&)> fn) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->id = next_id();
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backprop = std::move(fn);
    }
    return Tensor(n);
}

void accum(TensorNode& p, const double* g, std::size_t n) {
    if (!p.requires_grad) return;
    if (p.grad.empty()) p.grad.assign(p.values.size(), 0.0);
    kern::active().vadd(p.grad.data(), g, p.grad.data(), n);
}

void accum_scaled(TensorNode& p, double a, const double* g, std::size_t n) {
    if (!p.requires_grad) return;
    if (p.grad.empty()) p.grad.assign(p.values.size(), 0.0);
    kern::active().axpy(a, g, p.grad.data(), n);
}

void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<double> values,
                           bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw ShapeError("from_values: " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(make_leaf({1}, {value}, requires_grad));
}

std::size_t Tensor::rows() const {
    require_2d(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_2d(*this, "cols");
    return node_->shape[1];
}

void Tensor::ensure_grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

double Tensor::item() const {
    if (node_->values.size() != 1)
        throw ShapeError("item: tensor " + shape_str(node_->shape) + " is not scalar");
    return node_->values[0];
}

void Tensor::backward() {
    if (!node_ || node_->values.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " +
                         (node_ ? shape_str(node_->shape) : std::string("undefined")));
    if (!node_->requires_grad) return;  // graph of constants; nothing to do

    // Collect every reachable requires_grad node once (iterative DFS).
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<TensorNode*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }

    // Interior grads are per-call scratch; leaf grads persist and accumulate.
    for (TensorNode* n : order) {
        if (!n->leaf())
            n->grad.assign(n->values.size(), 0.0);
        else if (n->grad.empty())
            n->grad.assign(n->values.size(), 0.0);
    }
    node_->grad[0] += 1.0;

    std::sort(order.begin(), order.end(),
              [](const TensorNode* a, const TensorNode* b) { return a->id > b->id; });
    for (TensorNode* n : order)
        if (n->backprop) n->backprop(*n);
}

// ---- matrix products --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    kern::active().matmul_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    auto pa = a.node(), pb = b.node();
    return make_op({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](TensorNode& self) {
        const double* dc = self.grad.data();
        if (pa->requires_grad) {
            std::vector<double> da(m * k);
            kern::active().matmul_nt(dc, pb->values.data(), da.data(), m, n, k);
            accum(*pa, da.data(), da.size());
        }
        if (pb->requires_grad) {
            std::vector<double> db(k * n);
            kern::active().matmul_tn(pa->values.data(), dc, db.data(), m, k, n);
            accum(*pb, db.data(), db.size());
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(m * n);
    kern::active().matmul_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
    auto pa = a.node(), pb = b.node();
    return make_op({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](TensorNode& self) {
        const double* dc = self.grad.data();
        if (pa->requires_grad) {
            std::vector<double> da(m * k);
            kern::active().matmul_nn(dc, pb->values.data(), da.data(), m, n, k);
            accum(*pa, da.data(), da.size());
        }
        if (pb->requires_grad) {
            std::vector<double> db(n * k);
            kern::active().matmul_tn(dc, pa->values.data(), db.data(), m, n, k);
            accum(*pb, db.data(), db.size());
        }
    });
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    kern::active().vadd(a.values().data(), b.values().data(), out.data(), out.size());
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorNode& self) {
        accum(*pa, self.grad.data(), self.grad.size());
        accum(*pb, self.grad.data(), self.grad.size());
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    kern::active().vsub(a.values().data(), b.values().data(), out.data(), out.size());
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorNode& self) {
        accum(*pa, self.grad.data(), self.grad.size());
        accum_scaled(*pb, -1.0, self.grad.data(), self.grad.size());
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    kern::active().vmul(a.values().data(), b.values().data(), out.data(), out.size());
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorNode& self) {
        std::vector<double> tmp(self.grad.size());
        if (pa->requires_grad) {
            kern::active().vmul(self.grad.data(), pb->values.data(), tmp.data(), tmp.size());
            accum(*pa, tmp.data(), tmp.size());
        }
        if (pb->requires_grad) {
            kern::active().vmul(self.grad.data(), pa->values.data(), tmp.data(), tmp.size());
            accum(*pb, tmp.data(), tmp.size());
        }
    });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "divide");
    std::vector<double> out(a.size());
    kern::active().vdiv(a.values().data(), b.values().data(), out.data(), out.size());
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorNode& self) {
        std::vector<double> tmp(self.grad.size());
        if (pa->requires_grad) {
            kern::active().vdiv(self.grad.data(), pb->values.data(), tmp.data(), tmp.size());
            accum(*pa, tmp.data(), tmp.size());
        }
        if (pb->requires_grad) {
            // dL/db = −dc·(a/b)/b = −dc·c/b
            kern::active().vmul(self.grad.data(), self.values.data(), tmp.data(), tmp.size());
            kern::active().vdiv(tmp.data(), pb->values.data(), tmp.data(), tmp.size());
            accum_scaled(*pb, -1.0, tmp.data(), tmp.size());
        }
    });
}

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
    require_2d(x, "add_rowvec");
    require_2d(bias, "add_rowvec");
    if (bias.rows() != 1 || bias.cols() != x.cols())
        throw ShapeError("add_rowvec: bias " + shape_str(bias.shape()) + " does not broadcast over " +
                         shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        kern::active().vadd(x.values().data() + i * n, bias.values().data(), out.data() + i * n, n);
    auto px = x.node(), pb = bias.node();
    return make_op({m, n}, std::move(out), {px, pb}, [px, pb, m, n](TensorNode& self) {
        accum(*px, self.grad.data(), self.grad.size());
        if (pb->requires_grad) {
            std::vector<double> db(n, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                kern::active().vadd(db.data(), self.grad.data() + i * n, db.data(), n);
            accum(*pb, db.data(), n);
        }
    });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    kern::active().vscale(c, x.values().data(), out.data(), out.size());
    auto px = x.node();
    return make_op(x.shape(), std::move(out), {px}, [px, c](TensorNode& self) {
        accum_scaled(*px, c, self.grad.data(), self.grad.size());
    });
}

Tensor add_scalar(const Tensor& x, double c) {
    std::vector<double> out(x.values());
    for (double& v : out) v += c;
    auto px = x.node();
    return make_op(x.shape(), std::move(out), {px}, [px](TensorNode& self) {
        accum(*px, self.grad.data(), self.grad.size());
    });
}

Tensor scale_rows(const Tensor& x, const std::vector<double>& w) {
    require_2d(x, "scale_rows");
    if (w.size() != x.rows())
        throw ShapeError("scale_rows: " + std::to_string(w.size()) + " weights for " +
                         shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        kern::active().vscale(w[i], x.values().data() + i * n, out.data() + i * n, n);
    auto px = x.node();
    return make_op({m, n}, std::move(out), {px}, [px, w, m, n](TensorNode& self) {
        if (!px->requires_grad) return;
        std::vector<double> dx(m * n);
        for (std::size_t i = 0; i < m; ++i)
            kern::active().vscale(w[i], self.grad.data() + i * n, dx.data() + i * n, n);
        accum(*px, dx.data(), dx.size());
    });
}

// ---- nonlinearities ----------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.values()[i]));
    auto px = x.node();
    return make_op(x.shape(), std::move(out), {px}, [px](TensorNode& self) {
        if (!px->requires_grad) return;
        std::vector<double> dx(self.grad.size());
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double y = self.values[i];
            dx[i] = self.grad[i] * y * (1.0 - y);
        }
        accum(*px, dx.data(), dx.size());
    });
}

Tensor tanh_act(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
    auto px = x.node();
    return make_op(x.shape(), std::move(out), {px}, [px](TensorNode& self) {
        if (!px->requires_grad) return;
        std::vector<double> dx(self.grad.size());
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double y = self.values[i];
            dx[i] = self.grad[i] * (1.0 - y * y);
        }
        accum(*px, dx.data(), dx.size());
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n;
        double* orow = out.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            z += orow[j];
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
    }
    auto px = x.node();
    return make_op({m, n}, std::move(out), {px}, [px, m, n](TensorNode& self) {
        if (!px->requires_grad) return;
        std::vector<double> dx(m * n);
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = self.values.data() + i * n;
            const double* dy = self.grad.data() + i * n;
            const double s = kern::active().dot(dy, y, n);
            double* drow = dx.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) drow[j] = y[j] * (dy[j] - s);
        }
        accum(*px, dx.data(), dx.size());
    });
}

Tensor l2_normalize_rows(const Tensor& x) {
    require_2d(x, "l2_normalize_rows");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n;
        const double norm = std::sqrt(kern::active().sumsq(row, n));
        norms[i] = norm;
        double* orow = out.data() + i * n;
        if (norm == 0.0)
            std::fill(orow, orow + n, 0.0);
        else
            kern::active().vscale(1.0 / norm, row, orow, n);
    }
    auto px = x.node();
    return make_op({m, n}, std::move(out), {px}, [px, norms, m, n](TensorNode& self) {
        if (!px->requires_grad) return;
        std::vector<double> dx(m * n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            if (norms[i] == 0.0) continue;  // zero row: output pinned at zero
            const double* y = self.values.data() + i * n;
            const double* dy = self.grad.data() + i * n;
            const double s = kern::active().dot(dy, y, n);
            double* drow = dx.data() + i * n;
            const double inv = 1.0 / norms[i];
            for (std::size_t j = 0; j < n; ++j) drow[j] = (dy[j] - y[j] * s) * inv;
        }
        accum(*px, dx.data(), dx.size());
    });
}

// ---- structural ops -----------------------------------------------------------

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
    require_2d(x, "gather_rows");
    const std::size_t n = x.cols();
    for (std::size_t i : idx)
        if (i >= x.rows())
            throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " +
                             std::to_string(x.rows()) + " rows");
    std::vector<double> out(idx.size() * n);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + i * n, x.values().data() + idx[i] * n, n * sizeof(double));
    auto px = x.node();
    return make_op({idx.size(), n}, std::move(out), {px}, [px, idx, n](TensorNode& self) {
        if (!px->requires_grad) return;
        if (px->grad.empty()) px->grad.assign(px->values.size(), 0.0);
        for (std::size_t i = 0; i < idx.size(); ++i)
            kern::active().vadd(px->grad.data() + idx[i] * n, self.grad.data() + i * n,
                                px->grad.data() + idx[i] * n, n);
    });
}

Tensor gather_rows_const(const Tensor& x, const std::vector<std::size_t>& idx) {
    require_2d(x, "gather_rows_const");
    const std::size_t n = x.cols();
    std::vector<double> out(idx.size() * n);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.rows())
            throw ShapeError("gather_rows_const: index " + std::to_string(idx[i]) + " out of " +
                             std::to_string(x.rows()) + " rows");
        std::memcpy(out.data() + i * n, x.values().data() + idx[i] * n, n * sizeof(double));
    }
    return Tensor::from_values({idx.size(), n}, std::move(out), false);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_rows");
        if (p.cols() != n)
            throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(parts[0].shape()));
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    std::vector<std::shared_ptr<TensorNode>> parents;
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        parents.push_back(p.node());
    }
    auto parents_copy = parents;
    return make_op({m, n}, std::move(out), std::move(parents),
                   [parents_copy](TensorNode& self) {
                       std::size_t off = 0;
                       for (const auto& p : parents_copy) {
                           accum(*p, self.grad.data() + off, p->values.size());
                           off += p->values.size();
                       }
                   });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != m)
            throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(parts[0].shape()));
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::vector<std::size_t> widths;
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            std::memcpy(out.data() + i * n + off, p.values().data() + i * w, w * sizeof(double));
        parents.push_back(p.node());
        widths.push_back(w);
        off += w;
    }
    auto parents_copy = parents;
    return make_op({m, n}, std::move(out), std::move(parents),
                   [parents_copy, widths, m, n](TensorNode& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < parents_copy.size(); ++k) {
                           const auto& p = parents_copy[k];
                           const std::size_t w = widths[k];
                           if (p->requires_grad) {
                               std::vector<double> dp(m * w);
                               for (std::size_t i = 0; i < m; ++i)
                                   std::memcpy(dp.data() + i * w, self.grad.data() + i * n + off,
                                               w * sizeof(double));
                               accum(*p, dp.data(), dp.size());
                           }
                           off += w;
                       }
                   });
}

Tensor unfold_3x3(const Tensor& x, std::size_t height, std::size_t width) {
    require_2d(x, "unfold_3x3");
    if (x.rows() != height * width)
        throw ShapeError("unfold_3x3: " + shape_str(x.shape()) + " is not " +
                         std::to_string(height) + "x" + std::to_string(width) + " pixels");
    const std::size_t f = x.cols();
    const std::size_t m = height * width;
    // idx[p*9 + s] = source pixel row, or -1 outside the image
    std::vector<std::int64_t> idx(m * 9);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            std::int64_t* slot = idx.data() + (r * width + c) * 9;
            std::size_t s = 0;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc, ++s) {
                    const std::int64_t rr = static_cast<std::int64_t>(r) + dr;
                    const std::int64_t cc = static_cast<std::int64_t>(c) + dc;
                    slot[s] = (rr < 0 || cc < 0 || rr >= static_cast<std::int64_t>(height) ||
                               cc >= static_cast<std::int64_t>(width))
                                  ? -1
                                  : rr * static_cast<std::int64_t>(width) + cc;
                }
            }
        }
    }
    std::vector<double> out(m * 9 * f, 0.0);
    for (std::size_t p = 0; p < m; ++p) {
        double* orow = out.data() + p * 9 * f;
        const std::int64_t* slot = idx.data() + p * 9;
        for (std::size_t s = 0; s < 9; ++s)
            if (slot[s] >= 0)
                std::memcpy(orow + s * f, x.values().data() + slot[s] * f, f * sizeof(double));
    }
    auto px = x.node();
    return make_op({m, 9 * f}, std::move(out), {px},
                   [px, idx = std::move(idx), m, f](TensorNode& self) {
                       if (!px->requires_grad) return;
                       if (px->grad.empty()) px->grad.assign(px->values.size(), 0.0);
                       for (std::size_t p = 0; p < m; ++p) {
                           const double* grow = self.grad.data() + p * 9 * f;
                           const std::int64_t* slot = idx.data() + p * 9;
                           for (std::size_t s = 0; s < 9; ++s)
                               if (slot[s] >= 0)
                                   kern::active().vadd(px->grad.data() + slot[s] * f, grow + s * f,
                                                       px->grad.data() + slot[s] * f, f);
                       }
                   });
}

// ---- reductions -----------------------------------------------------------------

Tensor colsum(const Tensor& x) {
    require_2d(x, "colsum");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        kern::active().vadd(out.data(), x.values().data() + i * n, out.data(), n);
    auto px = x.node();
    return make_op({1, n}, std::move(out), {px}, [px, m, n](TensorNode& self) {
        if (!px->requires_grad) return;
        if (px->grad.empty()) px->grad.assign(px->values.size(), 0.0);
        for (std::size_t i = 0; i < m; ++i)
            kern::active().vadd(px->grad.data() + i * n, self.grad.data(),
                                px->grad.data() + i * n, n);
    });
}

Tensor sum_all(const Tensor& x) {
    const double total = kern::active().vsum(x.values().data(), x.size());
    auto px = x.node();
    return make_op({1}, {total}, {px}, [px](TensorNode& self) {
        if (!px->requires_grad) return;
        if (px->grad.empty()) px->grad.assign(px->values.size(), 0.0);
        const double g = self.grad[0];
        for (double& v : px->grad) v += g;
    });
}

Tensor mean_all(const Tensor& x) {
    if (x.size() == 0) throw ShapeError("mean_all: empty tensor");
    return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor detach(const Tensor& x) {
    return Tensor(make_leaf(x.shape(), x.values(), false));
}

Tensor cosine_distance_mean(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "cosine_distance_mean");
    require_2d(a, "cosine_distance_mean");
    const std::size_t m = a.rows(), n = a.cols();
    if (m == 0) throw ShapeError("cosine_distance_mean: no rows");
    std::vector<double> na(m), nb(m), cosv(m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double* ra = a.values().data() + i * n;
        const double* rb = b.values().data() + i * n;
        na[i] = std::sqrt(kern::active().sumsq(ra, n));
        nb[i] = std::sqrt(kern::active().sumsq(rb, n));
        cosv[i] = (na[i] == 0.0 || nb[i] == 0.0)
                      ? 0.0
                      : kern::active().dot(ra, rb, n) / (na[i] * nb[i]);
        total += 1.0 - cosv[i];
    }
    total /= static_cast<double>(m);
    auto pa = a.node(), pb = b.node();
    return make_op({1}, {total}, {pa, pb},
                   [pa, pb, na, nb, cosv, m, n](TensorNode& self) {
                       const double g = self.grad[0] / static_cast<double>(m);
                       // d(1−cos)/da = −(b/(|a||b|) − cos·a/|a|²), symmetric in b
                       for (std::size_t i = 0; i < m; ++i) {
                           if (na[i] == 0.0 || nb[i] == 0.0) continue;
                           const double* ra = pa->values.data() + i * n;
                           const double* rb = pb->values.data() + i * n;
                           if (pa->requires_grad) {
                               if (pa->grad.empty()) pa->grad.assign(pa->values.size(), 0.0);
                               double* da = pa->grad.data() + i * n;
                               const double c1 = -g / (na[i] * nb[i]);
                               const double c2 = g * cosv[i] / (na[i] * na[i]);
                               for (std::size_t j = 0; j < n; ++j) da[j] += c1 * rb[j] + c2 * ra[j];
                           }
                           if (pb->requires_grad) {
                               if (pb->grad.empty()) pb->grad.assign(pb->values.size(), 0.0);
                               double* db = pb->grad.data() + i * n;
                               const double c1 = -g / (na[i] * nb[i]);
                               const double c2 = g * cosv[i] / (nb[i] * nb[i]);
                               for (std::size_t j = 0; j < n; ++j) db[j] += c1 * ra[j] + c2 * rb[j];
                           }
                       }
                   });
}

MaskedCE masked_softmax_ce(const Tensor& logits, const std::vector<int>& labels, int ignore_id) {
    require_2d(logits, "masked_softmax_ce");
    const std::size_t m = logits.rows(), n = logits.cols();
    if (labels.size() != m)
        throw ShapeError("masked_softmax_ce: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(logits.shape()));
    std::size_t count = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] == ignore_id) continue;
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n)
            throw DataError("masked_softmax_ce: label " + std::to_string(labels[i]) +
                            " out of range for " + std::to_string(n) + " classes");
        ++count;
    }
    if (count == 0) return {Tensor::scalar(0.0), 0};

    double total = 0.0;
    std::vector<double> probs(m * n, 0.0);  // rows of ignored labels stay zero
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] == ignore_id) continue;
        const double* row = logits.values().data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        total += lse - row[labels[i]];
        double* prow = probs.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) prow[j] = std::exp(row[j] - lse);
    }
    total /= static_cast<double>(count);
    auto px = logits.node();
    Tensor loss = make_op(
        {1}, {total}, {px},
        [px, labels, ignore_id, probs = std::move(probs), count, m, n](TensorNode& self) {
            if (!px->requires_grad) return;
            if (px->grad.empty()) px->grad.assign(px->values.size(), 0.0);
            const double g = self.grad[0] / static_cast<double>(count);
            for (std::size_t i = 0; i < m; ++i) {
                if (labels[i] == ignore_id) continue;
                const double* prow = probs.data() + i * n;
                double* drow = px->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) drow[j] += g * prow[j];
                drow[labels[i]] -= g;
            }
        });
    return {loss, count};
}

// ---- optimizer --------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const double bc2 = 1.0 / (1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad())
            throw TrainError("adamw_step: parameter " + std::to_string(i) + " has no gradient");
        kern::active().adamw_update(p.values().data(), p.grad().data(), m_[i].data(),
                                    v_[i].data(), p.size(), cfg_.lr, cfg_.beta1, cfg_.beta2,
                                    cfg_.eps, cfg_.weight_decay, bc1, bc2);
    }
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

double grad_global_norm(const std::vector<Tensor>& params) {
    double total = 0.0;
    for (const Tensor& p : params)
        if (p.has_grad()) total += kern::active().sumsq(p.grad().data(), p.size());
    return std::sqrt(total);
}

double clip_grad_global_norm(const std::vector<Tensor>& params, double max_norm) {
    const double norm = grad_global_norm(params);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (const Tensor& p : params) {
            if (!p.has_grad()) continue;
            auto& g = p.node()->grad;
            kern::active().vscale(s, g.data(), g.data(), g.size());
        }
    }
    return norm;
}

}  // namespace crossmodal
