#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

/// Reverse-mode automatic differentiation over dense row-major float64
/// tensors. A Var is a handle to a graph node; operations record their
/// parents and a backward closure while gradient recording is enabled.
namespace lf::ag {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var constant(Shape shape, std::vector<double> values);
    static Var zeros(Shape shape);
    /// Leaf that accumulates gradients.
    static Var parameter(Shape shape, std::vector<double> values);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i < 0 ? static_cast<int>(node_->shape.size()) + i : i)); }
    std::size_t size() const { return node_->value.size(); }
    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& mutable_value() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& mutable_grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_->requires_grad; }
    double item() const { return node_->value.at(0); }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Runs backpropagation from a scalar root (seed 1).
void backward(const Var& root);

bool grad_enabled();

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// --- elementwise ----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var leaky_relu(const Var& x, double slope = 0.2);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

// --- shape ----------------------------------------------------------------
Var reshape(const Var& x, Shape shape);
/// [B, N, D] -> [B, D, N]
Var transpose12(const Var& x);
/// [B, A, C, D] -> [B, C, A, D]
Var permute0213(const Var& x);
/// Stacks s tensors of shape [B, C] into [B, s, C].
Var stack_rows(const std::vector<Var>& rows);
/// Row j of [B, S, C] as [B, C].
Var select_row(const Var& x, int j);
/// Columns [start, start + len) of the last dimension.
Var slice_last(const Var& x, int start, int len);
/// Broadcasts a [1, ...] parameter over a batch of n.
Var repeat_batch(const Var& x, int n);
/// x[B, ...rest] + p[...rest]
Var add_broadcast(const Var& x, const Var& p);
/// Overwrites the last two entries of each row of x[B, C] with slots[B, 2]
/// (constant); no gradient flows through the overwritten entries.
Var inject_slots(const Var& x, const std::vector<double>& slots);
/// [B, 1, k, k] -> [B, (k/p)^2, p*p], patches in row-major order.
Var patchify(const Var& x, int patch);

// --- linear algebra -------------------------------------------------------
/// x[..., in] * W[out, in]^T + b[out]; b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);
/// Batched product of [B, M, K] and [B, K, N] (optionally transposing b to [B, N, K]).
Var bmm(const Var& a, const Var& b, bool transpose_b = false);
Var softmax_last(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct ConvGeom {
    int kh = 3, kw = 3;
    int sh = 1, sw = 1;
    int ph = 0, pw = 0;
};

/// x[B, Cin, H, W], w[Cout, Cin, kh, kw], b[Cout].
Var conv2d(const Var& x, const Var& w, const Var& b, ConvGeom g);
/// Adjoint of conv2d producing spatial size (out_h, out_w); w[Cin, Cout, kh, kw].
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, ConvGeom g, int out_h, int out_w);

// --- reductions and losses ------------------------------------------------
Var sum(const Var& x);
Var mean(const Var& x);
/// Mean over the batch of ||pred_i - target_i|| / ||target_i|| for [B, ...].
Var relative_error_loss(const Var& pred, const Var& target);
/// Mean over the batch of per-item root-mean-square error.
Var rmse_loss(const Var& pred, const Var& target);

// --- dense kernels shared with non-graph code -----------------------------
/// C[m,n] (+)= op(A) * op(B) for row-major buffers.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, const double* b, double beta,
          double* c);

}  // namespace lf::ag
