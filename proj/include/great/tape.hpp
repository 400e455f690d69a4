#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "great/tensor.hpp"

namespace great {

// Reverse-mode autodiff over an append-only tape.
//
// Every op records a node whose parents always precede it, so one sweep from
// the output node toward node 0 is a valid reverse topological order. The
// backward pass is itself expressed through the same ops: with
// create_graph=true the gradient computation is appended to the tape as new
// differentiable nodes, which is what makes gradients of gradients (double
// backpropagation) work. Backward never mutates forward values.

enum class OpKind {
    leaf,
    add,
    sub,
    mul,
    scale,       // c * x
    recip,
    sqrt_op,
    abs_op,
    exp_op,
    log_op,
    relu,
    leaky_relu,  // attrs.c = slope
    sigmoid,
    softplus,
    softmax,     // last dim of a 2-D tensor
    log_softmax,
    matmul,      // [M,K] x [K,N]
    transpose2d,
    conv2d,            // 3x3, pad 1, stride attrs.stride; inputs (x, w)
    conv2d_bwd_input,  // inputs (upstream, w), attrs.target = input spatial shape
    conv2d_bwd_weight, // inputs (x, upstream)
    sum_all,
    mean_all,
    reduce_sum_to,  // attrs.target shape (right-aligned, dims equal or 1)
    broadcast_to,   // attrs.target shape
    reshape,
    concat,  // attrs.axis
    slice,   // attrs.axis, start, len
    slice_pad,  // adjoint of slice: embed into zeros of length attrs.len along axis
    avgpool2x2,
    upsample2x,
    global_avgpool,  // [B,C,H,W] -> [B,C]
    grad_reversal,   // identity forward, -lambda * upstream backward; attrs.c = lambda
};

const char* op_name(OpKind k);

struct OpAttrs {
    double c = 0.0;
    int axis = 0;
    int start = 0;
    int len = 0;
    int stride = 1;
    Shape target;
};

struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<int> parents;
    Shape shape;
    std::shared_ptr<std::vector<double>> value;
    OpAttrs attrs;
    bool requires_grad = false;
    std::string label;  // set for named leaves; used in diagnostics
};

struct BackwardOptions {
    bool create_graph = false;
    // When set, seeds the sweep with d(objective)/d(output) instead of the
    // scalar seed 1; output may then be non-scalar.
    const Tensor* seed = nullptr;
};

struct BackwardResult {
    std::vector<Tensor> grads;          // one per wrt entry, shape of the wrt tensor
    std::vector<std::string> warnings;  // e.g. unreachable wrt tensors
};

class Tape {
  public:
    Tensor leaf(const Tensor& values, bool requires_grad, std::string label = "");

    BackwardResult backward(const Tensor& output, const std::vector<Tensor>& wrt,
                            const BackwardOptions& opts = {});

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(nodes_.size()); }
    bool recording() const { return nograd_depth_ == 0; }

    // Wraps an existing node id back into a Tensor view.
    Tensor tensor_of(int id) const;

    int append(OpKind kind, std::vector<int> parents, Shape shape,
               std::shared_ptr<std::vector<double>> value, OpAttrs attrs);

  private:
    friend class NoGradGuard;
    std::vector<Node> nodes_;
    int nograd_depth_ = 0;
};

// Suppresses node recording on a tape for the guard's lifetime; ops computed
// under the guard return free-standing tensors.
class NoGradGuard {
  public:
    explicit NoGradGuard(Tape& t) : tape_(&t) { ++tape_->nograd_depth_; }
    ~NoGradGuard() { --tape_->nograd_depth_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    Tape* tape_;
};

// ---- ops -------------------------------------------------------------
// Each op computes eagerly and records a tape node when any input is bound to
// a recording tape. Inputs bound to different tapes are rejected. Shape
// mismatches throw shape_error naming the op and shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor recip(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor abs_t(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);
Tensor conv2d(const Tensor& x, const Tensor& w, int stride);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor reduce_sum_to(const Tensor& a, const Shape& target);
Tensor broadcast_to(const Tensor& a, const Shape& target);
Tensor reshape(const Tensor& a, const Shape& target);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor avgpool2x2(const Tensor& a);
Tensor upsample2x(const Tensor& a);
Tensor global_avgpool(const Tensor& a);

// Identity in the forward pass; multiplies the upstream gradient by -lambda
// in the backward pass.
Tensor gradient_reversal(const Tensor& x, double lambda);

// Max over coordinates of |g_tape - g_fd| / max(|g_fd|, 1e-8), where g_fd are
// central differences with step h. `f` must build a scalar-valued graph from
// a tape-bound input. Throws numeric_error if f evaluates non-finite.
double finite_difference_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                               const Tensor& x, double h);

}  // namespace great
