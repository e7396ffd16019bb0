#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "gvs/tensor.hpp"

namespace gvs {

// Define-by-run reverse-mode autodiff. Each op appends a Node holding the
// forward value and a closure that pulls the node's gradient into its
// parents. backward() walks the reachable subgraph in reverse creation
// order, so every reduction happens in a fixed order and repeated runs are
// bit-identical.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_allocated = false;
    std::uint64_t order = 0;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_op;

    void ensure_grad() {
        if (!grad_allocated) {
            grad = Tensor(value.shape());
            grad_allocated = true;
        }
    }
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    static Var leaf(Tensor value, bool requires_grad);
    static Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool has_grad() const { return node_ && node_->grad_allocated; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return node_ != nullptr; }
    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Disables graph construction within scope; ops compute values only.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

void backward(const Var& loss);

// Elementwise and structural ops. All inputs are (N, C, H, W) unless noted.
Var add(const Var& a, const Var& b);
Var add_scaled(const Var& a, const Var& b, double scale);  // a + scale * b
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh_act(const Var& x);
Var add_constant(const Var& x, const Tensor& c);

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var maxpool2x2(const Var& x);
Var upsample_nearest2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var reflect_pad2d(const Var& x, int pad_bottom, int pad_right);
Var crop2d(const Var& x, std::int64_t out_h, std::int64_t out_w);

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

// use_batch_stats picks batch statistics (training behavior) vs the running
// buffers; update_running writes the running buffers as a side effect and is
// enabled only while the owning network is itself being trained.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool use_batch_stats, bool update_running, double momentum, double eps);

Var softmax_channels(const Var& x);

// Mean over all pixels of weights(i) * -log(clamp(prob[target(i)](i))).
// prob is (N, 2, H, W); target and weights are (N, H, W). Probabilities are
// clamped to [1e-7, 1 - 1e-7] inside the log; the gradient carries the clamp
// indicator so it stays the exact derivative of the computed value.
Var weighted_ce(const Var& prob, const Tensor& target, const Tensor& weights);

Var mse(const Var& a, const Var& b);

}  // namespace gvs
