// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace editflow::ad {

// Reverse-mode tape over Tensor values. Graphs are built per loss evaluation
// and discarded after backward(). Node ids increase in creation order, so
// reverse id order is a valid topological order for the backward sweep.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    int64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad() {
        if (!grad_ready) {
            grad = Tensor(value.shape());
            grad_ready = true;
        }
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value_mut() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad_ready; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<int>& shape() const { return node_->value.shape(); }

    void zero_grad() {
        node_->grad_ready = false;
        node_->grad = Tensor();
    }

    std::shared_ptr<Node> node() const { return node_; }

    static Var from_node(std::shared_ptr<Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<Node> node_;
};

// Runs the backward sweep from a scalar root (shape [1] or single element).
void backward(const Var& root);

// While alive, newly built ops record no parents and no backward functions.
// Used for teacher/aux scoring and inference-time generation.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// --- graph construction ---------------------------------------------------

Var constant(Tensor value);

// Elementwise, same shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

// y = k * a + c (scalar coefficients).
Var affine(const Var& a, float k, float c = 0.0F);
Var neg(const Var& a);

// Elementwise against a constant tensor (no gradient into the constant).
Var add_const(const Var& a, const Tensor& c);
Var sub_const(const Var& a, const Tensor& c);       // a - c
Var sub_from_const(const Tensor& c, const Var& a);  // c - a
Var mul_const(const Var& a, const Tensor& c);

// Adds c[ch] to every (n, h, w) position of channel ch. a is [N,C,H,W].
Var add_channel_const(const Var& a, const std::vector<float>& c);

Var silu(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var tanh(const Var& a);

// x [B,I] * W^T + b, W is [O,I], b is [O] (b may be undefined).
Var linear(const Var& x, const Var& w, const Var& b);

// x [N,C,H,W], w [O,C,kh,kw], b [O] (optional), zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

Var upsample_nearest2x(const Var& x);
// [N, C*4, H, W] -> [N, C, 2H, 2W]
Var pixel_shuffle2(const Var& x);
Var avgpool2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);

// y = x * (1 + scale) + shift with scale/shift [N,C] broadcast over H,W.
Var film(const Var& x, const Var& scale, const Var& shift);

// Reductions.
Var mean_all(const Var& a);                       // -> [1]
Var sum_all(const Var& a);                        // -> [1]
Var sum_per_sample(const Var& a);                 // [N,...] -> [N]
Var sum_channels(const Var& a);                   // [N,C,H,W] -> [N,1,H,W]
Var logsumexp_spatial(const Var& a);              // [N,1,H,W] -> [N]

// Cuts the tape: value is shared, gradient does not flow.
Var detach(const Var& a);

// Gathers samples along the batch dimension; backward scatter-adds.
Var select_samples(const Var& a, const std::vector<int>& indices);

} // namespace editflow::ad
