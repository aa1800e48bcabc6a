#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "mdet/ops.hpp"
#include "mdet/tensor.hpp"

namespace mdet {

// Minimal reverse-mode tape over the ops in ops.hpp. Each op records a
// closure that routes the output gradient to its inputs; backward() replays
// them in reverse. Gradient buffers are allocated lazily, so a forward-only
// pass (inference) carries no gradient memory. One tape per image; tapes are
// independent, which is what makes batch-parallel training safe.
class Tape {
public:
    int leaf(Tensor value) {
        nodes_.push_back({std::move(value), Tensor{}});
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor& value(int id) const { return nodes_[id].value; }

    Tensor& grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor(n.value.shape);
        return n.grad;
    }

    bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

    int conv2d(int x, int w, int b, int stride_h, int stride_w, int pad) {
        int out = leaf(conv2d_forward(value(x), value(w), value(b), stride_h, stride_w, pad));
        ops_.push_back([this, x, w, b, out, stride_h, stride_w, pad] {
            if (!has_grad(out)) return;
            conv2d_backward(value(x), value(w), stride_h, stride_w, pad, nodes_[out].grad,
                            &grad(x), &grad(w), &grad(b));
        });
        return out;
    }

    int relu(int x) {
        int out = leaf(relu_forward(value(x)));
        ops_.push_back([this, x, out] {
            if (!has_grad(out)) return;
            relu_backward(value(x), nodes_[out].grad, &grad(x));
        });
        return out;
    }

    int sigmoid(int x) {
        int out = leaf(sigmoid_forward(value(x)));
        ops_.push_back([this, x, out] {
            if (!has_grad(out)) return;
            sigmoid_backward(value(out), nodes_[out].grad, &grad(x));
        });
        return out;
    }

    int add(int a, int b) {
        int out = leaf(add_forward(value(a), value(b)));
        ops_.push_back([this, a, b, out] {
            if (!has_grad(out)) return;
            const Tensor& g = nodes_[out].grad;
            Tensor& ga = grad(a);
            Tensor& gb = grad(b);
            for (int i = 0; i < g.numel(); ++i) {
                ga.v[i] += g.v[i];
                gb.v[i] += g.v[i];
            }
        });
        return out;
    }

    // Seed output grads (via grad(id)) before calling.
    void backward() {
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
    };
    std::vector<Node> nodes_;
    std::vector<std::function<void()>> ops_;
};

}  // namespace mdet
