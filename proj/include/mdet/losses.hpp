#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mdet/tensor.hpp"

namespace mdet {

struct LossGrad {
    double loss = 0.0;
    Tensor grad;
};

// Unnormalized pieces, for callers that normalize across several tensors
// (the trainer divides by the per-image positive count).
struct FocalParts {
    double loss_sum = 0.0;
    int positives = 0;
    Tensor grad_sum;
};

// Penalty-reduced pixelwise focal loss on heatmaps.
//   y == 1 : -(1-p)^alpha * log(p)
//   y <  1 : -(1-y)^beta * p^alpha * log(1-p)
// Predictions are clamped into (eps, 1-eps) before the logs; the gradient is
// zero where the clamp is active, matching the clamped forward exactly.
inline FocalParts focal_heatmap_parts(const Tensor& pred, const Tensor& target,
                                      double alpha = 2.0, double beta = 4.0) {
    if (!pred.same_shape(target)) throw std::invalid_argument("focal_heatmap: shape mismatch");
    constexpr double eps = 1e-7;
    FocalParts out;
    out.grad_sum = Tensor(pred.shape);
    for (int i = 0; i < pred.numel(); ++i) {
        const double y = target.v[i];
        const double raw = pred.v[i];
        if (std::isnan(raw) || std::isnan(y))
            throw std::invalid_argument("focal_heatmap: NaN input");
        const bool clamped = raw < eps || raw > 1.0 - eps;
        const double p = std::min(std::max(raw, eps), 1.0 - eps);
        if (y == 1.0) {
            ++out.positives;
            const double q = 1.0 - p;
            out.loss_sum += -std::pow(q, alpha) * std::log(p);
            if (!clamped)
                out.grad_sum.v[i] = alpha * std::pow(q, alpha - 1.0) * std::log(p) -
                                    std::pow(q, alpha) / p;
        } else {
            const double w = std::pow(1.0 - y, beta);
            out.loss_sum += -w * std::pow(p, alpha) * std::log(1.0 - p);
            if (!clamped)
                out.grad_sum.v[i] = -w * (alpha * std::pow(p, alpha - 1.0) * std::log(1.0 - p) -
                                          std::pow(p, alpha) / (1.0 - p));
        }
    }
    return out;
}

// Loss normalized by the positive count of this call, floored at 1.
inline LossGrad focal_heatmap(const Tensor& pred, const Tensor& target, double alpha = 2.0,
                              double beta = 4.0) {
    FocalParts parts = focal_heatmap_parts(pred, target, alpha, beta);
    const double n = std::max(parts.positives, 1);
    LossGrad out;
    out.loss = parts.loss_sum / n;
    out.grad = std::move(parts.grad_sum);
    for (double& g : out.grad.v) g /= n;
    return out;
}

struct SmoothL1Parts {
    double loss_sum = 0.0;
    int count = 0;
    Tensor grad_sum;
};

// Huber-style loss over mask-selected elements. The mask tensor is broadcast
// over leading channels when it has fewer: a [1,h,w] mask gates every channel
// of a [C,h,w] prediction.
inline SmoothL1Parts smooth_l1_parts(const Tensor& pred, const Tensor& target, const Tensor& mask,
                                     double delta = 1.0) {
    if (!pred.same_shape(target)) throw std::invalid_argument("smooth_l1: shape mismatch");
    if (pred.numel() % mask.numel() != 0)
        throw std::invalid_argument("smooth_l1: mask does not tile prediction");
    SmoothL1Parts out;
    out.grad_sum = Tensor(pred.shape);
    const int plane = mask.numel();
    for (int i = 0; i < pred.numel(); ++i) {
        if (mask.v[i % plane] == 0.0) continue;
        ++out.count;
        const double x = pred.v[i] - target.v[i];
        if (std::abs(x) < delta) {
            out.loss_sum += 0.5 * x * x / delta;
            out.grad_sum.v[i] = x / delta;
        } else {
            out.loss_sum += std::abs(x) - 0.5 * delta;
            out.grad_sum.v[i] = x > 0.0 ? 1.0 : -1.0;
        }
    }
    return out;
}

// Mean over masked elements, floored at 1; empty mask gives zero loss and
// zero gradient.
inline LossGrad smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask,
                          double delta = 1.0) {
    SmoothL1Parts parts = smooth_l1_parts(pred, target, mask, delta);
    const double n = std::max(parts.count, 1);
    LossGrad out;
    out.loss = parts.loss_sum / n;
    out.grad = std::move(parts.grad_sum);
    for (double& g : out.grad.v) g /= n;
    return out;
}

struct LossReport {
    double heat_loss = 0.0;
    double reg_loss = 0.0;
    double total = 0.0;
    int normalizer = 1;  // positive cells backing the focal normalization
    std::vector<double> per_layer_heat;
    std::vector<double> per_layer_reg;
};

}  // namespace mdet
