#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "mdet/tensor.hpp"

namespace mdet {

// Standard Adam with bias correction. State is keyed by parameter name and
// updates iterate the (ordered) parameter map, so a fixed seed and call order
// reproduce runs bitwise.
class Adam {
public:
    explicit Adam(double lr = 5e-5, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    void step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (auto& [name, p] : params) {
            auto git = grads.find(name);
            if (git == grads.end()) throw std::invalid_argument("adam: missing grad for " + name);
            const Tensor& g = git->second;
            Tensor& m = state(m_, name, p);
            Tensor& v = state(v_, name, p);
            for (int i = 0; i < p.numel(); ++i) {
                m.v[i] = beta1_ * m.v[i] + (1.0 - beta1_) * g.v[i];
                v.v[i] = beta2_ * v.v[i] + (1.0 - beta2_) * g.v[i] * g.v[i];
                const double mhat = m.v[i] / bc1;
                const double vhat = v.v[i] / bc2;
                p.v[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    static Tensor& state(std::map<std::string, Tensor>& store, const std::string& name,
                         const Tensor& like) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, Tensor(like.shape)).first;
        return it->second;
    }

    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace mdet
