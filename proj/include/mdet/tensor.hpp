#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace mdet {

// Dense row-major tensor of doubles. Rank is dynamic; the ops fix the layouts
// they expect: [C,H,W] for features, [Cout,Cin,Kh,Kw] for conv weights,
// [C] for biases.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        v.assign(n, 0.0);
    }

    int numel() const { return static_cast<int>(v.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool empty() const { return v.empty(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // [C,H,W]
    double& at(int c, int y, int x) {
        return v[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at(int c, int y, int x) const {
        return v[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    // [O,I,Kh,Kw]
    double& at4(int o, int i, int y, int x) {
        return v[((static_cast<size_t>(o) * shape[1] + i) * shape[2] + y) * shape[3] + x];
    }
    double at4(int o, int i, int y, int x) const {
        return v[((static_cast<size_t>(o) * shape[1] + i) * shape[2] + y) * shape[3] + x];
    }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

}  // namespace mdet
