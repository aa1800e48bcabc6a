#pragma once

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mdet/geometry.hpp"

namespace mdet {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double v) const { return lo <= v && v <= hi; }
};

// Describes the matrix of feature layers. Entry (r, c) is a layer whose
// stride doubles per step down (r, height axis) and per step right (c, width
// axis); layer (1,1) is the base. prune lists (r, c) entries excluded from
// the lattice (extreme aspect ratios nobody trains on).
struct LatticeSpec {
    double base_stride = 8.0;
    Range base_range{24.0, 48.0};
    double relax_lo = 0.8;
    double relax_hi = 1.3;
    int rows = 5;
    int cols = 5;
    std::set<std::pair<int, int>> prune;

    void validate() const {
        if (!(base_range.lo < base_range.hi))
            throw std::invalid_argument("lattice: base_range.lo must be < base_range.hi");
        if (!(relax_lo < 1.0 && 1.0 < relax_hi))
            throw std::invalid_argument("lattice: relaxation must satisfy lo_mult < 1 < hi_mult");
        if (base_stride <= 0.0)
            throw std::invalid_argument("lattice: base_stride must be positive");
        if (rows < 1 || cols < 1)
            throw std::invalid_argument("lattice: rows and cols must be >= 1");
        for (const auto& [r, c] : prune) {
            if (r < 1 || r > rows || c < 1 || c > cols)
                throw std::invalid_argument("lattice: prune entry (" + std::to_string(r) + "," +
                                            std::to_string(c) + ") out of bounds");
            if (r == c)
                throw std::invalid_argument("lattice: prune entry (" + std::to_string(r) + "," +
                                            std::to_string(c) + ") removes a diagonal layer");
        }
    }
};

struct Layer {
    int r = 1;
    int c = 1;
    double stride_h = 0.0;
    double stride_w = 0.0;
    Range h_range, w_range;          // unrelaxed
    Range h_relaxed, w_relaxed;
};

// Named presets on the default 5x5 spec:
//   fpn5   -- diagonal only (the classic pyramid)
//   xnet19 -- 5x5 with the six extreme-aspect corner entries removed
//   full25 -- the whole matrix
inline LatticeSpec lattice_preset(const std::string& name) {
    LatticeSpec spec;
    if (name == "full25") return spec;
    if (name == "fpn5") {
        for (int r = 1; r <= 5; ++r)
            for (int c = 1; c <= 5; ++c)
                if (r != c) spec.prune.insert({r, c});
        return spec;
    }
    if (name == "xnet19") {
        spec.prune = {{1, 4}, {1, 5}, {2, 5}, {4, 1}, {5, 1}, {5, 2}};
        return spec;
    }
    throw std::invalid_argument("unknown lattice preset '" + name + "'");
}

class Lattice {
public:
    explicit Lattice(LatticeSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        build();
    }

    const LatticeSpec& spec() const { return spec_; }
    const std::vector<Layer>& layers() const { return layers_; }

    int index_of(int r, int c) const {
        for (size_t i = 0; i < layers_.size(); ++i)
            if (layers_[i].r == r && layers_[i].c == c) return static_cast<int>(i);
        return -1;
    }

    const Layer& layer(int r, int c) const {
        int i = index_of(r, c);
        if (i < 0) throw std::out_of_range("lattice: no layer (" + std::to_string(r) + "," + std::to_string(c) + ")");
        return layers_[i];
    }

    // Every non-pruned layer whose relaxed ranges contain the box on both
    // axes. Empty is a legal answer (e.g. boxes below the relaxed minimum).
    std::vector<int> assign(const Box& box) const {
        std::vector<int> out;
        const double w = box.width();
        const double h = box.height();
        for (size_t i = 0; i < layers_.size(); ++i) {
            const Layer& l = layers_[i];
            if (l.w_relaxed.contains(w) && l.h_relaxed.contains(h)) out.push_back(static_cast<int>(i));
        }
        return out;
    }

    static std::pair<int, int> feature_shape(const Layer& l, int input_h, int input_w) {
        const int h = static_cast<int>(std::ceil(static_cast<double>(input_h) / l.stride_h));
        const int w = static_cast<int>(std::ceil(static_cast<double>(input_w) / l.stride_w));
        return {h, w};
    }

    // Feature cell holding the box center: floor(center / stride), clamped to
    // the map so centers on the far image edge land on the border cell.
    static std::pair<int, int> center_cell(const Layer& l, const Box& box, int input_h, int input_w) {
        const auto [fh, fw] = feature_shape(l, input_h, input_w);
        int cy = static_cast<int>(std::floor(box.center_y() / l.stride_h));
        int cx = static_cast<int>(std::floor(box.center_x() / l.stride_w));
        cy = std::min(std::max(cy, 0), fh - 1);
        cx = std::min(std::max(cx, 0), fw - 1);
        return {cy, cx};
    }

    double max_stride() const {
        double m = 0.0;
        for (const Layer& l : layers_) m = std::max(m, std::max(l.stride_h, l.stride_w));
        return m;
    }

    // Inputs are padded right/bottom to a multiple of the maximum stride.
    int padded_extent(int dim) const {
        const int m = static_cast<int>(max_stride());
        return ((dim + m - 1) / m) * m;
    }

private:
    void build() {
        for (int r = 1; r <= spec_.rows; ++r) {
            for (int c = 1; c <= spec_.cols; ++c) {
                if (spec_.prune.count({r, c})) continue;
                Layer l;
                l.r = r;
                l.c = c;
                l.stride_h = spec_.base_stride * std::pow(2.0, r - 1);
                l.stride_w = spec_.base_stride * std::pow(2.0, c - 1);
                l.h_range = {spec_.base_range.lo * std::pow(2.0, r - 1),
                             spec_.base_range.hi * std::pow(2.0, r - 1)};
                l.w_range = {spec_.base_range.lo * std::pow(2.0, c - 1),
                             spec_.base_range.hi * std::pow(2.0, c - 1)};
                l.h_relaxed = {l.h_range.lo * spec_.relax_lo, l.h_range.hi * spec_.relax_hi};
                l.w_relaxed = {l.w_range.lo * spec_.relax_lo, l.w_range.hi * spec_.relax_hi};
                layers_.push_back(l);
            }
        }
        check_band();
    }

    // Off-diagonal features are generated by walking outward from the
    // diagonal, so each kept entry needs an unbroken run back to it.
    void check_band() const {
        const int diag = std::min(spec_.rows, spec_.cols);
        for (int i = 1; i <= diag; ++i)
            if (index_of(i, i) < 0)
                throw std::invalid_argument("lattice: diagonal layer (" + std::to_string(i) + "," +
                                            std::to_string(i) + ") missing");
        for (const Layer& l : layers_) {
            if (l.c > l.r) {
                for (int k = l.r; k < l.c; ++k)
                    if (index_of(l.r, k) < 0)
                        throw std::invalid_argument("lattice: pruning disconnects layer (" +
                                                    std::to_string(l.r) + "," + std::to_string(l.c) + ")");
            } else if (l.r > l.c) {
                for (int k = l.c; k < l.r; ++k)
                    if (index_of(k, l.c) < 0)
                        throw std::invalid_argument("lattice: pruning disconnects layer (" +
                                                    std::to_string(l.r) + "," + std::to_string(l.c) + ")");
            }
        }
    }

    LatticeSpec spec_;
    std::vector<Layer> layers_;
};

}  // namespace mdet
