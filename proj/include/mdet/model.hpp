#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdet/decode.hpp"
#include "mdet/graph.hpp"
#include "mdet/lattice.hpp"
#include "mdet/rng.hpp"
#include "mdet/tensor.hpp"

namespace mdet {

enum class HeadKind { Centers, Corners };

inline const char* head_name(HeadKind h) { return h == HeadKind::Centers ? "centers" : "corners"; }

struct ModelConfig {
    HeadKind head = HeadKind::Corners;
    int classes = 2;
    int width = 16;  // trunk channel count
};

// Head output channel layouts (fixed, relied on by split_* below):
//   centers heat [C]        : class heatmaps
//   centers reg  [4]        : tl_x, tl_y, br_x, br_y   (stride units)
//   corners heat [2C]       : C top-left, C bottom-right
//   corners reg  [8]        : tl_off_x, tl_off_y, br_off_x, br_off_y,
//                             tl_creg_x, tl_creg_y, br_creg_x, br_creg_y
//
// Structure: a small backbone downsamples to the base stride and then once
// more per diagonal layer. Off-diagonal features come from exactly one shared
// right-extension conv (stride 1x2) and one shared down-extension conv
// (stride 2x1) applied repeatedly. Both heads are shared across every layer.
class XNetModel {
public:
    XNetModel(ModelConfig cfg, const LatticeSpec& lattice_spec, uint64_t seed)
        : cfg_(cfg), lattice_spec_(lattice_spec) {
        const int diag = std::min(lattice_spec.rows, lattice_spec.cols);
        auto rng = make_rng(seed, 0xA11);

        add_conv("backbone.b1", cfg_.width, 3, 3, rng);
        add_conv("backbone.b2", cfg_.width, cfg_.width, 3, rng);
        add_conv("backbone.b3", cfg_.width, cfg_.width, 3, rng);
        add_conv("backbone.b4", cfg_.width, cfg_.width, 3, rng);
        for (int k = 2; k <= diag; ++k)
            add_conv("backbone.down" + std::to_string(k), cfg_.width, cfg_.width, 3, rng);

        add_conv("ext.right", cfg_.width, cfg_.width, 3, rng);
        add_conv("ext.down", cfg_.width, cfg_.width, 3, rng);

        add_conv("head.heat.conv", cfg_.width, cfg_.width, 3, rng);
        add_conv("head.heat.out", heat_channels(), cfg_.width, 1, rng);
        add_conv("head.reg.conv", cfg_.width, cfg_.width, 3, rng);
        add_conv("head.reg.out", reg_channels(), cfg_.width, 1, rng);

        init_output_biases();
    }

    const ModelConfig& config() const { return cfg_; }
    const LatticeSpec& lattice_spec() const { return lattice_spec_; }

    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }

    int heat_channels() const {
        return cfg_.head == HeadKind::Centers ? cfg_.classes : 2 * cfg_.classes;
    }
    int reg_channels() const { return cfg_.head == HeadKind::Centers ? 4 : 8; }

    struct LayerOut {
        int heat = -1;  // node id, sigmoid applied
        int reg = -1;   // node id, linear
    };

    struct Bound {
        std::map<std::string, int> param_node;  // name -> tape node id
        std::vector<int> feature_node;          // per lattice layer, trunk feature
        std::vector<LayerOut> outputs;          // per lattice layer
    };

    // Builds the whole per-image graph on `tape`. Image must be [3,H,W] with
    // H and W multiples of the lattice's maximum stride.
    Bound forward(Tape& tape, const Tensor& image, const Lattice& lattice) const {
        if (image.shape.size() != 3 || image.dim(0) != 3)
            throw std::invalid_argument("model: image must be [3,H,W]");
        Bound bound;
        for (const auto& [name, t] : params_) bound.param_node[name] = tape.leaf(t);
        auto p = [&](const std::string& name) { return bound.param_node.at(name); };

        const int img = tape.leaf(image);
        int x = tape.relu(tape.conv2d(img, p("backbone.b1.w"), p("backbone.b1.b"), 2, 2, 1));
        x = tape.relu(tape.conv2d(x, p("backbone.b2.w"), p("backbone.b2.b"), 2, 2, 1));
        x = tape.relu(tape.conv2d(x, p("backbone.b3.w"), p("backbone.b3.b"), 2, 2, 1));
        x = tape.relu(tape.conv2d(x, p("backbone.b4.w"), p("backbone.b4.b"), 1, 1, 1));

        const int diag = std::min(lattice.spec().rows, lattice.spec().cols);
        std::vector<int> diagonal(static_cast<size_t>(diag) + 1, -1);
        diagonal[1] = x;
        for (int k = 2; k <= diag; ++k) {
            const std::string name = "backbone.down" + std::to_string(k);
            diagonal[k] = tape.relu(
                tape.conv2d(diagonal[k - 1], p(name + ".w"), p(name + ".b"), 2, 2, 1));
        }

        // Walk outward from the diagonal; band connectivity is guaranteed by
        // the lattice, so (r, c-1) / (r-1, c) features always exist.
        std::map<std::pair<int, int>, int> features;
        for (int k = 1; k <= diag; ++k) features[{k, k}] = diagonal[k];
        for (const Layer& l : lattice.layers()) {
            if (l.c > l.r) {
                for (int c = l.r + 1; c <= l.c; ++c) {
                    if (features.count({l.r, c})) continue;
                    features[{l.r, c}] = tape.relu(tape.conv2d(
                        features.at({l.r, c - 1}), p("ext.right.w"), p("ext.right.b"), 1, 2, 1));
                }
            } else if (l.r > l.c) {
                for (int r = l.c + 1; r <= l.r; ++r) {
                    if (features.count({r, l.c})) continue;
                    features[{r, l.c}] = tape.relu(tape.conv2d(
                        features.at({r - 1, l.c}), p("ext.down.w"), p("ext.down.b"), 2, 1, 1));
                }
            }
        }

        for (const Layer& l : lattice.layers()) {
            const int feat = features.at({l.r, l.c});
            const auto [eh, ew] = Lattice::feature_shape(l, image.dim(1), image.dim(2));
            if (tape.value(feat).dim(1) != eh || tape.value(feat).dim(2) != ew)
                throw std::logic_error("model: feature shape drift at layer (" +
                                       std::to_string(l.r) + "," + std::to_string(l.c) + ")");
            bound.feature_node.push_back(feat);

            LayerOut out;
            int h = tape.relu(tape.conv2d(feat, p("head.heat.conv.w"), p("head.heat.conv.b"), 1, 1, 1));
            out.heat = tape.sigmoid(tape.conv2d(h, p("head.heat.out.w"), p("head.heat.out.b"), 1, 1, 0));
            int r = tape.relu(tape.conv2d(feat, p("head.reg.conv.w"), p("head.reg.conv.b"), 1, 1, 1));
            out.reg = tape.conv2d(r, p("head.reg.out.w"), p("head.reg.out.b"), 1, 1, 0);
            bound.outputs.push_back(out);
        }
        return bound;
    }

    CentersLayerOutput split_centers(const Tensor& heat, const Tensor& reg) const {
        CentersLayerOutput o;
        o.heat = heat;
        o.tl_reg = slice_channels(reg, 0, 2);
        o.br_reg = slice_channels(reg, 2, 2);
        return o;
    }

    CornersLayerOutput split_corners(const Tensor& heat, const Tensor& reg) const {
        CornersLayerOutput o;
        const int c = cfg_.classes;
        o.tl_heat = slice_channels(heat, 0, c);
        o.br_heat = slice_channels(heat, c, c);
        o.tl_off = slice_channels(reg, 0, 2);
        o.br_off = slice_channels(reg, 2, 2);
        o.tl_center_reg = slice_channels(reg, 4, 2);
        o.br_center_reg = slice_channels(reg, 6, 2);
        return o;
    }

    static Tensor slice_channels(const Tensor& t, int from, int count) {
        const int h = t.dim(1), w = t.dim(2);
        Tensor out({count, h, w});
        std::copy(t.v.begin() + static_cast<std::ptrdiff_t>(from) * h * w,
                  t.v.begin() + static_cast<std::ptrdiff_t>(from + count) * h * w, out.v.begin());
        return out;
    }

    static void scatter_channels(const Tensor& part, int from, Tensor& into) {
        const int h = into.dim(1), w = into.dim(2);
        std::copy(part.v.begin(), part.v.end(),
                  into.v.begin() + static_cast<std::ptrdiff_t>(from) * h * w);
    }

private:
    void add_conv(const std::string& name, int out_c, int in_c, int k, std::mt19937_64& rng) {
        Tensor w({out_c, in_c, k, k});
        const double stddev = std::sqrt(2.0 / (in_c * k * k));
        for (double& e : w.v) e = normal(rng, 0.0, stddev);
        params_[name + ".w"] = std::move(w);
        params_[name + ".b"] = Tensor({out_c});
    }

    void init_output_biases() {
        // Heat bias starts at a low-probability prior so focal loss is not
        // swamped by negatives; regression biases start at the typical target
        // magnitudes (about half the in-layer box extent, in stride units).
        params_["head.heat.out.b"].fill(-2.19);
        Tensor& rb = params_["head.reg.out.b"];
        if (cfg_.head == HeadKind::Centers) {
            rb.v = {2.5, 2.5, -2.5, -2.5};
        } else {
            rb.v = {0.0, 0.0, 0.0, 0.0, 2.5, 2.5, -2.5, -2.5};
        }
    }

    ModelConfig cfg_;
    LatticeSpec lattice_spec_;
    std::map<std::string, Tensor> params_;
};

}  // namespace mdet
