#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mdet/lattice.hpp"
#include "mdet/tensor.hpp"

namespace mdet {

// Largest integer radius such that displacing one corner of a w x h box
// (in cells) by up to `radius` per axis keeps IoU with the true box at or
// above min_iou. The minimum over a square displacement ball is attained at
// its corners, so only the inward / outward / mixed extremes are evaluated.
inline int gaussian_radius(double box_w_cells, double box_h_cells, double min_iou) {
    if (box_w_cells <= 0.0 || box_h_cells <= 0.0)
        throw std::invalid_argument("gaussian_radius: box dims must be positive");
    if (!(min_iou > 0.0 && min_iou <= 1.0))
        throw std::invalid_argument("gaussian_radius: min_iou must be in (0, 1]");

    const double w = box_w_cells, h = box_h_cells;
    auto worst_iou = [&](double r) {
        const double inward = (w - r <= 0.0 || h - r <= 0.0)
                                  ? 0.0
                                  : (w - r) * (h - r) / (w * h);
        const double outward = w * h / ((w + r) * (h + r));
        const double mixed_x = (w - r <= 0.0) ? 0.0 : h * (w - r) / (w * h + r * (w - r));
        const double mixed_y = (h - r <= 0.0) ? 0.0 : w * (h - r) / (w * h + r * (h - r));
        return std::min(std::min(inward, outward), std::min(mixed_x, mixed_y));
    };

    int r = 0;
    while (r < 100000 && worst_iou(static_cast<double>(r + 1)) >= min_iou) ++r;
    return r;
}

// Splat a penalty-reducing Gaussian peaking at exactly 1.0 into channel `cls`
// at cell (cy, cx); overlapping splats keep the per-cell max.
inline void draw_gaussian(Tensor& heat, int cls, int cy, int cx, int radius) {
    const int h = heat.dim(1), w = heat.dim(2);
    const double sigma = (2.0 * radius + 1.0) / 6.0;
    const double denom = 2.0 * sigma * sigma;
    for (int dy = -radius; dy <= radius; ++dy) {
        const int y = cy + dy;
        if (y < 0 || y >= h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
            const int x = cx + dx;
            if (x < 0 || x >= w) continue;
            const double val = std::exp(-(dx * dx + dy * dy) / denom);
            heat.at(cls, y, x) = std::max(heat.at(cls, y, x), val);
        }
    }
    heat.at(cls, cy, cx) = 1.0;
}

struct EncodeStats {
    int skipped = 0;     // boxes outside every relaxed range
    int collisions = 0;  // regression cells overwritten by a later box
};

// Regression channel order is (x, y); values are displacements in stride
// units of the layer axis they move along.
struct CentersLayerTargets {
    Tensor heat;    // [C,h,w]
    Tensor tl_reg;  // [2,h,w] cell center -> top-left, positive
    Tensor br_reg;  // [2,h,w] cell center -> bottom-right, negative
    Tensor mask;    // [1,h,w]
};

struct CentersTargetBundle {
    std::vector<CentersLayerTargets> layers;  // aligned with Lattice::layers()
    EncodeStats stats;
};

struct CornersLayerTargets {
    Tensor tl_heat, br_heat;              // [C,h,w]
    Tensor tl_off, br_off;                // [2,h,w], components in [-0.5, 0.5]
    Tensor tl_center_reg, br_center_reg;  // [2,h,w] corner -> center
    Tensor tl_mask, br_mask;              // [1,h,w]
};

struct CornersTargetBundle {
    std::vector<CornersLayerTargets> layers;
    EncodeStats stats;
};

namespace detail {

inline void check_encode_inputs(const std::vector<Box>& boxes, int classes) {
    for (const Box& b : boxes) {
        if (!b.valid()) throw std::invalid_argument("encode: degenerate box");
        if (b.class_id < 0 || b.class_id >= classes)
            throw std::invalid_argument("encode: class_id out of range");
    }
}

}  // namespace detail

// Center heatmaps plus corner regressions. Heat peaks at the box's center
// cell; regressions at that cell are displacements from the snapped cell
// center to each corner, so a perfect prediction reconstructs the box
// exactly. Later boxes overwrite regressions on a colliding cell (counted);
// heatmaps take the per-cell max.
inline CentersTargetBundle encode_centers(const Lattice& lattice, const std::vector<Box>& boxes,
                                          int classes, int input_h, int input_w,
                                          double min_iou = 0.7) {
    detail::check_encode_inputs(boxes, classes);
    CentersTargetBundle out;
    out.layers.resize(lattice.layers().size());
    for (size_t i = 0; i < lattice.layers().size(); ++i) {
        const auto [h, w] = Lattice::feature_shape(lattice.layers()[i], input_h, input_w);
        out.layers[i].heat = Tensor({classes, h, w});
        out.layers[i].tl_reg = Tensor({2, h, w});
        out.layers[i].br_reg = Tensor({2, h, w});
        out.layers[i].mask = Tensor({1, h, w});
    }

    for (const Box& box : boxes) {
        const std::vector<int> assigned = lattice.assign(box);
        if (assigned.empty()) {
            ++out.stats.skipped;
            continue;
        }
        for (int li : assigned) {
            const Layer& layer = lattice.layers()[li];
            CentersLayerTargets& t = out.layers[li];
            const auto [cy, cx] = Lattice::center_cell(layer, box, input_h, input_w);
            const double snap_x = (cx + 0.5) * layer.stride_w;
            const double snap_y = (cy + 0.5) * layer.stride_h;

            if (t.mask.at(0, cy, cx) > 0.0) ++out.stats.collisions;
            t.mask.at(0, cy, cx) = 1.0;
            t.tl_reg.at(0, cy, cx) = (snap_x - box.x1) / layer.stride_w;
            t.tl_reg.at(1, cy, cx) = (snap_y - box.y1) / layer.stride_h;
            t.br_reg.at(0, cy, cx) = (snap_x - box.x2) / layer.stride_w;
            t.br_reg.at(1, cy, cx) = (snap_y - box.y2) / layer.stride_h;

            const int radius = gaussian_radius(box.width() / layer.stride_w,
                                               box.height() / layer.stride_h, min_iou);
            draw_gaussian(t.heat, box.class_id, cy, cx, radius);
        }
    }
    return out;
}

// Corner heatmaps, sub-cell offsets and per-corner center regressions.
// Offsets recover the exact sub-stride corner position; center regressions
// point at the true box center, which is what corner matching compares.
inline CornersTargetBundle encode_corners(const Lattice& lattice, const std::vector<Box>& boxes,
                                          int classes, int input_h, int input_w,
                                          double min_iou = 0.3) {
    detail::check_encode_inputs(boxes, classes);
    CornersTargetBundle out;
    out.layers.resize(lattice.layers().size());
    for (size_t i = 0; i < lattice.layers().size(); ++i) {
        const auto [h, w] = Lattice::feature_shape(lattice.layers()[i], input_h, input_w);
        CornersLayerTargets& t = out.layers[i];
        t.tl_heat = Tensor({classes, h, w});
        t.br_heat = Tensor({classes, h, w});
        t.tl_off = Tensor({2, h, w});
        t.br_off = Tensor({2, h, w});
        t.tl_center_reg = Tensor({2, h, w});
        t.br_center_reg = Tensor({2, h, w});
        t.tl_mask = Tensor({1, h, w});
        t.br_mask = Tensor({1, h, w});
    }

    for (const Box& box : boxes) {
        const std::vector<int> assigned = lattice.assign(box);
        if (assigned.empty()) {
            ++out.stats.skipped;
            continue;
        }
        for (int li : assigned) {
            const Layer& layer = lattice.layers()[li];
            CornersLayerTargets& t = out.layers[li];
            const auto [fh, fw] = Lattice::feature_shape(layer, input_h, input_w);
            const int radius = gaussian_radius(box.width() / layer.stride_w,
                                               box.height() / layer.stride_h, min_iou);

            auto put_corner = [&](double corner_x, double corner_y, Tensor& heat, Tensor& off,
                                  Tensor& center_reg, Tensor& mask) {
                int cx = static_cast<int>(std::floor(corner_x / layer.stride_w));
                int cy = static_cast<int>(std::floor(corner_y / layer.stride_h));
                cx = std::min(std::max(cx, 0), fw - 1);
                cy = std::min(std::max(cy, 0), fh - 1);
                if (mask.at(0, cy, cx) > 0.0) ++out.stats.collisions;
                mask.at(0, cy, cx) = 1.0;
                off.at(0, cy, cx) = corner_x / layer.stride_w - (cx + 0.5);
                off.at(1, cy, cx) = corner_y / layer.stride_h - (cy + 0.5);
                center_reg.at(0, cy, cx) = (box.center_x() - corner_x) / layer.stride_w;
                center_reg.at(1, cy, cx) = (box.center_y() - corner_y) / layer.stride_h;
                draw_gaussian(heat, box.class_id, cy, cx, radius);
            };

            put_corner(box.x1, box.y1, t.tl_heat, t.tl_off, t.tl_center_reg, t.tl_mask);
            put_corner(box.x2, box.y2, t.br_heat, t.br_off, t.br_center_reg, t.br_mask);
        }
    }
    return out;
}

}  // namespace mdet
