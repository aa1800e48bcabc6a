#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include "mdet/lattice.hpp"
#include "mdet/ops.hpp"
#include "mdet/tensor.hpp"

namespace mdet {

enum class CornerKind { TopLeft, BottomRight };

struct CornerCandidate {
    CornerKind kind = CornerKind::TopLeft;
    int class_id = 0;
    double score = 0.0;
    double x = 0.0, y = 0.0;                  // refined position, pixels
    double center_x = 0.0, center_y = 0.0;    // predicted object center, pixels
    int layer_index = 0;                      // index into Lattice::layers()
};

// Per-layer head outputs, same tensor layouts as the target bundles.
struct CentersLayerOutput {
    Tensor heat;    // [C,h,w]
    Tensor tl_reg;  // [2,h,w]
    Tensor br_reg;  // [2,h,w]
};

struct CornersLayerOutput {
    Tensor tl_heat, br_heat;              // [C,h,w]
    Tensor tl_off, br_off;                // [2,h,w]
    Tensor tl_center_reg, br_center_reg;  // [2,h,w]
};

struct DecodeStats {
    int degenerate = 0;  // boxes dropped for non-positive extent
};

// Keep cells that equal their 3x3 neighborhood max, zero the rest.
inline Tensor peak_filter3x3(const Tensor& heat) {
    Tensor pooled = max_pool3x3_same(heat);
    Tensor out = heat;
    for (int i = 0; i < out.numel(); ++i)
        if (heat.v[i] != pooled.v[i]) out.v[i] = 0.0;
    return out;
}

namespace detail {

struct Peak {
    double score;
    int cls, cy, cx;
};

// Top-k peak cells, deterministic: score descending, then (class, y, x).
inline std::vector<Peak> top_peaks(const Tensor& heat, int k) {
    const Tensor filtered = peak_filter3x3(heat);
    const int c = heat.dim(0), h = heat.dim(1), w = heat.dim(2);
    std::vector<Peak> peaks;
    peaks.reserve(static_cast<size_t>(filtered.numel()));
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double s = filtered.at(ch, y, x);
                peaks.push_back({s, ch, y, x});
            }
    auto cmp = [](const Peak& a, const Peak& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.cls, a.cy, a.cx) < std::tie(b.cls, b.cy, b.cx);
    };
    const size_t n = std::min<size_t>(static_cast<size_t>(k), peaks.size());
    std::partial_sort(peaks.begin(), peaks.begin() + n, peaks.end(), cmp);
    peaks.resize(n);
    return peaks;
}

}  // namespace detail

// Centers head: peak cells become boxes via the corner regressions. A cell's
// snapped center minus the signed regression (in stride units) gives each
// corner back.
inline std::vector<Detection> decode_centers(const Lattice& lattice,
                                             const std::vector<CentersLayerOutput>& outputs,
                                             int k = 100, DecodeStats* stats = nullptr) {
    std::vector<Detection> dets;
    for (size_t li = 0; li < outputs.size(); ++li) {
        const Layer& layer = lattice.layers()[li];
        const CentersLayerOutput& o = outputs[li];
        for (const auto& p : detail::top_peaks(o.heat, k)) {
            const double cell_x = (p.cx + 0.5) * layer.stride_w;
            const double cell_y = (p.cy + 0.5) * layer.stride_h;
            Detection d;
            d.box.x1 = cell_x - o.tl_reg.at(0, p.cy, p.cx) * layer.stride_w;
            d.box.y1 = cell_y - o.tl_reg.at(1, p.cy, p.cx) * layer.stride_h;
            d.box.x2 = cell_x - o.br_reg.at(0, p.cy, p.cx) * layer.stride_w;
            d.box.y2 = cell_y - o.br_reg.at(1, p.cy, p.cx) * layer.stride_h;
            d.box.class_id = p.cls;
            d.score = p.score;
            d.layer_r = layer.r;
            d.layer_c = layer.c;
            if (!d.box.valid()) {
                if (stats) ++stats->degenerate;
                continue;
            }
            dets.push_back(d);
        }
    }
    return dets;
}

// Corners head: peak cells become corner candidates, refined by the offsets
// and carrying the predicted object center for matching.
inline std::pair<std::vector<CornerCandidate>, std::vector<CornerCandidate>> decode_corners(
    const Lattice& lattice, const std::vector<CornersLayerOutput>& outputs, int k = 50) {
    std::vector<CornerCandidate> tl, br;
    for (size_t li = 0; li < outputs.size(); ++li) {
        const Layer& layer = lattice.layers()[li];
        const CornersLayerOutput& o = outputs[li];

        auto emit = [&](CornerKind kind, const Tensor& heat, const Tensor& off,
                        const Tensor& center_reg, std::vector<CornerCandidate>& out) {
            for (const auto& p : detail::top_peaks(heat, k)) {
                CornerCandidate c;
                c.kind = kind;
                c.class_id = p.cls;
                c.score = p.score;
                c.x = (p.cx + 0.5 + off.at(0, p.cy, p.cx)) * layer.stride_w;
                c.y = (p.cy + 0.5 + off.at(1, p.cy, p.cx)) * layer.stride_h;
                c.center_x = c.x + center_reg.at(0, p.cy, p.cx) * layer.stride_w;
                c.center_y = c.y + center_reg.at(1, p.cy, p.cx) * layer.stride_h;
                c.layer_index = static_cast<int>(li);
                out.push_back(c);
            }
        };
        emit(CornerKind::TopLeft, o.tl_heat, o.tl_off, o.tl_center_reg, tl);
        emit(CornerKind::BottomRight, o.br_heat, o.br_off, o.br_center_reg, br);
    }
    return {tl, br};
}

// The center-agreement gate for one corner of a prospective (TL, BR) pair:
// per-axis error between the corner's predicted center and the pair's implied
// midpoint, normalized by the implied half-extent.
inline bool corner_center_agrees(const CornerCandidate& corner, double mid_x, double mid_y,
                                 double half_w, double half_h, double tol) {
    const double ex = std::abs(corner.center_x - mid_x) / half_w;
    const double ey = std::abs(corner.center_y - mid_y) / half_h;
    return std::max(ex, ey) <= tol;
}

// Pair corners of the same layer and class whose predicted centers both agree
// with the pair's implied midpoint. A corner may participate in several
// detections; soft-NMS arbitrates downstream. Score is the mean of the two
// corner scores.
inline std::vector<Detection> match_corners(const Lattice& lattice,
                                            const std::vector<CornerCandidate>& tls,
                                            const std::vector<CornerCandidate>& brs,
                                            double tol = 0.3) {
    std::map<std::pair<int, int>, std::pair<std::vector<const CornerCandidate*>,
                                            std::vector<const CornerCandidate*>>>
        buckets;
    for (const CornerCandidate& c : tls) buckets[{c.layer_index, c.class_id}].first.push_back(&c);
    for (const CornerCandidate& c : brs) buckets[{c.layer_index, c.class_id}].second.push_back(&c);

    std::vector<Detection> dets;
    for (const auto& [key, bucket] : buckets) {
        const Layer& layer = lattice.layers()[key.first];
        for (const CornerCandidate* tl : bucket.first) {
            for (const CornerCandidate* br : bucket.second) {
                if (!(tl->x < br->x && tl->y < br->y)) continue;
                const double half_w = 0.5 * (br->x - tl->x);
                const double half_h = 0.5 * (br->y - tl->y);
                const double mid_x = 0.5 * (tl->x + br->x);
                const double mid_y = 0.5 * (tl->y + br->y);
                if (!corner_center_agrees(*tl, mid_x, mid_y, half_w, half_h, tol)) continue;
                if (!corner_center_agrees(*br, mid_x, mid_y, half_w, half_h, tol)) continue;
                Detection d;
                d.box = {tl->x, tl->y, br->x, br->y, tl->class_id};
                d.score = 0.5 * (tl->score + br->score);
                d.layer_r = layer.r;
                d.layer_c = layer.c;
                dets.push_back(d);
            }
        }
    }
    return dets;
}

// Map detections from the horizontally flipped pass back into original image
// coordinates and concatenate.
inline std::vector<Detection> merge_flip(const std::vector<Detection>& dets,
                                         const std::vector<Detection>& dets_flipped,
                                         double image_w) {
    std::vector<Detection> out = dets;
    out.reserve(dets.size() + dets_flipped.size());
    for (Detection d : dets_flipped) {
        const double x1 = image_w - d.box.x2;
        const double x2 = image_w - d.box.x1;
        d.box.x1 = x1;
        d.box.x2 = x2;
        out.push_back(d);
    }
    return out;
}

namespace detail {

inline bool det_order(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.box.class_id, a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
           std::tie(b.box.class_id, b.box.x1, b.box.y1, b.box.x2, b.box.y2);
}

}  // namespace detail

// Gaussian soft suppression: each picked detection decays the scores of the
// remaining same-class detections by exp(-IoU^2 / sigma); detections falling
// below score_floor are dropped. Output is in pick order (decayed-score
// descending).
inline std::vector<Detection> soft_nms(std::vector<Detection> dets, double sigma = 0.5,
                                       double score_floor = 0.001) {
    std::vector<Detection> out;
    out.reserve(dets.size());
    while (!dets.empty()) {
        size_t best = 0;
        for (size_t i = 1; i < dets.size(); ++i)
            if (detail::det_order(dets[i], dets[best])) best = i;
        Detection picked = dets[best];
        dets.erase(dets.begin() + static_cast<std::ptrdiff_t>(best));
        out.push_back(picked);
        std::vector<Detection> kept;
        kept.reserve(dets.size());
        for (Detection& d : dets) {
            if (d.box.class_id == picked.box.class_id) {
                const double v = iou(d.box, picked.box);
                d.score *= std::exp(-(v * v) / sigma);
            }
            if (d.score >= score_floor) kept.push_back(d);
        }
        dets.swap(kept);
    }
    return out;
}

inline std::vector<Detection> select_top(std::vector<Detection> dets, int n = 100) {
    std::sort(dets.begin(), dets.end(), detail::det_order);
    if (static_cast<int>(dets.size()) > n) dets.resize(static_cast<size_t>(n));
    return dets;
}

}  // namespace mdet
