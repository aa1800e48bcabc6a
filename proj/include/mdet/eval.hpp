#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "mdet/geometry.hpp"

namespace mdet {

// Detection or ground-truth box tied to an image; score is ignored for GT.
struct ScoredBox {
    int image_id = 0;
    Box box;
    double score = 0.0;
};

struct EvalOptions {
    std::vector<double> iou_thresholds;  // defaults to .50:.05:.95
    std::vector<int> max_dets{1, 10, 100};
    double small_max = 32.0 * 32.0;
    double medium_max = 96.0 * 96.0;

    EvalOptions() {
        for (int i = 0; i < 10; ++i) iou_thresholds.push_back(0.5 + 0.05 * i);
    }
};

// COCO-protocol metrics. Classes without ground truth contribute -1
// sentinels, excluded from every mean; an all-empty evaluation reports -1.
struct MetricReport {
    double ap = -1.0, ap50 = -1.0, ap75 = -1.0;
    double ap_small = -1.0, ap_medium = -1.0, ap_large = -1.0;
    double ar1 = -1.0, ar10 = -1.0, ar100 = -1.0;
    double ar_small = -1.0, ar_medium = -1.0, ar_large = -1.0;
    std::map<int, double> per_class_ap;  // class -> AP over all thresholds
};

namespace evald {

struct AreaRange {
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    bool contains(double a) const { return lo <= a && a < hi; }
};

// Deterministic detection order: score descending, ties by image then coords.
inline bool score_order(const ScoredBox& a, const ScoredBox& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.image_id, a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
           std::tie(b.image_id, b.box.x1, b.box.y1, b.box.x2, b.box.y2);
}

// Greedy matching for one (class, threshold, area, budget) slice.
// GTs outside the area range are "ignore": matching them neither scores nor
// penalizes, and unmatched detections outside the range are skipped too.
struct SliceOutcome {
    std::vector<char> det_tp;      // per kept det, 1 = true positive
    std::vector<char> det_ignore;  // per kept det, 1 = excluded from PR
    int n_gt = 0;                  // non-ignored ground truth
};

inline SliceOutcome match_slice(const std::vector<ScoredBox>& dets_sorted,
                                const std::vector<ScoredBox>& gts, double thr, AreaRange area,
                                int max_per_image) {
    SliceOutcome out;
    std::vector<char> gt_ignore(gts.size());
    std::vector<char> gt_used(gts.size(), 0);
    for (size_t i = 0; i < gts.size(); ++i) {
        gt_ignore[i] = !area.contains(gts[i].box.area());
        if (!gt_ignore[i]) ++out.n_gt;
    }

    std::map<int, int> per_image_count;
    for (const ScoredBox& d : dets_sorted) {
        if (max_per_image > 0 && ++per_image_count[d.image_id] > max_per_image) continue;
        int best = -1;
        double best_iou = thr;
        bool best_is_ignore = false;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].image_id != d.image_id || gt_used[g]) continue;
            const double v = iou(d.box, gts[g].box);
            if (v < thr) continue;
            // prefer any matchable non-ignored GT over ignored ones
            if (best >= 0 && !best_is_ignore && gt_ignore[g]) continue;
            if (best >= 0 && best_is_ignore == static_cast<bool>(gt_ignore[g]) && v <= best_iou)
                continue;
            best = static_cast<int>(g);
            best_iou = v;
            best_is_ignore = gt_ignore[g];
        }
        if (best >= 0) {
            gt_used[static_cast<size_t>(best)] = 1;
            out.det_tp.push_back(!best_is_ignore);
            out.det_ignore.push_back(best_is_ignore);
        } else {
            out.det_tp.push_back(0);
            out.det_ignore.push_back(!area.contains(d.box.area()));
        }
    }
    return out;
}

// 101-point interpolated average precision.
inline double ap_from_outcome(const SliceOutcome& o) {
    if (o.n_gt == 0) return -1.0;
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (size_t i = 0; i < o.det_tp.size(); ++i) {
        if (o.det_ignore[i]) continue;
        if (o.det_tp[i]) ++tp; else ++fp;
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / o.n_gt);
    }
    // monotone non-increasing envelope from the right
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
        precision[static_cast<size_t>(i)] =
            std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i) + 1]);
    double sum = 0.0;
    for (int r = 0; r <= 100; ++r) {
        const double want = r / 100.0;
        double p = 0.0;
        for (size_t i = 0; i < recall.size(); ++i)
            if (recall[i] >= want) {
                p = precision[i];
                break;
            }
        sum += p;
    }
    return sum / 101.0;
}

inline double recall_from_outcome(const SliceOutcome& o) {
    if (o.n_gt == 0) return -1.0;
    int tp = 0;
    for (size_t i = 0; i < o.det_tp.size(); ++i)
        if (o.det_tp[i]) ++tp;
    return static_cast<double>(tp) / o.n_gt;
}

inline double mean_valid(const std::vector<double>& xs) {
    double sum = 0.0;
    int n = 0;
    for (double x : xs)
        if (x >= 0.0) {
            sum += x;
            ++n;
        }
    return n > 0 ? sum / n : -1.0;
}

}  // namespace evald

inline MetricReport evaluate(const std::vector<ScoredBox>& detections,
                             const std::vector<ScoredBox>& ground_truth,
                             const EvalOptions& opt = {}) {
    using namespace evald;

    std::set<int> classes;
    for (const ScoredBox& g : ground_truth) classes.insert(g.box.class_id);
    for (const ScoredBox& d : detections) classes.insert(d.box.class_id);

    const AreaRange all{};
    const AreaRange small{0.0, opt.small_max};
    const AreaRange medium{opt.small_max, opt.medium_max};
    const AreaRange large{opt.medium_max, std::numeric_limits<double>::infinity()};
    const int budget = opt.max_dets.empty() ? 100 : opt.max_dets.back();

    MetricReport rep;
    std::vector<double> ap_all, ap50, ap75, ap_s, ap_m, ap_l;
    std::vector<double> ar_budget[3];
    std::vector<double> ar_s, ar_m, ar_l;

    for (int cls : classes) {
        std::vector<ScoredBox> dets, gts;
        for (const ScoredBox& d : detections)
            if (d.box.class_id == cls) dets.push_back(d);
        for (const ScoredBox& g : ground_truth)
            if (g.box.class_id == cls) gts.push_back(g);
        std::sort(dets.begin(), dets.end(), score_order);

        std::vector<double> cls_ap;
        for (double thr : opt.iou_thresholds) {
            const SliceOutcome o = match_slice(dets, gts, thr, all, budget);
            const double ap = ap_from_outcome(o);
            cls_ap.push_back(ap);
            ap_all.push_back(ap);
            if (std::abs(thr - 0.5) < 1e-9) ap50.push_back(ap);
            if (std::abs(thr - 0.75) < 1e-9) ap75.push_back(ap);
            ap_s.push_back(ap_from_outcome(match_slice(dets, gts, thr, small, budget)));
            ap_m.push_back(ap_from_outcome(match_slice(dets, gts, thr, medium, budget)));
            ap_l.push_back(ap_from_outcome(match_slice(dets, gts, thr, large, budget)));
            for (size_t bi = 0; bi < opt.max_dets.size() && bi < 3; ++bi)
                ar_budget[bi].push_back(
                    recall_from_outcome(match_slice(dets, gts, thr, all, opt.max_dets[bi])));
            ar_s.push_back(recall_from_outcome(match_slice(dets, gts, thr, small, budget)));
            ar_m.push_back(recall_from_outcome(match_slice(dets, gts, thr, medium, budget)));
            ar_l.push_back(recall_from_outcome(match_slice(dets, gts, thr, large, budget)));
        }
        const double cls_mean = mean_valid(cls_ap);
        if (cls_mean >= 0.0) rep.per_class_ap[cls] = cls_mean;
    }

    rep.ap = mean_valid(ap_all);
    rep.ap50 = mean_valid(ap50);
    rep.ap75 = mean_valid(ap75);
    rep.ap_small = mean_valid(ap_s);
    rep.ap_medium = mean_valid(ap_m);
    rep.ap_large = mean_valid(ap_l);
    if (opt.max_dets.size() > 0) rep.ar1 = mean_valid(ar_budget[0]);
    if (opt.max_dets.size() > 1) rep.ar10 = mean_valid(ar_budget[1]);
    if (opt.max_dets.size() > 2) rep.ar100 = mean_valid(ar_budget[2]);
    rep.ar_small = mean_valid(ar_s);
    rep.ar_medium = mean_valid(ar_m);
    rep.ar_large = mean_valid(ar_l);
    return rep;
}

}  // namespace mdet
