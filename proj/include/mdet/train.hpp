#pragma once

#include <atomic>
#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "mdet/adam.hpp"
#include "mdet/config.hpp"
#include "mdet/data.hpp"
#include "mdet/decode.hpp"
#include "mdet/eval.hpp"
#include "mdet/losses.hpp"
#include "mdet/model.hpp"
#include "mdet/targets.hpp"

namespace mdet {

struct ImageLoss {
    double heat = 0.0;
    double reg = 0.0;
    double total = 0.0;
};

namespace traind {

// Scatter a channel-group gradient (scaled) into the full reg grad tensor.
inline void add_group_grad(Tensor& reg_grad, const Tensor& group_grad, int from, double scale) {
    const int plane = reg_grad.dim(1) * reg_grad.dim(2);
    for (int i = 0; i < group_grad.numel(); ++i)
        reg_grad.v[static_cast<size_t>(from) * plane + i] += group_grad.v[i] * scale;
}

}  // namespace traind

// Computes both losses for one image against encoded targets, seeds the
// output gradients on the tape, and returns the scalar report. Focal and
// smooth-L1 terms are normalized per image: positives (respectively masked
// elements) are counted across all lattice layers, floored at 1.
inline ImageLoss centers_loss_and_seed(Tape& tape, const XNetModel::Bound& bound,
                                       const CentersTargetBundle& targets, const RunConfig& cfg) {
    std::vector<FocalParts> heat_parts;
    std::vector<SmoothL1Parts> reg_parts;
    int positives = 0, reg_count = 0;
    for (size_t li = 0; li < bound.outputs.size(); ++li) {
        const CentersLayerTargets& t = targets.layers[li];
        heat_parts.push_back(focal_heatmap_parts(tape.value(bound.outputs[li].heat), t.heat,
                                                 cfg.focal_alpha, cfg.focal_beta));
        positives += heat_parts.back().positives;

        const Tensor& reg = tape.value(bound.outputs[li].reg);
        Tensor target_reg({4, reg.dim(1), reg.dim(2)});
        XNetModel::scatter_channels(t.tl_reg, 0, target_reg);
        XNetModel::scatter_channels(t.br_reg, 2, target_reg);
        Tensor mask({4, reg.dim(1), reg.dim(2)});
        XNetModel::scatter_channels(t.mask, 0, mask);
        XNetModel::scatter_channels(t.mask, 1, mask);
        XNetModel::scatter_channels(t.mask, 2, mask);
        XNetModel::scatter_channels(t.mask, 3, mask);
        reg_parts.push_back(smooth_l1_parts(reg, target_reg, mask));
        reg_count += reg_parts.back().count;
    }

    const double heat_n = std::max(positives, 1);
    const double reg_n = std::max(reg_count, 1);
    ImageLoss out;
    for (size_t li = 0; li < bound.outputs.size(); ++li) {
        out.heat += heat_parts[li].loss_sum / heat_n;
        out.reg += reg_parts[li].loss_sum / reg_n;
        Tensor& hg = tape.grad(bound.outputs[li].heat);
        for (int i = 0; i < hg.numel(); ++i)
            hg.v[i] += cfg.heat_weight * heat_parts[li].grad_sum.v[i] / heat_n;
        Tensor& rg = tape.grad(bound.outputs[li].reg);
        for (int i = 0; i < rg.numel(); ++i)
            rg.v[i] += cfg.reg_weight * reg_parts[li].grad_sum.v[i] / reg_n;
    }
    out.total = cfg.heat_weight * out.heat + cfg.reg_weight * out.reg;
    return out;
}

inline ImageLoss corners_loss_and_seed(Tape& tape, const XNetModel::Bound& bound,
                                       const CornersTargetBundle& targets, const RunConfig& cfg) {
    const int classes = targets.layers.empty() ? 0 : targets.layers[0].tl_heat.dim(0);
    std::vector<FocalParts> heat_parts;
    std::vector<SmoothL1Parts> off_tl, off_br, creg_tl, creg_br;
    int positives = 0, off_count = 0, creg_count = 0;

    for (size_t li = 0; li < bound.outputs.size(); ++li) {
        const CornersLayerTargets& t = targets.layers[li];
        const Tensor& heat = tape.value(bound.outputs[li].heat);
        Tensor target_heat({2 * classes, heat.dim(1), heat.dim(2)});
        XNetModel::scatter_channels(t.tl_heat, 0, target_heat);
        XNetModel::scatter_channels(t.br_heat, classes, target_heat);
        heat_parts.push_back(
            focal_heatmap_parts(heat, target_heat, cfg.focal_alpha, cfg.focal_beta));
        positives += heat_parts.back().positives;

        const Tensor& reg = tape.value(bound.outputs[li].reg);
        off_tl.push_back(smooth_l1_parts(XNetModel::slice_channels(reg, 0, 2), t.tl_off, t.tl_mask));
        off_br.push_back(smooth_l1_parts(XNetModel::slice_channels(reg, 2, 2), t.br_off, t.br_mask));
        creg_tl.push_back(
            smooth_l1_parts(XNetModel::slice_channels(reg, 4, 2), t.tl_center_reg, t.tl_mask));
        creg_br.push_back(
            smooth_l1_parts(XNetModel::slice_channels(reg, 6, 2), t.br_center_reg, t.br_mask));
        off_count += off_tl.back().count + off_br.back().count;
        creg_count += creg_tl.back().count + creg_br.back().count;
    }

    const double heat_n = std::max(positives, 1);
    const double off_n = std::max(off_count, 1);
    const double creg_n = std::max(creg_count, 1);
    ImageLoss out;
    double off_loss = 0.0;
    for (size_t li = 0; li < bound.outputs.size(); ++li) {
        out.heat += heat_parts[li].loss_sum / heat_n;
        off_loss += (off_tl[li].loss_sum + off_br[li].loss_sum) / off_n;
        out.reg += (creg_tl[li].loss_sum + creg_br[li].loss_sum) / creg_n;

        Tensor& hg = tape.grad(bound.outputs[li].heat);
        for (int i = 0; i < hg.numel(); ++i)
            hg.v[i] += cfg.heat_weight * heat_parts[li].grad_sum.v[i] / heat_n;

        Tensor& rg = tape.grad(bound.outputs[li].reg);
        traind::add_group_grad(rg, off_tl[li].grad_sum, 0, cfg.offset_weight / off_n);
        traind::add_group_grad(rg, off_br[li].grad_sum, 2, cfg.offset_weight / off_n);
        traind::add_group_grad(rg, creg_tl[li].grad_sum, 4, cfg.reg_weight / creg_n);
        traind::add_group_grad(rg, creg_br[li].grad_sum, 6, cfg.reg_weight / creg_n);
    }
    out.total =
        cfg.heat_weight * out.heat + cfg.offset_weight * off_loss + cfg.reg_weight * out.reg;
    out.reg += off_loss;  // reported together; weights already applied above
    return out;
}

// Full single-image inference: optional resize to max_side, pad to the
// lattice stride, forward both the original and the mirrored image, decode,
// merge, soft-NMS, keep the top_n.
inline std::vector<Detection> detect_scene(const XNetModel& model, const Lattice& lattice,
                                           const Scene& scene, const RunConfig& cfg) {
    Tensor image = scene.image;
    double scale = 1.0;
    if (cfg.max_side > 0) {
        const int side = std::max(image.dim(1), image.dim(2));
        scale = static_cast<double>(cfg.max_side) / side;
        image = bilinear_resize(image, std::max(1, static_cast<int>(std::lround(image.dim(1) * scale))),
                                std::max(1, static_cast<int>(std::lround(image.dim(2) * scale))));
    }
    const int unpadded_w = image.dim(2);
    const int pad_h = lattice.padded_extent(image.dim(1));
    const int pad_w = lattice.padded_extent(image.dim(2));

    auto run_pass = [&](const Tensor& img) {
        Tape tape;
        const auto bound = model.forward(tape, pad_bottom_right(img, pad_h, pad_w), lattice);
        std::vector<Detection> dets;
        if (model.config().head == HeadKind::Centers) {
            std::vector<CentersLayerOutput> outs;
            for (const auto& o : bound.outputs)
                outs.push_back(model.split_centers(tape.value(o.heat), tape.value(o.reg)));
            dets = decode_centers(lattice, outs, cfg.topk);
        } else {
            std::vector<CornersLayerOutput> outs;
            for (const auto& o : bound.outputs)
                outs.push_back(model.split_corners(tape.value(o.heat), tape.value(o.reg)));
            auto [tl, br] = decode_corners(lattice, outs, cfg.topk);
            dets = match_corners(lattice, tl, br, cfg.match_tol);
        }
        return dets;
    };

    std::vector<Detection> dets = run_pass(image);
    if (cfg.flip) {
        const std::vector<Detection> flipped = run_pass(flip_horizontal(image));
        dets = merge_flip(dets, flipped, static_cast<double>(unpadded_w));
    }
    dets = soft_nms(std::move(dets), cfg.nms_sigma, cfg.nms_floor);
    dets = select_top(std::move(dets), cfg.top_n);
    if (scale != 1.0)
        for (Detection& d : dets) {
            d.box.x1 /= scale;
            d.box.y1 /= scale;
            d.box.x2 /= scale;
            d.box.y2 /= scale;
        }
    return dets;
}

// Deterministic regardless of thread count: work is partitioned by index.
template <typename Fn>
inline void parallel_for(int n, int threads, Fn&& fn) {
    const int workers = std::max(1, std::min(threads, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

inline MetricReport evaluate_scenes(const XNetModel& model, const Lattice& lattice,
                                    const std::vector<Scene>& scenes, const RunConfig& cfg) {
    std::vector<std::vector<Detection>> per_scene(scenes.size());
    parallel_for(static_cast<int>(scenes.size()), cfg.threads,
                 [&](int i) { per_scene[i] = detect_scene(model, lattice, scenes[i], cfg); });
    std::vector<ScoredBox> dets, gts;
    for (size_t i = 0; i < scenes.size(); ++i) {
        for (const Detection& d : per_scene[i])
            dets.push_back({scenes[i].image_id, d.box, d.score});
        for (const Box& b : scenes[i].boxes) gts.push_back({scenes[i].image_id, b, 1.0});
    }
    return evaluate(dets, gts);
}

struct TrainLogEntry {
    int iter = 0;
    double loss = 0.0;
    double heat = 0.0;
    double reg = 0.0;
};

// Synthetic-data training loop. Per iteration: sample a batch, augment,
// encode targets, forward/backward each image on its own tape (in parallel),
// average the parameter gradients in slot order, Adam step. Bitwise
// reproducible for a fixed config and seed, independent of thread count.
inline XNetModel train_model(const RunConfig& cfg, std::vector<TrainLogEntry>* log = nullptr,
                             std::ostream* progress = nullptr) {
    cfg.validate();
    const Lattice lattice(cfg.lattice_spec());
    const std::vector<Scene> train_set = gen_synthetic(cfg.seed, cfg.synth_config(cfg.train_images));
    XNetModel model(cfg.model_config(), cfg.lattice_spec(), cfg.seed);
    Adam opt(cfg.lr);

    auto batch_rng = make_rng(cfg.seed, 0xBA7C4);
    const int pad = lattice.padded_extent(cfg.crop);

    for (int iter = 0; iter < cfg.iters; ++iter) {
        if (iter == cfg.lr_drop_iter) opt.set_lr(opt.lr() * cfg.lr_drop_factor);

        std::vector<int> batch_idx(static_cast<size_t>(cfg.batch));
        std::vector<std::mt19937_64> slot_rng;
        for (int s = 0; s < cfg.batch; ++s) {
            batch_idx[static_cast<size_t>(s)] = uniform_int(batch_rng, 0, cfg.train_images - 1);
            slot_rng.push_back(make_rng(cfg.seed, 0xF00D + static_cast<uint64_t>(iter) * 131 + s));
        }

        std::vector<std::map<std::string, Tensor>> slot_grads(static_cast<size_t>(cfg.batch));
        std::vector<ImageLoss> slot_loss(static_cast<size_t>(cfg.batch));

        parallel_for(cfg.batch, cfg.threads, [&](int s) {
            const Scene& base = train_set[static_cast<size_t>(batch_idx[static_cast<size_t>(s)])];
            Scene scene = augment(base, cfg.jitter_lo, cfg.jitter_hi, cfg.crop,
                                  slot_rng[static_cast<size_t>(s)]);
            scene.image = pad_bottom_right(scene.image, pad, pad);

            Tape tape;
            const auto bound = model.forward(tape, scene.image, lattice);
            if (model.config().head == HeadKind::Centers) {
                const auto targets =
                    encode_centers(lattice, scene.boxes, cfg.classes, pad, pad, cfg.center_min_iou);
                slot_loss[static_cast<size_t>(s)] = centers_loss_and_seed(tape, bound, targets, cfg);
            } else {
                const auto targets =
                    encode_corners(lattice, scene.boxes, cfg.classes, pad, pad, cfg.corner_min_iou);
                slot_loss[static_cast<size_t>(s)] = corners_loss_and_seed(tape, bound, targets, cfg);
            }
            tape.backward();

            auto& grads = slot_grads[static_cast<size_t>(s)];
            for (const auto& [name, node] : bound.param_node)
                grads[name] = tape.has_grad(node) ? tape.grad(node)
                                                  : Tensor(tape.value(node).shape);
        });

        std::map<std::string, Tensor> grads;
        for (const auto& [name, t] : model.params()) grads[name] = Tensor(t.shape);
        ImageLoss mean_loss;
        for (int s = 0; s < cfg.batch; ++s) {
            for (auto& [name, g] : grads) {
                const Tensor& sg = slot_grads[static_cast<size_t>(s)].at(name);
                for (int i = 0; i < g.numel(); ++i) g.v[i] += sg.v[i] / cfg.batch;
            }
            mean_loss.heat += slot_loss[static_cast<size_t>(s)].heat / cfg.batch;
            mean_loss.reg += slot_loss[static_cast<size_t>(s)].reg / cfg.batch;
            mean_loss.total += slot_loss[static_cast<size_t>(s)].total / cfg.batch;
        }
        opt.step(model.params(), grads);

        if (log) log->push_back({iter, mean_loss.total, mean_loss.heat, mean_loss.reg});
        if (progress && (iter % 50 == 0 || iter + 1 == cfg.iters))
            (*progress) << "iter " << iter << " loss " << mean_loss.total << " heat "
                        << mean_loss.heat << " reg " << mean_loss.reg << "\n";
    }
    return model;
}

}  // namespace mdet
