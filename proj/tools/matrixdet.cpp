// Command-line front end: lattice inspection, assignment statistics,
// encode/decode roundtrips, toy training, inference, evaluation, and
// aspect-ratio histograms. Every command writes its resolved configuration
// next to its artifacts; identical config + seed reproduces identical bytes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdet/checkpoint.hpp"
#include "mdet/config.hpp"
#include "mdet/data.hpp"
#include "mdet/decode.hpp"
#include "mdet/eval.hpp"
#include "mdet/lattice.hpp"
#include "mdet/targets.hpp"
#include "mdet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << text;
}

mdet::RunConfig resolve_config(const std::string& config_path, const std::string& profile,
                               const std::string& head, const std::vector<std::string>& sets) {
    mdet::RunConfig cfg;
    if (!head.empty()) cfg.head = head;
    if (!profile.empty()) mdet::apply_profile(cfg, profile);
    if (!config_path.empty()) cfg = mdet::load_config(config_path, cfg);
    if (!head.empty()) cfg.head = head;  // explicit flag wins over file
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        mdet::set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

std::string lattice_csv(const mdet::Lattice& lattice) {
    std::string out = "r,c,stride_h,stride_w,h_lo,h_hi,w_lo,w_hi,"
                      "h_lo_relaxed,h_hi_relaxed,w_lo_relaxed,w_hi_relaxed\n";
    for (const mdet::Layer& l : lattice.layers()) {
        out += std::to_string(l.r) + "," + std::to_string(l.c) + "," + fmt(l.stride_h) + "," +
               fmt(l.stride_w) + "," + fmt(l.h_range.lo) + "," + fmt(l.h_range.hi) + "," +
               fmt(l.w_range.lo) + "," + fmt(l.w_range.hi) + "," + fmt(l.h_relaxed.lo) + "," +
               fmt(l.h_relaxed.hi) + "," + fmt(l.w_relaxed.lo) + "," + fmt(l.w_relaxed.hi) + "\n";
    }
    return out;
}

json metrics_to_json(const mdet::MetricReport& r) {
    json j;
    j["AP"] = r.ap;
    j["AP50"] = r.ap50;
    j["AP75"] = r.ap75;
    j["AP_small"] = r.ap_small;
    j["AP_medium"] = r.ap_medium;
    j["AP_large"] = r.ap_large;
    j["AR1"] = r.ar1;
    j["AR10"] = r.ar10;
    j["AR100"] = r.ar100;
    j["AR_small"] = r.ar_small;
    j["AR_medium"] = r.ar_medium;
    j["AR_large"] = r.ar_large;
    for (const auto& [cls, ap] : r.per_class_ap) j["per_class"][std::to_string(cls)] = ap;
    return j;
}

std::vector<mdet::ScoredBox> load_detections_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<mdet::ScoredBox> dets;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("detections line " + std::to_string(lineno) + ": " + e.what());
        }
        mdet::ScoredBox d;
        d.image_id = j.at("image_id").get<int>();
        d.score = j.at("score").get<double>();
        const auto& bb = j.at("bbox");
        d.box = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                 bb[3].get<double>(), j.at("class").get<int>()};
        dets.push_back(d);
    }
    return dets;
}

std::string detections_to_jsonl(const std::vector<std::pair<int, mdet::Detection>>& dets) {
    std::string out;
    for (const auto& [image_id, d] : dets) {
        json j;
        j["image_id"] = image_id;
        j["class"] = d.box.class_id;
        j["score"] = d.score;
        j["bbox"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
        out += j.dump() + "\n";
    }
    return out;
}

std::string aspect_hist_csv(const mdet::AspectStats& st) {
    std::string out = "bin_lo,bin_hi,count\n";
    for (size_t i = 0; i < st.counts.size(); ++i)
        out += fmt(st.bin_edges[i]) + "," + fmt(st.bin_edges[i + 1]) + "," +
               std::to_string(st.counts[i]) + "\n";
    return out;
}

std::string aspect_hist_svg(const mdet::AspectStats& st) {
    const int w = 640, h = 360, margin = 40;
    int peak = 1;
    for (int c : st.counts) peak = std::max(peak, c);
    const double bar_w = static_cast<double>(w - 2 * margin) / st.counts.size();
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                      "\" height=\"" + std::to_string(h) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (size_t i = 0; i < st.counts.size(); ++i) {
        const double bh = (h - 2.0 * margin) * st.counts[i] / peak;
        svg += "<rect x=\"" + fmt(margin + i * bar_w) + "\" y=\"" + fmt(h - margin - bh) +
               "\" width=\"" + fmt(bar_w * 0.9) + "\" height=\"" + fmt(bh) +
               "\" fill=\"#4878cf\"/>\n";
    }
    svg += "<line x1=\"" + std::to_string(margin) + "\" y1=\"" + std::to_string(h - margin) +
           "\" x2=\"" + std::to_string(w - margin) + "\" y2=\"" + std::to_string(h - margin) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + std::to_string(margin) + "\" y=\"20\" font-size=\"13\">max/min aspect "
           "ratio histogram (total " + std::to_string(st.total) + ", &gt;1.75: " +
           fmt(st.fraction_gt_175) + ", &gt;3: " + fmt(st.fraction_gt_3) + ")</text>\n";
    svg += "</svg>\n";
    return svg;
}

// --- subcommand bodies ------------------------------------------------------

int cmd_lattice(const mdet::RunConfig& cfg, const std::string& out_path) {
    const mdet::Lattice lattice(cfg.lattice_spec());
    const std::string csv = lattice_csv(lattice);
    std::cout << csv;
    if (!out_path.empty()) write_text(out_path, csv);
    return 0;
}

int cmd_assign_stats(const mdet::RunConfig& cfg, const std::string& annotations,
                     const std::string& out_dir) {
    const mdet::Lattice lattice(cfg.lattice_spec());
    std::vector<mdet::Box> boxes;
    if (!annotations.empty()) {
        const mdet::CocoDataset ds = mdet::load_coco_json(annotations);
        for (const auto& a : ds.annotations) boxes.push_back(a.box);
    } else {
        for (const auto& scene : mdet::gen_synthetic(cfg.seed, cfg.synth_config(cfg.train_images)))
            for (const auto& b : scene.boxes) boxes.push_back(b);
    }

    std::vector<int> counts(lattice.layers().size(), 0);
    int unassigned = 0;
    std::map<int, int> multiplicity;
    for (const mdet::Box& b : boxes) {
        const auto assigned = lattice.assign(b);
        if (assigned.empty()) ++unassigned;
        for (int li : assigned) ++counts[static_cast<size_t>(li)];
        ++multiplicity[static_cast<int>(assigned.size())];
    }

    std::string csv = "r,c,assigned\n";
    for (size_t i = 0; i < counts.size(); ++i)
        csv += std::to_string(lattice.layers()[i].r) + "," +
               std::to_string(lattice.layers()[i].c) + "," + std::to_string(counts[i]) + "\n";
    json summary;
    summary["boxes"] = boxes.size();
    summary["unassigned"] = unassigned;
    for (const auto& [k, v] : multiplicity) summary["assignment_multiplicity"][std::to_string(k)] = v;
    std::cout << summary.dump(1) << "\n";
    if (!out_dir.empty()) {
        write_text(fs::path(out_dir) / "assign_stats.csv", csv);
        write_text(fs::path(out_dir) / "assign_stats.json", summary.dump(1) + "\n");
        write_text(fs::path(out_dir) / "run_config.cfg", mdet::serialize_config(cfg));
    }
    return 0;
}

// Feed encoded targets straight back through the decoder and measure how much
// of the geometry survives.
int cmd_roundtrip(const mdet::RunConfig& cfg, const std::string& annotations,
                  const std::string& out_dir) {
    const mdet::Lattice lattice(cfg.lattice_spec());

    struct Item {
        std::vector<mdet::Box> boxes;
        int h, w;
    };
    std::vector<Item> items;
    if (!annotations.empty()) {
        const mdet::CocoDataset ds = mdet::load_coco_json(annotations);
        std::map<int, Item> by_image;
        for (const auto& img : ds.images)
            by_image[img.id] = {{}, std::max(img.height, 1), std::max(img.width, 1)};
        for (const auto& a : ds.annotations) {
            auto it = by_image.find(a.image_id);
            if (it == by_image.end()) continue;
            it->second.boxes.push_back(a.box);
            it->second.h = std::max(it->second.h, static_cast<int>(std::ceil(a.box.y2)));
            it->second.w = std::max(it->second.w, static_cast<int>(std::ceil(a.box.x2)));
        }
        for (auto& [id, item] : by_image) items.push_back(std::move(item));
    } else {
        for (const auto& scene : mdet::gen_synthetic(cfg.seed, cfg.synth_config(cfg.val_images)))
            items.push_back({scene.boxes, scene.image.dim(1), scene.image.dim(2)});
    }

    double max_err = 0.0;
    double min_iou = 1.0;
    int recovered = 0, encodable = 0, skipped = 0;
    const int classes = cfg.classes;
    for (const Item& item : items) {
        const int ph = lattice.padded_extent(item.h), pw = lattice.padded_extent(item.w);
        std::vector<mdet::Box> boxes;
        for (const mdet::Box& b : item.boxes)
            if (b.class_id >= 0 && b.class_id < classes) boxes.push_back(b);

        std::vector<mdet::Detection> dets;
        if (cfg.head_kind() == mdet::HeadKind::Corners) {
            const auto bundle = mdet::encode_corners(lattice, boxes, classes, ph, pw, cfg.corner_min_iou);
            skipped += bundle.stats.skipped;
            std::vector<mdet::CornersLayerOutput> outs;
            for (const auto& t : bundle.layers)
                outs.push_back({t.tl_heat, t.br_heat, t.tl_off, t.br_off, t.tl_center_reg,
                                t.br_center_reg});
            auto [tl, br] = mdet::decode_corners(lattice, outs, cfg.topk);
            dets = mdet::match_corners(lattice, tl, br, cfg.match_tol);
        } else {
            const auto bundle = mdet::encode_centers(lattice, boxes, classes, ph, pw, cfg.center_min_iou);
            skipped += bundle.stats.skipped;
            std::vector<mdet::CentersLayerOutput> outs;
            for (const auto& t : bundle.layers) outs.push_back({t.heat, t.tl_reg, t.br_reg});
            dets = mdet::decode_centers(lattice, outs, cfg.topk);
        }

        for (const mdet::Box& gt : boxes) {
            if (lattice.assign(gt).empty()) continue;
            ++encodable;
            double best_err = 1e30, best_iou = 0.0;
            for (const mdet::Detection& d : dets) {
                if (d.box.class_id != gt.class_id) continue;
                const double err = std::max(std::max(std::abs(d.box.x1 - gt.x1), std::abs(d.box.y1 - gt.y1)),
                                            std::max(std::abs(d.box.x2 - gt.x2), std::abs(d.box.y2 - gt.y2)));
                best_err = std::min(best_err, err);
                best_iou = std::max(best_iou, mdet::iou(d.box, gt));
            }
            if (best_iou > 0.0) {
                ++recovered;
                max_err = std::max(max_err, best_err);
                min_iou = std::min(min_iou, best_iou);
            }
        }
    }

    json report;
    report["head"] = cfg.head;
    report["images"] = items.size();
    report["encodable_boxes"] = encodable;
    report["recovered_boxes"] = recovered;
    report["skipped_boxes"] = skipped;
    report["max_corner_error"] = encodable ? max_err : -1.0;
    report["min_recovered_iou"] = encodable ? min_iou : -1.0;
    std::cout << report.dump(1) << "\n";
    if (!out_dir.empty()) {
        write_text(fs::path(out_dir) / "roundtrip.json", report.dump(1) + "\n");
        write_text(fs::path(out_dir) / "run_config.cfg", mdet::serialize_config(cfg));
    }
    return 0;
}

int cmd_train(const mdet::RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "run_config.cfg", mdet::serialize_config(cfg));

    std::vector<mdet::TrainLogEntry> log;
    const mdet::XNetModel model = mdet::train_model(cfg, &log, &std::cout);
    mdet::save_checkpoint((fs::path(out_dir) / "model.ckpt").string(), model.params());

    std::string log_csv = "iter,loss,heat,reg\n";
    for (const auto& e : log)
        log_csv += std::to_string(e.iter) + "," + fmt(e.loss) + "," + fmt(e.heat) + "," +
                   fmt(e.reg) + "\n";
    write_text(fs::path(out_dir) / "train_log.csv", log_csv);

    const auto val = mdet::gen_synthetic(cfg.seed + 1, cfg.synth_config(cfg.val_images));
    mdet::save_dataset((fs::path(out_dir) / "val_dataset").string(), val);
    mdet::save_coco_json((fs::path(out_dir) / "val_annotations.json").string(),
                         mdet::scenes_to_coco(val));

    const mdet::Lattice lattice(cfg.lattice_spec());
    const mdet::MetricReport rep = mdet::evaluate_scenes(model, lattice, val, cfg);
    const json metrics = metrics_to_json(rep);
    write_text(fs::path(out_dir) / "metrics.json", metrics.dump(1) + "\n");
    std::cout << metrics.dump(1) << "\n";
    return 0;
}

int cmd_infer(const mdet::RunConfig& cfg, const std::string& checkpoint,
              const std::string& dataset_dir, const std::string& out_path) {
    mdet::XNetModel model(cfg.model_config(), cfg.lattice_spec(), cfg.seed);
    auto loaded = mdet::load_checkpoint(checkpoint);
    for (auto& [name, t] : model.params()) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw std::runtime_error("checkpoint missing tensor " + name);
        if (it->second.shape != t.shape)
            throw std::runtime_error("checkpoint tensor " + name + " has wrong shape");
        t = it->second;
    }

    const mdet::Lattice lattice(cfg.lattice_spec());
    const std::vector<mdet::Scene> scenes = mdet::load_dataset(dataset_dir);
    std::vector<std::vector<mdet::Detection>> per_scene(scenes.size());
    mdet::parallel_for(static_cast<int>(scenes.size()), cfg.threads, [&](int i) {
        per_scene[static_cast<size_t>(i)] = mdet::detect_scene(model, lattice, scenes[static_cast<size_t>(i)], cfg);
    });

    std::vector<std::pair<int, mdet::Detection>> flat;
    for (size_t i = 0; i < scenes.size(); ++i)
        for (const auto& d : per_scene[i]) flat.emplace_back(scenes[i].image_id, d);
    const std::string jsonl = detections_to_jsonl(flat);
    write_text(out_path, jsonl);
    std::cout << "wrote " << flat.size() << " detections for " << scenes.size() << " images to "
              << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& dets_path, const std::string& annotations,
             const std::string& out_dir) {
    const std::vector<mdet::ScoredBox> dets = load_detections_jsonl(dets_path);
    const mdet::CocoDataset ds = mdet::load_coco_json(annotations);
    std::vector<mdet::ScoredBox> gts;
    for (const auto& a : ds.annotations) gts.push_back({a.image_id, a.box, 1.0});

    const mdet::MetricReport rep = mdet::evaluate(dets, gts);
    const json metrics = metrics_to_json(rep);
    std::cout << metrics.dump(1) << "\n";

    if (!out_dir.empty()) {
        write_text(fs::path(out_dir) / "metrics.json", metrics.dump(1) + "\n");
        std::string csv = "class,ap\n";
        for (const auto& [cls, ap] : rep.per_class_ap)
            csv += std::to_string(cls) + "," + fmt(ap) + "\n";
        write_text(fs::path(out_dir) / "per_class.csv", csv);
    }
    return 0;
}

int cmd_hist(const std::string& annotations, const std::string& out_dir, double bin_width) {
    const mdet::CocoDataset ds = mdet::load_coco_json(annotations);
    std::vector<mdet::Box> boxes;
    for (const auto& a : ds.annotations) boxes.push_back(a.box);
    const mdet::AspectStats st = mdet::aspect_stats(boxes, bin_width);

    json summary;
    summary["total"] = st.total;
    summary["fraction_gt_175"] = st.fraction_gt_175;
    summary["fraction_gt_3"] = st.fraction_gt_3;
    std::cout << summary.dump(1) << "\n";

    if (!out_dir.empty()) {
        write_text(fs::path(out_dir) / "hist.csv", aspect_hist_csv(st));
        write_text(fs::path(out_dir) / "hist.svg", aspect_hist_svg(st));
        write_text(fs::path(out_dir) / "hist.json", summary.dump(1) + "\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"matrixdet: scale- and aspect-ratio-aware toy object detection"};
    app.require_subcommand(1);

    std::string config_path, profile, head, out, annotations, checkpoint, dataset, dets_path;
    std::vector<std::string> sets;
    double bin_width = 0.25;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (key = value lines)");
        sub->add_option("--profile", profile, "'desk' or 'paper'");
        sub->add_option("--set", sets, "override a config key, e.g. --set seed=3")->take_all();
    };

    CLI::App* lattice_cmd = app.add_subcommand("lattice", "print the layer table as CSV");
    add_common(lattice_cmd);
    std::string preset = "xnet19";
    lattice_cmd->add_option("--preset", preset, "fpn5 | xnet19 | full25");
    lattice_cmd->add_option("--out", out, "also write the CSV here");

    CLI::App* stats_cmd = app.add_subcommand("assign-stats", "box-to-layer assignment statistics");
    add_common(stats_cmd);
    stats_cmd->add_option("--annotations", annotations, "COCO annotations JSON (else synthetic)");
    stats_cmd->add_option("--out", out, "output directory");

    CLI::App* round_cmd = app.add_subcommand("roundtrip", "encode/decode reconstruction check");
    add_common(round_cmd);
    round_cmd->add_option("--head", head, "centers | corners");
    round_cmd->add_option("--annotations", annotations, "COCO annotations JSON (else synthetic)");
    round_cmd->add_option("--out", out, "output directory");

    CLI::App* train_cmd = app.add_subcommand("train", "train on synthetic scenes");
    add_common(train_cmd);
    train_cmd->add_option("--head", head, "centers | corners");
    train_cmd->add_option("--out", out, "output directory")->required();

    CLI::App* infer_cmd = app.add_subcommand("infer", "run a checkpoint over a dataset directory");
    add_common(infer_cmd);
    infer_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    infer_cmd->add_option("--dataset", dataset, "dataset directory (index.json + .bin images)")
        ->required();
    infer_cmd->add_option("--out", out, "output detections JSONL")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "COCO-style metrics for detections");
    eval_cmd->add_option("--dets", dets_path, "detections JSONL")->required();
    eval_cmd->add_option("--annotations", annotations, "ground-truth COCO JSON")->required();
    eval_cmd->add_option("--out", out, "output directory");

    CLI::App* hist_cmd = app.add_subcommand("hist", "aspect-ratio histogram of annotations");
    hist_cmd->add_option("--annotations", annotations, "COCO annotations JSON")->required();
    hist_cmd->add_option("--out", out, "output directory");
    hist_cmd->add_option("--bin-width", bin_width, "histogram bin width (default 0.25)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (lattice_cmd->parsed()) {
            mdet::RunConfig cfg = resolve_config(config_path, profile, head, sets);
            if (lattice_cmd->count("--preset")) cfg.preset = preset;
            cfg.validate();
            return cmd_lattice(cfg, out);
        }
        if (stats_cmd->parsed())
            return cmd_assign_stats(resolve_config(config_path, profile, head, sets), annotations, out);
        if (round_cmd->parsed())
            return cmd_roundtrip(resolve_config(config_path, profile, head, sets), annotations, out);
        if (train_cmd->parsed())
            return cmd_train(resolve_config(config_path, profile, head, sets), out);
        if (infer_cmd->parsed()) {
            if (config_path.empty()) {
                const fs::path sibling = fs::path(checkpoint).parent_path() / "run_config.cfg";
                if (fs::exists(sibling)) config_path = sibling.string();
            }
            if (config_path.empty())
                throw std::runtime_error("infer: need --config or a run_config.cfg next to the checkpoint");
            return cmd_infer(resolve_config(config_path, profile, head, sets), checkpoint, dataset, out);
        }
        if (eval_cmd->parsed()) return cmd_eval(dets_path, annotations, out);
        if (hist_cmd->parsed()) return cmd_hist(annotations, out, bin_width);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
