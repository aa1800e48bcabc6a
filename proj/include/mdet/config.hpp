#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mdet/data.hpp"
#include "mdet/lattice.hpp"
#include "mdet/model.hpp"

namespace mdet {

// Flat key = value run configuration. Every run artifact is accompanied by
// the resolved config so results can be reproduced from the output directory
// alone. Unknown keys are rejected, not ignored.
struct RunConfig {
    std::string head = "corners";  // "centers" | "corners"
    std::string preset = "xnet19";
    int classes = 2;
    int width = 16;

    double base_stride = 8.0;
    double base_lo = 24.0, base_hi = 48.0;
    double relax_lo = 0.8, relax_hi = 1.3;
    int rows = 5, cols = 5;

    int batch = 23;
    double lr = 5e-5;
    int lr_drop_iter = 250000;
    double lr_drop_factor = 0.1;
    int iters = 350000;
    double jitter_lo = 0.6, jitter_hi = 1.5;
    int crop = 512;

    int image_size = 512;
    int train_images = 256;
    int val_images = 32;
    int n_obj_lo = 1, n_obj_hi = 3;
    double aspect_lo = 1.0, aspect_hi = 4.0;
    double min_dim = 20.0, max_dim = 110.0;

    int max_side = 900;  // 0 = no inference-time resize
    int topk = 50;       // per-layer candidates (100 for centers, 50 for corners)
    double match_tol = 0.3;
    double nms_sigma = 0.5;
    double nms_floor = 0.001;
    int top_n = 100;
    int flip = 1;

    double focal_alpha = 2.0, focal_beta = 4.0;
    double center_min_iou = 0.7, corner_min_iou = 0.3;
    double heat_weight = 1.0, reg_weight = 1.0, offset_weight = 1.0;

    uint64_t seed = 0;
    int threads = 4;

    HeadKind head_kind() const {
        if (head == "centers") return HeadKind::Centers;
        if (head == "corners") return HeadKind::Corners;
        throw std::invalid_argument("config: head must be 'centers' or 'corners', got '" + head + "'");
    }

    LatticeSpec lattice_spec() const {
        LatticeSpec spec = lattice_preset(preset);
        spec.base_stride = base_stride;
        spec.base_range = {base_lo, base_hi};
        spec.relax_lo = relax_lo;
        spec.relax_hi = relax_hi;
        spec.rows = rows;
        spec.cols = cols;
        return spec;
    }

    ModelConfig model_config() const { return ModelConfig{head_kind(), classes, width}; }

    SynthConfig synth_config(int n_images) const {
        SynthConfig s;
        s.size = image_size;
        s.n_images = n_images;
        s.n_obj_lo = n_obj_lo;
        s.n_obj_hi = n_obj_hi;
        s.aspect_lo = aspect_lo;
        s.aspect_hi = aspect_hi;
        s.min_dim = min_dim;
        s.max_dim = max_dim;
        return s;
    }

    void validate() const {
        head_kind();
        Lattice lattice(lattice_spec());  // throws on bad lattice parameters
        (void)lattice;
        if (classes < 1) throw std::invalid_argument("config: classes must be >= 1");
        if (width < 1) throw std::invalid_argument("config: width must be >= 1");
        if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
        if (iters < 0) throw std::invalid_argument("config: iters must be >= 0");
        if (!(jitter_lo > 0.0 && jitter_lo <= jitter_hi))
            throw std::invalid_argument("config: jitter range invalid");
        if (crop < 8) throw std::invalid_argument("config: crop too small");
        if (image_size < 8) throw std::invalid_argument("config: image_size too small");
        if (!(aspect_lo >= 1.0 && aspect_hi <= 8.0 && aspect_lo <= aspect_hi))
            throw std::invalid_argument("config: aspect range must lie within [1, 8]");
        if (topk < 1) throw std::invalid_argument("config: topk must be >= 1");
        if (!(match_tol > 0.0)) throw std::invalid_argument("config: match_tol must be > 0");
        if (!(nms_sigma > 0.0)) throw std::invalid_argument("config: nms_sigma must be > 0");
        if (top_n < 1) throw std::invalid_argument("config: top_n must be >= 1");
        if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    }
};

namespace cfgd {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace cfgd

// "desk" fits a laptop CPU budget; "paper" keeps the full-scale constants
// (only meaningful with real hardware and a real dataset, kept for
// documentation honesty).
inline void apply_profile(RunConfig& cfg, const std::string& profile) {
    if (profile == "paper") {
        cfg.batch = 23;
        cfg.lr = 5e-5;
        cfg.lr_drop_iter = 250000;
        cfg.iters = 350000;
        cfg.jitter_lo = 0.6;
        cfg.jitter_hi = 1.5;
        cfg.crop = cfg.head == "centers" ? 640 : 512;
        cfg.max_side = 900;
        cfg.topk = cfg.head == "centers" ? 100 : 50;
        return;
    }
    if (profile == "desk") {
        cfg.batch = 4;
        cfg.lr = 2e-3;
        cfg.lr_drop_iter = 1600;
        cfg.iters = 2000;
        cfg.jitter_lo = 0.75;
        cfg.jitter_hi = 1.25;
        cfg.crop = 128;
        cfg.image_size = 128;
        cfg.train_images = 256;
        cfg.val_images = 32;
        cfg.classes = 2;
        cfg.max_side = 0;
        cfg.max_dim = 110.0;
        cfg.topk = cfg.head == "centers" ? 100 : 50;
        return;
    }
    throw std::invalid_argument("unknown profile '" + profile + "'");
}

inline std::string serialize_config(const RunConfig& c) {
    using cfgd::fmt_double;
    std::map<std::string, std::string> kv = {
        {"head", c.head},
        {"preset", c.preset},
        {"classes", std::to_string(c.classes)},
        {"width", std::to_string(c.width)},
        {"base_stride", fmt_double(c.base_stride)},
        {"base_lo", fmt_double(c.base_lo)},
        {"base_hi", fmt_double(c.base_hi)},
        {"relax_lo", fmt_double(c.relax_lo)},
        {"relax_hi", fmt_double(c.relax_hi)},
        {"rows", std::to_string(c.rows)},
        {"cols", std::to_string(c.cols)},
        {"batch", std::to_string(c.batch)},
        {"lr", fmt_double(c.lr)},
        {"lr_drop_iter", std::to_string(c.lr_drop_iter)},
        {"lr_drop_factor", fmt_double(c.lr_drop_factor)},
        {"iters", std::to_string(c.iters)},
        {"jitter_lo", fmt_double(c.jitter_lo)},
        {"jitter_hi", fmt_double(c.jitter_hi)},
        {"crop", std::to_string(c.crop)},
        {"image_size", std::to_string(c.image_size)},
        {"train_images", std::to_string(c.train_images)},
        {"val_images", std::to_string(c.val_images)},
        {"n_obj_lo", std::to_string(c.n_obj_lo)},
        {"n_obj_hi", std::to_string(c.n_obj_hi)},
        {"aspect_lo", fmt_double(c.aspect_lo)},
        {"aspect_hi", fmt_double(c.aspect_hi)},
        {"min_dim", fmt_double(c.min_dim)},
        {"max_dim", fmt_double(c.max_dim)},
        {"max_side", std::to_string(c.max_side)},
        {"topk", std::to_string(c.topk)},
        {"match_tol", fmt_double(c.match_tol)},
        {"nms_sigma", fmt_double(c.nms_sigma)},
        {"nms_floor", fmt_double(c.nms_floor)},
        {"top_n", std::to_string(c.top_n)},
        {"flip", std::to_string(c.flip)},
        {"focal_alpha", fmt_double(c.focal_alpha)},
        {"focal_beta", fmt_double(c.focal_beta)},
        {"center_min_iou", fmt_double(c.center_min_iou)},
        {"corner_min_iou", fmt_double(c.corner_min_iou)},
        {"heat_weight", fmt_double(c.heat_weight)},
        {"reg_weight", fmt_double(c.reg_weight)},
        {"offset_weight", fmt_double(c.offset_weight)},
        {"seed", std::to_string(c.seed)},
        {"threads", std::to_string(c.threads)},
    };
    std::ostringstream out;
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
    return out.str();
}

inline void set_config_key(RunConfig& c, const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    if (key == "head") c.head = value;
    else if (key == "preset") c.preset = value;
    else if (key == "classes") c.classes = as_int();
    else if (key == "width") c.width = as_int();
    else if (key == "base_stride") c.base_stride = as_double();
    else if (key == "base_lo") c.base_lo = as_double();
    else if (key == "base_hi") c.base_hi = as_double();
    else if (key == "relax_lo") c.relax_lo = as_double();
    else if (key == "relax_hi") c.relax_hi = as_double();
    else if (key == "rows") c.rows = as_int();
    else if (key == "cols") c.cols = as_int();
    else if (key == "batch") c.batch = as_int();
    else if (key == "lr") c.lr = as_double();
    else if (key == "lr_drop_iter") c.lr_drop_iter = as_int();
    else if (key == "lr_drop_factor") c.lr_drop_factor = as_double();
    else if (key == "iters") c.iters = as_int();
    else if (key == "jitter_lo") c.jitter_lo = as_double();
    else if (key == "jitter_hi") c.jitter_hi = as_double();
    else if (key == "crop") c.crop = as_int();
    else if (key == "image_size") c.image_size = as_int();
    else if (key == "train_images") c.train_images = as_int();
    else if (key == "val_images") c.val_images = as_int();
    else if (key == "n_obj_lo") c.n_obj_lo = as_int();
    else if (key == "n_obj_hi") c.n_obj_hi = as_int();
    else if (key == "aspect_lo") c.aspect_lo = as_double();
    else if (key == "aspect_hi") c.aspect_hi = as_double();
    else if (key == "min_dim") c.min_dim = as_double();
    else if (key == "max_dim") c.max_dim = as_double();
    else if (key == "max_side") c.max_side = as_int();
    else if (key == "topk") c.topk = as_int();
    else if (key == "match_tol") c.match_tol = as_double();
    else if (key == "nms_sigma") c.nms_sigma = as_double();
    else if (key == "nms_floor") c.nms_floor = as_double();
    else if (key == "top_n") c.top_n = as_int();
    else if (key == "flip") c.flip = as_int();
    else if (key == "focal_alpha") c.focal_alpha = as_double();
    else if (key == "focal_beta") c.focal_beta = as_double();
    else if (key == "center_min_iou") c.center_min_iou = as_double();
    else if (key == "corner_min_iou") c.corner_min_iou = as_double();
    else if (key == "heat_weight") c.heat_weight = as_double();
    else if (key == "reg_weight") c.reg_weight = as_double();
    else if (key == "offset_weight") c.offset_weight = as_double();
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "threads") c.threads = as_int();
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline RunConfig parse_config_text(const std::string& text, RunConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not 'key = value'");
        try {
            set_config_key(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: bad value on line " + std::to_string(lineno));
        }
    }
    return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), std::move(base));
}

inline void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path + " for writing");
    f << serialize_config(cfg);
}

}  // namespace mdet
