#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdet/geometry.hpp"
#include "mdet/ops.hpp"
#include "mdet/rng.hpp"
#include "mdet/tensor.hpp"

namespace mdet {

struct Scene {
    int image_id = 0;
    Tensor image;  // [3,H,W], values in [0,1]
    std::vector<Box> boxes;
};

// Class 0 draws rectangles, class 1 ellipses.
struct SynthConfig {
    int size = 128;
    int n_images = 64;
    int n_obj_lo = 1;
    int n_obj_hi = 3;
    double aspect_lo = 1.0;
    double aspect_hi = 4.0;
    double min_dim = 20.0;
    double max_dim = 110.0;
    double max_overlap = 0.15;  // max IoU between placed boxes
};

namespace detail {

inline void fill_shape(Tensor& img, const Box& b, const double rgb[3], bool ellipse) {
    const int h = img.dim(1), w = img.dim(2);
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(b.y2)));
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(b.x2)));
    const double cx = b.center_x(), cy = b.center_y();
    const double rx = 0.5 * b.width(), ry = 0.5 * b.height();
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            if (px < b.x1 || px > b.x2 || py < b.y1 || py > b.y2) continue;
            if (ellipse) {
                const double dx = (px - cx) / rx, dy = (py - cy) / ry;
                if (dx * dx + dy * dy > 1.0) continue;
            }
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
        }
    }
}

}  // namespace detail

// Deterministic per (seed, image index): scenes can be generated lazily and
// in parallel and still match a sequential run.
inline Scene gen_scene(uint64_t seed, int image_id, const SynthConfig& cfg) {
    auto rng = make_rng(seed, static_cast<uint64_t>(image_id) + 0x5CE17E);
    Scene scene;
    scene.image_id = image_id;
    scene.image = Tensor({3, cfg.size, cfg.size});

    const double bg = uniform(rng, 0.25, 0.55);
    for (double& e : scene.image.v) e = bg + uniform(rng, -0.08, 0.08);

    const int n_obj = uniform_int(rng, cfg.n_obj_lo, cfg.n_obj_hi);
    for (int k = 0; k < n_obj; ++k) {
        for (int attempt = 0; attempt < 40; ++attempt) {
            const double aspect = uniform(rng, cfg.aspect_lo, cfg.aspect_hi);
            const bool wide = uniform_unit(rng) < 0.5;
            double bw, bh;
            const double short_side =
                uniform(rng, cfg.min_dim, std::max(cfg.min_dim, cfg.max_dim / aspect));
            if (wide) {
                bw = short_side * aspect;
                bh = short_side;
            } else {
                bw = short_side;
                bh = short_side * aspect;
            }
            if (bw > cfg.size - 2.0 || bh > cfg.size - 2.0) continue;
            Box b;
            b.x1 = uniform(rng, 1.0, cfg.size - 1.0 - bw);
            b.y1 = uniform(rng, 1.0, cfg.size - 1.0 - bh);
            b.x2 = b.x1 + bw;
            b.y2 = b.y1 + bh;
            b.class_id = uniform_int(rng, 0, 1);
            bool clear = true;
            for (const Box& other : scene.boxes)
                if (iou(b, other) > cfg.max_overlap) clear = false;
            if (!clear) continue;

            double rgb[3];
            for (double& c : rgb) {
                // keep fill away from the background band for contrast
                c = uniform_unit(rng) < 0.5 ? uniform(rng, 0.0, 0.12) : uniform(rng, 0.72, 1.0);
            }
            detail::fill_shape(scene.image, b, rgb, b.class_id == 1);
            scene.boxes.push_back(b);
            break;
        }
    }
    return scene;
}

inline std::vector<Scene> gen_synthetic(uint64_t seed, const SynthConfig& cfg) {
    std::vector<Scene> out;
    out.reserve(static_cast<size_t>(cfg.n_images));
    for (int i = 0; i < cfg.n_images; ++i) out.push_back(gen_scene(seed, i, cfg));
    return out;
}

// Scale jitter + random crop. Boxes are transformed by the exact affine map,
// clipped to the crop, and dropped when less than a quarter of their
// post-scale area survives.
inline Scene augment(const Scene& in, double jitter_lo, double jitter_hi, int crop,
                     std::mt19937_64& rng) {
    const double s = uniform(rng, jitter_lo, jitter_hi);
    const int ih = in.image.dim(1), iw = in.image.dim(2);
    const int sh = std::max(1, static_cast<int>(std::lround(ih * s)));
    const int sw = std::max(1, static_cast<int>(std::lround(iw * s)));
    const double sy = static_cast<double>(sh) / ih;
    const double sx = static_cast<double>(sw) / iw;

    Tensor scaled = bilinear_resize(in.image, sh, sw);
    if (sh < crop || sw < crop) scaled = pad_bottom_right(scaled, std::max(sh, crop), std::max(sw, crop));
    const int max_oy = scaled.dim(1) - crop;
    const int max_ox = scaled.dim(2) - crop;
    const int oy = max_oy > 0 ? uniform_int(rng, 0, max_oy) : 0;
    const int ox = max_ox > 0 ? uniform_int(rng, 0, max_ox) : 0;

    Scene out;
    out.image_id = in.image_id;
    out.image = Tensor({3, crop, crop});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x) out.image.at(c, y, x) = scaled.at(c, y + oy, x + ox);

    for (const Box& b : in.boxes) {
        Box t = b;
        t.x1 = b.x1 * sx - ox;
        t.x2 = b.x2 * sx - ox;
        t.y1 = b.y1 * sy - oy;
        t.y2 = b.y2 * sy - oy;
        const double full_area = t.area();
        Box clipped = t;
        clipped.x1 = std::max(0.0, t.x1);
        clipped.y1 = std::max(0.0, t.y1);
        clipped.x2 = std::min(static_cast<double>(crop), t.x2);
        clipped.y2 = std::min(static_cast<double>(crop), t.y2);
        if (!clipped.valid()) continue;
        if (clipped.area() < 0.25 * full_area) continue;
        out.boxes.push_back(clipped);
    }
    return out;
}

// ---------------------------------------------------------------------------
// COCO-format annotations (bbox-only subset).

struct CocoImage {
    int id = 0;
    int width = 0;
    int height = 0;
    std::string file_name;
};

struct CocoAnnotation {
    int id = 0;
    int image_id = 0;
    Box box;  // class_id = category_id
};

struct CocoDataset {
    std::vector<CocoImage> images;
    std::vector<CocoAnnotation> annotations;
    std::map<int, std::string> categories;
    int dropped = 0;  // annotations with non-positive extent
};

inline CocoDataset load_coco_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("coco: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("coco: malformed JSON in " + path + ": " + e.what());
    }
    for (const char* key : {"images", "annotations"})
        if (!j.contains(key)) throw std::runtime_error("coco: missing top-level '" + std::string(key) + "' in " + path);

    CocoDataset ds;
    for (const auto& img : j["images"]) {
        if (!img.contains("id"))
            throw std::runtime_error("coco: image record without 'id'");
        CocoImage ci;
        ci.id = img["id"].get<int>();
        ci.width = img.value("width", 0);
        ci.height = img.value("height", 0);
        ci.file_name = img.value("file_name", std::string{});
        ds.images.push_back(std::move(ci));
    }
    if (j.contains("categories"))
        for (const auto& cat : j["categories"])
            ds.categories[cat["id"].get<int>()] = cat.value("name", std::string{});

    for (const auto& ann : j["annotations"]) {
        const std::string where =
            "annotation id " + (ann.contains("id") ? ann["id"].dump() : std::string("<missing>"));
        for (const char* key : {"image_id", "category_id", "bbox"})
            if (!ann.contains(key)) throw std::runtime_error("coco: " + where + " missing '" + key + "'");
        const auto& bbox = ann["bbox"];
        if (!bbox.is_array() || bbox.size() != 4)
            throw std::runtime_error("coco: " + where + " bbox must be [x,y,w,h]");
        const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
        const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
        if (w <= 0.0 || h <= 0.0) {
            ++ds.dropped;
            continue;
        }
        CocoAnnotation ca;
        ca.id = ann.value("id", 0);
        ca.image_id = ann["image_id"].get<int>();
        ca.box = {x, y, x + w, y + h, ann["category_id"].get<int>()};
        ds.annotations.push_back(ca);
    }
    return ds;
}

inline void save_coco_json(const std::string& path, const CocoDataset& ds) {
    nlohmann::json j;
    j["images"] = nlohmann::json::array();
    for (const auto& img : ds.images)
        j["images"].push_back({{"id", img.id},
                               {"width", img.width},
                               {"height", img.height},
                               {"file_name", img.file_name}});
    j["annotations"] = nlohmann::json::array();
    for (const auto& a : ds.annotations)
        j["annotations"].push_back(
            {{"id", a.id},
             {"image_id", a.image_id},
             {"category_id", a.box.class_id},
             {"bbox", {a.box.x1, a.box.y1, a.box.width(), a.box.height()}},
             {"area", a.box.area()},
             {"iscrowd", 0}});
    j["categories"] = nlohmann::json::array();
    for (const auto& [id, name] : ds.categories)
        j["categories"].push_back({{"id", id}, {"name", name}});
    std::ofstream f(path);
    if (!f) throw std::runtime_error("coco: cannot open " + path + " for writing");
    f << j.dump(1) << "\n";
}

inline CocoDataset scenes_to_coco(const std::vector<Scene>& scenes) {
    CocoDataset ds;
    ds.categories = {{0, "rectangle"}, {1, "ellipse"}};
    int ann_id = 1;
    for (const Scene& s : scenes) {
        ds.images.push_back({s.image_id, s.image.dim(2), s.image.dim(1),
                             "img_" + std::to_string(s.image_id) + ".bin"});
        for (const Box& b : s.boxes) {
            CocoAnnotation a;
            a.id = ann_id++;
            a.image_id = s.image_id;
            a.box = b;
            ds.annotations.push_back(a);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Aspect-ratio statistics: ratio = max(W,H) / min(W,H) per box.

struct AspectStats {
    std::vector<double> bin_edges;  // size counts.size() + 1
    std::vector<int> counts;
    double fraction_gt_175 = 0.0;
    double fraction_gt_3 = 0.0;
    int total = 0;
};

inline AspectStats aspect_stats(const std::vector<Box>& boxes, double bin_width = 0.25,
                                double max_ratio = 8.0) {
    AspectStats st;
    const int nbins = static_cast<int>(std::ceil((max_ratio - 1.0) / bin_width)) + 1;  // + overflow
    st.counts.assign(static_cast<size_t>(nbins), 0);
    for (int i = 0; i <= nbins; ++i) st.bin_edges.push_back(1.0 + bin_width * i);
    st.bin_edges.back() = std::numeric_limits<double>::infinity();

    int gt175 = 0, gt3 = 0;
    for (const Box& b : boxes) {
        if (!b.valid()) continue;
        const double ratio = std::max(b.width(), b.height()) / std::min(b.width(), b.height());
        int bin = static_cast<int>((ratio - 1.0) / bin_width);
        bin = std::min(std::max(bin, 0), nbins - 1);
        ++st.counts[static_cast<size_t>(bin)];
        ++st.total;
        if (ratio > 1.75) ++gt175;
        if (ratio > 3.0) ++gt3;
    }
    if (st.total > 0) {
        st.fraction_gt_175 = static_cast<double>(gt175) / st.total;
        st.fraction_gt_3 = static_cast<double>(gt3) / st.total;
    }
    return st;
}

// ---------------------------------------------------------------------------
// Dataset directory: raw little-endian f32 CHW image files plus a JSON index.

inline void save_dataset(const std::string& dir, const std::vector<Scene>& scenes) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json index;
    index["images"] = nlohmann::json::array();
    for (const Scene& s : scenes) {
        const std::string file = "img_" + std::to_string(s.image_id) + ".bin";
        std::ofstream f(fs::path(dir) / file, std::ios::binary);
        if (!f) throw std::runtime_error("dataset: cannot write " + file);
        for (double e : s.image.v) {
            const float x = static_cast<float>(e);
            f.write(reinterpret_cast<const char*>(&x), sizeof(float));
        }
        nlohmann::json boxes = nlohmann::json::array();
        for (const Box& b : s.boxes)
            boxes.push_back({{"class", b.class_id}, {"bbox", {b.x1, b.y1, b.x2, b.y2}}});
        index["images"].push_back({{"id", s.image_id},
                                   {"file", file},
                                   {"height", s.image.dim(1)},
                                   {"width", s.image.dim(2)},
                                   {"boxes", boxes}});
    }
    std::ofstream f(fs::path(dir) / "index.json");
    f << index.dump(1) << "\n";
}

inline std::vector<Scene> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream idx(fs::path(dir) / "index.json");
    if (!idx) throw std::runtime_error("dataset: cannot open " + dir + "/index.json");
    nlohmann::json index;
    idx >> index;
    std::vector<Scene> scenes;
    for (const auto& rec : index["images"]) {
        Scene s;
        s.image_id = rec["id"].get<int>();
        const int h = rec["height"].get<int>(), w = rec["width"].get<int>();
        s.image = Tensor({3, h, w});
        std::ifstream f(fs::path(dir) / rec["file"].get<std::string>(), std::ios::binary);
        if (!f) throw std::runtime_error("dataset: missing image file for id " + std::to_string(s.image_id));
        for (double& e : s.image.v) {
            float x;
            f.read(reinterpret_cast<char*>(&x), sizeof(float));
            e = x;
        }
        if (!f) throw std::runtime_error("dataset: truncated image file for id " + std::to_string(s.image_id));
        for (const auto& bj : rec["boxes"]) {
            Box b{bj["bbox"][0].get<double>(), bj["bbox"][1].get<double>(),
                  bj["bbox"][2].get<double>(), bj["bbox"][3].get<double>(),
                  bj["class"].get<int>()};
            s.boxes.push_back(b);
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace mdet
