#pragma once

#include <algorithm>

namespace mdet {

// Axis-aligned box in image pixels, corners exclusive of nothing: width is
// x2 - x1 exactly. Coordinates are continuous.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;
    int class_id = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double center_x() const { return 0.5 * (x1 + x2); }
    double center_y() const { return 0.5 * (y1 + y2); }
    double area() const { return width() * height(); }
    bool valid() const { return x2 > x1 && y2 > y1; }
};

inline double iou(const Box& a, const Box& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

// Final pipeline output: a scored, classed box tagged with the lattice layer
// it came from.
struct Detection {
    Box box;
    double score = 0.0;
    int layer_r = 0;
    int layer_c = 0;
};

}  // namespace mdet
