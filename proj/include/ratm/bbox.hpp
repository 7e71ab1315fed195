#pragma once

#include <algorithm>

namespace ratm {

// Axis-aligned rectangle in pixel coordinates, continuous-valued.
struct BBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x_min + x_max); }
    double cy() const { return 0.5 * (y_min + y_max); }
};

inline double iou(const BBox& a, const BBox& b) {
    double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    double inter = std::max(0.0, ix) * std::max(0.0, iy);
    double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace ratm
