#pragma once

#include <algorithm>
#include <string>
#include <tuple>

namespace ocular {

// Axis-aligned bounding box in center/size convention. Dataset boxes are
// normalized to [0,1] relative to the image; the geometry below works in any
// consistent unit.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    double x0() const { return cx - w / 2; }
    double y0() const { return cy - h / 2; }
    double x1() const { return cx + w / 2; }
    double y1() const { return cy + h / 2; }
    double area() const { return w * h; }
};

struct Detection {
    Box box;
    int class_id = 0;       // 0 = iris, 1 = periocular
    double confidence = 0;  // in [0,1]
};

// Intersection over union of two boxes; 0 when disjoint. Operands are put in
// a canonical order first so iou(a,b) == iou(b,a) holds bitwise even when
// the compiler contracts the arithmetic into fused multiply-adds.
inline double iou(const Box& a, const Box& b) {
    auto key = [](const Box& x) { return std::tie(x.cx, x.cy, x.w, x.h); };
    const Box& p = key(a) <= key(b) ? a : b;
    const Box& q = key(a) <= key(b) ? b : a;
    double ix = std::min(p.x1(), q.x1()) - std::max(p.x0(), q.x0());
    double iy = std::min(p.y1(), q.y1()) - std::max(p.y0(), q.y0());
    if (ix <= 0 || iy <= 0) return 0.0;
    double inter = ix * iy;
    double uni = p.area() + q.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

}  // namespace ocular
