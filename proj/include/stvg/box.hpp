#pragma once

namespace stvg {

// Normalized center-size box.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;
};

struct Corners {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

inline Corners to_corners(const Box& b) {
    return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

}  // namespace stvg
