#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "stvg/box.hpp"

namespace stvg {

// Intersection over union in corner space.
double box_iou(const Box& a, const Box& b);

struct EvalRecord {
    uint64_t id = 0;
    double viou = 0.0;
    std::vector<double> frame_iou;  // per frame of the span intersection
};

// Per-frame box IoU summed over the span intersection, divided by the span
// union (inclusive frame counts). Tubes are indexed relative to their span
// start. Throws on an empty ground-truth span.
double viou(const std::vector<Box>& pred_tube, int pred_start, int pred_end,
            const std::vector<Box>& gt_tube, int gt_start, int gt_end);

struct Aggregates {
    double mean_viou = 0.0;
    double at_03 = 0.0;  // fraction with viou strictly above 0.3
    double at_05 = 0.0;
};

Aggregates aggregate(const std::vector<EvalRecord>& records);

void write_eval_report(std::ostream& os, const std::vector<EvalRecord>& records,
                       const Aggregates& agg);

}  // namespace stvg
