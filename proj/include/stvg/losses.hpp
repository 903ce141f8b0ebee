#pragma once

#include <vector>

#include "stvg/tensor.hpp"

namespace stvg {

struct LossWeights {
    double l1 = 5.0;
    double giou = 2.0;
    double aux_s = 0.5;
    double tg = 5.0;
    double aux_d = 1.0;
};

struct LossBreakdown {
    double l1 = 0, giou = 0, aux_s = 0, tg = 0, aux_d = 0, total = 0;
};

// Mean |pred - gt| over the four coordinates of the masked rows only.
// Throws when the mask selects nothing.
Tensor l1_box_loss(const Tensor& pred_boxes, const Tensor& gt_boxes,
                   const std::vector<int>& masked_rows);

// Mean (1 - GIoU) over masked rows; boxes are {n, 4} center-size rows.
// Degenerate areas are floored at 1e-8.
Tensor giou_loss_rows(const Tensor& pred_boxes, const Tensor& gt_boxes,
                      const std::vector<int>& masked_rows);
// Single-pair convenience form, {1,4} x {1,4} -> scalar in [0, 2].
Tensor giou_loss(const Tensor& pred_box, const Tensor& gt_box);

// Flattened {T*T} ground-truth map: inclusive-count temporal IoU between each
// valid proposal (i <= j) and the span, zero below the diagonal.
Tensor iou_target_map(int span_start, int span_end, int clips);

// Binary cross-entropy between score map and target over valid (i <= j)
// cells only, scores clamped to [1e-7, 1 - 1e-7].
Tensor temporal_grounding_loss(const Tensor& score_map, const Tensor& target_map, int clips);

// Masked mean negative log-probability; positions outside the mask are never
// read. Throws on an empty mask.
Tensor temporal_attentive_loss(const Tensor& probs, const std::vector<int>& masked_idx);

struct TotalLossInputs {
    Tensor pred_boxes;    // {n, 4}
    Tensor gt_boxes;      // {n, 4} constant
    Tensor frame_scores;  // {n}
    Tensor score_map;     // {T*T}
    Tensor target_map;    // {T*T} constant
    Tensor clip_scores;   // {T}
    std::vector<int> masked_frames;  // in-span rows of the sampled frames
    std::vector<int> masked_clips;   // in-span clip indices
    int clips = 0;
};

struct TotalLoss {
    Tensor value;
    LossBreakdown parts;
};

TotalLoss total_loss(const TotalLossInputs& in, const LossWeights& w);

}  // namespace stvg
