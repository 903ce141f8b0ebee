#pragma once

#include <utility>
#include <vector>

#include "stvg/box.hpp"
#include "stvg/config.hpp"
#include "stvg/nn.hpp"
#include "stvg/tensor.hpp"

namespace stvg {

struct TemporalSpan {
    int start = 0;  // clip indices, inclusive, start <= end
    int end = 0;
};

// Prediction heads. Static side: per-frame box regression (3-layer MLP,
// sigmoid-bounded center-size output) and an inside-moment frame score.
// Dynamic side: 2D temporal-proposal score map over clip pairs plus per-clip
// auxiliary scores.
class PredictionHeads {
public:
    PredictionHeads(ParamStore& ps, const ModelConfig& cfg, Rng& rng);

    // {B, d} final query states -> {B, 4} boxes in (0,1)^4.
    Tensor predict_boxes(const Tensor& queries) const;
    // {B, d} -> {B} probabilities.
    Tensor predict_frame_scores(const Tensor& queries) const;

    // {T*HW, d} final dynamic stream -> {T, d_m} clip descriptors
    // (spatial mean pool, LayerNorm, FC projection).
    Tensor project_dynamic(const Tensor& f_v_final) const;

    // {T, d_m} -> {T*T, d_m}; cell (i,j) is the mean of rows i..j for i <= j
    // and exact zero below the diagonal.
    Tensor build_proposal_map(const Tensor& f_d) const;

    // {T*T, d_m} -> {T*T} sigmoid scores; invalid (i > j) cells forced to 0.
    Tensor score_proposals(const Tensor& proposal_map) const;

    // {T, d_m} -> {T} probabilities (3-layer MLP).
    Tensor aux_clip_scores(const Tensor& f_d) const;

    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    Linear bbox1_, bbox2_, bbox3_;
    Linear frame_score_;
    LayerNormParams dyn_ln_;
    Linear dyn_proj_;
    struct Conv {
        Tensor w, b;
    };
    std::vector<Conv> convs_;  // hidden 3x3 convs
    Conv conv_out_;            // 1x1 -> 1
    Linear aux1_, aux2_, aux3_;
    Tensor tri_mask_;  // constant {T*T, 1}: 1 on i <= j, 0 elsewhere
};

// Argmax over valid (i <= j) cells; ties break to the smallest start, then
// the smallest end.
TemporalSpan select_span(const std::vector<double>& score_map, int clips);

// Final tube assembly: keeps the frames whose clip lies inside the span and
// converts the span to frame and second units.
struct AssembledPrediction {
    TemporalSpan span;
    int span_start_frame = 0, span_end_frame = 0;
    double span_start_sec = 0, span_end_sec = 0;
    std::vector<int> tube_frames;
    std::vector<Box> tube_boxes;
};

AssembledPrediction assemble_prediction(const std::vector<Box>& boxes_per_frame,
                                        const TemporalSpan& span, double clip_duration,
                                        const std::vector<int>& frame_to_clip);

}  // namespace stvg
