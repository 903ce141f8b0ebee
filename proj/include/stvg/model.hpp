#pragma once

#include <memory>
#include <vector>

#include "stvg/config.hpp"
#include "stvg/dynamic_branch.hpp"
#include "stvg/heads.hpp"
#include "stvg/interaction.hpp"
#include "stvg/nn.hpp"
#include "stvg/static_branch.hpp"
#include "stvg/synth_data.hpp"
#include "stvg/tensor.hpp"

namespace stvg {

// One sample staged for a forward pass: raw features of the sampled frames
// plus the clip volume, as graph constants.
struct ModelInputs {
    Tensor frame_grids;   // {n_frames*HW, c_static}
    Tensor clip_volume;   // {T*HW, c_dynamic}
    TokenSequence tokens;
    std::vector<int> frame_positions;  // video frame index per sampled frame
    std::vector<int> frame_to_clip;    // clip index per sampled frame (non-decreasing)
};

struct ModelOutputs {
    Tensor boxes;         // {n_frames, 4}
    Tensor frame_scores;  // {n_frames}
    Tensor score_map;     // {T*T}, zero below the diagonal
    Tensor clip_scores;   // {T}
    std::vector<Tensor> query_states;  // per layer {n_frames, d}
    std::vector<Tensor> gate_maps;     // per layer {T, HW} (empty when s2d is off)
};

// Two cross-modal branches exchanging information once per layer depth:
// static decoder layer i runs first and provides the spatial gate for dynamic
// layer i; the enriched dynamic stream then feeds back into the object
// queries before static layer i+1.
class GroundingModel {
public:
    GroundingModel(const ModelConfig& cfg, uint64_t param_seed);

    GroundingModel(const GroundingModel&) = delete;
    GroundingModel& operator=(const GroundingModel&) = delete;

    ModelOutputs forward(const ModelInputs& in, AttentionTrace* trace = nullptr) const;

    ModelInputs stage_sample(const GroundingSample& s, const std::vector<int>& frame_idx) const;

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    const StaticBranch& static_branch() const { return *static_; }
    const DynamicBranch& dynamic_branch() const { return *dynamic_; }
    const InteractionBlocks& interaction() const { return *inter_; }
    const PredictionHeads& heads() const { return *heads_; }
    const Tensor& embedding_table() const { return embed_table_; }
    Tensor project_frames(const Tensor& raw_grids) const { return static_proj_(raw_grids); }
    Tensor project_clips(const Tensor& raw_volume) const { return dynamic_proj_(raw_volume); }

private:
    ModelConfig cfg_;
    ParamStore params_;
    Tensor embed_table_;
    Linear static_proj_;
    Linear dynamic_proj_;
    std::unique_ptr<StaticBranch> static_;
    std::unique_ptr<DynamicBranch> dynamic_;
    std::unique_ptr<InteractionBlocks> inter_;
    std::unique_ptr<PredictionHeads> heads_;
};

}  // namespace stvg
