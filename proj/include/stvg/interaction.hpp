#pragma once

#include <vector>

#include "stvg/config.hpp"
#include "stvg/nn.hpp"
#include "stvg/static_branch.hpp"
#include "stvg/tensor.hpp"

namespace stvg {

// The two per-layer exchange blocks between the branches: spatial gating of
// the dynamic stream by static decoder attention, and enrichment of the
// static object queries with clip-level dynamic context.
class InteractionBlocks {
public:
    struct S2d {
        Linear fc;
        LayerNormParams ln;
    };
    struct D2s {
        LayerNormParams ln_q;
        MultiHeadAttention cross;
        LayerNormParams ln_t;
        MultiHeadAttention temporal;
    };

    InteractionBlocks(ParamStore& ps, const ModelConfig& cfg, Rng& rng);

    // LayerNorm(F_v + gate * FC(F_v)); the gate ({T, HW}, rows summing to 1)
    // broadcasts across the channel dimension.
    Tensor static_to_dynamic(int layer, const Tensor& f_v, const Tensor& gate) const;

    // Step 1: each query cross-attends (residual) to the HW visual vectors of
    // its clip. Step 2: one residual temporal self-attention mixes the
    // queries across frames, with the sine encoding of each frame position
    // added to the attention input.
    Tensor dynamic_to_static(int layer, const Tensor& queries, const Tensor& f_v,
                             const std::vector<int>& frame_to_clip,
                             const std::vector<int>& frame_positions,
                             AttentionTrace* trace = nullptr) const;

    // Mean of per-frame decoder attention maps over the frames mapped into
    // each clip; clips that received no frame get a zero row (which makes the
    // s2d block degenerate to a plain LayerNorm there).
    Tensor frame_maps_to_clip_gate(const Tensor& frame_maps,
                                   const std::vector<int>& frame_to_clip) const;

    int layer_count() const { return static_cast<int>(s2d_.size()); }

private:
    ModelConfig cfg_;
    std::vector<S2d> s2d_;
    std::vector<D2s> d2s_;
};

// t -> floor(t * clips / frames); surjective when frames >= clips.
std::vector<int> frame_clip_alignment(int frames, int clips);

}  // namespace stvg
