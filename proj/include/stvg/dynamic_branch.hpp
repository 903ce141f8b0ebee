#pragma once

#include <utility>
#include <vector>

#include "stvg/config.hpp"
#include "stvg/nn.hpp"
#include "stvg/static_branch.hpp"  // AttentionTrace
#include "stvg/tensor.hpp"

namespace stvg {

class InteractionBlocks;

// Space-time cross-modal transformer over the clip volume. The volume is a
// {T*HW, d} matrix in t-major row order; self-attention over the volume is
// divided into a temporal pass (per spatial site) and a spatial pass (per
// time step). Visual/text cross-attention follows the single-head form with
// reduced query/key width d_k and full-width values, residual without output
// projection; the text-side keys come from the spatially mean-pooled volume.
class DynamicBranch {
public:
    struct CrossProjection {
        Tensor w_qv, w_kv, w_ql, w_kl;  // {d, d_k}
        Tensor w_vv, w_vl;              // {d, d}
    };
    struct Layer {
        LayerNormParams ln_temporal;
        MultiHeadAttention attn_temporal;
        LayerNormParams ln_spatial;
        MultiHeadAttention attn_spatial;
        LayerNormParams ln_text;
        MultiHeadAttention attn_text;
        CrossProjection cross;
        FeedForward ffn_v;
        FeedForward ffn_l;
    };
    struct LayerState {
        Tensor f_v;  // {T*HW, d}
        Tensor f_l;  // {L, d}
    };

    DynamicBranch(ParamStore& ps, const ModelConfig& cfg, Rng& rng);

    // Temporal attention per site then spatial attention per time step, each
    // residual with pre-norm. The temporal sine encoding is NOT applied here;
    // forward() adds it once before layer 1.
    Tensor divided_self_attention(int layer, const Tensor& volume,
                                  AttentionTrace* trace = nullptr) const;
    Tensor text_self_attention(int layer, const Tensor& text, const std::vector<bool>& mask,
                               AttentionTrace* trace = nullptr) const;
    // Both directions read the same pre-update inputs.
    std::pair<Tensor, Tensor> cross_attention(int layer, const Tensor& f_v, const Tensor& f_l,
                                              const std::vector<bool>& mask,
                                              AttentionTrace* trace = nullptr) const;

    LayerState layer_forward(int layer, const LayerState& in, const std::vector<bool>& mask,
                             AttentionTrace* trace = nullptr) const;

    // Full stack. volume is the projected clip feature matrix {T*HW, d};
    // when gate maps are provided (one {T, HW} per layer) the
    // static-to-dynamic block of `inter` is applied to F_v after each layer.
    std::vector<LayerState> forward(const Tensor& volume, const Tensor& text,
                                    const std::vector<bool>& mask,
                                    const std::vector<Tensor>* gate_maps = nullptr,
                                    const InteractionBlocks* inter = nullptr,
                                    AttentionTrace* trace = nullptr) const;

    Tensor add_temporal_encoding(const Tensor& volume) const;

    int layer_count() const { return static_cast<int>(layers_.size()); }
    const ModelConfig& config() const { return cfg_; }
    const Layer& layer(int i) const { return layers_.at(static_cast<size_t>(i)); }

private:
    ModelConfig cfg_;
    Tensor temporal_pe_;  // constant {T*HW, d}, row (t,s) carries the encoding of t
    std::vector<int> to_site_major_;  // row permutation (t,s) -> (s,t)
    std::vector<int> to_time_major_;
    std::vector<Layer> layers_;
};

}  // namespace stvg
