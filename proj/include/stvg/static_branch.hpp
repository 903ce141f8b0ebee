#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stvg/config.hpp"
#include "stvg/nn.hpp"
#include "stvg/tensor.hpp"

namespace stvg {

// Collector for post-softmax attention maps; every entry's rows are
// probability distributions.
struct AttentionTrace {
    struct Entry {
        std::string name;
        Tensor weights;
    };
    std::vector<Entry> entries;
    void add(std::string name, const Tensor& w) { entries.push_back({std::move(name), w}); }
};

// Per-frame cross-modal transformer. The encoder fuses one frame's visual
// grid with the text tokens into a joint memory; the decoder refines a shared
// learnable object query against that memory and exposes its cross-attention
// weights over the visual positions.
//
// Frames are processed as independent batch groups: all row operations are
// local to a group, so batched execution is bit-identical to per-frame calls.
class StaticBranch {
public:
    struct EncoderLayer {
        LayerNormParams ln_attn;
        MultiHeadAttention attn;
        FeedForward ffn;
    };
    struct DecoderLayer {
        LayerNormParams ln_q;
        MultiHeadAttention cross;
        FeedForward ffn;
    };

    struct Outputs {
        Tensor memory;                    // {B*(HW+L), d}
        std::vector<Tensor> query_states; // per layer, {B, d}
        std::vector<Tensor> gate_maps;    // per layer, {B, HW}, rows sum to 1
    };

    StaticBranch(ParamStore& ps, const ModelConfig& cfg, Rng& rng);

    // grids: {B*HW, d} projected visual tokens; text: {L, d} embedded tokens.
    // 2D sine encodings go onto the visual tokens, learned per-slot embeddings
    // onto the text tokens, both before layer 1.
    Tensor encode(const Tensor& grids, const Tensor& text, const std::vector<bool>& token_mask,
                  int batches, AttentionTrace* trace = nullptr) const;

    Tensor initial_queries(int batches) const;

    // One decoder layer; returns the updated queries and the layer's
    // head-averaged, visual-only, renormalized attention map {B, HW}.
    std::pair<Tensor, Tensor> decode_layer(int layer, const Tensor& queries, const Tensor& memory,
                                           const std::vector<bool>& token_mask, int batches,
                                           AttentionTrace* trace = nullptr) const;

    Tensor final_norm(const Tensor& queries) const { return dec_final_ln_(queries); }

    // Full stack without any interaction: encode + all decoder layers.
    Outputs run(const Tensor& grids, const Tensor& text, const std::vector<bool>& token_mask,
                int batches, AttentionTrace* trace = nullptr) const;

    int layer_count() const { return static_cast<int>(enc_.size()); }
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    Tensor vis_pos_;    // constant {HW, d}
    Tensor text_pos_;   // learned {L, d}
    Tensor object_query_;  // learned {1, d}, shared across frames
    std::vector<EncoderLayer> enc_;
    std::vector<DecoderLayer> dec_;
    LayerNormParams enc_final_ln_;
    LayerNormParams dec_final_ln_;
};

}  // namespace stvg
