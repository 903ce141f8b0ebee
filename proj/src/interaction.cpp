#include "stvg/interaction.hpp"

#include <stdexcept>

namespace stvg {

InteractionBlocks::InteractionBlocks(ParamStore& ps, const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    const int d = cfg.d;
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string sp = "inter." + std::to_string(i) + ".s2d";
        s2d_.push_back({Linear::create(ps, sp + ".fc", d, d, rng),
                        LayerNormParams::create(ps, sp + ".ln", d, cfg.ln_eps)});
        const std::string dp = "inter." + std::to_string(i) + ".d2s";
        d2s_.push_back({LayerNormParams::create(ps, dp + ".ln_q", d, cfg.ln_eps),
                        MultiHeadAttention::create(ps, dp + ".cross", d, cfg.heads, rng),
                        LayerNormParams::create(ps, dp + ".ln_t", d, cfg.ln_eps),
                        MultiHeadAttention::create(ps, dp + ".temporal", d, cfg.heads, rng)});
    }
}

Tensor InteractionBlocks::static_to_dynamic(int layer, const Tensor& f_v,
                                            const Tensor& gate) const {
    const int t = cfg_.clips;
    const int hw = cfg_.grid_h * cfg_.grid_w;
    if (f_v.rank() != 2 || f_v.dim(0) != t * hw || f_v.dim(1) != cfg_.d)
        throw std::invalid_argument("static_to_dynamic: bad stream shape");
    if (gate.rank() != 2 || gate.dim(0) != t || gate.dim(1) != hw)
        throw std::invalid_argument("static_to_dynamic: bad gate shape");
    const S2d& blk = s2d_.at(static_cast<size_t>(layer));
    const Tensor gate_flat = reshape(gate, {t * hw});
    return blk.ln(add(f_v, row_mul(blk.fc(f_v), gate_flat)));
}

Tensor InteractionBlocks::dynamic_to_static(int layer, const Tensor& queries, const Tensor& f_v,
                                            const std::vector<int>& frame_to_clip,
                                            const std::vector<int>& frame_positions,
                                            AttentionTrace* trace) const {
    const int t = cfg_.clips;
    const int hw = cfg_.grid_h * cfg_.grid_w;
    const int b = queries.dim(0);
    if (static_cast<int>(frame_to_clip.size()) != b ||
        static_cast<int>(frame_positions.size()) != b)
        throw std::invalid_argument("dynamic_to_static: map length mismatch");
    if (f_v.dim(0) != t * hw) throw std::invalid_argument("dynamic_to_static: bad stream shape");
    for (int c : frame_to_clip)
        if (c < 0 || c >= t)
            throw std::invalid_argument("dynamic_to_static: clip index out of range");

    const D2s& blk = d2s_.at(static_cast<size_t>(layer));

    // Step 1: per-frame cross-attention into the frame's clip slab.
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(b) * hw);
    for (int f = 0; f < b; ++f)
        for (int s = 0; s < hw; ++s) idx.push_back(frame_to_clip[static_cast<size_t>(f)] * hw + s);
    const Tensor keys = gather_rows(f_v, idx);
    std::vector<Tensor> maps;
    Tensor q = add(queries,
                   blk.cross.forward(blk.ln_q(queries), keys, b, {}, &maps));
    if (trace)
        for (size_t m = 0; m < maps.size(); ++m)
            trace->add("inter." + std::to_string(layer) + ".d2s.cross.h" + std::to_string(m),
                       maps[m]);

    // Step 2: temporal self-attention across the per-frame queries.
    const Tensor pe = sine_positions(frame_positions, cfg_.d);
    const Tensor h = add(blk.ln_t(q), pe);
    std::vector<Tensor> tmaps;
    const Tensor mixed = blk.temporal.forward(h, h, 1, {}, &tmaps);
    if (trace)
        for (size_t m = 0; m < tmaps.size(); ++m)
            trace->add("inter." + std::to_string(layer) + ".d2s.temporal.h" + std::to_string(m),
                       tmaps[m]);
    return add(q, mixed);
}

Tensor InteractionBlocks::frame_maps_to_clip_gate(const Tensor& frame_maps,
                                                  const std::vector<int>& frame_to_clip) const {
    const int t = cfg_.clips;
    if (frame_maps.rank() != 2 || frame_maps.dim(0) != static_cast<int>(frame_to_clip.size()))
        throw std::invalid_argument("clip gate: shape mismatch");
    std::vector<int> sizes(static_cast<size_t>(t), 0);
    int prev = -1;
    for (int c : frame_to_clip) {
        if (c < prev)
            throw std::invalid_argument("clip gate: frame-to-clip map must be non-decreasing");
        if (c < 0 || c >= t) throw std::invalid_argument("clip gate: clip index out of range");
        ++sizes[static_cast<size_t>(c)];
        prev = c;
    }
    return segment_mean_rows(frame_maps, sizes);
}

std::vector<int> frame_clip_alignment(int frames, int clips) {
    if (frames < 1 || clips < 1)
        throw std::invalid_argument("frame_clip_alignment: counts must be positive");
    std::vector<int> map(static_cast<size_t>(frames));
    for (int t = 0; t < frames; ++t)
        map[static_cast<size_t>(t)] = static_cast<int>(static_cast<int64_t>(t) * clips / frames);
    return map;
}

}  // namespace stvg
