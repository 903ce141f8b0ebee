#include "stvg/static_branch.hpp"

#include <stdexcept>

namespace stvg {

namespace {

bool any_unmasked(const std::vector<bool>& mask) {
    for (bool b : mask)
        if (b) return true;
    return false;
}

}  // namespace

StaticBranch::StaticBranch(ParamStore& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int d = cfg.d;
    vis_pos_ = sine_grid_2d(cfg.grid_h, cfg.grid_w, d);
    text_pos_ = ps.add("static.text_pos",
                       Tensor::from_data({cfg.tokens, d}, normal_data(rng, static_cast<size_t>(cfg.tokens) * d, 0.0, 0.02)));
    object_query_ = ps.add("static.object_query",
                           Tensor::from_data({1, d}, normal_data(rng, static_cast<size_t>(d), 0.0, 0.02)));
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string ep = "static.enc." + std::to_string(i);
        enc_.push_back({LayerNormParams::create(ps, ep + ".ln_attn", d, cfg.ln_eps),
                        MultiHeadAttention::create(ps, ep + ".attn", d, cfg.heads, rng),
                        FeedForward::create(ps, ep + ".ffn", d, d * cfg.ffn_ratio, cfg.ln_eps, rng)});
        const std::string dp = "static.dec." + std::to_string(i);
        dec_.push_back({LayerNormParams::create(ps, dp + ".ln_q", d, cfg.ln_eps),
                        MultiHeadAttention::create(ps, dp + ".cross", d, cfg.heads, rng),
                        FeedForward::create(ps, dp + ".ffn", d, d * cfg.ffn_ratio, cfg.ln_eps, rng)});
    }
    enc_final_ln_ = LayerNormParams::create(ps, "static.enc.final_ln", d, cfg.ln_eps);
    dec_final_ln_ = LayerNormParams::create(ps, "static.dec.final_ln", d, cfg.ln_eps);
}

Tensor StaticBranch::encode(const Tensor& grids, const Tensor& text,
                            const std::vector<bool>& token_mask, int batches,
                            AttentionTrace* trace) const {
    const int hw = cfg_.grid_h * cfg_.grid_w;
    const int l = cfg_.tokens;
    if (grids.dim(0) != batches * hw || grids.dim(1) != cfg_.d)
        throw std::invalid_argument("static encode: bad grid shape");
    if (text.dim(0) != l || text.dim(1) != cfg_.d)
        throw std::invalid_argument("static encode: bad text shape");
    if (static_cast<int>(token_mask.size()) != l)
        throw std::invalid_argument("static encode: bad token mask length");
    if (!any_unmasked(token_mask))
        throw std::invalid_argument("static encode: mask excludes every text token");

    const Tensor vis = add(grids, repeat_rows(vis_pos_, batches));
    const Tensor txt = repeat_rows(add(text, text_pos_), batches);

    // Interleave per frame: [vis_0; txt; vis_1; txt; ...].
    const int seq = hw + l;
    std::vector<int> order(static_cast<size_t>(batches) * seq);
    for (int f = 0; f < batches; ++f) {
        for (int i = 0; i < hw; ++i) order[static_cast<size_t>(f) * seq + i] = f * hw + i;
        for (int i = 0; i < l; ++i) order[static_cast<size_t>(f) * seq + hw + i] = batches * hw + f * l + i;
    }
    Tensor x = gather_rows(concat_rows(vis, txt), order);

    std::vector<bool> key_masked(static_cast<size_t>(seq), false);
    for (int i = 0; i < l; ++i) key_masked[static_cast<size_t>(hw + i)] = !token_mask[static_cast<size_t>(i)];
    const Tensor bias = key_padding_bias(batches, seq, seq, key_masked);

    for (size_t i = 0; i < enc_.size(); ++i) {
        const EncoderLayer& layer = enc_[i];
        std::vector<Tensor> maps;
        const Tensor h = layer.ln_attn(x);
        x = add(x, layer.attn.forward(h, h, batches, bias, trace ? &maps : nullptr));
        if (trace)
            for (size_t m = 0; m < maps.size(); ++m)
                trace->add("static.enc." + std::to_string(i) + ".self.h" + std::to_string(m), maps[m]);
        x = layer.ffn(x);
    }
    return enc_final_ln_(x);
}

Tensor StaticBranch::initial_queries(int batches) const {
    return repeat_rows(object_query_, batches);
}

std::pair<Tensor, Tensor> StaticBranch::decode_layer(int layer, const Tensor& queries,
                                                     const Tensor& memory,
                                                     const std::vector<bool>& token_mask,
                                                     int batches, AttentionTrace* trace) const {
    const int hw = cfg_.grid_h * cfg_.grid_w;
    const int l = cfg_.tokens;
    const int seq = hw + l;
    if (layer < 0 || layer >= static_cast<int>(dec_.size()))
        throw std::invalid_argument("static decode: layer index out of range");
    if (queries.dim(0) != batches || memory.dim(0) != batches * seq)
        throw std::invalid_argument("static decode: shape mismatch");

    std::vector<bool> key_masked(static_cast<size_t>(seq), false);
    for (int i = 0; i < l; ++i) key_masked[static_cast<size_t>(hw + i)] = !token_mask[static_cast<size_t>(i)];
    const Tensor bias = key_padding_bias(batches, 1, seq, key_masked);

    const DecoderLayer& dl = dec_[static_cast<size_t>(layer)];
    std::vector<Tensor> maps;
    Tensor q = add(queries, dl.cross.forward(dl.ln_q(queries), memory, batches, bias, &maps));
    q = dl.ffn(q);

    if (trace)
        for (size_t m = 0; m < maps.size(); ++m)
            trace->add("static.dec." + std::to_string(layer) + ".cross.h" + std::to_string(m), maps[m]);

    // Head-averaged weights, visual block only, renormalized to sum 1.
    Tensor avg = maps[0];
    for (size_t m = 1; m < maps.size(); ++m) avg = add(avg, maps[m]);
    avg = mul_scalar(avg, 1.0 / static_cast<double>(maps.size()));
    Tensor vis_part = slice_cols(avg, 0, hw);
    Tensor gate = row_div(vis_part, sum_cols(vis_part));
    if (trace) trace->add("static.dec." + std::to_string(layer) + ".gate", gate);
    return {q, gate};
}

StaticBranch::Outputs StaticBranch::run(const Tensor& grids, const Tensor& text,
                                        const std::vector<bool>& token_mask, int batches,
                                        AttentionTrace* trace) const {
    Outputs out;
    out.memory = encode(grids, text, token_mask, batches, trace);
    Tensor q = initial_queries(batches);
    for (int i = 0; i < layer_count(); ++i) {
        auto [q2, gate] = decode_layer(i, q, out.memory, token_mask, batches, trace);
        q = q2;
        out.query_states.push_back(q);
        out.gate_maps.push_back(gate);
    }
    return out;
}

}  // namespace stvg
