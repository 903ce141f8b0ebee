#include "stvg/dynamic_branch.hpp"

#include <cmath>
#include <stdexcept>

#include "stvg/interaction.hpp"

namespace stvg {

namespace {

bool any_unmasked(const std::vector<bool>& mask) {
    for (bool b : mask)
        if (b) return true;
    return false;
}

}  // namespace

DynamicBranch::DynamicBranch(ParamStore& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int d = cfg.d;
    const int dk = d / cfg.heads;
    const int t = cfg.clips;
    const int hw = cfg.grid_h * cfg.grid_w;

    std::vector<int> positions(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) positions[static_cast<size_t>(i)] = i;
    const Tensor pe_t = sine_positions(positions, d);
    std::vector<double> expanded(static_cast<size_t>(t) * hw * d);
    for (int i = 0; i < t; ++i)
        for (int s = 0; s < hw; ++s)
            for (int c = 0; c < d; ++c)
                expanded[(static_cast<size_t>(i) * hw + s) * d + c] =
                    pe_t.data()[static_cast<size_t>(i) * d + c];
    temporal_pe_ = Tensor::from_data({t * hw, d}, std::move(expanded));

    to_site_major_.resize(static_cast<size_t>(t) * hw);
    to_time_major_.resize(static_cast<size_t>(t) * hw);
    for (int s = 0; s < hw; ++s)
        for (int i = 0; i < t; ++i) to_site_major_[static_cast<size_t>(s) * t + i] = i * hw + s;
    for (int i = 0; i < t; ++i)
        for (int s = 0; s < hw; ++s) to_time_major_[static_cast<size_t>(i) * hw + s] = s * t + i;

    for (int i = 0; i < cfg.layers; ++i) {
        const std::string p = "dynamic." + std::to_string(i);
        Layer layer{
            LayerNormParams::create(ps, p + ".ln_temporal", d, cfg.ln_eps),
            MultiHeadAttention::create(ps, p + ".attn_temporal", d, cfg.heads, rng),
            LayerNormParams::create(ps, p + ".ln_spatial", d, cfg.ln_eps),
            MultiHeadAttention::create(ps, p + ".attn_spatial", d, cfg.heads, rng),
            LayerNormParams::create(ps, p + ".ln_text", d, cfg.ln_eps),
            MultiHeadAttention::create(ps, p + ".attn_text", d, cfg.heads, rng),
            CrossProjection{},
            FeedForward::create(ps, p + ".ffn_v", d, d * cfg.ffn_ratio, cfg.ln_eps, rng),
            FeedForward::create(ps, p + ".ffn_l", d, d * cfg.ffn_ratio, cfg.ln_eps, rng),
        };
        layer.cross.w_qv = ps.add(p + ".cross.w_qv", Tensor::from_data({d, dk}, xavier_uniform_data(rng, d, dk)));
        layer.cross.w_kv = ps.add(p + ".cross.w_kv", Tensor::from_data({d, dk}, xavier_uniform_data(rng, d, dk)));
        layer.cross.w_ql = ps.add(p + ".cross.w_ql", Tensor::from_data({d, dk}, xavier_uniform_data(rng, d, dk)));
        layer.cross.w_kl = ps.add(p + ".cross.w_kl", Tensor::from_data({d, dk}, xavier_uniform_data(rng, d, dk)));
        layer.cross.w_vv = ps.add(p + ".cross.w_vv", Tensor::from_data({d, d}, xavier_uniform_data(rng, d, d)));
        layer.cross.w_vl = ps.add(p + ".cross.w_vl", Tensor::from_data({d, d}, xavier_uniform_data(rng, d, d)));
        layers_.push_back(std::move(layer));
    }
}

Tensor DynamicBranch::add_temporal_encoding(const Tensor& volume) const {
    return add(volume, temporal_pe_);
}

Tensor DynamicBranch::divided_self_attention(int layer, const Tensor& volume,
                                             AttentionTrace* trace) const {
    const int t = cfg_.clips;
    const int hw = cfg_.grid_h * cfg_.grid_w;
    if (volume.dim(0) != t * hw || volume.dim(1) != cfg_.d)
        throw std::invalid_argument("divided attention: bad volume shape");
    const Layer& ly = layers_.at(static_cast<size_t>(layer));

    // Temporal pass: each spatial site attends over its T time steps.
    Tensor x = volume;
    {
        const Tensor sm = gather_rows(x, to_site_major_);
        const Tensor h = ly.ln_temporal(sm);
        std::vector<Tensor> maps;
        const Tensor out = ly.attn_temporal.forward(h, h, hw, {}, trace ? &maps : nullptr);
        if (trace)
            for (size_t m = 0; m < maps.size(); ++m)
                trace->add("dynamic." + std::to_string(layer) + ".temporal.h" + std::to_string(m),
                           maps[m]);
        x = add(x, gather_rows(out, to_time_major_));
    }
    // Spatial pass: each time step attends over its HW sites.
    {
        const Tensor h = ly.ln_spatial(x);
        std::vector<Tensor> maps;
        const Tensor out = ly.attn_spatial.forward(h, h, t, {}, trace ? &maps : nullptr);
        if (trace)
            for (size_t m = 0; m < maps.size(); ++m)
                trace->add("dynamic." + std::to_string(layer) + ".spatial.h" + std::to_string(m),
                           maps[m]);
        x = add(x, out);
    }
    return x;
}

Tensor DynamicBranch::text_self_attention(int layer, const Tensor& text,
                                          const std::vector<bool>& mask,
                                          AttentionTrace* trace) const {
    if (text.dim(0) != cfg_.tokens || text.dim(1) != cfg_.d)
        throw std::invalid_argument("text attention: bad shape");
    if (!any_unmasked(mask)) throw std::invalid_argument("text attention: every token masked");
    const Layer& ly = layers_.at(static_cast<size_t>(layer));
    std::vector<bool> key_masked(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) key_masked[i] = !mask[i];
    const Tensor bias = key_padding_bias(1, cfg_.tokens, cfg_.tokens, key_masked);
    const Tensor h = ly.ln_text(text);
    std::vector<Tensor> maps;
    const Tensor out = ly.attn_text.forward(h, h, 1, bias, trace ? &maps : nullptr);
    if (trace)
        for (size_t m = 0; m < maps.size(); ++m)
            trace->add("dynamic." + std::to_string(layer) + ".text.h" + std::to_string(m), maps[m]);
    return add(text, out);
}

std::pair<Tensor, Tensor> DynamicBranch::cross_attention(int layer, const Tensor& f_v,
                                                         const Tensor& f_l,
                                                         const std::vector<bool>& mask,
                                                         AttentionTrace* trace) const {
    const int t = cfg_.clips;
    const int hw = cfg_.grid_h * cfg_.grid_w;
    const int d = cfg_.d;
    const int dk = d / cfg_.heads;
    if (f_v.dim(0) != t * hw || f_v.dim(1) != d)
        throw std::invalid_argument("cross attention: bad visual shape");
    if (f_l.dim(0) != cfg_.tokens || f_l.dim(1) != d)
        throw std::invalid_argument("cross attention: bad text shape");
    const Layer& ly = layers_.at(static_cast<size_t>(layer));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    std::vector<bool> key_masked(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) key_masked[i] = !mask[i];

    // Visual queries per site over time attend to the text tokens.
    const Tensor v_sm = gather_rows(f_v, to_site_major_);
    const Tensor q_v = matmul(v_sm, ly.cross.w_qv);
    const Tensor k_l = matmul(f_l, ly.cross.w_kl);
    const Tensor v_l = matmul(f_l, ly.cross.w_vl);
    Tensor scores_v = mul_scalar(bmm(q_v, repeat_rows(k_l, hw), hw, false, true), scale);
    scores_v = add(scores_v, key_padding_bias(hw, t, cfg_.tokens, key_masked));
    const Tensor attn_v = softmax(scores_v, 1);
    if (trace) trace->add("dynamic." + std::to_string(layer) + ".cross_v2l", attn_v);
    const Tensor ctx_v = bmm(attn_v, repeat_rows(v_l, hw), hw, false, false);
    const Tensor f_v_out = add(f_v, gather_rows(ctx_v, to_time_major_));

    // Text queries attend to the spatially mean-pooled volume.
    const Tensor pooled = mean_pool(reshape(f_v, {t, hw, d}), {1});
    const Tensor k_v = matmul(pooled, ly.cross.w_kv);
    const Tensor v_v = matmul(pooled, ly.cross.w_vv);
    const Tensor q_l = matmul(f_l, ly.cross.w_ql);
    const Tensor scores_l = mul_scalar(matmul(q_l, k_v, false, true), scale);
    const Tensor attn_l = softmax(scores_l, 1);
    if (trace) trace->add("dynamic." + std::to_string(layer) + ".cross_l2v", attn_l);
    const Tensor f_l_out = add(f_l, matmul(attn_l, v_v));

    return {f_v_out, f_l_out};
}

DynamicBranch::LayerState DynamicBranch::layer_forward(int layer, const LayerState& in,
                                                       const std::vector<bool>& mask,
                                                       AttentionTrace* trace) const {
    const Layer& ly = layers_.at(static_cast<size_t>(layer));
    const Tensor v1 = divided_self_attention(layer, in.f_v, trace);
    const Tensor l1 = text_self_attention(layer, in.f_l, mask, trace);
    auto [v2, l2] = cross_attention(layer, v1, l1, mask, trace);
    return {ly.ffn_v(v2), ly.ffn_l(l2)};
}

std::vector<DynamicBranch::LayerState> DynamicBranch::forward(
    const Tensor& volume, const Tensor& text, const std::vector<bool>& mask,
    const std::vector<Tensor>* gate_maps, const InteractionBlocks* inter,
    AttentionTrace* trace) const {
    if (gate_maps) {
        if (!inter) throw std::invalid_argument("dynamic forward: gate maps need interaction blocks");
        if (static_cast<int>(gate_maps->size()) != layer_count())
            throw std::invalid_argument("dynamic forward: need one gate map per layer");
    }
    std::vector<LayerState> states;
    LayerState state{add_temporal_encoding(volume), text};
    for (int i = 0; i < layer_count(); ++i) {
        state = layer_forward(i, state, mask, trace);
        if (gate_maps) state.f_v = inter->static_to_dynamic(i, state.f_v, (*gate_maps)[static_cast<size_t>(i)]);
        states.push_back(state);
    }
    return states;
}

}  // namespace stvg
