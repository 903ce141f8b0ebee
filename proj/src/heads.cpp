#include "stvg/heads.hpp"

#include <stdexcept>

namespace stvg {

PredictionHeads::PredictionHeads(ParamStore& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int d = cfg.d, dm = cfg.d_m;
    bbox1_ = Linear::create(ps, "heads.bbox.fc1", d, d, rng);
    bbox2_ = Linear::create(ps, "heads.bbox.fc2", d, d, rng);
    bbox3_ = Linear::create(ps, "heads.bbox.fc3", d, 4, rng);
    frame_score_ = Linear::create(ps, "heads.frame_score", d, 1, rng);
    dyn_ln_ = LayerNormParams::create(ps, "heads.dyn_ln", d, cfg.ln_eps);
    dyn_proj_ = Linear::create(ps, "heads.dyn_proj", d, dm, rng);
    for (int i = 0; i < cfg.conv_layers; ++i) {
        Conv c;
        c.w = ps.add("heads.conv" + std::to_string(i) + ".w",
                     Tensor::from_data({dm, dm * 9}, xavier_uniform_data(rng, dm * 9, dm)));
        c.b = ps.add("heads.conv" + std::to_string(i) + ".b", Tensor::zeros({dm}));
        convs_.push_back(c);
    }
    conv_out_.w = ps.add("heads.conv_out.w",
                         Tensor::from_data({1, dm}, xavier_uniform_data(rng, dm, 1)));
    conv_out_.b = ps.add("heads.conv_out.b", Tensor::zeros({1}));
    aux1_ = Linear::create(ps, "heads.aux.fc1", dm, dm, rng);
    aux2_ = Linear::create(ps, "heads.aux.fc2", dm, dm, rng);
    aux3_ = Linear::create(ps, "heads.aux.fc3", dm, 1, rng);

    const int t = cfg.clips;
    std::vector<double> mask(static_cast<size_t>(t) * t, 0.0);
    for (int i = 0; i < t; ++i)
        for (int j = i; j < t; ++j) mask[static_cast<size_t>(i) * t + j] = 1.0;
    tri_mask_ = Tensor::from_data({t * t, 1}, std::move(mask));
}

Tensor PredictionHeads::predict_boxes(const Tensor& queries) const {
    return sigmoid(bbox3_(relu(bbox2_(relu(bbox1_(queries))))));
}

Tensor PredictionHeads::predict_frame_scores(const Tensor& queries) const {
    return reshape(sigmoid(frame_score_(queries)), {queries.dim(0)});
}

Tensor PredictionHeads::project_dynamic(const Tensor& f_v_final) const {
    const int t = cfg_.clips;
    const int hw = cfg_.grid_h * cfg_.grid_w;
    if (f_v_final.dim(0) != t * hw || f_v_final.dim(1) != cfg_.d)
        throw std::invalid_argument("project_dynamic: bad stream shape");
    const Tensor pooled = mean_pool(reshape(f_v_final, {t, hw, cfg_.d}), {1});
    return dyn_proj_(dyn_ln_(pooled));
}

Tensor PredictionHeads::build_proposal_map(const Tensor& f_d) const {
    if (f_d.dim(0) != cfg_.clips || f_d.dim(1) != cfg_.d_m)
        throw std::invalid_argument("build_proposal_map: bad clip descriptor shape");
    return pool_segments(f_d);
}

Tensor PredictionHeads::score_proposals(const Tensor& proposal_map) const {
    const int t = cfg_.clips;
    if (proposal_map.dim(0) != t * t || proposal_map.dim(1) != cfg_.d_m)
        throw std::invalid_argument("score_proposals: bad map shape");
    Tensor x = proposal_map;
    for (size_t i = 0; i < convs_.size(); ++i) {
        x = conv2d_grid(x, convs_[i].w, convs_[i].b, t, t, 3, 3);
        x = relu(x);
    }
    x = conv2d_grid(x, conv_out_.w, conv_out_.b, t, t, 1, 1);
    x = mul(sigmoid(x), tri_mask_);
    return reshape(x, {t * t});
}

Tensor PredictionHeads::aux_clip_scores(const Tensor& f_d) const {
    if (f_d.dim(0) != cfg_.clips || f_d.dim(1) != cfg_.d_m)
        throw std::invalid_argument("aux_clip_scores: bad clip descriptor shape");
    return reshape(sigmoid(aux3_(relu(aux2_(relu(aux1_(f_d)))))), {cfg_.clips});
}

TemporalSpan select_span(const std::vector<double>& score_map, int clips) {
    if (static_cast<int>(score_map.size()) != clips * clips)
        throw std::invalid_argument("select_span: bad score map size");
    if (clips < 1) throw std::invalid_argument("select_span: no clips");
    TemporalSpan best{0, 0};
    double best_v = score_map[0];
    for (int i = 0; i < clips; ++i)
        for (int j = i; j < clips; ++j) {
            const double v = score_map[static_cast<size_t>(i) * clips + j];
            if (v > best_v) {
                best_v = v;
                best = {i, j};
            }
        }
    return best;
}

AssembledPrediction assemble_prediction(const std::vector<Box>& boxes_per_frame,
                                        const TemporalSpan& span, double clip_duration,
                                        const std::vector<int>& frame_to_clip) {
    if (span.start > span.end) throw std::invalid_argument("assemble_prediction: empty span");
    if (boxes_per_frame.size() != frame_to_clip.size())
        throw std::invalid_argument("assemble_prediction: box/map length mismatch");
    AssembledPrediction out;
    out.span = span;
    out.span_start_sec = span.start * clip_duration;
    out.span_end_sec = (span.end + 1) * clip_duration;
    out.span_start_frame = -1;
    for (size_t t = 0; t < frame_to_clip.size(); ++t) {
        const int c = frame_to_clip[t];
        if (c >= span.start && c <= span.end) {
            if (out.span_start_frame < 0) out.span_start_frame = static_cast<int>(t);
            out.span_end_frame = static_cast<int>(t);
            out.tube_frames.push_back(static_cast<int>(t));
            out.tube_boxes.push_back(boxes_per_frame[t]);
        }
    }
    if (out.span_start_frame < 0)
        throw std::invalid_argument("assemble_prediction: span covers no frame");
    return out;
}

}  // namespace stvg
