#include "stvg/model.hpp"

#include <stdexcept>

namespace stvg {

GroundingModel::GroundingModel(const ModelConfig& cfg, uint64_t param_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(param_seed);
    embed_table_ = params_.add(
        "embed.table",
        Tensor::from_data({cfg.vocab, cfg.d},
                          normal_data(rng, static_cast<size_t>(cfg.vocab) * cfg.d, 0.0, 0.02)));
    static_proj_ = Linear::create(params_, "static.input_proj", cfg.c_static, cfg.d, rng);
    dynamic_proj_ = Linear::create(params_, "dynamic.input_proj", cfg.c_dynamic, cfg.d, rng);
    static_ = std::make_unique<StaticBranch>(params_, cfg_, rng);
    dynamic_ = std::make_unique<DynamicBranch>(params_, cfg_, rng);
    inter_ = std::make_unique<InteractionBlocks>(params_, cfg_, rng);
    heads_ = std::make_unique<PredictionHeads>(params_, cfg_, rng);
}

ModelInputs GroundingModel::stage_sample(const GroundingSample& s,
                                         const std::vector<int>& frame_idx) const {
    const int hw = cfg_.grid_h * cfg_.grid_w;
    if (s.frame_features.rank() != 4 || s.frame_features.dim(1) != cfg_.grid_h ||
        s.frame_features.dim(2) != cfg_.grid_w || s.frame_features.dim(3) != cfg_.c_static)
        throw std::invalid_argument("stage_sample: frame feature shape mismatch");
    if (s.clip_features.rank() != 4 || s.clip_features.dim(0) != cfg_.clips ||
        s.clip_features.dim(1) != cfg_.grid_h || s.clip_features.dim(2) != cfg_.grid_w ||
        s.clip_features.dim(3) != cfg_.c_dynamic)
        throw std::invalid_argument("stage_sample: clip feature shape mismatch");
    const int tf = s.frame_features.dim(0);

    ModelInputs in;
    std::vector<double> grids;
    grids.reserve(frame_idx.size() * static_cast<size_t>(hw) * cfg_.c_static);
    for (int f : frame_idx) {
        if (f < 0 || f >= tf) throw std::invalid_argument("stage_sample: frame index out of range");
        const double* src = s.frame_features.data() +
                            static_cast<int64_t>(f) * hw * cfg_.c_static;
        grids.insert(grids.end(), src, src + static_cast<int64_t>(hw) * cfg_.c_static);
        in.frame_positions.push_back(f);
        in.frame_to_clip.push_back(static_cast<int>(static_cast<int64_t>(f) * cfg_.clips / tf));
    }
    in.frame_grids = Tensor::from_data({static_cast<int>(frame_idx.size()) * hw, cfg_.c_static},
                                       std::move(grids));
    in.clip_volume = reshape(s.clip_features, {cfg_.clips * hw, cfg_.c_dynamic});
    in.tokens = s.tokens;
    return in;
}

ModelOutputs GroundingModel::forward(const ModelInputs& in, AttentionTrace* trace) const {
    const int b = static_cast<int>(in.frame_positions.size());
    if (b < 1) throw std::invalid_argument("forward: need at least one frame");
    if (static_cast<int>(in.tokens.ids.size()) != cfg_.tokens)
        throw std::invalid_argument("forward: token count mismatch");

    const Tensor text = embed_tokens(in.tokens, embed_table_);
    const Tensor grids = static_proj_(in.frame_grids);
    const Tensor memory = static_->encode(grids, text, in.tokens.mask, b, trace);

    const Tensor volume = dynamic_->add_temporal_encoding(dynamic_proj_(in.clip_volume));

    ModelOutputs out;
    Tensor queries = static_->initial_queries(b);
    DynamicBranch::LayerState dyn{volume, text};
    for (int i = 0; i < cfg_.layers; ++i) {
        auto [q, frame_gate] = static_->decode_layer(i, queries, memory, in.tokens.mask, b, trace);
        queries = q;
        out.query_states.push_back(queries);

        dyn = dynamic_->layer_forward(i, dyn, in.tokens.mask, trace);
        if (!cfg_.no_s2d) {
            const Tensor gate = inter_->frame_maps_to_clip_gate(frame_gate, in.frame_to_clip);
            out.gate_maps.push_back(gate);
            dyn.f_v = inter_->static_to_dynamic(i, dyn.f_v, gate);
        }
        if (!cfg_.no_d2s) {
            queries = inter_->dynamic_to_static(i, queries, dyn.f_v, in.frame_to_clip,
                                                in.frame_positions, trace);
            out.query_states.back() = queries;
        }
    }

    const Tensor qn = static_->final_norm(queries);
    out.boxes = heads_->predict_boxes(qn);
    out.frame_scores = heads_->predict_frame_scores(qn);

    const Tensor f_d = heads_->project_dynamic(dyn.f_v);
    out.score_map = heads_->score_proposals(heads_->build_proposal_map(f_d));
    out.clip_scores = heads_->aux_clip_scores(f_d);
    return out;
}

}  // namespace stvg
