#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "stvg/config.hpp"
#include "stvg/losses.hpp"
#include "stvg/metrics.hpp"
#include "stvg/model.hpp"
#include "stvg/synth_data.hpp"

namespace stvg {

// Adaptive-moment optimizer with decoupled weight decay; parameter traversal
// follows registration order so updates are reproducible.
class AdamW {
public:
    AdamW(double lr, double beta1, double beta2, double eps, double weight_decay);
    void step(ParamStore& params);
    int64_t steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Evenly spaced frame indices with a per-pass offset; the union over
// pass_count() passes covers every frame exactly once.
std::vector<int> uniform_sample_frames(int video_frames, int n, int pass_index);
int pass_count(int video_frames, int n);

struct Prediction {
    uint64_t sample_id = 0;
    TemporalSpan span;
    int span_start_frame = 0, span_end_frame = 0;
    double span_start_sec = 0, span_end_sec = 0;
    std::vector<int> tube_frames;
    std::vector<Box> tube_boxes;
    std::vector<Box> boxes;            // one per video frame (pass-merged)
    std::vector<double> frame_scores;  // one per video frame (pass-merged)
    std::vector<double> clip_scores;
    std::vector<double> score_map;  // {T*T}
};

struct TrainResult {
    std::vector<double> loss_history;
    std::vector<LossBreakdown> breakdown_history;
};

struct TrainRun {
    std::shared_ptr<GroundingModel> model;
    TrainResult result;
    Rng rng;  // state after training, stored into checkpoints
    TrainRun() : rng(0) {}
};

// Per-sample loss assembly shared by training and the gradient-fidelity
// checks. Throws if no sampled frame falls inside the ground-truth span.
TotalLoss sample_loss(const GroundingModel& model, const ModelOutputs& out,
                      const GroundingSample& s, const ModelInputs& in, const LossWeights& w);

TrainRun run_training(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& data,
                      std::ostream* log);

Prediction infer(const GroundingModel& model, const GroundingSample& s, int frames_per_pass);

// Merges per-pass boxes/scores by averaging entries for frames sampled by
// more than one pass.
void merge_pass_outputs(const std::vector<std::vector<int>>& pass_frames,
                        const std::vector<std::vector<Box>>& pass_boxes,
                        const std::vector<std::vector<double>>& pass_scores, int video_frames,
                        std::vector<Box>* boxes, std::vector<double>* scores);

struct EvalReport {
    std::vector<EvalRecord> records;
    Aggregates aggregates;
};

EvalReport evaluate(const GroundingModel& model, const Dataset& data, int frames_per_pass,
                    std::vector<Prediction>* predictions = nullptr);

// Checkpoints: parameters keyed by canonical path, config snapshots, step
// counter and generator state. Round-trips bit-exactly.
struct Checkpoint {
    std::string model_config_text;
    std::string train_config_text;
    uint64_t step = 0;
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint make_checkpoint(const GroundingModel& model, const TrainConfig& tcfg, uint64_t step,
                           const Rng& rng);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);
// Builds the model described by the checkpoint's config and loads weights.
std::shared_ptr<GroundingModel> model_from_checkpoint(const Checkpoint& ck);

}  // namespace stvg
