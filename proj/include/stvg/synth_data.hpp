#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stvg/box.hpp"
#include "stvg/config.hpp"
#include "stvg/rng.hpp"
#include "stvg/tensor.hpp"

namespace stvg {

// One entity moving inside its own horizontal band, optionally performing a
// discrete action during a frame span.
struct EntityTrack {
    int attribute = 0;
    int action = -1;
    int action_start = 0;
    int action_end = -1;  // inclusive; empty when action < 0
    std::vector<Box> boxes;  // one per frame
};

struct SceneProgram {
    uint64_t seed = 0;
    int frames = 0;
    std::vector<EntityTrack> entities;
    int target = 0;
};

struct TokenSequence {
    std::vector<int> ids;
    std::vector<bool> mask;  // false = padding, excluded from attention
};

// One synthetic video paired with its query and ground truth. Frame grids
// carry attribute channels only; clip volumes additionally carry action
// channels that are live only inside the acting entity's span.
struct GroundingSample {
    uint64_t id = 0;
    uint64_t seed = 0;
    Tensor frame_features;  // {frames, H, W, c_static}
    Tensor clip_features;   // {clips, H, W, c_dynamic}
    TokenSequence tokens;
    Tensor gt_boxes;        // {frames, 4} target box per frame (cx, cy, w, h)
    int span_start = 0;     // ground-truth span in frames, inclusive
    int span_end = 0;
};

struct DatasetMeta {
    int frames = 0, clips = 0, grid_h = 0, grid_w = 0;
    int c_static = 0, c_dynamic = 0, tokens = 0, vocab = 0;
};

struct Dataset {
    DatasetMeta meta;
    std::vector<GroundingSample> samples;
};

// Token id layout: [0, n_attributes) attributes, then actions, then function
// words.
int attribute_token(const GenConfig& cfg, int attribute);
int action_token(const GenConfig& cfg, int action);
int function_token(const GenConfig& cfg, int index);
int vocab_size(const GenConfig& cfg);

SceneProgram generate_program(uint64_t seed, const GenConfig& cfg);
GroundingSample generate_sample(uint64_t seed, const GenConfig& cfg);
Dataset generate_dataset(const GenConfig& cfg);

DatasetMeta dataset_meta(const GenConfig& cfg);

// Trainable row lookup; throws on id overflow. Gradients reach only the rows
// that were looked up; duplicate ids share the same row.
Tensor embed_tokens(const TokenSequence& tokens, const Tensor& table);

void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

// Probe helpers for solvability checks.
int cell_of_point(double x, double y, int grid_h, int grid_w);
int center_cell(const Box& b, int grid_h, int grid_w);
// First-max cell of one channel of one frame grid ({frames,H,W,c} layout).
int argmax_cell(const Tensor& frame_features, int frame, int channel);

}  // namespace stvg
