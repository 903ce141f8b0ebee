#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stvg {

// Flat `key = value` text files; '#' starts a comment. Order preserved.
class KeyValues {
public:
    static KeyValues parse(const std::string& text);
    static KeyValues load(const std::string& path);

    void set(const std::string& key, const std::string& value);
    std::optional<std::string> consume(const std::string& key);
    bool empty() const { return items_.size() == consumed_; }
    std::vector<std::string> remaining_keys() const;

    std::string to_text() const;

    int consume_int(const std::string& key, int fallback);
    uint64_t consume_u64(const std::string& key, uint64_t fallback);
    double consume_double(const std::string& key, double fallback);
    bool consume_bool(const std::string& key, bool fallback);
    std::string consume_string(const std::string& key, const std::string& fallback);

private:
    struct Item {
        std::string key, value;
        bool consumed = false;
    };
    std::vector<Item> items_;
    size_t consumed_ = 0;
};

struct ModelConfig {
    int frames = 16;      // frames per video seen by the static branch (T_f)
    int clips = 8;        // clip count for the dynamic branch (T)
    int grid_h = 4;
    int grid_w = 4;
    int tokens = 6;       // query length (L)
    int d = 32;           // shared channel width
    int d_m = 16;         // proposal-map channel width
    int layers = 2;       // encoder/decoder/STCMT depth (N)
    int heads = 2;
    int ffn_ratio = 4;
    int conv_layers = 2;  // hidden 3x3 convs in the score head
    int c_static = 4;     // raw per-frame feature channels
    int c_dynamic = 8;    // raw per-clip feature channels
    int vocab = 12;
    double ln_eps = 1e-5;
    double clip_duration = 1.0;  // seconds per clip when reporting spans
    bool no_s2d = false;
    bool no_d2s = false;

    void apply(KeyValues& kv);
    std::string to_text() const;
    void validate() const;
};

struct TrainConfig {
    int steps = 500;
    int batch_size = 8;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    double lambda_l1 = 5.0;
    double lambda_giou = 2.0;
    double lambda_aux_s = 0.5;
    double lambda_tg = 5.0;
    double lambda_aux_d = 1.0;
    int frames_train = 8;
    int frames_test = 16;
    int log_every = 50;

    void apply(KeyValues& kv);
    std::string to_text() const;
    void validate() const;
};

struct GenConfig {
    int num_samples = 16;
    uint64_t seed = 1;
    int frames = 16;
    int clips = 8;
    int grid_h = 4;
    int grid_w = 4;
    int tokens = 6;
    int n_attributes = 4;
    int n_actions = 4;
    int n_function_words = 4;
    int n_entities = 2;
    std::string regime = "attribute";  // "attribute" | "action"
    bool align_spans = true;
    int min_span_clips = 2;
    double box_min = 0.15;
    double box_max = 0.30;

    void apply(KeyValues& kv);
    std::string to_text() const;
    void validate() const;
};

// Fails if any key in kv was never consumed (catches typos).
void reject_unknown_keys(const KeyValues& kv, const std::string& context);

}  // namespace stvg
