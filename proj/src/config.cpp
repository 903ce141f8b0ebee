#include "stvg/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stvg {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
    KeyValues kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::runtime_error("config line " + std::to_string(lineno) +
                                                  ": empty key");
        kv.set(key, value);
    }
    return kv;
}

KeyValues KeyValues::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str());
}

void KeyValues::set(const std::string& key, const std::string& value) {
    for (Item& it : items_) {
        if (it.key == key) {
            it.value = value;
            return;
        }
    }
    items_.push_back({key, value, false});
}

std::optional<std::string> KeyValues::consume(const std::string& key) {
    for (Item& it : items_) {
        if (it.key == key) {
            if (!it.consumed) {
                it.consumed = true;
                ++consumed_;
            }
            return it.value;
        }
    }
    return std::nullopt;
}

std::vector<std::string> KeyValues::remaining_keys() const {
    std::vector<std::string> out;
    for (const Item& it : items_)
        if (!it.consumed) out.push_back(it.key);
    return out;
}

std::string KeyValues::to_text() const {
    std::ostringstream os;
    for (const Item& it : items_) os << it.key << " = " << it.value << "\n";
    return os.str();
}

int KeyValues::consume_int(const std::string& key, int fallback) {
    auto v = consume(key);
    if (!v) return fallback;
    try {
        return std::stoi(*v);
    } catch (...) {
        throw std::runtime_error("config key '" + key + "': not an integer: " + *v);
    }
}

uint64_t KeyValues::consume_u64(const std::string& key, uint64_t fallback) {
    auto v = consume(key);
    if (!v) return fallback;
    try {
        return std::stoull(*v);
    } catch (...) {
        throw std::runtime_error("config key '" + key + "': not an integer: " + *v);
    }
}

double KeyValues::consume_double(const std::string& key, double fallback) {
    auto v = consume(key);
    if (!v) return fallback;
    try {
        return std::stod(*v);
    } catch (...) {
        throw std::runtime_error("config key '" + key + "': not a number: " + *v);
    }
}

bool KeyValues::consume_bool(const std::string& key, bool fallback) {
    auto v = consume(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw std::runtime_error("config key '" + key + "': expected true/false: " + *v);
}

std::string KeyValues::consume_string(const std::string& key, const std::string& fallback) {
    auto v = consume(key);
    return v ? *v : fallback;
}

void reject_unknown_keys(const KeyValues& kv, const std::string& context) {
    const auto rest = kv.remaining_keys();
    if (rest.empty()) return;
    std::string msg = context + ": unknown keys:";
    for (const auto& k : rest) msg += " " + k;
    throw std::runtime_error(msg);
}

// ---------------------------------------------------------------------------

void ModelConfig::apply(KeyValues& kv) {
    frames = kv.consume_int("frames", frames);
    clips = kv.consume_int("clips", clips);
    grid_h = kv.consume_int("grid_h", grid_h);
    grid_w = kv.consume_int("grid_w", grid_w);
    tokens = kv.consume_int("tokens", tokens);
    d = kv.consume_int("d", d);
    d_m = kv.consume_int("d_m", d_m);
    layers = kv.consume_int("layers", layers);
    heads = kv.consume_int("heads", heads);
    ffn_ratio = kv.consume_int("ffn_ratio", ffn_ratio);
    conv_layers = kv.consume_int("conv_layers", conv_layers);
    c_static = kv.consume_int("c_static", c_static);
    c_dynamic = kv.consume_int("c_dynamic", c_dynamic);
    vocab = kv.consume_int("vocab", vocab);
    ln_eps = kv.consume_double("ln_eps", ln_eps);
    clip_duration = kv.consume_double("clip_duration", clip_duration);
    no_s2d = kv.consume_bool("no_s2d", no_s2d);
    no_d2s = kv.consume_bool("no_d2s", no_d2s);
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "frames = " << frames << "\nclips = " << clips << "\ngrid_h = " << grid_h
       << "\ngrid_w = " << grid_w << "\ntokens = " << tokens << "\nd = " << d
       << "\nd_m = " << d_m << "\nlayers = " << layers << "\nheads = " << heads
       << "\nffn_ratio = " << ffn_ratio << "\nconv_layers = " << conv_layers
       << "\nc_static = " << c_static << "\nc_dynamic = " << c_dynamic
       << "\nvocab = " << vocab << "\nln_eps = " << ln_eps
       << "\nclip_duration = " << clip_duration
       << "\nno_s2d = " << (no_s2d ? "true" : "false")
       << "\nno_d2s = " << (no_d2s ? "true" : "false") << "\n";
    return os.str();
}

void ModelConfig::validate() const {
    if (frames < 1 || clips < 1 || grid_h < 1 || grid_w < 1 || tokens < 1)
        throw std::runtime_error("model config: extents must be positive");
    if (clips < 2) throw std::runtime_error("model config: clips must be >= 2");
    if (d < 4 || d % 4 != 0)
        throw std::runtime_error("model config: d must be a positive multiple of 4");
    if (heads < 1 || d % heads != 0)
        throw std::runtime_error("model config: heads must divide d");
    if (d_m < 1 || layers < 1 || ffn_ratio < 1 || conv_layers < 0)
        throw std::runtime_error("model config: bad head/layer settings");
    if (c_static < 1 || c_dynamic < 1 || vocab < 2)
        throw std::runtime_error("model config: bad feature/vocab settings");
    if (!(ln_eps > 0) || !(clip_duration > 0))
        throw std::runtime_error("model config: eps/clip_duration must be positive");
}

// ---------------------------------------------------------------------------

void TrainConfig::apply(KeyValues& kv) {
    steps = kv.consume_int("steps", steps);
    batch_size = kv.consume_int("batch_size", batch_size);
    lr = kv.consume_double("lr", lr);
    weight_decay = kv.consume_double("weight_decay", weight_decay);
    beta1 = kv.consume_double("beta1", beta1);
    beta2 = kv.consume_double("beta2", beta2);
    adam_eps = kv.consume_double("adam_eps", adam_eps);
    seed = kv.consume_u64("seed", seed);
    lambda_l1 = kv.consume_double("lambda_l1", lambda_l1);
    lambda_giou = kv.consume_double("lambda_giou", lambda_giou);
    lambda_aux_s = kv.consume_double("lambda_aux_s", lambda_aux_s);
    lambda_tg = kv.consume_double("lambda_tg", lambda_tg);
    lambda_aux_d = kv.consume_double("lambda_aux_d", lambda_aux_d);
    frames_train = kv.consume_int("frames_train", frames_train);
    frames_test = kv.consume_int("frames_test", frames_test);
    log_every = kv.consume_int("log_every", log_every);
}

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "steps = " << steps << "\nbatch_size = " << batch_size << "\nlr = " << lr
       << "\nweight_decay = " << weight_decay << "\nbeta1 = " << beta1
       << "\nbeta2 = " << beta2 << "\nadam_eps = " << adam_eps << "\nseed = " << seed
       << "\nlambda_l1 = " << lambda_l1 << "\nlambda_giou = " << lambda_giou
       << "\nlambda_aux_s = " << lambda_aux_s << "\nlambda_tg = " << lambda_tg
       << "\nlambda_aux_d = " << lambda_aux_d << "\nframes_train = " << frames_train
       << "\nframes_test = " << frames_test << "\nlog_every = " << log_every << "\n";
    return os.str();
}

void TrainConfig::validate() const {
    if (steps < 0 || batch_size < 1) throw std::runtime_error("train config: bad steps/batch");
    if (!(lr >= 0) || !(weight_decay >= 0)) throw std::runtime_error("train config: bad lr/decay");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(adam_eps > 0))
        throw std::runtime_error("train config: bad adam parameters");
    if (lambda_l1 < 0 || lambda_giou < 0 || lambda_aux_s < 0 || lambda_tg < 0 || lambda_aux_d < 0)
        throw std::runtime_error("train config: loss weights must be nonnegative");
    if (frames_train < 1 || frames_test < 1)
        throw std::runtime_error("train config: frame sample counts must be positive");
    if (log_every < 1) throw std::runtime_error("train config: log_every must be positive");
}

// ---------------------------------------------------------------------------

void GenConfig::apply(KeyValues& kv) {
    num_samples = kv.consume_int("num_samples", num_samples);
    seed = kv.consume_u64("gen_seed", seed);
    frames = kv.consume_int("frames", frames);
    clips = kv.consume_int("clips", clips);
    grid_h = kv.consume_int("grid_h", grid_h);
    grid_w = kv.consume_int("grid_w", grid_w);
    tokens = kv.consume_int("tokens", tokens);
    n_attributes = kv.consume_int("n_attributes", n_attributes);
    n_actions = kv.consume_int("n_actions", n_actions);
    n_function_words = kv.consume_int("n_function_words", n_function_words);
    n_entities = kv.consume_int("n_entities", n_entities);
    regime = kv.consume_string("regime", regime);
    align_spans = kv.consume_bool("align_spans", align_spans);
    min_span_clips = kv.consume_int("min_span_clips", min_span_clips);
    box_min = kv.consume_double("box_min", box_min);
    box_max = kv.consume_double("box_max", box_max);
}

std::string GenConfig::to_text() const {
    std::ostringstream os;
    os << "num_samples = " << num_samples << "\ngen_seed = " << seed
       << "\nframes = " << frames << "\nclips = " << clips << "\ngrid_h = " << grid_h
       << "\ngrid_w = " << grid_w << "\ntokens = " << tokens
       << "\nn_attributes = " << n_attributes << "\nn_actions = " << n_actions
       << "\nn_function_words = " << n_function_words << "\nn_entities = " << n_entities
       << "\nregime = " << regime << "\nalign_spans = " << (align_spans ? "true" : "false")
       << "\nmin_span_clips = " << min_span_clips << "\nbox_min = " << box_min
       << "\nbox_max = " << box_max << "\n";
    return os.str();
}

void GenConfig::validate() const {
    if (num_samples < 1) throw std::runtime_error("gen config: num_samples must be >= 1");
    if (frames < 2 || clips < 2 || frames % clips != 0)
        throw std::runtime_error("gen config: frames must be a positive multiple of clips");
    if (grid_h < 1 || grid_w < 1) throw std::runtime_error("gen config: bad grid");
    if (n_attributes < 1 || n_actions < 1 || n_function_words < 2)
        throw std::runtime_error("gen config: need attributes, actions and >=2 function words");
    if (n_entities < 1) throw std::runtime_error("gen config: need at least one entity");
    if (regime != "attribute" && regime != "action")
        throw std::runtime_error("gen config: regime must be 'attribute' or 'action'");
    if (regime == "attribute" && n_entities > n_attributes)
        throw std::runtime_error("gen config: attribute regime needs n_entities <= n_attributes");
    if (regime == "action" && (n_entities < 2 || n_actions < 2))
        throw std::runtime_error("gen config: action regime needs >=2 entities and >=2 actions");
    if (n_entities > n_actions)
        throw std::runtime_error("gen config: need n_actions >= n_entities for distinct actions");
    if (min_span_clips < 1 || min_span_clips > clips)
        throw std::runtime_error("gen config: bad min_span_clips");
    if (!(box_min > 0) || !(box_max >= box_min) || box_max > 0.5)
        throw std::runtime_error("gen config: box sizes must satisfy 0 < min <= max <= 0.5");
    if (tokens < 3) throw std::runtime_error("gen config: tokens must be >= 3");
}

}  // namespace stvg
