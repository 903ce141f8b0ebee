#include "stvg/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "stvg/serialize.hpp"

namespace stvg {

namespace {

constexpr char kDatasetMagic[4] = {'S', 'T', 'V', 'D'};
constexpr uint32_t kDatasetVersion = 1;

// Overlap of box b with grid cell (gy, gx), as a fraction of the box area.
double cell_overlap(const Box& b, int gy, int gx, int grid_h, int grid_w) {
    const Corners c = to_corners(b);
    const double cy0 = static_cast<double>(gy) / grid_h;
    const double cy1 = static_cast<double>(gy + 1) / grid_h;
    const double cx0 = static_cast<double>(gx) / grid_w;
    const double cx1 = static_cast<double>(gx + 1) / grid_w;
    const double ix = std::max(0.0, std::min(c.x2, cx1) - std::max(c.x1, cx0));
    const double iy = std::max(0.0, std::min(c.y2, cy1) - std::max(c.y1, cy0));
    const double area = (c.x2 - c.x1) * (c.y2 - c.y1);
    return area > 0 ? (ix * iy) / area : 0.0;
}

// Reflecting 1D walk within [lo, hi].
double reflect(double x, double lo, double hi) {
    const double span = hi - lo;
    double t = std::fmod(x - lo, 2 * span);
    if (t < 0) t += 2 * span;
    return lo + (t <= span ? t : 2 * span - t);
}

std::pair<int, int> random_clip_span(Rng& rng, const GenConfig& cfg) {
    const int max_len = std::max(cfg.min_span_clips, cfg.clips - 1);
    const int len = rng.uniform_int(cfg.min_span_clips, max_len);
    const int start = rng.uniform_int(0, cfg.clips - len);
    return {start, start + len - 1};
}

}  // namespace

int attribute_token(const GenConfig& cfg, int attribute) {
    if (attribute < 0 || attribute >= cfg.n_attributes)
        throw std::invalid_argument("attribute id out of range");
    return attribute;
}

int action_token(const GenConfig& cfg, int action) {
    if (action < 0 || action >= cfg.n_actions)
        throw std::invalid_argument("action id out of range");
    return cfg.n_attributes + action;
}

int function_token(const GenConfig& cfg, int index) {
    if (index < 0 || index >= cfg.n_function_words)
        throw std::invalid_argument("function word index out of range");
    return cfg.n_attributes + cfg.n_actions + index;
}

int vocab_size(const GenConfig& cfg) {
    return cfg.n_attributes + cfg.n_actions + cfg.n_function_words;
}

SceneProgram generate_program(uint64_t seed, const GenConfig& cfg) {
    cfg.validate();
    if (cfg.n_entities > cfg.grid_h * cfg.grid_w)
        throw std::runtime_error("infeasible scene: more entities than grid cells");

    Rng rng(seed);
    const int n = cfg.n_entities;
    const double band_h = 1.0 / n;

    // Per-entity attribute ids. Action regime: the first two entities share
    // one attribute so no single frame can tell them apart.
    std::vector<int> attrs(static_cast<size_t>(cfg.n_attributes));
    for (int i = 0; i < cfg.n_attributes; ++i) attrs[static_cast<size_t>(i)] = i;
    rng.shuffle(attrs);
    std::vector<int> entity_attr(static_cast<size_t>(n));
    if (cfg.regime == "action") {
        entity_attr[0] = attrs[0];
        entity_attr[1] = attrs[0];
        for (int e = 2; e < n; ++e) entity_attr[static_cast<size_t>(e)] = attrs[static_cast<size_t>(e - 1)];
    } else {
        for (int e = 0; e < n; ++e) entity_attr[static_cast<size_t>(e)] = attrs[static_cast<size_t>(e)];
    }

    // Distinct actions.
    std::vector<int> acts(static_cast<size_t>(cfg.n_actions));
    for (int i = 0; i < cfg.n_actions; ++i) acts[static_cast<size_t>(i)] = i;
    rng.shuffle(acts);

    SceneProgram prog;
    prog.seed = seed;
    prog.frames = cfg.frames;
    prog.entities.resize(static_cast<size_t>(n));

    const int frames_per_clip = cfg.frames / cfg.clips;
    for (int e = 0; e < n; ++e) {
        EntityTrack& ent = prog.entities[static_cast<size_t>(e)];
        ent.attribute = entity_attr[static_cast<size_t>(e)];
        ent.action = acts[static_cast<size_t>(e)];

        const auto [sc, ec] = random_clip_span(rng, cfg);
        if (cfg.align_spans) {
            ent.action_start = sc * frames_per_clip;
            ent.action_end = (ec + 1) * frames_per_clip - 1;
        } else {
            ent.action_start = rng.uniform_int(0, cfg.frames - cfg.min_span_clips * frames_per_clip);
            ent.action_end = std::min(cfg.frames - 1,
                                      ent.action_start + cfg.min_span_clips * frames_per_clip - 1 +
                                          rng.uniform_int(0, frames_per_clip - 1));
        }

        const double band_lo = e * band_h;
        const double band_hi = (e + 1) * band_h;
        const double size_hi = std::min(cfg.box_max, 0.9 * band_h);
        if (size_hi < cfg.box_min)
            throw std::runtime_error("infeasible scene: boxes do not fit entity bands");
        const double w = rng.uniform(cfg.box_min, size_hi);
        const double h = rng.uniform(cfg.box_min, size_hi);

        const double x_lo = w / 2, x_hi = 1.0 - w / 2;
        const double y_lo = band_lo + h / 2, y_hi = band_hi - h / 2;
        double x0 = rng.uniform(x_lo, x_hi);
        double y0 = y_lo < y_hi ? rng.uniform(y_lo, y_hi) : 0.5 * (band_lo + band_hi);
        const double speed = 1.5 / cfg.frames;
        const double vx = rng.uniform(-speed, speed);
        const double vy = rng.uniform(-speed, speed);

        ent.boxes.resize(static_cast<size_t>(cfg.frames));
        for (int t = 0; t < cfg.frames; ++t) {
            Box b;
            b.w = w;
            b.h = h;
            b.cx = reflect(x0 + vx * t, x_lo, x_hi);
            b.cy = y_lo < y_hi ? reflect(y0 + vy * t, y_lo, y_hi) : y0;
            ent.boxes[static_cast<size_t>(t)] = b;
        }
    }

    // In the action regime the target must be one of the attribute twins.
    prog.target = cfg.regime == "action" ? rng.uniform_int(0, 1) : rng.uniform_int(0, n - 1);
    return prog;
}

GroundingSample generate_sample(uint64_t seed, const GenConfig& cfg) {
    const SceneProgram prog = generate_program(seed, cfg);
    const int tf = cfg.frames, tc = cfg.clips, gh = cfg.grid_h, gw = cfg.grid_w;
    const int cs = cfg.n_attributes;
    const int cd = cfg.n_attributes + cfg.n_actions;
    const int frames_per_clip = tf / tc;

    GroundingSample s;
    s.seed = seed;

    std::vector<double> frame_data(static_cast<size_t>(tf) * gh * gw * cs, 0.0);
    std::vector<double> clip_data(static_cast<size_t>(tc) * gh * gw * cd, 0.0);

    for (const EntityTrack& ent : prog.entities) {
        for (int t = 0; t < tf; ++t) {
            const Box& b = ent.boxes[static_cast<size_t>(t)];
            const bool acting = ent.action >= 0 && t >= ent.action_start && t <= ent.action_end;
            for (int gy = 0; gy < gh; ++gy) {
                for (int gx = 0; gx < gw; ++gx) {
                    const double ov = cell_overlap(b, gy, gx, gh, gw);
                    if (ov <= 0) continue;
                    const size_t fcell =
                        ((static_cast<size_t>(t) * gh + gy) * gw + gx) * cs + ent.attribute;
                    frame_data[fcell] = std::min(1.0, frame_data[fcell] + ov);
                    const int clip = t * tc / tf;
                    const size_t ccell =
                        ((static_cast<size_t>(clip) * gh + gy) * gw + gx) * cd;
                    clip_data[ccell + ent.attribute] =
                        std::min(1.0, clip_data[ccell + ent.attribute] + ov / frames_per_clip);
                    if (acting)
                        clip_data[ccell + cs + ent.action] =
                            std::min(1.0, clip_data[ccell + cs + ent.action] + ov / frames_per_clip);
                }
            }
        }
    }

    s.frame_features = Tensor::from_data({tf, gh, gw, cs}, std::move(frame_data));
    s.clip_features = Tensor::from_data({tc, gh, gw, cd}, std::move(clip_data));

    const EntityTrack& target = prog.entities[static_cast<size_t>(prog.target)];
    std::vector<double> boxes(static_cast<size_t>(tf) * 4);
    for (int t = 0; t < tf; ++t) {
        const Box& b = target.boxes[static_cast<size_t>(t)];
        boxes[static_cast<size_t>(t) * 4 + 0] = b.cx;
        boxes[static_cast<size_t>(t) * 4 + 1] = b.cy;
        boxes[static_cast<size_t>(t) * 4 + 2] = b.w;
        boxes[static_cast<size_t>(t) * 4 + 3] = b.h;
    }
    s.gt_boxes = Tensor::from_data({tf, 4}, std::move(boxes));
    s.span_start = target.action_start;
    s.span_end = target.action_end;

    // Query: [fw0, ATTR, ACT, fw1, fw2, ...]; exactly one attribute and one
    // action token.
    s.tokens.ids.resize(static_cast<size_t>(cfg.tokens));
    s.tokens.mask.assign(static_cast<size_t>(cfg.tokens), true);
    s.tokens.ids[0] = function_token(cfg, 0);
    s.tokens.ids[1] = attribute_token(cfg, target.attribute);
    s.tokens.ids[2] = action_token(cfg, target.action);
    for (int i = 3; i < cfg.tokens; ++i)
        s.tokens.ids[static_cast<size_t>(i)] =
            function_token(cfg, 1 + (i - 3) % (cfg.n_function_words - 1));
    return s;
}

DatasetMeta dataset_meta(const GenConfig& cfg) {
    DatasetMeta m;
    m.frames = cfg.frames;
    m.clips = cfg.clips;
    m.grid_h = cfg.grid_h;
    m.grid_w = cfg.grid_w;
    m.c_static = cfg.n_attributes;
    m.c_dynamic = cfg.n_attributes + cfg.n_actions;
    m.tokens = cfg.tokens;
    m.vocab = vocab_size(cfg);
    return m;
}

Dataset generate_dataset(const GenConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.meta = dataset_meta(cfg);
    ds.samples.reserve(static_cast<size_t>(cfg.num_samples));
    for (int i = 0; i < cfg.num_samples; ++i) {
        GroundingSample s = generate_sample(cfg.seed * 1000003ull + static_cast<uint64_t>(i), cfg);
        s.id = static_cast<uint64_t>(i);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Tensor embed_tokens(const TokenSequence& tokens, const Tensor& table) {
    if (table.rank() != 2) throw std::invalid_argument("embed_tokens: table must be rank 2");
    std::vector<int> idx;
    idx.reserve(tokens.ids.size());
    for (int id : tokens.ids) {
        if (id < 0 || id >= table.dim(0))
            throw std::invalid_argument("embed_tokens: token id " + std::to_string(id) +
                                        " outside vocabulary of " + std::to_string(table.dim(0)));
        idx.push_back(id);
    }
    return gather_rows(table, idx);
}

void write_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(kDatasetMagic, 4);
    write_u32(os, kDatasetVersion);
    write_u32(os, static_cast<uint32_t>(ds.meta.frames));
    write_u32(os, static_cast<uint32_t>(ds.meta.clips));
    write_u32(os, static_cast<uint32_t>(ds.meta.grid_h));
    write_u32(os, static_cast<uint32_t>(ds.meta.grid_w));
    write_u32(os, static_cast<uint32_t>(ds.meta.c_static));
    write_u32(os, static_cast<uint32_t>(ds.meta.c_dynamic));
    write_u32(os, static_cast<uint32_t>(ds.meta.tokens));
    write_u32(os, static_cast<uint32_t>(ds.meta.vocab));
    write_u64(os, ds.samples.size());
    for (const GroundingSample& s : ds.samples) {
        write_u64(os, s.id);
        write_u64(os, s.seed);
        write_u32(os, static_cast<uint32_t>(s.span_start));
        write_u32(os, static_cast<uint32_t>(s.span_end));
        write_u32(os, static_cast<uint32_t>(s.tokens.ids.size()));
        for (size_t i = 0; i < s.tokens.ids.size(); ++i) {
            write_u32(os, static_cast<uint32_t>(s.tokens.ids[i]));
            os.put(s.tokens.mask[i] ? 1 : 0);
        }
        write_tensor(os, s.frame_features);
        write_tensor(os, s.clip_features);
        write_tensor(os, s.gt_boxes);
    }
    if (!os) throw std::runtime_error("dataset write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, kDatasetMagic, 4) != 0)
        throw std::runtime_error("dataset parse error: bad magic");
    const uint32_t version = read_u32(is);
    if (version != kDatasetVersion)
        throw std::runtime_error("dataset parse error: unsupported version");

    Dataset ds;
    ds.meta.frames = static_cast<int>(read_u32(is));
    ds.meta.clips = static_cast<int>(read_u32(is));
    ds.meta.grid_h = static_cast<int>(read_u32(is));
    ds.meta.grid_w = static_cast<int>(read_u32(is));
    ds.meta.c_static = static_cast<int>(read_u32(is));
    ds.meta.c_dynamic = static_cast<int>(read_u32(is));
    ds.meta.tokens = static_cast<int>(read_u32(is));
    ds.meta.vocab = static_cast<int>(read_u32(is));
    const uint64_t count = read_u64(is);
    if (count > (1ull << 24)) throw std::runtime_error("dataset parse error: implausible count");

    const Shape frame_shape{ds.meta.frames, ds.meta.grid_h, ds.meta.grid_w, ds.meta.c_static};
    const Shape clip_shape{ds.meta.clips, ds.meta.grid_h, ds.meta.grid_w, ds.meta.c_dynamic};
    const Shape box_shape{ds.meta.frames, 4};

    ds.samples.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        GroundingSample s;
        s.id = read_u64(is);
        s.seed = read_u64(is);
        s.span_start = static_cast<int>(read_u32(is));
        s.span_end = static_cast<int>(read_u32(is));
        const uint32_t ntok = read_u32(is);
        if (static_cast<int>(ntok) != ds.meta.tokens)
            throw std::runtime_error("dataset validation error: token count mismatch");
        s.tokens.ids.resize(ntok);
        s.tokens.mask.resize(ntok);
        for (uint32_t t = 0; t < ntok; ++t) {
            s.tokens.ids[t] = static_cast<int>(read_u32(is));
            const int c = is.get();
            if (c < 0) throw std::runtime_error("dataset parse error: truncated token mask");
            s.tokens.mask[t] = c != 0;
        }
        s.frame_features = read_tensor(is);
        s.clip_features = read_tensor(is);
        s.gt_boxes = read_tensor(is);
        if (s.frame_features.shape() != frame_shape || s.clip_features.shape() != clip_shape ||
            s.gt_boxes.shape() != box_shape)
            throw std::runtime_error("dataset validation error: payload shape mismatch");
        if (s.span_start < 0 || s.span_end < s.span_start || s.span_end >= ds.meta.frames)
            throw std::runtime_error("dataset validation error: bad span");
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

int cell_of_point(double x, double y, int grid_h, int grid_w) {
    int gx = static_cast<int>(x * grid_w);
    int gy = static_cast<int>(y * grid_h);
    gx = std::clamp(gx, 0, grid_w - 1);
    gy = std::clamp(gy, 0, grid_h - 1);
    return gy * grid_w + gx;
}

int center_cell(const Box& b, int grid_h, int grid_w) {
    return cell_of_point(b.cx, b.cy, grid_h, grid_w);
}

int argmax_cell(const Tensor& frame_features, int frame, int channel) {
    if (frame_features.rank() != 4) throw std::invalid_argument("argmax_cell: rank-4 grid expected");
    const int gh = frame_features.dim(1), gw = frame_features.dim(2), c = frame_features.dim(3);
    const double* base = frame_features.data() +
                         static_cast<int64_t>(frame) * gh * gw * c + channel;
    int best = 0;
    double best_v = base[0];
    for (int cell = 1; cell < gh * gw; ++cell) {
        const double v = base[static_cast<int64_t>(cell) * c];
        if (v > best_v) {
            best_v = v;
            best = cell;
        }
    }
    return best;
}

}  // namespace stvg
