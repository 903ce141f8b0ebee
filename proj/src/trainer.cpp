#include "stvg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "stvg/serialize.hpp"

namespace stvg {

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'T', 'V', 'C'};
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

AdamW::AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(ParamStore& params) {
    const auto& items = params.items();
    if (m_.empty()) {
        m_.resize(items.size());
        v_.resize(items.size());
        for (size_t i = 0; i < items.size(); ++i) {
            m_[i].assign(static_cast<size_t>(items[i].second.size()), 0.0);
            v_[i].assign(static_cast<size_t>(items[i].second.size()), 0.0);
        }
    }
    if (m_.size() != items.size()) throw std::runtime_error("optimizer/parameter count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < items.size(); ++i) {
        Tensor t = items[i].second;
        double* w = t.data();
        const double* g = t.grad();
        if (!g) continue;  // parameter never touched by the graph this step
        for (int64_t j = 0; j < t.size(); ++j) {
            m_[i][static_cast<size_t>(j)] = beta1_ * m_[i][static_cast<size_t>(j)] + (1 - beta1_) * g[j];
            v_[i][static_cast<size_t>(j)] =
                beta2_ * v_[i][static_cast<size_t>(j)] + (1 - beta2_) * g[j] * g[j];
            const double mhat = m_[i][static_cast<size_t>(j)] / bc1;
            const double vhat = v_[i][static_cast<size_t>(j)] / bc2;
            w[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[j]);
        }
    }
}

int pass_count(int video_frames, int n) {
    if (video_frames < 1 || n < 1) throw std::invalid_argument("pass_count: bad arguments");
    return (video_frames + n - 1) / n;
}

std::vector<int> uniform_sample_frames(int video_frames, int n, int pass_index) {
    const int stride = pass_count(video_frames, n);
    if (pass_index < 0 || pass_index >= stride)
        throw std::invalid_argument("uniform_sample_frames: pass index out of range");
    std::vector<int> idx;
    for (int f = pass_index; f < video_frames; f += stride) idx.push_back(f);
    return idx;
}

TotalLoss sample_loss(const GroundingModel& model, const ModelOutputs& out,
                      const GroundingSample& s, const ModelInputs& in, const LossWeights& w) {
    const ModelConfig& cfg = model.config();
    const int tf = s.frame_features.dim(0);

    TotalLossInputs li;
    li.pred_boxes = out.boxes;
    std::vector<int> rows;
    std::vector<double> gt;
    gt.reserve(in.frame_positions.size() * 4);
    for (size_t k = 0; k < in.frame_positions.size(); ++k) {
        const int f = in.frame_positions[k];
        const double* src = s.gt_boxes.data() + static_cast<int64_t>(f) * 4;
        gt.insert(gt.end(), src, src + 4);
        if (f >= s.span_start && f <= s.span_end) rows.push_back(static_cast<int>(k));
    }
    if (rows.empty())
        throw std::runtime_error("sample_loss: no sampled frame falls inside the span");
    li.gt_boxes = Tensor::from_data({static_cast<int>(in.frame_positions.size()), 4}, std::move(gt));
    li.masked_frames = rows;

    li.frame_scores = out.frame_scores;
    li.score_map = out.score_map;
    const int clip_s = static_cast<int>(static_cast<int64_t>(s.span_start) * cfg.clips / tf);
    const int clip_e = static_cast<int>(static_cast<int64_t>(s.span_end) * cfg.clips / tf);
    li.target_map = iou_target_map(clip_s, clip_e, cfg.clips);
    li.clip_scores = out.clip_scores;
    for (int c = clip_s; c <= clip_e; ++c) li.masked_clips.push_back(c);
    li.clips = cfg.clips;
    return total_loss(li, w);
}

TrainRun run_training(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& data,
                      std::ostream* log) {
    mcfg.validate();
    tcfg.validate();
    if (data.samples.empty()) throw std::runtime_error("training: empty dataset");

    TrainRun run;
    run.model = std::make_shared<GroundingModel>(mcfg, tcfg.seed);
    run.rng = Rng(tcfg.seed ^ 0x5deece66dull);

    AdamW opt(tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps, tcfg.weight_decay);
    LossWeights w{tcfg.lambda_l1, tcfg.lambda_giou, tcfg.lambda_aux_s, tcfg.lambda_tg,
                  tcfg.lambda_aux_d};

    const int tf = data.meta.frames;
    const int passes = pass_count(tf, tcfg.frames_train);

    std::vector<size_t> order(data.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // trigger shuffle on first use

    for (int step = 0; step < tcfg.steps; ++step) {
        run.model->params().zero_grad();
        Tensor batch_loss;
        LossBreakdown parts;
        for (int b = 0; b < tcfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                run.rng.shuffle(order);
                cursor = 0;
            }
            const GroundingSample& s = data.samples[order[cursor++]];
            const int pass = passes > 1 ? run.rng.uniform_int(0, passes - 1) : 0;
            const ModelInputs in =
                run.model->stage_sample(s, uniform_sample_frames(tf, tcfg.frames_train, pass));
            ModelOutputs out;
            TotalLoss loss;
            try {
                out = run.model->forward(in);
                loss = sample_loss(*run.model, out, s, in, w);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("training aborted at step " + std::to_string(step) +
                                         ": " + e.what());
            }
            parts.l1 += loss.parts.l1;
            parts.giou += loss.parts.giou;
            parts.aux_s += loss.parts.aux_s;
            parts.tg += loss.parts.tg;
            parts.aux_d += loss.parts.aux_d;
            batch_loss = batch_loss.defined() ? add(batch_loss, loss.value) : loss.value;
        }
        batch_loss = mul_scalar(batch_loss, 1.0 / tcfg.batch_size);
        const double total = batch_loss.item();
        if (!std::isfinite(total))
            throw std::runtime_error("training diverged: non-finite loss at step " +
                                     std::to_string(step));
        batch_loss.backward();
        opt.step(run.model->params());

        parts.l1 /= tcfg.batch_size;
        parts.giou /= tcfg.batch_size;
        parts.aux_s /= tcfg.batch_size;
        parts.tg /= tcfg.batch_size;
        parts.aux_d /= tcfg.batch_size;
        parts.total = total;
        run.result.loss_history.push_back(total);
        run.result.breakdown_history.push_back(parts);
        if (log && (step % tcfg.log_every == 0 || step + 1 == tcfg.steps))
            (*log) << "step=" << step << " l1=" << parts.l1 << " giou=" << parts.giou
                   << " aux_s=" << parts.aux_s << " tg=" << parts.tg << " aux_d=" << parts.aux_d
                   << " total=" << parts.total << "\n";
    }
    return run;
}

void merge_pass_outputs(const std::vector<std::vector<int>>& pass_frames,
                        const std::vector<std::vector<Box>>& pass_boxes,
                        const std::vector<std::vector<double>>& pass_scores, int video_frames,
                        std::vector<Box>* boxes, std::vector<double>* scores) {
    boxes->assign(static_cast<size_t>(video_frames), Box{});
    scores->assign(static_cast<size_t>(video_frames), 0.0);
    std::vector<int> hits(static_cast<size_t>(video_frames), 0);
    for (size_t p = 0; p < pass_frames.size(); ++p) {
        for (size_t k = 0; k < pass_frames[p].size(); ++k) {
            const int f = pass_frames[p][k];
            const Box& b = pass_boxes[p][k];
            Box& dst = (*boxes)[static_cast<size_t>(f)];
            dst.cx += b.cx;
            dst.cy += b.cy;
            dst.w += b.w;
            dst.h += b.h;
            (*scores)[static_cast<size_t>(f)] += pass_scores[p][k];
            ++hits[static_cast<size_t>(f)];
        }
    }
    for (int f = 0; f < video_frames; ++f) {
        if (hits[static_cast<size_t>(f)] == 0)
            throw std::runtime_error("merge_pass_outputs: frame never sampled");
        const double inv = 1.0 / hits[static_cast<size_t>(f)];
        Box& b = (*boxes)[static_cast<size_t>(f)];
        b.cx *= inv;
        b.cy *= inv;
        b.w *= inv;
        b.h *= inv;
        (*scores)[static_cast<size_t>(f)] *= inv;
    }
}

Prediction infer(const GroundingModel& model, const GroundingSample& s, int frames_per_pass) {
    NoGradGuard ng;
    const ModelConfig& cfg = model.config();
    const int tf = s.frame_features.dim(0);
    const int passes = pass_count(tf, frames_per_pass);

    Prediction pred;
    pred.sample_id = s.id;

    std::vector<std::vector<int>> pass_frames(static_cast<size_t>(passes));
    std::vector<std::vector<Box>> pass_boxes(static_cast<size_t>(passes));
    std::vector<std::vector<double>> pass_scores(static_cast<size_t>(passes));

    for (int p = 0; p < passes; ++p) {
        const std::vector<int> idx = uniform_sample_frames(tf, frames_per_pass, p);
        const ModelInputs in = model.stage_sample(s, idx);
        const ModelOutputs out = model.forward(in);
        pass_frames[static_cast<size_t>(p)] = idx;
        for (size_t k = 0; k < idx.size(); ++k) {
            Box b;
            b.cx = out.boxes.at({static_cast<int>(k), 0});
            b.cy = out.boxes.at({static_cast<int>(k), 1});
            b.w = out.boxes.at({static_cast<int>(k), 2});
            b.h = out.boxes.at({static_cast<int>(k), 3});
            pass_boxes[static_cast<size_t>(p)].push_back(b);
            pass_scores[static_cast<size_t>(p)].push_back(out.frame_scores.data()[k]);
        }
        if (p == 0) {
            // Clip features are pass-independent; the span comes from pass 0.
            pred.score_map.assign(out.score_map.data(), out.score_map.data() + out.score_map.size());
            pred.clip_scores.assign(out.clip_scores.data(),
                                    out.clip_scores.data() + out.clip_scores.size());
        }
    }

    merge_pass_outputs(pass_frames, pass_boxes, pass_scores, tf, &pred.boxes, &pred.frame_scores);
    pred.span = select_span(pred.score_map, cfg.clips);
    const AssembledPrediction asm_out = assemble_prediction(
        pred.boxes, pred.span, cfg.clip_duration, frame_clip_alignment(tf, cfg.clips));
    pred.span_start_frame = asm_out.span_start_frame;
    pred.span_end_frame = asm_out.span_end_frame;
    pred.span_start_sec = asm_out.span_start_sec;
    pred.span_end_sec = asm_out.span_end_sec;
    pred.tube_frames = asm_out.tube_frames;
    pred.tube_boxes = asm_out.tube_boxes;
    return pred;
}

EvalReport evaluate(const GroundingModel& model, const Dataset& data, int frames_per_pass,
                    std::vector<Prediction>* predictions) {
    if (data.samples.empty()) throw std::runtime_error("evaluate: empty dataset");
    EvalReport rep;
    for (const GroundingSample& s : data.samples) {
        Prediction p = infer(model, s, frames_per_pass);
        std::vector<Box> gt_tube;
        for (int f = s.span_start; f <= s.span_end; ++f) {
            Box b;
            b.cx = s.gt_boxes.at({f, 0});
            b.cy = s.gt_boxes.at({f, 1});
            b.w = s.gt_boxes.at({f, 2});
            b.h = s.gt_boxes.at({f, 3});
            gt_tube.push_back(b);
        }
        EvalRecord rec;
        rec.id = s.id;
        rec.viou = viou(p.tube_boxes, p.span_start_frame, p.span_end_frame, gt_tube, s.span_start,
                        s.span_end);
        const int is = std::max(p.span_start_frame, s.span_start);
        const int ie = std::min(p.span_end_frame, s.span_end);
        for (int f = is; f <= ie; ++f)
            rec.frame_iou.push_back(box_iou(p.tube_boxes[static_cast<size_t>(f - p.span_start_frame)],
                                            gt_tube[static_cast<size_t>(f - s.span_start)]));
        rep.records.push_back(std::move(rec));
        if (predictions) predictions->push_back(std::move(p));
    }
    rep.aggregates = aggregate(rep.records);
    return rep;
}

Checkpoint make_checkpoint(const GroundingModel& model, const TrainConfig& tcfg, uint64_t step,
                           const Rng& rng) {
    Checkpoint ck;
    ck.model_config_text = model.config().to_text();
    ck.train_config_text = tcfg.to_text();
    ck.step = step;
    ck.rng_state = rng.state();
    for (const auto& [name, t] : model.params().items()) ck.tensors.emplace_back(name, t);
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write(kCheckpointMagic, 4);
    write_u32(os, kCheckpointVersion);
    write_string(os, ck.model_config_text);
    write_string(os, ck.train_config_text);
    write_u64(os, ck.step);
    write_string(os, ck.rng_state);
    write_u64(os, ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
        write_string(os, name);
        write_tensor(os, t);
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("checkpoint parse error: bad magic");
    if (read_u32(is) != kCheckpointVersion)
        throw std::runtime_error("checkpoint parse error: unsupported version");
    Checkpoint ck;
    ck.model_config_text = read_string(is);
    ck.train_config_text = read_string(is);
    ck.step = read_u64(is);
    ck.rng_state = read_string(is);
    const uint64_t n = read_u64(is);
    if (n > (1ull << 20)) throw std::runtime_error("checkpoint parse error: implausible tensor count");
    for (uint64_t i = 0; i < n; ++i) {
        std::string name = read_string(is);
        Tensor t = read_tensor(is);
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

std::shared_ptr<GroundingModel> model_from_checkpoint(const Checkpoint& ck) {
    KeyValues kv = KeyValues::parse(ck.model_config_text);
    ModelConfig cfg;
    cfg.apply(kv);
    reject_unknown_keys(kv, "checkpoint model config");
    auto model = std::make_shared<GroundingModel>(cfg, 0);
    size_t loaded = 0;
    for (const auto& [name, t] : ck.tensors) {
        if (!model->params().has(name))
            throw std::runtime_error("checkpoint: unknown parameter " + name);
        Tensor dst = model->params().get(name);
        if (dst.shape() != t.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        std::copy(t.data(), t.data() + t.size(), dst.data());
        ++loaded;
    }
    if (loaded != model->params().items().size())
        throw std::runtime_error("checkpoint: parameter set incomplete");
    return model;
}

}  // namespace stvg
