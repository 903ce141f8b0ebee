#include "stvg/losses.hpp"

#include <stdexcept>

namespace stvg {

namespace {

constexpr double kProbClamp = 1e-7;
constexpr double kAreaFloor = 1e-8;

void require_boxes(const Tensor& t, const char* what) {
    if (t.rank() != 2 || t.dim(1) != 4)
        throw std::invalid_argument(std::string(what) + ": expected {n, 4} boxes");
}

// 1 - GIoU per row, {n, 1}.
Tensor giou_loss_column(const Tensor& pred, const Tensor& gt) {
    const Tensor half = Tensor::full({pred.dim(0), 1}, 0.5);

    const Tensor acx = slice_cols(pred, 0, 1), acy = slice_cols(pred, 1, 1);
    const Tensor aw = slice_cols(pred, 2, 1), ah = slice_cols(pred, 3, 1);
    const Tensor bcx = slice_cols(gt, 0, 1), bcy = slice_cols(gt, 1, 1);
    const Tensor bw = slice_cols(gt, 2, 1), bh = slice_cols(gt, 3, 1);

    const Tensor ax1 = sub(acx, mul(aw, half)), ax2 = add(acx, mul(aw, half));
    const Tensor ay1 = sub(acy, mul(ah, half)), ay2 = add(acy, mul(ah, half));
    const Tensor bx1 = sub(bcx, mul(bw, half)), bx2 = add(bcx, mul(bw, half));
    const Tensor by1 = sub(bcy, mul(bh, half)), by2 = add(bcy, mul(bh, half));

    const Tensor ix = relu(sub(min_ew(ax2, bx2), max_ew(ax1, bx1)));
    const Tensor iy = relu(sub(min_ew(ay2, by2), max_ew(ay1, by1)));
    const Tensor inter = mul(ix, iy);

    const Tensor floor_t = Tensor::full({pred.dim(0), 1}, kAreaFloor);
    const Tensor area_a = max_ew(mul(aw, ah), floor_t);
    const Tensor area_b = max_ew(mul(bw, bh), floor_t);
    const Tensor uni = sub(add(area_a, area_b), inter);
    const Tensor iou = div_ew(inter, uni);

    const Tensor ex = sub(max_ew(ax2, bx2), min_ew(ax1, bx1));
    const Tensor ey = sub(max_ew(ay2, by2), min_ew(ay1, by1));
    const Tensor enclosing = max_ew(mul(ex, ey), floor_t);

    const Tensor giou = sub(iou, div_ew(sub(enclosing, uni), enclosing));
    return add_scalar(neg(giou), 1.0);
}

}  // namespace

Tensor l1_box_loss(const Tensor& pred_boxes, const Tensor& gt_boxes,
                   const std::vector<int>& masked_rows) {
    require_boxes(pred_boxes, "l1_box_loss pred");
    require_boxes(gt_boxes, "l1_box_loss gt");
    if (pred_boxes.dim(0) != gt_boxes.dim(0))
        throw std::invalid_argument("l1_box_loss: row count mismatch");
    if (masked_rows.empty())
        throw std::invalid_argument("l1_box_loss: empty temporal mask");
    const Tensor p = gather_rows(pred_boxes, masked_rows);
    const Tensor g = gather_rows(gt_boxes, masked_rows);
    return mean_all(abs_ew(sub(p, g)));
}

Tensor giou_loss_rows(const Tensor& pred_boxes, const Tensor& gt_boxes,
                      const std::vector<int>& masked_rows) {
    require_boxes(pred_boxes, "giou_loss pred");
    require_boxes(gt_boxes, "giou_loss gt");
    if (pred_boxes.dim(0) != gt_boxes.dim(0))
        throw std::invalid_argument("giou_loss: row count mismatch");
    if (masked_rows.empty()) throw std::invalid_argument("giou_loss: empty temporal mask");
    const Tensor p = gather_rows(pred_boxes, masked_rows);
    const Tensor g = gather_rows(gt_boxes, masked_rows);
    return mean_all(giou_loss_column(p, g));
}

Tensor giou_loss(const Tensor& pred_box, const Tensor& gt_box) {
    require_boxes(pred_box, "giou_loss pred");
    require_boxes(gt_box, "giou_loss gt");
    return mean_all(giou_loss_column(pred_box, gt_box));
}

Tensor iou_target_map(int span_start, int span_end, int clips) {
    if (span_start < 0 || span_end < span_start || span_end >= clips)
        throw std::invalid_argument("iou_target_map: bad span");
    std::vector<double> y(static_cast<size_t>(clips) * clips, 0.0);
    for (int i = 0; i < clips; ++i) {
        for (int j = i; j < clips; ++j) {
            const int inter = std::max(0, std::min(j, span_end) - std::max(i, span_start) + 1);
            const int uni = (j - i + 1) + (span_end - span_start + 1) - inter;
            y[static_cast<size_t>(i) * clips + j] = static_cast<double>(inter) / uni;
        }
    }
    return Tensor::from_data({clips * clips}, std::move(y));
}

Tensor temporal_grounding_loss(const Tensor& score_map, const Tensor& target_map, int clips) {
    if (score_map.size() != clips * clips || target_map.size() != clips * clips)
        throw std::invalid_argument("temporal_grounding_loss: bad map size");
    std::vector<int> valid;
    valid.reserve(static_cast<size_t>(clips) * (clips + 1) / 2);
    for (int i = 0; i < clips; ++i)
        for (int j = i; j < clips; ++j) valid.push_back(i * clips + j);

    const Tensor s = clamp(gather_rows(reshape(score_map, {clips * clips, 1}), valid),
                           kProbClamp, 1.0 - kProbClamp);
    const Tensor y = gather_rows(reshape(target_map, {clips * clips, 1}), valid);
    const Tensor one_minus_y = add_scalar(neg(y), 1.0);
    const Tensor one_minus_s = add_scalar(neg(s), 1.0);
    const Tensor cell = add(mul(y, log_ew(s)), mul(one_minus_y, log_ew(one_minus_s)));
    return neg(mean_all(cell));
}

Tensor temporal_attentive_loss(const Tensor& probs, const std::vector<int>& masked_idx) {
    if (probs.rank() != 1) throw std::invalid_argument("temporal_attentive_loss: expected rank 1");
    if (masked_idx.empty())
        throw std::invalid_argument("temporal_attentive_loss: empty temporal mask");
    const Tensor col = reshape(probs, {probs.dim(0), 1});
    const Tensor masked = gather_rows(col, masked_idx);
    return neg(mean_all(log_ew(clamp(masked, kProbClamp, 1.0 - kProbClamp))));
}

TotalLoss total_loss(const TotalLossInputs& in, const LossWeights& w) {
    TotalLoss out;
    const Tensor l1 = l1_box_loss(in.pred_boxes, in.gt_boxes, in.masked_frames);
    const Tensor giou = giou_loss_rows(in.pred_boxes, in.gt_boxes, in.masked_frames);
    const Tensor aux_s = temporal_attentive_loss(in.frame_scores, in.masked_frames);
    const Tensor tg = temporal_grounding_loss(in.score_map, in.target_map, in.clips);
    const Tensor aux_d = temporal_attentive_loss(in.clip_scores, in.masked_clips);

    out.parts.l1 = l1.item();
    out.parts.giou = giou.item();
    out.parts.aux_s = aux_s.item();
    out.parts.tg = tg.item();
    out.parts.aux_d = aux_d.item();

    out.value = add(add(add(mul_scalar(l1, w.l1), mul_scalar(giou, w.giou)),
                        add(mul_scalar(aux_s, w.aux_s), mul_scalar(tg, w.tg))),
                    mul_scalar(aux_d, w.aux_d));
    out.parts.total = out.value.item();
    return out;
}

}  // namespace stvg
