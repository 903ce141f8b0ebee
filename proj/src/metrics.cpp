#include "stvg/metrics.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

namespace stvg {

double box_iou(const Box& a, const Box& b) {
    const Corners ca = to_corners(a), cb = to_corners(b);
    const double ix = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
    const double iy = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
    const double inter = ix * iy;
    const double area_a = (ca.x2 - ca.x1) * (ca.y2 - ca.y1);
    const double area_b = (cb.x2 - cb.x1) * (cb.y2 - cb.y1);
    const double uni = area_a + area_b - inter;
    return uni > 0 ? inter / uni : 0.0;
}

double viou(const std::vector<Box>& pred_tube, int pred_start, int pred_end,
            const std::vector<Box>& gt_tube, int gt_start, int gt_end) {
    if (gt_end < gt_start) throw std::invalid_argument("viou: empty ground-truth span");
    if (pred_end < pred_start) throw std::invalid_argument("viou: empty predicted span");
    if (static_cast<int>(pred_tube.size()) != pred_end - pred_start + 1)
        throw std::invalid_argument("viou: predicted tube does not cover its span");
    if (static_cast<int>(gt_tube.size()) != gt_end - gt_start + 1)
        throw std::invalid_argument("viou: ground-truth tube does not cover its span");

    const int is = std::max(pred_start, gt_start);
    const int ie = std::min(pred_end, gt_end);
    const int inter = std::max(0, ie - is + 1);
    const int uni = (pred_end - pred_start + 1) + (gt_end - gt_start + 1) - inter;
    if (inter == 0) return 0.0;
    double s = 0.0;
    for (int f = is; f <= ie; ++f)
        s += box_iou(pred_tube[static_cast<size_t>(f - pred_start)],
                     gt_tube[static_cast<size_t>(f - gt_start)]);
    return s / uni;
}

Aggregates aggregate(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw std::invalid_argument("aggregate: no records");
    Aggregates a;
    int n03 = 0, n05 = 0;
    for (const EvalRecord& r : records) {
        a.mean_viou += r.viou;
        if (r.viou > 0.3) ++n03;
        if (r.viou > 0.5) ++n05;
    }
    a.mean_viou /= static_cast<double>(records.size());
    a.at_03 = static_cast<double>(n03) / static_cast<double>(records.size());
    a.at_05 = static_cast<double>(n05) / static_cast<double>(records.size());
    return a;
}

void write_eval_report(std::ostream& os, const std::vector<EvalRecord>& records,
                       const Aggregates& agg) {
    os << "samples = " << records.size() << "\n";
    for (const EvalRecord& r : records) {
        os << "sample " << r.id << " viou " << r.viou << " frame_iou";
        for (double v : r.frame_iou) os << " " << v;
        os << "\n";
    }
    os << "m_viou " << agg.mean_viou << "\n";
    os << "viou@0.3 " << agg.at_03 << "\n";
    os << "viou@0.5 " << agg.at_05 << "\n";
}

}  // namespace stvg
