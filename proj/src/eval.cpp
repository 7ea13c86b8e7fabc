#include "izsd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "izsd/errors.hpp"
#include "izsd/io.hpp"

namespace izsd {

double iou(const Box& a, const Box& b) {
    if (a.degenerate() || b.degenerate()) throw DomainError("iou: degenerate box");
    const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

namespace {

// Cumulative precision/recall points of the score-ranked detection list.
struct PrCurve {
    std::vector<double> precision;
    std::vector<double> recall;
};

PrCurve pr_curve(const std::vector<Detection>& ranked, const std::vector<GtBox>& gt,
                 double iou_threshold) {
    std::vector<bool> claimed(gt.size(), false);
    PrCurve curve;
    curve.precision.reserve(ranked.size());
    curve.recall.reserve(ranked.size());
    int tp = 0, fp = 0;
    for (const auto& det : ranked) {
        int best_gt = -1;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            if (gt[g].scene_id != det.scene_id) continue;
            const double overlap = iou(det.box, gt[g].box);
            if (overlap > best_iou) {  // ties keep the lower GT index
                best_iou = overlap;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0 && best_iou >= iou_threshold &&
            !claimed[static_cast<std::size_t>(best_gt)]) {
            claimed[static_cast<std::size_t>(best_gt)] = true;
            ++tp;
        } else {
            ++fp;
        }
        curve.precision.push_back(static_cast<double>(tp) / (tp + fp));
        curve.recall.push_back(static_cast<double>(tp) / static_cast<double>(gt.size()));
    }
    return curve;
}

double reduce_interp11(const PrCurve& curve) {
    double sum = 0.0;
    for (int k = 0; k <= 10; ++k) {
        const double r = k / 10.0;
        double best = 0.0;
        for (std::size_t i = 0; i < curve.recall.size(); ++i) {
            if (curve.recall[i] >= r) best = std::max(best, curve.precision[i]);
        }
        sum += best;
    }
    return sum / 11.0;
}

double reduce_all_points(const PrCurve& curve) {
    // Area under the interpolated curve: at each recall step, precision is the
    // maximum over all points at equal or greater recall.
    double area = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < curve.recall.size(); ++i) {
        if (curve.recall[i] <= prev_recall) continue;
        double p_interp = 0.0;
        for (std::size_t j = i; j < curve.recall.size(); ++j) {
            p_interp = std::max(p_interp, curve.precision[j]);
        }
        area += (curve.recall[i] - prev_recall) * p_interp;
        prev_recall = curve.recall[i];
    }
    return area;
}

}  // namespace

ApResult average_precision(const std::vector<Detection>& detections,
                           const std::vector<GtBox>& ground_truth, int class_id,
                           double iou_threshold, ApMode mode) {
    std::vector<GtBox> gt;
    for (const auto& g : ground_truth) {
        if (g.class_id == class_id) gt.push_back(g);
    }
    if (gt.empty()) return ApResult{0.0, true};

    std::vector<Detection> ranked;
    for (const auto& d : detections) {
        if (d.class_id != class_id) continue;
        if (!std::isfinite(d.score)) throw DomainError("average_precision: non-finite score");
        ranked.push_back(d);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (ranked.empty()) return ApResult{0.0, false};

    const PrCurve curve = pr_curve(ranked, gt, iou_threshold);
    const double ap = mode == ApMode::Interp11 ? reduce_interp11(curve)
                                               : reduce_all_points(curve);
    return ApResult{ap, false};
}

double map_over(const std::vector<int>& classes, const std::map<int, double>& per_class_ap) {
    if (classes.empty()) throw DomainError("map_over: empty class set");
    double sum = 0.0;
    for (int id : classes) {
        auto it = per_class_ap.find(id);
        if (it == per_class_ap.end()) {
            throw DomainError("map_over: missing AP for class " + std::to_string(id));
        }
        sum += it->second;
    }
    return sum / static_cast<double>(classes.size());
}

std::string detections_to_csv(const std::vector<Detection>& detections) {
    std::ostringstream out;
    out << "scene_id,x1,y1,x2,y2,class_id,score\n";
    for (const auto& d : detections) {
        out << d.scene_id << ',' << io::format_double(d.box.x1) << ',' << io::format_double(d.box.y1)
            << ',' << io::format_double(d.box.x2) << ',' << io::format_double(d.box.y2) << ','
            << d.class_id << ',' << io::format_double(d.score) << '\n';
    }
    return out.str();
}

std::vector<Detection> detections_from_csv(const std::vector<std::string>& lines) {
    std::vector<Detection> detections;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto fields = io::split_csv_line(lines[i]);
        if (i == 0 && !fields.empty() && fields[0] == "scene_id") continue;  // header
        if (fields.size() != 7) throw DataError("detections CSV: expected 7 fields");
        Detection d;
        d.scene_id = static_cast<int>(io::parse_long(fields[0]));
        d.box = Box{io::parse_double(fields[1]), io::parse_double(fields[2]),
                    io::parse_double(fields[3]), io::parse_double(fields[4])};
        d.class_id = static_cast<int>(io::parse_long(fields[5]));
        d.score = io::parse_double(fields[6]);
        detections.push_back(d);
    }
    return detections;
}

}  // namespace izsd
