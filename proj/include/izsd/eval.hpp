#pragma once

#include <map>
#include <string>
#include <vector>

namespace izsd {

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double area() const { return (x2 - x1) * (y2 - y1); }
    bool degenerate() const { return !(x2 > x1 && y2 > y1); }
};

/// Intersection over union; disjoint boxes give 0.
double iou(const Box& a, const Box& b);

struct Detection {
    int scene_id = 0;
    Box box;
    int class_id = 0;
    double score = 0.0;
};

struct GtBox {
    int scene_id = 0;
    Box box;
    int class_id = 0;
};

enum class ApMode { Interp11, AllPoints };

struct ApResult {
    double ap = 0.0;
    bool no_ground_truth = false;  // class had zero GT boxes; ap defined as 0
};

/// Average precision at the given IoU threshold for one class. Detections are
/// ranked by descending score; each detection greedily claims the unclaimed
/// ground-truth box of highest IoU in its scene (ties toward the lower GT
/// index), and any detection left without a claim counts as a false positive,
/// including duplicates of an already-claimed box.
ApResult average_precision(const std::vector<Detection>& detections,
                           const std::vector<GtBox>& ground_truth, int class_id,
                           double iou_threshold = 0.5, ApMode mode = ApMode::Interp11);

/// Arithmetic mean over the listed classes; every class must be present.
double map_over(const std::vector<int>& classes, const std::map<int, double>& per_class_ap);

// Detections CSV: header scene_id,x1,y1,x2,y2,class_id,score.
std::string detections_to_csv(const std::vector<Detection>& detections);
std::vector<Detection> detections_from_csv(const std::vector<std::string>& lines);

}  // namespace izsd
