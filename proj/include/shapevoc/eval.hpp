#pragma once
#include <map>
#include <string>
#include <vector>

#include "shapevoc/config.hpp"
#include "shapevoc/image.hpp"
#include "shapevoc/inference.hpp"
#include "shapevoc/manifest.hpp"
#include "shapevoc/vocabulary.hpp"

namespace shapevoc {

struct Detection {
    std::string klass;
    int comp = 0;   // object-layer composition id
    int level = 0;  // pyramid level index
    double score = 0.0;
    BoxI box;  // original-image coordinates
};

// Exact intersection-over-union; degenerate rectangles count as empty.
double box_iou(const BoxI& a, const BoxI& b);

// Bounding rectangle of a support set mapped from working to original pixels
// (divide by the per-axis scale), grown by `pad` original pixels.
BoxI support_box(const std::vector<int64_t>& support, double scale_x, double scale_y, double pad);

// Greedy cross-class suppression by descending score: a detection is dropped
// when it overlaps an already kept one by more than iou_thr.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr);

// Multi-scale detection: infer on every pyramid level, turn object-layer
// states of class-owned compositions into boxes, suppress across classes and
// scales. Boxes are clamped to the original image.
std::vector<Detection> detect(const Image& img, const Vocabulary& v, const DetectionParams& p,
                              double tau_override = -1.0);

struct Curve {
    std::vector<double> thresholds;  // descending, one per distinct score
    std::vector<double> recall, precision, fppi;
    double recall_at_eer = 0.0;
    double recall_at_fppi = 0.0;
    int num_truths = 0;
    int num_images = 0;
};

struct EvalReport {
    double iou_threshold = 0.5;
    double fppi_point = 0.4;
    std::map<std::string, Curve> per_class;
};

// Greedy score-descending matching of detections to same-image truths (each
// truth used once, IoU >= iou_threshold), then a score-threshold sweep per
// class. recall@EER interpolates the recall/precision crossing; the rate at
// fppi_point interpolates the recall-vs-FPPI curve.
EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                    const std::vector<std::vector<BoxI>>& truth_boxes,
                    const std::vector<std::vector<std::string>>& truth_labels,
                    double iou_threshold, double fppi_point);

std::string report_to_json(const EvalReport& r);

// Radial image descriptor: OR-state scores at `layer` summed into 5 angular x
// 2 radial cells about the grid center (radial split at half the maximal
// center-to-corner distance), one block of cells per OR node. Length is
// 10 * |OR nodes at layer|.
std::vector<double> classification_features(const InferenceGraph& g, const Vocabulary& v,
                                            int layer);

}  // namespace shapevoc
