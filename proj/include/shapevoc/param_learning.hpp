#pragma once
#include <vector>

#include "shapevoc/gabor.hpp"
#include "shapevoc/inference.hpp"
#include "shapevoc/vocabulary.hpp"

namespace shapevoc {

// Fits the layer-1 appearance Gaussians: responses are pooled by dominant
// orientation, normalized so the dominant entry is 1, and fitted with a mean
// and eigenvalue-floored covariance. Orientations with fewer than min_samples
// responses fall back to a one-hot mean with sigma_floor * I.
void estimate_layer1(Vocabulary& v, const std::vector<FeatureSet>& sets, double sigma_floor,
                     int min_samples);

struct GeometryRefineParams {
    int rounds = 3;
    double sigma_floor = 0.25;
};

// Re-estimates part geometry at `layer` from its own best matches: each
// anchor state contributes the winning child offset of every normal part,
// refit is mean/covariance per part. A round that lowers the total match
// score is rolled back and iteration stops, so the returned per-round score
// trace is non-decreasing. Reference parts are never refit. A non-empty
// comp_ids restricts refitting to those compositions (incremental learning
// must not touch compositions owned by earlier classes).
std::vector<double> refine_geometry(Vocabulary& v, int layer,
                                    const std::vector<const LayerStates*>& below,
                                    const GeometryRefineParams& p,
                                    const std::vector<int>& comp_ids = {});

// Object-layer appearance histograms: for every matched part the OR states
// co-located with the winning child whose supports overlap it by at least
// min_iou are counted, counts are normalized per part. Parts that never match
// keep their one-hot appearance. When comp_ids is non-empty only those
// object compositions are updated.
void estimate_object_appearance(Vocabulary& v, const std::vector<const InferenceGraph*>& graphs,
                                double min_iou, const std::vector<int>& comp_ids = {});

}  // namespace shapevoc
