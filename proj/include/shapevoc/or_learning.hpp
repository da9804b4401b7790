#pragma once
#include <vector>

#include "shapevoc/inference.hpp"
#include "shapevoc/shape_context.hpp"
#include "shapevoc/vocabulary.hpp"

namespace shapevoc {

struct OrLearnParams {
    double cutoff = 0.25;        // average-linkage merge threshold on chi-squared
    int sample_detections = 50;  // top detections per composition
    ShapeContextParams sc;
};

// Average-linkage agglomerative clustering over a symmetric distance matrix;
// merging stops when the closest cluster pair is at or above `cutoff`.
// Infinite entries never merge. Clusters come back sorted by smallest member.
std::vector<std::vector<int>> average_linkage(const std::vector<std::vector<double>>& dist,
                                              double cutoff);

// Shape prototype of each composition at `layer`: descriptor of the support
// of the detection minimizing the summed chi-squared distance to the
// composition's other sampled detections. Compositions without detections get
// an empty descriptor.
std::vector<std::vector<double>> comp_prototypes(const std::vector<const InferenceGraph*>& graphs,
                                                 int layer, int num_comps,
                                                 const OrLearnParams& p);

// Builds (or extends) the OR layer over the compositions of `layer` by
// clustering their shape prototypes. With extend set, nodes present in the
// vocabulary are kept as-is; compositions not yet covered either join the
// nearest existing node (average linkage under the cutoff) or are clustered
// among themselves and appended as new nodes.
void learn_or_layer(Vocabulary& v, int layer, const std::vector<const InferenceGraph*>& graphs,
                    const OrLearnParams& p, bool extend = false);

}  // namespace shapevoc
