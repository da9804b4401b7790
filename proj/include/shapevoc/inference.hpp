#pragma once
#include <cstdint>
#include <vector>

#include "shapevoc/gabor.hpp"
#include "shapevoc/vocabulary.hpp"

namespace shapevoc {

inline int64_t pack_loc(int x, int y) {
    return (static_cast<int64_t>(y) << 32) | static_cast<uint32_t>(x);
}
inline int unpack_x(int64_t p) { return static_cast<int>(static_cast<int32_t>(p & 0xffffffff)); }
inline int unpack_y(int64_t p) { return static_cast<int>(p >> 32); }

// Instantiated composition: location on the layer grid, score in [0,1], one
// child (an OR state index one layer down) per part, -1 for repulsive parts.
// The support is the sorted set of packed layer-1 locations reached through
// max edges.
struct CompState {
    int comp = 0;
    int x = 0, y = 0;
    double score = 0.0;
    std::vector<int32_t> children;
    std::vector<int64_t> support;
};

struct OrState {
    int or_id = 0;
    int x = 0, y = 0;
    double score = 0.0;
    int32_t best = -1;  // index of the max-scoring member CompState
};

struct LayerStates {
    int grid_w = 0, grid_h = 0;
    std::vector<CompState> comps;  // sorted by (comp, y, x)
    std::vector<OrState> pooled;   // sorted by (or_id, y, x)
};

struct InferenceGraph {
    int image_w = 0, image_h = 0;       // working-scale dimensions
    std::vector<LayerStates> layers;    // [1..up_to]; [0] unused
    int top_layer() const { return static_cast<int>(layers.size()) - 1; }
};

struct InferOptions {
    bool use_learned_tau = true;    // per-composition thresholds when available
    double tau_override = -1.0;     // >= 0 forces this threshold on every layer
    int max_layer = 0;              // 0 means the vocabulary's object layer
};

// Layer-1 matching: features are normalized so the dominant entry is 1, scored
// against every estimated orientation model, thresholded. Throws if the
// layer-1 parameters are unestimated placeholders.
LayerStates match_layer1(const FeatureSet& fs, const Vocabulary& v, double tau);

// Score of `comp` anchored at (ax, ay) on the previous layer's grid. For each
// part the best candidate within its Mahalanobis radius contributes
// child_score * deformation * appearance_weight; parts with no candidate make
// the product 0. Children of normal parts are filled with the argmax state.
double score_composition(const Composition& comp, int ax, int ay, const LayerStates& below,
                         const Vocabulary& v, double tau, std::vector<int32_t>* children);

// One bottom-up step: hypotheses are spawned around states matching the
// reference part, scored, and kept when score >= tau (and > 0). Locations are
// on the layer-(l-1) grid until downsample() is applied.
LayerStates build_layer(const Vocabulary& v, int layer, const LayerStates& below,
                        const InferOptions& opt = {});

// Scales locations by rho (truncating), keeping the max score per
// (composition, cell); ties keep the lowest (comp, y, x) source. Throws unless
// 0 < rho <= 1.
void downsample(LayerStates& ls, double rho);

// Max-pools composition states into OR states per (OR node, location).
void pool_or(LayerStates& ls, const Vocabulary& v, int layer);

// Full bottom-up pass over already extracted features.
InferenceGraph infer(const FeatureSet& fs, const Vocabulary& v, const InferOptions& opt = {});

// Downward-reachable states of one root composition state.
struct ParseGraph {
    // per layer: indices into graph.layers[l].comps
    std::vector<std::vector<int>> comp_indices;
};
ParseGraph parse_graph(const InferenceGraph& g, int layer, int comp_index);

const std::vector<int64_t>& support(const InferenceGraph& g, int layer, int comp_index);

// Intersection-over-union of two sorted support sets.
double support_overlap(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

// Merge of sorted packed-location vectors, deduplicated.
std::vector<int64_t> support_union(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

}  // namespace shapevoc
