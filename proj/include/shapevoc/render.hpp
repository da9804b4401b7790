#pragma once
#include <string>
#include <vector>

#include "shapevoc/eval.hpp"
#include "shapevoc/image.hpp"
#include "shapevoc/vocabulary.hpp"

namespace shapevoc {

// Mean shape of one composition: part means are expanded recursively down to
// layer 1 (first member of each OR node) and each reached model is drawn as a
// short oriented segment. The canvas is sized to the expansion extents unless
// `canvas` is positive.
Image render_composition(const Vocabulary& v, int layer, int comp_id, int canvas = 0);

// Detection overlay: class-colored box outlines, brighter for higher scores.
RgbImage render_detections(const Image& img, const std::vector<Detection>& dets);

// Graphviz source for the class-to-OR-node sharing structure: one subgraph
// per layer, edges from each class to the OR nodes it reaches.
std::string sharing_graph_dot(const Vocabulary& v);

// Recall-vs-FPPI curves, one polyline per class.
RgbImage render_curves(const EvalReport& r, int width = 640, int height = 480);

}  // namespace shapevoc
