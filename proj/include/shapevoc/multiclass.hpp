#pragma once
#include <string>
#include <utility>
#include <vector>

#include "shapevoc/config.hpp"
#include "shapevoc/eval.hpp"
#include "shapevoc/image.hpp"
#include "shapevoc/inference.hpp"
#include "shapevoc/manifest.hpp"
#include "shapevoc/vocabulary.hpp"

namespace shapevoc {

// One class's training material: full images with object boxes, split into a
// training and a validation part.
struct ClassDataset {
    std::string label;
    std::vector<Image> train;
    std::vector<std::vector<BoxI>> train_boxes;
    std::vector<Image> val;
    std::vector<std::vector<BoxI>> val_boxes;
};

// Object-centered crop: the box grown by `margin` (fraction of its size) is
// cut out and rescaled so the box diagonal becomes `diagonal` pixels. Returns
// the crop and the box in crop coordinates.
std::pair<Image, BoxI> crop_object(const Image& img, const BoxI& box, double margin,
                                   double diagonal);

// Extract features once, then a bottom-up pass to max_layer.
InferenceGraph infer_image(const Image& img, const Vocabulary& v, int max_layer,
                           const InferOptions& opt = {});

// Layer-1 statistics plus the generic composition layers (2..generic_layers),
// learned unsupervised on unlabeled images.
void learn_generic_layers(Vocabulary& v, const std::vector<Image>& natural,
                          const PipelineConfig& cfg);

// Appends one class: positives are cropped and rescaled, layers above the
// generic ones are extended (existing compositions are preselected in the
// greedy step, so additions must clear the residual-gain stop threshold on
// their own), the object layer is selected by detection F-measure on the
// validation crops, and the class layer maps the label to the new object
// compositions. Below the class layer the vocabulary only grows. Throws on an
// empty dataset or a duplicate label.
void learn_class(Vocabulary& v, const ClassDataset& data, const PipelineConfig& cfg);

// Convenience: generic layers, then classes in the given order.
Vocabulary learn_incremental(const std::vector<Image>& natural,
                             const std::vector<ClassDataset>& classes, const PipelineConfig& cfg);

// Per-composition score thresholds: tau = safety_fraction times the minimum
// score the composition attains inside positive parse graphs (a positive is
// each training crop's top-scoring object state of the crop's class whose box
// reaches the IoU threshold against the truth). Compositions never seen in a
// positive parse graph keep the global layer threshold. Throws when no
// positive detection exists at all.
void learn_thresholds(Vocabulary& v, const std::vector<ClassDataset>& classes,
                      const PipelineConfig& cfg, double safety_fraction);

// Sharing metric at one layer: mean and population stddev over OR nodes of
// (classes using the node - 1) / (total classes - 1), where a class uses a
// node when it is reachable from the class's object compositions through
// non-zero appearance entries. Throws with fewer than two classes.
std::pair<double, double> degree_share(const Vocabulary& v, int layer);

}  // namespace shapevoc
