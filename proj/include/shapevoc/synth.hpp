#pragma once
#include <string>
#include <vector>

#include "shapevoc/image.hpp"
#include "shapevoc/manifest.hpp"
#include "shapevoc/rng.hpp"

namespace shapevoc {

// Anti-aliased dark stroke along a polyline, value `dark`, width `thickness`.
void draw_polyline(Image& img, const std::vector<std::pair<double, double>>& pts,
                   double thickness, double dark);

// Clutter-style image: light background with random short polylines and arcs.
Image synth_natural(int w, int h, int strokes, Rng& rng);

struct SynthObject {
    Image img;
    BoxI box;  // tight box around the drawn object strokes
};

// One rendered class instance on a cluttered canvas. The object's bounding
// box diagonal is `diag` pixels; clutter strokes keep clear of the box.
// Labels: "mug", "bracket", "ring". Throws on unknown labels.
SynthObject synth_object(const std::string& label, int w, int h, double diag, int clutter,
                         Rng& rng);

struct SynthCorpusSpec {
    std::vector<std::string> labels = {"mug", "bracket", "ring"};
    int natural_images = 200;
    int natural_size = 128;
    int train_per_class = 20;
    int test_per_class = 20;
    int train_size = 384;
    int test_size = 448;
    double train_diag_min = 230.0, train_diag_max = 330.0;
    double test_diag_min = 250.0, test_diag_max = 340.0;
    double val_fraction = 0.3;  // tail of the training list becomes validation
    uint64_t seed = 0;
};

// Writes the corpus under `dir`: natural/, classes/<label>/ as PGM files plus
// natural.jsonl, train.jsonl (with train/val splits) and test.jsonl manifests
// with paths relative to `dir`.
void write_synth_corpus(const std::string& dir, const SynthCorpusSpec& spec);

}  // namespace shapevoc
