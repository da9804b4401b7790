#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <vector>

#include "shapevoc/config.hpp"
#include "shapevoc/inference.hpp"
#include "shapevoc/manifest.hpp"
#include "shapevoc/rng.hpp"
#include "shapevoc/vocabulary.hpp"

namespace shapevoc {

// Offset histogram over [-r, r]^2; (dx, dy) indexes column/row r+dx / r+dy.
struct PairHistogram {
    int r = 0;
    std::vector<double> counts;  // (2r+1)^2

    PairHistogram() = default;
    explicit PairHistogram(int radius) : r(radius), counts(side() * side(), 0.0) {}
    size_t side() const { return static_cast<size_t>(2 * r + 1); }
    double& at(int dx, int dy) { return counts[static_cast<size_t>(dy + r) * side() + (dx + r)]; }
    double at(int dx, int dy) const { return counts[static_cast<size_t>(dy + r) * side() + (dx + r)]; }
    double total() const;
};

// Keyed by (reference OR id, second OR id); both orders of a pair are counted,
// so h[{i,j}](d) == h[{j,i}](-d).
struct HistogramSet {
    int r = 0;
    std::map<std::pair<int, int>, PairHistogram> pairs;
};

// Counts co-occurrences of OR-state pairs at `layer` closer than the layer
// radius whose supports overlap less than overlap_max.
HistogramSet accumulate_histograms(const std::vector<const InferenceGraph*>& graphs, int layer,
                                   double radius, double overlap_max);

struct ModeParams {
    double mass_floor_frac = 0.01;  // peak cell must hold this fraction of total mass
    int min_separation = 3;
    int fit_window = 2;
    bool smooth = false;  // 3x3 binomial pre-smoothing
    double sigma_floor = 0.25;
};

struct Mode {
    Eigen::Vector2d mu;
    Eigen::Matrix2d sigma;
    double mass = 0.0;
};

std::vector<Mode> find_modes(const PairHistogram& h, const ModeParams& p);

struct Duplet {
    int ref_or = 0, second_or = 0;
    Eigen::Vector2d mu;
    Eigen::Matrix2d sigma;
};

std::vector<Duplet> make_duplets(const HistogramSet& hs, const ModeParams& p);

// A candidate composition: a reference OR id plus a set of duplets (sorted
// indices into the pool's duplet list). Candidates carried over from an
// existing vocabulary keep their composition id in existing_comp.
struct PoolEntry {
    int32_t neighborhood = 0;
    float coverage = 0.f;
};

struct Candidate {
    int ref_or = 0;
    std::vector<int> duplets;
    int existing_comp = -1;
    double score = 0.0;  // accumulated coverage over neighborhoods
    int count = 0;
    std::vector<PoolEntry> matches;
    int parts() const { return static_cast<int>(duplets.size()) + 1; }
};

struct CandidatePool {
    std::vector<Duplet> duplets;
    std::vector<Candidate> candidates;
    int num_neighborhoods = 0;
    std::vector<float> best_coverage;  // per neighborhood with at least one match
};

struct EnumerateParams {
    double tau = 0.05;
    double radius = 8.0;
    double overlap_max = 0.2;
    int max_centers_per_image = 2000;
    int max_duplets_per_neighborhood = 10;
    int max_parts = 10;
    int max_pool_candidates = 500;
    uint64_t seed = 0;
};

// Builds the candidate pool for `layer` from graphs inferred up to layer-1.
// When `existing` is non-empty those compositions (already in v.layers[layer])
// join every neighborhood's pool ahead of the newly enumerated subsets.
CandidatePool enumerate_candidates(const std::vector<const InferenceGraph*>& graphs, int layer,
                                   const Vocabulary& v, std::vector<Duplet> duplets,
                                   const EnumerateParams& p, const std::vector<int>& existing = {});

// -C * total parts + sum over neighborhoods of the best chosen coverage.
double selection_objective(const CandidatePool& pool, const std::vector<int>& chosen, double C);

struct SelectionParams {
    double C = 0.0;
    double residual_epsilon = 0.1;
    double stop_frac = 0.05;
};

struct Selection {
    std::vector<int> chosen;  // candidate indices, ascending
    double objective = 0.0;
};

// Iteratively picks argmax(residual coverage - C * parts); picked coverage is
// subtracted from the remaining candidates per neighborhood and entries whose
// residual falls under residual_epsilon are dropped. Stops when the best
// penalized gain falls below stop_frac of the first pick's. `preselected`
// candidates are claimed before the loop and always kept.
Selection greedy_select(const CandidatePool& pool, const SelectionParams& p,
                        const std::vector<int>& preselected = {});

struct McmcParams {
    double beta = 1.05;
    int iterations = 100;
    double exchange_prob = 0.5;  // rest splits evenly between add and remove
};

// Metropolis walk over candidate subsets with exchange/add/remove moves;
// improving moves are always accepted, worsening ones with probability
// beta^(new - old). Returns the best subset visited (never worse than the
// start). `frozen` candidates are never removed.
Selection mcmc_refine(const CandidatePool& pool, const std::vector<int>& start,
                      const SelectionParams& sp, const McmcParams& mp, Rng& rng,
                      const std::vector<int>& frozen = {});

// Parts-penalty weight: frac times the mean best initial coverage over
// neighborhoods that matched anything.
double parts_penalty(const CandidatePool& pool, double frac);

// Materializes chosen non-existing candidates as compositions (ids assigned
// from next_id), in canonical part order.
std::vector<Composition> instantiate_candidates(const CandidatePool& pool,
                                                const std::vector<int>& chosen, double epsilon_ref,
                                                int next_id);

struct ObjectSelectParams {
    double tau = 0.05;
    double gain_floor = 0.01;
    double iou = 0.5;
    double nms_iou = 0.5;
    double box_pad = 2.0;
};

// Object-layer selection: greedy on detection F-measure against validation
// boxes; stops when the F gain drops under gain_floor. Candidate compositions
// are scored on graphs built up to layer O-1. Throws when no validation boxes
// exist.
std::vector<int> select_object_layer(const std::vector<Composition>& candidates,
                                     const std::vector<const InferenceGraph*>& val_graphs,
                                     const std::vector<std::vector<BoxI>>& val_boxes,
                                     const Vocabulary& v, const ObjectSelectParams& p);

// Optional repulsive-part discovery: for composition pairs at `layer` where
// one part set strictly contains the other, the extra parts are appended to
// the smaller composition as repulsive parts. Disabled by default in configs.
int add_repulsive_parts(Vocabulary& v, int layer);

}  // namespace shapevoc
