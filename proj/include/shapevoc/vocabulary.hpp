#pragma once
#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "shapevoc/gabor.hpp"

namespace shapevoc {

enum class Polarity { normal, repulsive };

// Bit-exact comparison (Eigen has no boolean operator== for matrices).
template <typename A, typename B>
bool exact_eq(const A& a, const B& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            if (a(i, j) != b(i, j)) return false;
    return true;
}

// One child slot of a composition. Below the object layer the appearance is a
// single OR id with weight 1; at the object layer it is a normalized histogram
// over OR ids of the layer underneath.
struct Part {
    std::map<int, double> appearance;  // or_id -> weight, ordered
    Eigen::Vector2d mu = Eigen::Vector2d::Zero();      // in layer-(l-1) grid units
    Eigen::Matrix2d sigma = Eigen::Matrix2d::Identity();
    Polarity polarity = Polarity::normal;

    bool operator==(const Part& o) const {
        return appearance == o.appearance && exact_eq(mu, o.mu) && exact_eq(sigma, o.sigma) &&
               polarity == o.polarity;
    }
};

struct Composition {
    int id = 0;
    std::vector<Part> parts;  // parts[0] is the reference part (mu = 0)
    bool operator==(const Composition&) const = default;
};

// Layer-1 appearance model: Gaussian over the orientation-normalized feature
// vector (the dominant entry scaled to 1).
struct Layer1Model {
    int id = 0;
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    bool estimated = false;
    bool operator==(const Layer1Model& o) const {
        return id == o.id && exact_eq(mu, o.mu) && exact_eq(sigma, o.sigma) && estimated == o.estimated;
    }
};

struct OrNode {
    int id = 0;
    std::vector<int> members;  // composition ids at the same layer, sorted
    bool operator==(const OrNode&) const = default;
};

struct Vocabulary {
    int object_layer = 6;  // index O of the topmost composition layer
    FeatureConfig features;
    double epsilon_ref = 0.5;     // stddev of the reference part's position
    double alpha_repulsive = 0.1;
    std::vector<double> global_tau;  // [1..O], entry per layer; [0] unused
    std::vector<double> radii;       // [2..O] neighborhood radius r^l; [0..1] unused
    std::vector<double> rho;         // [1..O] downsample factor per layer; [0] unused

    std::vector<Layer1Model> layer1;                  // ordered by id
    std::vector<std::vector<Composition>> layers;     // [l] for l in 2..O; [0],[1] empty
    std::vector<std::vector<OrNode>> or_layers;       // [l] for l in 1..O; [0] empty
    std::map<std::string, std::vector<int>> classes;  // label -> object-layer composition ids
    std::map<int, std::map<int, double>> comp_tau;    // layer -> composition id -> learned threshold

    int num_layers() const { return object_layer; }
    const Composition& comp(int layer, int id) const;
    double tau(int layer) const { return global_tau[static_cast<size_t>(layer)]; }
    // learned per-composition threshold when present, the layer default otherwise
    double effective_tau(int layer, int comp_id) const;
    double rho_cum(int layer) const;  // product of rho factors up to `layer`
    int or_node_of(int layer, int comp_id) const;  // -1 when not in any node

    bool operator==(const Vocabulary&) const = default;
};

// Fresh vocabulary with one layer-1 model per orientation (placeholder
// Gaussians, flagged unestimated) and singleton layer-1 OR nodes.
Vocabulary layer1_default(const FeatureConfig& cfg, int object_layer,
                          const std::vector<double>& global_tau, const std::vector<double>& radii,
                          const std::vector<double>& rho, double epsilon_ref, double alpha_repulsive);

// Structural checks; every violation is reported as "layer L comp C: reason".
std::vector<std::string> validate(const Vocabulary& v);

// Sorts parts[1..] into the canonical order: normal parts before repulsive,
// then ascending (or id, quantized angle of mu, quantized mu).
void canonicalize_parts(Composition& comp);

void save_vocabulary(const Vocabulary& v, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace shapevoc
