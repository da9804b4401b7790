#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "shapevoc/gabor.hpp"

namespace shapevoc {

struct InferenceParams {
    double global_tau = 0.05;      // score threshold, all layers
    double epsilon_ref = 0.5;      // stddev of the reference part's position (grid units)
    double alpha_repulsive = 0.1;  // constant deformation value of repulsive parts
};

struct LearningParams {
    int num_layers = 6;       // object layer index O
    int generic_layers = 3;   // topmost layer trained without labels
    double radius_l2 = 8.0;   // neighborhood radii r^l
    double radius_mid = 12.0;
    double radius_object = 15.0;
    double rho = 0.5;  // downsample factor for layers above 1

    double mode_mass_floor = 0.01;  // fraction of histogram mass a mode must hold
    int mode_min_separation = 3;    // cells between accepted modes
    int mode_fit_window = 2;        // Gaussian fit uses a (2w+1)^2 window
    int hist_smooth_above_layer = 3;
    double geometry_sigma_floor = 0.25;  // min eigenvalue of geometry covariances
    double layer1_sigma_floor = 0.05;    // min eigenvalue of layer-1 covariances
    int layer1_min_samples = 10;
    double overlap_max = 0.2;  // support overlap bound for pairs and tree checks

    double parts_penalty_frac = 0.05;  // C = frac * mean best neighborhood coverage
    double residual_epsilon = 0.1;     // per-neighborhood residual drop threshold
    double stop_frac = 0.05;           // greedy stop at frac * initial best
    int max_centers_per_image = 2000;
    int max_duplets_per_neighborhood = 10;
    int max_pool_candidates = 500;
    int object_pool_candidates = 200;  // smaller pool for the F-measure stage

    double mcmc_beta = 1.05;
    int mcmc_iterations = 100;
    double mcmc_exchange_prob = 0.5;  // remainder splits evenly into add/remove
    bool discover_repulsive = false;  // optional subset-pair rule, off by default

    int em_rounds = 3;
    double or_cluster_cutoff = 0.25;
    int or_sample_detections = 50;
    int sc_radial_bins = 5;
    int sc_angular_bins = 12;

    double object_diagonal = 250.0;  // training boxes are rescaled to this
    double crop_margin = 0.2;        // context kept around a training box
    double object_f_gain_floor = 0.01;
    double appearance_iou = 0.8;
    double safety_fraction = 0.9;
};

struct DetectionParams {
    double upscale = 3.0;  // working size factor before the pyramid
    int num_scales = 6;    // pyramid levels searched
    double iou_threshold = 0.5;
    double nms_iou = 0.5;
    double box_pad = 2.0;  // pixels added around a support bounding box
    double fppi_point = 0.4;
    int classification_layer = 3;
};

struct PipelineConfig {
    uint64_t seed = 20250815;
    FeatureConfig features;
    InferenceParams inference;
    LearningParams learning;
    DetectionParams detection;

    std::vector<double> tau_by_layer() const;
    std::vector<double> radii_by_layer() const;
    std::vector<double> rho_by_layer() const;
};

PipelineConfig load_config(const std::string& path);
void save_config(const PipelineConfig& cfg, const std::string& path);

}  // namespace shapevoc
