#include "shapevoc/config.hpp"

#include <nlohmann/json.hpp>

#include "shapevoc/serialize_util.hpp"

using json = nlohmann::json;

namespace shapevoc {

std::vector<double> PipelineConfig::tau_by_layer() const {
    std::vector<double> t(static_cast<size_t>(learning.num_layers) + 1, inference.global_tau);
    t[0] = 0.0;
    return t;
}

std::vector<double> PipelineConfig::radii_by_layer() const {
    std::vector<double> r(static_cast<size_t>(learning.num_layers) + 1, learning.radius_mid);
    r[0] = r[1] = 0.0;
    if (learning.num_layers >= 2) r[2] = learning.radius_l2;
    r[static_cast<size_t>(learning.num_layers)] = learning.radius_object;
    return r;
}

std::vector<double> PipelineConfig::rho_by_layer() const {
    std::vector<double> r(static_cast<size_t>(learning.num_layers) + 1, learning.rho);
    r[0] = 0.0;
    r[1] = 1.0;
    return r;
}

namespace {

// Missing keys keep their defaults so configs stay forward compatible within a
// schema version.
template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file_bytes(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error("corrupt config file " + path + ": " + e.what());
    }
    if (j.value("format", "") != "shapevoc-config")
        throw std::runtime_error(path + " is not a shapevoc config file");
    if (j.value("version", -1) != 1) throw std::runtime_error("unsupported config version in " + path);

    PipelineConfig c;
    get_if(j, "seed", c.seed);
    if (j.contains("features")) {
        const json& f = j.at("features");
        get_if(f, "lambda", c.features.lambda);
        get_if(f, "gamma", c.features.gamma);
        get_if(f, "sigma", c.features.sigma);
        get_if(f, "num_orientations", c.features.num_orientations);
        get_if(f, "energy_floor", c.features.energy_floor);
        get_if(f, "scales_per_octave", c.features.scales_per_octave);
        get_if(f, "pyramid_min_dim", c.features.pyramid_min_dim);
        get_if(f, "pyramid_blur_factor", c.features.pyramid_blur_factor);
    }
    if (j.contains("inference")) {
        const json& f = j.at("inference");
        get_if(f, "global_tau", c.inference.global_tau);
        get_if(f, "epsilon_ref", c.inference.epsilon_ref);
        get_if(f, "alpha_repulsive", c.inference.alpha_repulsive);
    }
    if (j.contains("learning")) {
        const json& f = j.at("learning");
        get_if(f, "num_layers", c.learning.num_layers);
        get_if(f, "generic_layers", c.learning.generic_layers);
        get_if(f, "radius_l2", c.learning.radius_l2);
        get_if(f, "radius_mid", c.learning.radius_mid);
        get_if(f, "radius_object", c.learning.radius_object);
        get_if(f, "rho", c.learning.rho);
        get_if(f, "mode_mass_floor", c.learning.mode_mass_floor);
        get_if(f, "mode_min_separation", c.learning.mode_min_separation);
        get_if(f, "mode_fit_window", c.learning.mode_fit_window);
        get_if(f, "hist_smooth_above_layer", c.learning.hist_smooth_above_layer);
        get_if(f, "geometry_sigma_floor", c.learning.geometry_sigma_floor);
        get_if(f, "layer1_sigma_floor", c.learning.layer1_sigma_floor);
        get_if(f, "layer1_min_samples", c.learning.layer1_min_samples);
        get_if(f, "overlap_max", c.learning.overlap_max);
        get_if(f, "parts_penalty_frac", c.learning.parts_penalty_frac);
        get_if(f, "residual_epsilon", c.learning.residual_epsilon);
        get_if(f, "stop_frac", c.learning.stop_frac);
        get_if(f, "max_centers_per_image", c.learning.max_centers_per_image);
        get_if(f, "max_duplets_per_neighborhood", c.learning.max_duplets_per_neighborhood);
        get_if(f, "max_pool_candidates", c.learning.max_pool_candidates);
        get_if(f, "object_pool_candidates", c.learning.object_pool_candidates);
        get_if(f, "mcmc_beta", c.learning.mcmc_beta);
        get_if(f, "mcmc_iterations", c.learning.mcmc_iterations);
        get_if(f, "mcmc_exchange_prob", c.learning.mcmc_exchange_prob);
        get_if(f, "discover_repulsive", c.learning.discover_repulsive);
        get_if(f, "em_rounds", c.learning.em_rounds);
        get_if(f, "or_cluster_cutoff", c.learning.or_cluster_cutoff);
        get_if(f, "or_sample_detections", c.learning.or_sample_detections);
        get_if(f, "sc_radial_bins", c.learning.sc_radial_bins);
        get_if(f, "sc_angular_bins", c.learning.sc_angular_bins);
        get_if(f, "object_diagonal", c.learning.object_diagonal);
        get_if(f, "crop_margin", c.learning.crop_margin);
        get_if(f, "object_f_gain_floor", c.learning.object_f_gain_floor);
        get_if(f, "appearance_iou", c.learning.appearance_iou);
        get_if(f, "safety_fraction", c.learning.safety_fraction);
    }
    if (j.contains("detection")) {
        const json& f = j.at("detection");
        get_if(f, "upscale", c.detection.upscale);
        get_if(f, "num_scales", c.detection.num_scales);
        get_if(f, "iou_threshold", c.detection.iou_threshold);
        get_if(f, "nms_iou", c.detection.nms_iou);
        get_if(f, "box_pad", c.detection.box_pad);
        get_if(f, "fppi_point", c.detection.fppi_point);
        get_if(f, "classification_layer", c.detection.classification_layer);
    }
    return c;
}

void save_config(const PipelineConfig& c, const std::string& path) {
    json j;
    j["format"] = "shapevoc-config";
    j["version"] = 1;
    j["seed"] = c.seed;
    j["features"] = {{"lambda", c.features.lambda},
                     {"gamma", c.features.gamma},
                     {"sigma", c.features.sigma},
                     {"num_orientations", c.features.num_orientations},
                     {"energy_floor", c.features.energy_floor},
                     {"scales_per_octave", c.features.scales_per_octave},
                     {"pyramid_min_dim", c.features.pyramid_min_dim},
                     {"pyramid_blur_factor", c.features.pyramid_blur_factor}};
    j["inference"] = {{"global_tau", c.inference.global_tau},
                      {"epsilon_ref", c.inference.epsilon_ref},
                      {"alpha_repulsive", c.inference.alpha_repulsive}};
    j["learning"] = {{"num_layers", c.learning.num_layers},
                     {"generic_layers", c.learning.generic_layers},
                     {"radius_l2", c.learning.radius_l2},
                     {"radius_mid", c.learning.radius_mid},
                     {"radius_object", c.learning.radius_object},
                     {"rho", c.learning.rho},
                     {"mode_mass_floor", c.learning.mode_mass_floor},
                     {"mode_min_separation", c.learning.mode_min_separation},
                     {"mode_fit_window", c.learning.mode_fit_window},
                     {"hist_smooth_above_layer", c.learning.hist_smooth_above_layer},
                     {"geometry_sigma_floor", c.learning.geometry_sigma_floor},
                     {"layer1_sigma_floor", c.learning.layer1_sigma_floor},
                     {"layer1_min_samples", c.learning.layer1_min_samples},
                     {"overlap_max", c.learning.overlap_max},
                     {"parts_penalty_frac", c.learning.parts_penalty_frac},
                     {"residual_epsilon", c.learning.residual_epsilon},
                     {"stop_frac", c.learning.stop_frac},
                     {"max_centers_per_image", c.learning.max_centers_per_image},
                     {"max_duplets_per_neighborhood", c.learning.max_duplets_per_neighborhood},
                     {"max_pool_candidates", c.learning.max_pool_candidates},
                     {"object_pool_candidates", c.learning.object_pool_candidates},
                     {"mcmc_beta", c.learning.mcmc_beta},
                     {"mcmc_iterations", c.learning.mcmc_iterations},
                     {"mcmc_exchange_prob", c.learning.mcmc_exchange_prob},
                     {"discover_repulsive", c.learning.discover_repulsive},
                     {"em_rounds", c.learning.em_rounds},
                     {"or_cluster_cutoff", c.learning.or_cluster_cutoff},
                     {"or_sample_detections", c.learning.or_sample_detections},
                     {"sc_radial_bins", c.learning.sc_radial_bins},
                     {"sc_angular_bins", c.learning.sc_angular_bins},
                     {"object_diagonal", c.learning.object_diagonal},
                     {"crop_margin", c.learning.crop_margin},
                     {"object_f_gain_floor", c.learning.object_f_gain_floor},
                     {"appearance_iou", c.learning.appearance_iou},
                     {"safety_fraction", c.learning.safety_fraction}};
    j["detection"] = {{"upscale", c.detection.upscale},
                      {"num_scales", c.detection.num_scales},
                      {"iou_threshold", c.detection.iou_threshold},
                      {"nms_iou", c.detection.nms_iou},
                      {"box_pad", c.detection.box_pad},
                      {"fppi_point", c.detection.fppi_point},
                      {"classification_layer", c.detection.classification_layer}};
    write_file_atomic(path, j.dump(1) + "\n");
}

}  // namespace shapevoc
