#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "shapevoc/image.hpp"

namespace shapevoc {

struct FeatureConfig {
    double lambda = 6.0;   // carrier wavelength
    double gamma = 0.75;   // envelope aspect ratio
    double sigma = 2.0;    // envelope scale
    int num_orientations = 6;
    double energy_floor = 0.01;  // min normalized energy for a feature to be emitted
    int scales_per_octave = 2;
    int pyramid_min_dim = 32;
    double pyramid_blur_factor = 0.8;

    bool operator==(const FeatureConfig&) const = default;
};

// One even/odd quadrature pair per orientation. Kernels are square with side
// 2*radius+1; the even kernel has its mean subtracted so a constant image
// yields zero response.
struct GaborKernel {
    double psi = 0.0;
    int radius = 0;
    std::vector<float> even, odd;
};

// Orientations psi_i = i*pi/n. Throws on non-positive lambda/gamma/sigma or n < 1.
std::vector<GaborKernel> build_gabor_bank(const FeatureConfig& cfg);

// Per-pixel, per-orientation energy sqrt(even^2 + odd^2), reflected borders,
// normalized so the volume maximum is 1 (all zeros stays all zeros).
struct EnergyVolume {
    int width = 0, height = 0, orientations = 0;
    std::vector<float> e;  // [y][x][i]
    float at(int x, int y, int i) const {
        return e[(static_cast<size_t>(y) * width + x) * orientations + i];
    }
    float& at(int x, int y, int i) {
        return e[(static_cast<size_t>(y) * width + x) * orientations + i];
    }
};
EnergyVolume orientation_energy(const Image& img, const std::vector<GaborKernel>& bank);

struct OrientedFeature {
    int x = 0, y = 0;
    std::vector<float> f;  // energies at all orientations
    int dominant = 0;      // argmax of f
};

struct FeatureSet {
    int width = 0, height = 0;
    int num_orientations = 0;
    std::vector<OrientedFeature> features;  // sorted by (y, x)
};

// Offset step along the edge normal used by the suppression pass for
// orientation psi. Both +step and -step neighbors are compared.
void nms_step(double psi, int& dx, int& dy);

// Full extraction: energies, per-orientation non-maximum suppression along the
// edge normal, union of surviving locations, features discarded within kernel
// radius of the border.
FeatureSet extract_features(const Image& img, const FeatureConfig& cfg);

// Binary (de)serialization for the content-addressed feature cache.
std::string feature_sets_to_bytes(const std::vector<FeatureSet>& sets);
std::vector<FeatureSet> feature_sets_from_bytes(const std::string& bytes);

}  // namespace shapevoc
