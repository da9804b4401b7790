#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace shapevoc {

// Log-polar occupancy histogram about the point-set centroid, radii normalized
// by the mean distance to the centroid, L1-normalized; translation and scale
// invariant, deliberately not rotation invariant.
struct ShapeContextParams {
    int radial_bins = 5;
    int angular_bins = 12;
    double r_inner = 0.125;  // in units of the mean centroid distance
    double r_outer = 2.0;
};

std::vector<double> shape_context(const std::vector<Eigen::Vector2d>& points,
                                  const ShapeContextParams& params = {});

// Convenience overload for packed layer-1 support locations.
std::vector<double> shape_context(const std::vector<int64_t>& support,
                                  const ShapeContextParams& params = {});

// chi^2 histogram distance: 0.5 * sum (a-b)^2 / (a+b), zero-denominator bins
// skipped. Throws when the descriptors have different lengths.
double chi2_distance(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace shapevoc
