#include "shapevoc/shape_context.hpp"

#include <cmath>
#include <stdexcept>

#include "shapevoc/inference.hpp"

namespace shapevoc {

std::vector<double> shape_context(const std::vector<Eigen::Vector2d>& points,
                                  const ShapeContextParams& params) {
    if (points.size() < 2)
        throw std::invalid_argument("shape_context: need at least two points");
    if (params.radial_bins < 1 || params.angular_bins < 1)
        throw std::invalid_argument("shape_context: bad bin counts");

    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
    for (const auto& p : points) centroid += p;
    centroid /= static_cast<double>(points.size());

    double mean_dist = 0.0;
    for (const auto& p : points) mean_dist += (p - centroid).norm();
    mean_dist /= static_cast<double>(points.size());
    if (!(mean_dist > 0.0))
        throw std::invalid_argument("shape_context: degenerate support (all points coincide)");

    double log_lo = std::log(params.r_inner), log_hi = std::log(params.r_outer);
    std::vector<double> h(static_cast<size_t>(params.radial_bins) * params.angular_bins, 0.0);
    for (const auto& p : points) {
        Eigen::Vector2d d = p - centroid;
        double r = d.norm() / mean_dist;
        int rbin;
        if (r <= 0.0) {
            rbin = 0;
        } else {
            double t = (std::log(r) - log_lo) / (log_hi - log_lo);
            rbin = static_cast<int>(std::floor(t * params.radial_bins));
            rbin = std::clamp(rbin, 0, params.radial_bins - 1);
        }
        double ang = std::atan2(d.y(), d.x());
        if (ang < 0.0) ang += 2.0 * M_PI;
        int abin = r <= 0.0 ? 0
                            : std::clamp(static_cast<int>(std::floor(ang / (2.0 * M_PI) * params.angular_bins)),
                                         0, params.angular_bins - 1);
        h[static_cast<size_t>(rbin) * params.angular_bins + abin] += 1.0;
    }
    double total = static_cast<double>(points.size());
    for (auto& v : h) v /= total;
    return h;
}

std::vector<double> shape_context(const std::vector<int64_t>& support, const ShapeContextParams& params) {
    std::vector<Eigen::Vector2d> pts;
    pts.reserve(support.size());
    for (int64_t p : support) pts.emplace_back(unpack_x(p), unpack_y(p));
    return shape_context(pts, params);
}

double chi2_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("chi2_distance: descriptor lengths differ");
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double s = a[i] + b[i];
        if (s <= 0.0) continue;
        double diff = a[i] - b[i];
        d += diff * diff / s;
    }
    return 0.5 * d;
}

}  // namespace shapevoc
