#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace shapevoc {

// Unnormalized Gaussian deformation kernel: exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)).
// Equals 1 at the mean and exp(-0.5) one standard deviation away.
inline double deformation(const Eigen::Vector2d& x, const Eigen::Vector2d& mu,
                          const Eigen::Matrix2d& sigma) {
    double det = sigma.determinant();
    if (!(det > 0.0)) throw std::invalid_argument("deformation: covariance is singular");
    Eigen::Vector2d d = x - mu;
    double m2 = d.dot(sigma.inverse() * d);
    return std::exp(-0.5 * m2);
}

inline double mahalanobis2(const Eigen::Vector2d& d, const Eigen::Matrix2d& sigma_inv) {
    return d.dot(sigma_inv * d);
}

// Clamp eigenvalues from below so the matrix stays safely positive definite.
template <typename Mat>
Mat spd_floor(const Mat& m, double min_eig) {
    Mat sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(sym);
    auto vals = es.eigenvalues().eval();
    for (Eigen::Index i = 0; i < vals.size(); ++i) vals[i] = std::max(vals[i], min_eig);
    return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

// Squared Mahalanobis radius that the score threshold tau implies for a part:
// exp(-0.5 r^2) >= tau  =>  r^2 <= -2 ln tau. Non-positive tau means unbounded.
inline double mahalanobis_radius2(double tau) {
    if (tau <= 0.0) return std::numeric_limits<double>::infinity();
    return -2.0 * std::log(tau);
}

// Half extents of the axis-aligned box that encloses the Mahalanobis ellipse
// x^T Sigma^-1 x <= r2 (max |x_i| over the ellipse is sqrt(r2 * Sigma_ii)).
inline Eigen::Vector2i mahalanobis_box(const Eigen::Matrix2d& sigma, double r2, int cap) {
    if (!std::isfinite(r2)) return {cap, cap};
    int hx = static_cast<int>(std::ceil(std::sqrt(std::max(0.0, r2 * sigma(0, 0)))));
    int hy = static_cast<int>(std::ceil(std::sqrt(std::max(0.0, r2 * sigma(1, 1)))));
    return {std::min(hx, cap), std::min(hy, cap)};
}

}  // namespace shapevoc
