#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace linresp {

/// Largest phase-space dimension supported; keeps every vector on the stack.
inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor,
                          kMaxDim, kMaxDim>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline Vec make_vec(std::initializer_list<double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

inline bool all_finite(const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(v(i))) return false;
  return true;
}

/// Orthonormalizes the columns of `m` in place (modified Gram-Schmidt, two
/// passes) and returns the diagonal of the triangular factor.
inline Vec gram_schmidt(Mat& m) {
  const Eigen::Index cols = m.cols();
  Vec diag(cols);
  for (Eigen::Index k = 0; k < cols; ++k) {
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i < k; ++i) {
        const double c = m.col(i).dot(m.col(k));
        m.col(k) -= c * m.col(i);
      }
    }
    const double norm = m.col(k).norm();
    diag(k) = norm;
    if (norm > 0.0 && std::isfinite(norm)) m.col(k) /= norm;
  }
  return diag;
}

}  // namespace linresp
