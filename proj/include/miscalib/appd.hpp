#pragma once

// Average pixel position difference between two rectification maps, as a
// percentage of the raw-image diagonal.

#include <cmath>
#include <vector>

#include "miscalib/camera_model.hpp"
#include "miscalib/errors.hpp"
#include "miscalib/parallel.hpp"
#include "miscalib/rectify.hpp"

namespace miscalib {

inline double appd(const RectifyMap& m_star, const RectifyMap& m_pert,
                   int jobs = 1) {
  if (!(m_star.target_size == m_pert.target_size) ||
      !(m_star.raw_size == m_pert.raw_size))
    throw SizeMismatch("maps differ in target or raw size");
  const ImageSize size = m_star.target_size;
  // Row sums are combined in row order so the result does not depend on jobs.
  std::vector<double> row_sum(std::size_t(size.height), 0.0);
  parallel_for(row_sum.size(), jobs, [&](std::size_t v) {
    double acc = 0.0;
    const std::size_t base = v * std::size_t(size.width);
    for (int u = 0; u < size.width; ++u) {
      const PixelCoord& a = m_star.grid[base + u];
      const PixelCoord& b = m_pert.grid[base + u];
      const double du = a.u - b.u, dv = a.v - b.v;
      acc += std::sqrt(du * du + dv * dv);
    }
    row_sum[v] = acc;
  });
  double total = 0.0;
  for (double s : row_sum) total += s;
  return 100.0 * (total / double(size.area())) / m_star.raw_size.diagonal();
}

// Each parameter set is rectified with its own valid rectangle before the
// maps are compared.
inline double appd_from_params(const Intrinsics& theta_star,
                               const Intrinsics& theta_pert, ImageSize size,
                               int jobs = 1) {
  return appd(rectified_map(theta_star, size, jobs),
              rectified_map(theta_pert, size, jobs), jobs);
}

// Caches the reference map for repeated comparisons against one calibration.
// Results are bitwise identical to appd_from_params.
class AppdEvaluator {
 public:
  AppdEvaluator(const Intrinsics& theta_star, ImageSize size, int jobs = 1)
      : theta_star_(theta_star),
        size_(size),
        jobs_(jobs),
        reference_(rectified_map(theta_star, size, jobs)) {}

  double operator()(const Intrinsics& theta_pert) const {
    return appd(reference_, rectified_map(theta_pert, size_, jobs_), jobs_);
  }

  const Intrinsics& theta_star() const { return theta_star_; }
  ImageSize size() const { return size_; }
  const RectifyMap& reference_map() const { return reference_; }

 private:
  Intrinsics theta_star_;
  ImageSize size_;
  int jobs_;
  RectifyMap reference_;
};

}  // namespace miscalib
