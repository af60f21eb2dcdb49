#pragma once

// Point-projection experiments relating APPD to reprojection error, and
// single-parameter APPD sweeps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "miscalib/appd.hpp"
#include "miscalib/camera_model.hpp"
#include "miscalib/errors.hpp"
#include "miscalib/parallel.hpp"
#include "miscalib/perturb_sampler.hpp"

namespace miscalib {

// Undistorts a raw pixel into the pinhole image of the same intrinsics.
// No crop or rescale is applied.
inline std::optional<PixelCoord> try_rectify_point(const PixelCoord& q_raw,
                                                   const Intrinsics& intr) {
  const auto n = try_undistort_normalized(normalized_from_pixel(q_raw, intr), intr);
  if (!n) return std::nullopt;
  return pixel_from_normalized(*n, intr);
}

inline PixelCoord rectify_point(const PixelCoord& q_raw, const Intrinsics& intr) {
  return pixel_from_normalized(
      undistort_normalized(normalized_from_pixel(q_raw, intr), intr), intr);
}

struct FrustumSpec {
  std::size_t n_points = 500;
  double z_min = 2.0;
  double z_max = 50.0;
  std::uint64_t seed = 0;
};

inline constexpr std::uint64_t kPointStream = 3;

// Points with depth uniform in [z_min, z_max] whose pinhole projections under
// `theta_star` are uniform over the image frame.
inline std::vector<Point3> generate_points(const Intrinsics& theta_star,
                                           ImageSize size,
                                           const FrustumSpec& frustum) {
  if (frustum.n_points < 10) throw InvalidArgument("n_points must be >= 10");
  if (!(frustum.z_min > 0.0) || !(frustum.z_max >= frustum.z_min))
    throw InvalidArgument("depth range needs 0 < z_min <= z_max");
  const NormalizedPoint lo = normalized_from_pixel({0.0, 0.0}, theta_star);
  const NormalizedPoint hi = normalized_from_pixel(
      {size.width - 1.0, size.height - 1.0}, theta_star);
  auto rng = draw_rng(frustum.seed, kPointStream, 0);
  std::vector<Point3> points(frustum.n_points);
  for (Point3& p : points) {
    const double x = uniform(rng, lo.x, hi.x);
    const double y = uniform(rng, lo.y, hi.y);
    const double z = uniform(rng, frustum.z_min, frustum.z_max);
    p = {x * z, y * z, z};
  }
  return points;
}

enum class Protocol { fixed_projection, fixed_rectification };

inline const char* protocol_name(Protocol p) {
  return p == Protocol::fixed_projection ? "fixed_projection"
                                         : "fixed_rectification";
}

struct ReprojError {
  double mean = 0.0;
  std::size_t n_valid = 0;
  std::size_t n_points = 0;
};

// fixed_projection: project with theta_star, rectify with both sets.
// fixed_rectification: project with each set, rectify with theta_star.
// Points whose inversion fails are excluded and counted.
inline ReprojError reprojection_error(Protocol protocol,
                                      const Intrinsics& theta_star,
                                      const Intrinsics& theta_m,
                                      std::span<const Point3> points) {
  ReprojError out;
  out.n_points = points.size();
  double sum = 0.0;
  for (const Point3& p : points) {
    const PixelCoord q_star = project(p, theta_star);
    std::optional<PixelCoord> a, b;
    if (protocol == Protocol::fixed_projection) {
      a = try_rectify_point(q_star, theta_star);
      b = try_rectify_point(q_star, theta_m);
    } else {
      a = try_rectify_point(q_star, theta_star);
      b = try_rectify_point(project(p, theta_m), theta_star);
    }
    if (!a || !b) continue;
    sum += distance(*a, *b);
    ++out.n_valid;
  }
  out.mean = out.n_valid ? sum / double(out.n_valid) : 0.0;
  return out;
}

struct ReprojResult {
  double appd = 0.0;
  double reproj_error = 0.0;
  std::size_t n_valid = 0;
  std::size_t n_points = 0;
  Protocol protocol = Protocol::fixed_projection;
};

inline ReprojResult finish_reproj(Protocol protocol, const ReprojError& err,
                                  double appd_value) {
  if (2 * err.n_valid < err.n_points)
    throw TooFewValidPoints(std::string(protocol_name(protocol)) + ": only " +
                            std::to_string(err.n_valid) + " of " +
                            std::to_string(err.n_points) + " points converged");
  return {appd_value, err.mean, err.n_valid, err.n_points, protocol};
}

inline ReprojResult run_fixed_projection(const Intrinsics& theta_star,
                                         const Intrinsics& theta_m,
                                         ImageSize size,
                                         const FrustumSpec& frustum) {
  const auto points = generate_points(theta_star, size, frustum);
  return finish_reproj(
      Protocol::fixed_projection,
      reprojection_error(Protocol::fixed_projection, theta_star, theta_m, points),
      appd_from_params(theta_star, theta_m, size));
}

inline ReprojResult run_fixed_rectification(const Intrinsics& theta_star,
                                            const Intrinsics& theta_m,
                                            ImageSize size,
                                            const FrustumSpec& frustum) {
  const auto points = generate_points(theta_star, size, frustum);
  return finish_reproj(
      Protocol::fixed_rectification,
      reprojection_error(Protocol::fixed_rectification, theta_star, theta_m,
                         points),
      appd_from_params(theta_star, theta_m, size));
}

// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> r(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mean_rank;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw InvalidArgument("pearson needs two equal-length samples of size >= 2");
  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

// One perturbation evaluated under both protocols on the same point set.
struct PairedReprojRow {
  std::size_t sample_index = 0;
  Intrinsics theta_m;
  double appd = 0.0;
  ReprojError fixed_projection;
  ReprojError fixed_rectification;
};

struct ReprojExperiment {
  std::vector<PairedReprojRow> rows;
  double spearman_fixed_projection = 0.0;
  double spearman_fixed_rectification = 0.0;
};

// Draws n_perturbations parameter sets from `ranges` and runs both protocols
// on each. Rows where either protocol keeps fewer than half the points are
// still reported; they are excluded from the correlations.
inline ReprojExperiment run_reproj_experiment(const Intrinsics& theta_star,
                                              ImageSize size,
                                              const PerturbRanges& ranges,
                                              std::size_t n_perturbations,
                                              const FrustumSpec& frustum,
                                              std::uint64_t seed, int jobs = 1) {
  check_ranges(ranges);
  const auto points = generate_points(theta_star, size, frustum);
  const AppdEvaluator evaluate(theta_star, size);
  ReprojExperiment exp;
  exp.rows.resize(n_perturbations);
  parallel_for(n_perturbations, jobs, [&](std::size_t i) {
    auto rng = draw_rng(seed, kSampleStream, i);
    PairedReprojRow& row = exp.rows[i];
    row.sample_index = i;
    row.theta_m = sample_params(theta_star, ranges, rng);
    row.appd = evaluate(row.theta_m);
    row.fixed_projection =
        reprojection_error(Protocol::fixed_projection, theta_star, row.theta_m, points);
    row.fixed_rectification = reprojection_error(Protocol::fixed_rectification,
                                                 theta_star, row.theta_m, points);
  });
  std::vector<double> a, e_fp, e_fr;
  for (const auto& row : exp.rows) {
    if (2 * row.fixed_projection.n_valid < row.fixed_projection.n_points ||
        2 * row.fixed_rectification.n_valid < row.fixed_rectification.n_points)
      continue;
    a.push_back(row.appd);
    e_fp.push_back(row.fixed_projection.mean);
    e_fr.push_back(row.fixed_rectification.mean);
  }
  if (a.size() >= 2) {
    exp.spearman_fixed_projection = spearman(a, e_fp);
    exp.spearman_fixed_rectification = spearman(a, e_fr);
  }
  return exp;
}

struct SweepPoint {
  Param param = Param::fu;
  double factor = 1.0;
  double appd = 0.0;
  bool ok = true;  // false when the perturbed map had no valid region
};

// APPD of theta_star against theta_star with one parameter scaled by each
// factor. Deterministic.
inline std::vector<SweepPoint> sweep_parameter(const AppdEvaluator& evaluate,
                                               Param param,
                                               std::span<const double> factors,
                                               int jobs = 1) {
  if (factors.empty()) throw InvalidArgument("sweep needs at least one factor");
  std::vector<SweepPoint> out(factors.size());
  parallel_for(factors.size(), jobs, [&](std::size_t i) {
    Intrinsics theta = evaluate.theta_star();
    param_ref(theta, param) *= factors[i];
    out[i] = {param, factors[i], 0.0, true};
    try {
      out[i].appd = evaluate(theta);
    } catch (const NoValidRegion&) {
      out[i].ok = false;
      out[i].appd = std::nan("");
    }
  });
  return out;
}

inline std::vector<SweepPoint> sweep_parameter(const Intrinsics& theta_star,
                                               ImageSize size, Param param,
                                               std::span<const double> factors,
                                               int jobs = 1) {
  return sweep_parameter(AppdEvaluator(theta_star, size), param, factors, jobs);
}

}  // namespace miscalib
