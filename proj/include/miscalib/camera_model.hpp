#pragma once

// Pinhole camera with Brown-Conrady radial (k1, k2, k3) and tangential
// (p1, p2) distortion acting on normalized image coordinates.
//
// Pixel coordinates are continuous with pixel centers at integer positions
// and the origin at the center of the top-left pixel.

#include <array>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "miscalib/errors.hpp"

namespace miscalib {

struct ImageSize {
  int width = 0;
  int height = 0;

  double diagonal() const {
    return std::sqrt(double(width) * width + double(height) * height);
  }
  double aspect() const { return double(width) / double(height); }
  std::size_t area() const { return std::size_t(width) * std::size_t(height); }

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

inline void check_size(const ImageSize& size) {
  if (size.width < 2 || size.height < 2)
    throw InvalidArgument("image size must be at least 2x2");
}

struct Intrinsics {
  double fu = 1.0;
  double fv = 1.0;
  double uc = 0.0;
  double vc = 0.0;
  std::array<double, 3> kr{};  // k1, k2, k3
  std::array<double, 2> kt{};  // p1, p2

  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

// The nine scalar parameters, in the order used by sweeps and records.
enum class Param { fu, fv, uc, vc, k1, k2, k3, p1, p2 };

inline constexpr std::array<Param, 9> kAllParams{
    Param::fu, Param::fv, Param::uc, Param::vc, Param::k1,
    Param::k2, Param::k3, Param::p1, Param::p2};

inline constexpr std::string_view param_name(Param p) {
  constexpr std::array<std::string_view, 9> names{
      "fu", "fv", "uc", "vc", "k1", "k2", "k3", "p1", "p2"};
  return names[static_cast<std::size_t>(p)];
}

inline std::optional<Param> param_from_name(std::string_view name) {
  for (Param p : kAllParams)
    if (param_name(p) == name) return p;
  return std::nullopt;
}

inline double& param_ref(Intrinsics& intr, Param p) {
  switch (p) {
    case Param::fu: return intr.fu;
    case Param::fv: return intr.fv;
    case Param::uc: return intr.uc;
    case Param::vc: return intr.vc;
    case Param::k1: return intr.kr[0];
    case Param::k2: return intr.kr[1];
    case Param::k3: return intr.kr[2];
    case Param::p1: return intr.kt[0];
    case Param::p2: return intr.kt[1];
  }
  throw InvalidArgument("unknown parameter");
}

inline double param_value(const Intrinsics& intr, Param p) {
  return param_ref(const_cast<Intrinsics&>(intr), p);
}

inline bool has_distortion(const Intrinsics& intr) {
  return intr.kr != std::array<double, 3>{} || intr.kt != std::array<double, 2>{};
}

inline bool is_finite(const Intrinsics& intr) {
  for (Param p : kAllParams)
    if (!std::isfinite(param_value(intr, p))) return false;
  return true;
}

// Throws InvalidArgument unless the focal lengths are positive, every field
// is finite and the principal point lies inside the image.
inline void check_intrinsics(const Intrinsics& intr, const ImageSize& size) {
  if (!is_finite(intr)) throw InvalidArgument("intrinsics must be finite");
  if (!(intr.fu > 0.0) || !(intr.fv > 0.0))
    throw InvalidArgument("focal lengths must be positive");
  check_size(size);
  if (intr.uc < 0.0 || intr.uc >= size.width || intr.vc < 0.0 ||
      intr.vc >= size.height)
    throw InvalidArgument("principal point outside the image");
}

// Intrinsics describing the same optics sampled on a grid `factor` times
// denser. Pixel centers sit at integer positions, hence the half-pixel terms.
inline Intrinsics scale_intrinsics(const Intrinsics& intr, double factor) {
  Intrinsics out = intr;
  out.fu = intr.fu * factor;
  out.fv = intr.fv * factor;
  out.uc = (intr.uc + 0.5) * factor - 0.5;
  out.vc = (intr.vc + 0.5) * factor - 0.5;
  return out;
}

inline std::string to_string(const Intrinsics& intr) {
  std::ostringstream os;
  os.precision(17);
  for (Param p : kAllParams) {
    if (p != Param::fu) os << ' ';
    os << param_name(p) << '=' << param_value(intr, p);
  }
  return os.str();
}

struct NormalizedPoint {
  double x = 0.0;
  double y = 0.0;
};

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

inline double distance(const PixelCoord& a, const PixelCoord& b) {
  return std::hypot(a.u - b.u, a.v - b.v);
}

inline double distance(const NormalizedPoint& a, const NormalizedPoint& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

namespace detail {

inline double radial_factor(double x, double y, const Intrinsics& intr) {
  const double r2 = x * x + y * y;
  return 1.0 + r2 * (intr.kr[0] + r2 * (intr.kr[1] + r2 * intr.kr[2]));
}

inline NormalizedPoint tangential_offset(double x, double y,
                                         const Intrinsics& intr) {
  const double p1 = intr.kt[0], p2 = intr.kt[1];
  const double r2 = x * x + y * y;
  return {2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
          p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y};
}

}  // namespace detail

inline NormalizedPoint distort_normalized(const NormalizedPoint& p,
                                          const Intrinsics& intr) {
  const double radial = detail::radial_factor(p.x, p.y, intr);
  const NormalizedPoint t = detail::tangential_offset(p.x, p.y, intr);
  return {p.x * radial + t.x, p.y * radial + t.y};
}

inline constexpr double kUndistortTol = 1e-12;
inline constexpr int kUndistortMaxIter = 50;

// Fixed-point inversion of distort_normalized seeded at the distorted point.
// Returns nullopt when the residual |distort(p) - pd| does not drop to `tol`
// within `max_iter` iterations.
inline std::optional<NormalizedPoint> try_undistort_normalized(
    const NormalizedPoint& pd, const Intrinsics& intr,
    double tol = kUndistortTol, int max_iter = kUndistortMaxIter) {
  if (!(tol > 0.0) || max_iter < 1)
    throw InvalidArgument("undistort needs tol > 0 and max_iter >= 1");
  NormalizedPoint p = pd;
  for (int i = 0; i < max_iter; ++i) {
    const double radial = detail::radial_factor(p.x, p.y, intr);
    const NormalizedPoint t = detail::tangential_offset(p.x, p.y, intr);
    p = {(pd.x - t.x) / radial, (pd.y - t.y) / radial};
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) return std::nullopt;
    if (distance(distort_normalized(p, intr), pd) <= tol) return p;
  }
  return std::nullopt;
}

inline NormalizedPoint undistort_normalized(const NormalizedPoint& pd,
                                            const Intrinsics& intr,
                                            double tol = kUndistortTol,
                                            int max_iter = kUndistortMaxIter) {
  if (auto p = try_undistort_normalized(pd, intr, tol, max_iter)) return *p;
  std::ostringstream os;
  os << "distortion inversion did not converge at (" << pd.x << ", " << pd.y
     << ")";
  throw NonConvergence(os.str());
}

inline PixelCoord pixel_from_normalized(const NormalizedPoint& p,
                                        const Intrinsics& intr) {
  return {intr.fu * p.x + intr.uc, intr.fv * p.y + intr.vc};
}

inline NormalizedPoint normalized_from_pixel(const PixelCoord& q,
                                             const Intrinsics& intr) {
  return {(q.u - intr.uc) / intr.fu, (q.v - intr.vc) / intr.fv};
}

inline PixelCoord project(const Point3& pt, const Intrinsics& intr) {
  if (!(pt.z > 0.0)) throw BehindCamera("point is not in front of the camera");
  const NormalizedPoint n{pt.x / pt.z, pt.y / pt.z};
  return pixel_from_normalized(distort_normalized(n, intr), intr);
}

// Pinhole projection ignoring distortion.
inline PixelCoord project_pinhole(const Point3& pt, const Intrinsics& intr) {
  if (!(pt.z > 0.0)) throw BehindCamera("point is not in front of the camera");
  return pixel_from_normalized({pt.x / pt.z, pt.y / pt.z}, intr);
}

}  // namespace miscalib
