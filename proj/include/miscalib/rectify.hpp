#pragma once

// Rectification maps: construction from intrinsics, validity masking, the
// centered aspect-preserving valid rectangle, crop/rescale composition and
// bilinear image remapping.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "miscalib/camera_model.hpp"
#include "miscalib/errors.hpp"
#include "miscalib/parallel.hpp"

namespace miscalib {

// Dense grid assigning every target pixel a continuous source position in
// the raw image. Row-major, target_size.width entries per row.
struct RectifyMap {
  ImageSize target_size;
  ImageSize raw_size;
  std::vector<PixelCoord> grid;

  RectifyMap() = default;
  RectifyMap(ImageSize target, ImageSize raw)
      : target_size(target), raw_size(raw), grid(target.area()) {}

  PixelCoord& at(int u, int v) {
    return grid[std::size_t(v) * target_size.width + u];
  }
  const PixelCoord& at(int u, int v) const {
    return grid[std::size_t(v) * target_size.width + u];
  }

  static RectifyMap identity(ImageSize size) {
    RectifyMap map(size, size);
    for (int v = 0; v < size.height; ++v)
      for (int u = 0; u < size.width; ++u) map.at(u, v) = {double(u), double(v)};
    return map;
  }
};

struct ValidityMask {
  ImageSize size;
  std::vector<std::uint8_t> bits;

  bool at(int u, int v) const {
    return bits[std::size_t(v) * size.width + u] != 0;
  }
  std::size_t count() const {
    return std::size_t(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
};

// Crop window in target-image pixels. With the window applied, output pixel
// (u, v) of a W x H result samples the target at (x0 + u*w/W, y0 + v*h/H).
struct CropRect {
  double x0 = 0.0;
  double y0 = 0.0;
  double w = 0.0;
  double h = 0.0;
};

// Intensity image, row-major with interleaved channels.
struct ImageBuffer {
  ImageSize size;
  int channels = 1;
  std::vector<float> samples;

  ImageBuffer() = default;
  ImageBuffer(ImageSize s, int c, float fill = 0.0f)
      : size(s), channels(c), samples(s.area() * std::size_t(c), fill) {}

  float& at(int u, int v, int c = 0) {
    return samples[(std::size_t(v) * size.width + u) * channels + c];
  }
  float at(int u, int v, int c = 0) const {
    return samples[(std::size_t(v) * size.width + u) * channels + c];
  }
};

inline bool in_raw_bounds(const PixelCoord& q, const ImageSize& raw) {
  return q.u >= 0.0 && q.u <= raw.width - 1.0 && q.v >= 0.0 &&
         q.v <= raw.height - 1.0;
}

// The map is stored as pixel + f * (distorted - undistorted). This equals
// pixel_from_normalized(distort_normalized(n)) algebraically and is exactly
// the identity grid when all distortion coefficients are zero.
inline RectifyMap build_map(const Intrinsics& intr, ImageSize size,
                            int jobs = 1) {
  check_intrinsics(intr, size);
  RectifyMap map(size, size);
  parallel_for(std::size_t(size.height), jobs, [&](std::size_t row) {
    const int v = int(row);
    for (int u = 0; u < size.width; ++u) {
      const NormalizedPoint n = normalized_from_pixel({double(u), double(v)}, intr);
      const NormalizedPoint d = distort_normalized(n, intr);
      map.at(u, v) = {u + intr.fu * (d.x - n.x), v + intr.fv * (d.y - n.y)};
    }
  });
  return map;
}

inline ValidityMask validity_mask(const RectifyMap& map) {
  ValidityMask mask{map.target_size, std::vector<std::uint8_t>(map.grid.size())};
  for (std::size_t i = 0; i < map.grid.size(); ++i)
    mask.bits[i] = in_raw_bounds(map.grid[i], map.raw_size) ? 1 : 0;
  return mask;
}

namespace detail {

// Extent of the scale-1 rectangle: as large as fits in `size` at `aspect`.
inline std::pair<double, double> base_extent(ImageSize size, double aspect) {
  if (std::abs(aspect - size.aspect()) <= 1e-12 * aspect)
    return {double(size.width), double(size.height)};
  if (aspect >= size.aspect()) return {double(size.width), size.width / aspect};
  return {size.height * aspect, double(size.height)};
}

// Centered rectangle at scale s. Its sample span [x0, x0 + w(W-1)/W] is
// symmetric about the image center (W-1)/2.
inline CropRect centered_rect(ImageSize size, double aspect, double s) {
  const auto [bw, bh] = base_extent(size, aspect);
  const double w = s * bw, h = s * bh;
  const double span_x = w * (size.width - 1) / size.width;
  const double span_y = h * (size.height - 1) / size.height;
  return {0.5 * (size.width - 1 - span_x), 0.5 * (size.height - 1 - span_y), w,
          h};
}

// Visits the rectangle's sample perimeter at 1-pixel steps, rounded to the
// nearest pixel; stops early when `visit` returns false.
template <typename Visit>
bool trace_perimeter(const CropRect& r, ImageSize size, Visit&& visit) {
  const double x1 = r.x0 + r.w * (size.width - 1) / size.width;
  const double y1 = r.y0 + r.h * (size.height - 1) / size.height;
  auto probe = [&](double x, double y) {
    const long iu = std::lround(x), iv = std::lround(y);
    if (iu < 0 || iv < 0 || iu >= size.width || iv >= size.height) return false;
    return bool(visit(int(iu), int(iv)));
  };
  const int nx = int(std::ceil(x1 - r.x0));
  const int ny = int(std::ceil(y1 - r.y0));
  for (int i = 0; i <= nx; ++i) {
    const double x = std::min(r.x0 + i, x1);
    if (!probe(x, r.y0) || !probe(x, y1)) return false;
  }
  for (int j = 0; j <= ny; ++j) {
    const double y = std::min(r.y0 + j, y1);
    if (!probe(r.x0, y) || !probe(x1, y)) return false;
  }
  return true;
}

template <typename IsValid>
CropRect search_centered_rect(ImageSize size, double aspect, IsValid&& valid) {
  if (!(aspect > 0.0) || !std::isfinite(aspect))
    throw InvalidArgument("aspect ratio must be positive");
  const int cu = int(std::lround(0.5 * (size.width - 1)));
  const int cv = int(std::lround(0.5 * (size.height - 1)));
  if (!valid(cu, cv)) throw NoValidRegion("center pixel of the map is invalid");

  auto fits = [&](double s) {
    return trace_perimeter(centered_rect(size, aspect, s), size, valid);
  };
  if (fits(1.0)) return centered_rect(size, aspect, 1.0);
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-3) {
    const double mid = 0.5 * (lo + hi);
    (fits(mid) ? lo : hi) = mid;
  }
  if (lo == 0.0) throw NoValidRegion("valid region around the center is empty");
  return centered_rect(size, aspect, lo);
}

}  // namespace detail

// Largest centered rectangle of the given aspect whose perimeter samples are
// all valid, found by bisection on scale to a resolution of 1e-3.
inline CropRect largest_valid_rect(const ValidityMask& mask, double aspect) {
  return detail::search_centered_rect(
      mask.size, aspect, [&](int u, int v) { return mask.at(u, v); });
}

// Same search, testing validity directly on the map without building a mask.
inline CropRect largest_valid_rect(const RectifyMap& map) {
  return detail::search_centered_rect(
      map.target_size, map.raw_size.aspect(),
      [&](int u, int v) { return in_raw_bounds(map.at(u, v), map.raw_size); });
}

// True when every perimeter sample of `rect` is valid in `mask`.
inline bool perimeter_valid(const ValidityMask& mask, const CropRect& rect) {
  return detail::trace_perimeter(rect, mask.size,
                                 [&](int u, int v) { return mask.at(u, v); });
}

namespace detail {

struct BilinearTap {
  int i0;
  double f;
};

// Clamped lower index and fraction; lands on the exact sample at integers.
inline BilinearTap bilinear_tap(double x, int n) {
  x = std::clamp(x, 0.0, double(n - 1));
  int i0 = std::min(int(std::floor(x)), n - 2);
  return {i0, x - i0};
}

}  // namespace detail

inline PixelCoord sample_map(const RectifyMap& map, double x, double y) {
  const auto tx = detail::bilinear_tap(x, map.target_size.width);
  const auto ty = detail::bilinear_tap(y, map.target_size.height);
  const PixelCoord& a = map.at(tx.i0, ty.i0);
  const PixelCoord& b = map.at(tx.i0 + 1, ty.i0);
  const PixelCoord& c = map.at(tx.i0, ty.i0 + 1);
  const PixelCoord& d = map.at(tx.i0 + 1, ty.i0 + 1);
  const double gx = 1.0 - tx.f, gy = 1.0 - ty.f;
  return {(a.u * gx + b.u * tx.f) * gy + (c.u * gx + d.u * tx.f) * ty.f,
          (a.v * gx + b.v * tx.f) * gy + (c.v * gx + d.v * tx.f) * ty.f};
}

inline RectifyMap crop_rescale_map(const RectifyMap& map, const CropRect& rect,
                                   int jobs = 1) {
  const ImageSize out_size = map.raw_size;
  RectifyMap out(out_size, map.raw_size);
  const double sx = rect.w / out_size.width;
  const double sy = rect.h / out_size.height;
  parallel_for(std::size_t(out_size.height), jobs, [&](std::size_t row) {
    const int v = int(row);
    const double y = rect.y0 + v * sy;
    for (int u = 0; u < out_size.width; ++u)
      out.at(u, v) = sample_map(map, rect.x0 + u * sx, y);
  });
  return out;
}

// Bilinear resampling of `img` at every map entry, clamping to the edge.
inline ImageBuffer remap_image(const ImageBuffer& img, const RectifyMap& map,
                               int jobs = 1) {
  if (!(img.size == map.raw_size))
    throw SizeMismatch("image size does not match the map's raw size");
  ImageBuffer out(map.target_size, img.channels);
  const int ch = img.channels;
  parallel_for(std::size_t(map.target_size.height), jobs, [&](std::size_t row) {
    const int v = int(row);
    for (int u = 0; u < map.target_size.width; ++u) {
      const PixelCoord q = map.at(u, v);
      const auto tx = detail::bilinear_tap(q.u, img.size.width);
      const auto ty = detail::bilinear_tap(q.v, img.size.height);
      const double gx = 1.0 - tx.f, gy = 1.0 - ty.f;
      for (int c = 0; c < ch; ++c) {
        const double a = img.at(tx.i0, ty.i0, c);
        const double b = img.at(tx.i0 + 1, ty.i0, c);
        const double cc = img.at(tx.i0, ty.i0 + 1, c);
        const double d = img.at(tx.i0 + 1, ty.i0 + 1, c);
        out.at(u, v, c) =
            float((a * gx + b * tx.f) * gy + (cc * gx + d * tx.f) * ty.f);
      }
    }
  });
  return out;
}

// M-hat for one parameter set: build, find the valid rectangle, crop and
// rescale back to the raw size.
inline RectifyMap rectified_map(const Intrinsics& intr, ImageSize size,
                                int jobs = 1) {
  const RectifyMap full = build_map(intr, size, jobs);
  return crop_rescale_map(full, largest_valid_rect(validity_mask(full),
                                                   size.aspect()),
                          jobs);
}

struct RectifyResult {
  ImageBuffer image;
  RectifyMap map;
  CropRect rect;
};

inline RectifyResult rectify_pipeline(const ImageBuffer& img,
                                      const Intrinsics& intr, int jobs = 1) {
  const RectifyMap full = build_map(intr, img.size, jobs);
  const CropRect rect =
      largest_valid_rect(validity_mask(full), img.size.aspect());
  RectifyMap cropped = crop_rescale_map(full, rect, jobs);
  ImageBuffer out = remap_image(img, cropped, jobs);
  return {std::move(out), std::move(cropped), rect};
}

// ---- map dump: "RMAP", u32 W, H, raw W, raw H, then W*H (sx, sy) float64,
// all little-endian, row-major.

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& buf, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf.push_back(static_cast<unsigned char>(bits & 0xffu));
    bits >>= 8;
  }
}

template <typename T>
T get_le(std::span<const unsigned char> buf, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (pos + sizeof(U) > buf.size()) throw ParseError("map dump is truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    bits |= U(buf[pos + i]) << (8 * i);
  pos += sizeof(U);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline std::vector<unsigned char> encode_map(const RectifyMap& map) {
  std::vector<unsigned char> buf{'R', 'M', 'A', 'P'};
  buf.reserve(20 + map.grid.size() * 16);
  detail::put_le(buf, std::uint32_t(map.target_size.width));
  detail::put_le(buf, std::uint32_t(map.target_size.height));
  detail::put_le(buf, std::uint32_t(map.raw_size.width));
  detail::put_le(buf, std::uint32_t(map.raw_size.height));
  for (const PixelCoord& q : map.grid) {
    detail::put_le(buf, q.u);
    detail::put_le(buf, q.v);
  }
  return buf;
}

inline RectifyMap decode_map(std::span<const unsigned char> buf) {
  if (buf.size() < 20 || std::memcmp(buf.data(), "RMAP", 4) != 0)
    throw ParseError("not a map dump (bad magic)");
  std::size_t pos = 4;
  const int w = int(detail::get_le<std::uint32_t>(buf, pos));
  const int h = int(detail::get_le<std::uint32_t>(buf, pos));
  const int rw = int(detail::get_le<std::uint32_t>(buf, pos));
  const int rh = int(detail::get_le<std::uint32_t>(buf, pos));
  RectifyMap map({w, h}, {rw, rh});
  if (buf.size() != 20 + map.grid.size() * 16)
    throw ParseError("map dump size does not match its header");
  for (PixelCoord& q : map.grid) {
    q.u = detail::get_le<double>(buf, pos);
    q.v = detail::get_le<double>(buf, pos);
  }
  return map;
}

inline void write_map(const std::string& path, const RectifyMap& map) {
  const auto buf = encode_map(map);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw IoError("failed writing " + path);
}

inline RectifyMap read_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return decode_map(buf);
}

}  // namespace miscalib
