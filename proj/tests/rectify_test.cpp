#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "miscalib/rectify.hpp"
#include "test_util.hpp"

namespace miscalib {
namespace {

using testing::kitti_like;
using testing::kKittiSize;
using testing::textured_image;

Intrinsics pinhole(double fu, double fv, double uc, double vc) {
  Intrinsics i;
  i.fu = fu;
  i.fv = fv;
  i.uc = uc;
  i.vc = vc;
  return i;
}

ValidityMask ring_mask(ImageSize size, int border) {
  ValidityMask m{size, std::vector<std::uint8_t>(size.area(), 0)};
  for (int v = border; v < size.height - border; ++v)
    for (int u = border; u < size.width - border; ++u)
      m.bits[std::size_t(v) * size.width + u] = 1;
  return m;
}

// Exhaustive oracle: scan centered rectangles from large to small and return
// the first whose every rounded sample position inside is valid.
CropRect exhaustive_rect(const ValidityMask& mask, double aspect) {
  const ImageSize s = mask.size;
  for (int k = 10000; k > 0; --k) {
    const CropRect r = detail::centered_rect(s, aspect, k / 10000.0);
    const double x1 = r.x0 + r.w * (s.width - 1) / s.width;
    const double y1 = r.y0 + r.h * (s.height - 1) / s.height;
    bool ok = true;
    for (long v = std::lround(r.y0); ok && v <= std::lround(y1); ++v)
      for (long u = std::lround(r.x0); ok && u <= std::lround(x1); ++u)
        ok = u >= 0 && v >= 0 && u < s.width && v < s.height && mask.at(int(u), int(v));
    if (ok) return r;
  }
  return {};
}

TEST(BuildMap, ZeroDistortionIsIdentity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> f(50, 2000);
  for (int i = 0; i < 5; ++i) {
    const ImageSize size{64, 48};
    const Intrinsics intr = pinhole(f(rng), f(rng), 31.5 + i, 20.25 - i);
    const RectifyMap map = build_map(intr, size);
    ASSERT_EQ(map.target_size, size);
    ASSERT_EQ(map.raw_size, size);
    for (int v = 0; v < size.height; ++v)
      for (int u = 0; u < size.width; ++u) {
        ASSERT_NEAR(map.at(u, v).u, u, 1e-12);
        ASSERT_NEAR(map.at(u, v).v, v, 1e-12);
      }
  }
}

TEST(BuildMap, MatchesForwardModel) {
  const Intrinsics intr = kitti_like();
  const RectifyMap map = build_map(intr, kKittiSize);
  for (auto [u, v] : {std::pair{0, 0}, {1241, 374}, {100, 300}, {620, 10}}) {
    const auto expect = pixel_from_normalized(
        distort_normalized(normalized_from_pixel({double(u), double(v)}, intr), intr),
        intr);
    EXPECT_NEAR(map.at(u, v).u, expect.u, 1e-9);
    EXPECT_NEAR(map.at(u, v).v, expect.v, 1e-9);
  }
}

TEST(BuildMap, BarrelCornersMapInward) {
  const Intrinsics intr = kitti_like();
  const RectifyMap map = build_map(intr, kKittiSize);
  const int W = kKittiSize.width - 1, H = kKittiSize.height - 1;
  for (auto [u, v] : {std::pair{0, 0}, {W, 0}, {0, H}, {W, H}}) {
    const PixelCoord q = map.at(u, v);
    EXPECT_GT(std::hypot(q.u - u, q.v - v), 0.0);
    // Closer to the principal point than the corner itself.
    EXPECT_LT(std::hypot(q.u - intr.uc, q.v - intr.vc), std::hypot(u - intr.uc, v - intr.vc));
  }
}

TEST(BuildMap, PrincipalPointFixed) {
  Intrinsics intr = kitti_like();
  intr.uc = 620;
  intr.vc = 180;
  const RectifyMap map = build_map(intr, kKittiSize);
  EXPECT_NEAR(map.at(620, 180).u, 620, 1e-12);
  EXPECT_NEAR(map.at(620, 180).v, 180, 1e-12);
}

TEST(BuildMap, IndependentOfJobs) {
  const RectifyMap a = build_map(kitti_like(), kKittiSize, 1);
  const RectifyMap b = build_map(kitti_like(), kKittiSize, 4);
  ASSERT_EQ(a.grid.size(), b.grid.size());
  EXPECT_EQ(0, std::memcmp(a.grid.data(), b.grid.data(), a.grid.size() * sizeof(PixelCoord)));
}

TEST(ValidityMaskTest, IdentityAllValid) {
  const ValidityMask m = validity_mask(RectifyMap::identity({16, 12}));
  EXPECT_EQ(m.count(), 16u * 12u);
}

TEST(ValidityMaskTest, OutOfBoundsEntry) {
  RectifyMap map = RectifyMap::identity({16, 12});
  map.at(3, 4) = {-0.5, 10};
  const ValidityMask m = validity_mask(map);
  EXPECT_FALSE(m.at(3, 4));
  EXPECT_EQ(m.count(), 16u * 12u - 1);
}

TEST(ValidityMaskTest, PincushionRing) {
  const ImageSize size{64, 48};
  Intrinsics intr = pinhole(40, 40, 31.5, 23.5);
  intr.kr = {0.3, 0.0, 0.0};
  const RectifyMap map = build_map(intr, size);
  const ValidityMask m = validity_mask(map);
  std::size_t brute = 0;
  for (const PixelCoord& q : map.grid)
    brute += (q.u >= 0 && q.u <= 63 && q.v >= 0 && q.v <= 47) ? 1 : 0;
  EXPECT_EQ(m.count(), brute);
  EXPECT_FALSE(m.at(0, 0));
  EXPECT_FALSE(m.at(63, 47));
  EXPECT_TRUE(m.at(32, 24));
  EXPECT_LT(m.count(), size.area());
}

TEST(LargestValidRect, FullImage) {
  const ValidityMask m = validity_mask(RectifyMap::identity({640, 480}));
  const CropRect r = largest_valid_rect(m, 640.0 / 480.0);
  EXPECT_NEAR(r.x0, 0, 1);
  EXPECT_NEAR(r.y0, 0, 1);
  EXPECT_NEAR(r.w, 640, 1);
  EXPECT_NEAR(r.h, 480, 1);
}

TEST(LargestValidRect, RingMatchesExhaustiveOracle) {
  const ValidityMask m = ring_mask({64, 48}, 4);
  const CropRect r = largest_valid_rect(m, 4.0 / 3.0);
  const CropRect oracle = exhaustive_rect(m, 4.0 / 3.0);
  // Expected about (4, 3, 56, 42); compare every edge.
  for (const CropRect& c : {oracle, CropRect{4, 3, 56, 42}}) {
    EXPECT_NEAR(r.x0, c.x0, 1);
    EXPECT_NEAR(r.y0, c.y0, 1);
    EXPECT_NEAR(r.x0 + r.w, c.x0 + c.w, 1);
    EXPECT_NEAR(r.y0 + r.h, c.y0 + c.h, 1);
  }
  EXPECT_NEAR(r.w, r.h * 4.0 / 3.0, 1);
  EXPECT_TRUE(perimeter_valid(m, r));
}

TEST(LargestValidRect, InvalidCenter) {
  ValidityMask m = validity_mask(RectifyMap::identity({64, 48}));
  m.bits[std::size_t(24) * 64 + 32] = 0;
  EXPECT_THROW(largest_valid_rect(m, 4.0 / 3.0), NoValidRegion);
}

TEST(LargestValidRect, PerimeterNeverInvalid) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> k(0.05, 0.6);
  for (int i = 0; i < 30; ++i) {
    const ImageSize size{80, 30};
    Intrinsics intr = pinhole(50, 52, 39.5, 14.5);
    intr.kr = {k(rng), 0.2 * k(rng), 0.0};
    const ValidityMask m = validity_mask(build_map(intr, size));
    const CropRect r = largest_valid_rect(m, size.aspect());
    EXPECT_TRUE(perimeter_valid(m, r));
    EXPECT_LE(std::abs(r.w - r.h * size.aspect()), 1.0);
    EXPECT_GE(r.x0, -1e-9);
    EXPECT_GE(r.y0, -1e-9);
    EXPECT_LE(r.x0 + r.w, size.width + 1e-9);
    EXPECT_LE(r.y0 + r.h, size.height + 1e-9);
  }
}

TEST(LargestValidRect, MapOverloadAgreesWithMask) {
  Intrinsics intr = pinhole(50, 52, 39.5, 14.5);
  intr.kr = {0.4, 0.05, 0.0};
  const RectifyMap map = build_map(intr, {80, 30});
  const CropRect a = largest_valid_rect(map);
  const CropRect b = largest_valid_rect(validity_mask(map), map.raw_size.aspect());
  EXPECT_EQ(a.x0, b.x0);
  EXPECT_EQ(a.w, b.w);
}

TEST(CropRescaleMap, FullRectIsIdentity) {
  const RectifyMap map = build_map(kitti_like(), kKittiSize);
  const RectifyMap out =
      crop_rescale_map(map, {0, 0, double(kKittiSize.width), double(kKittiSize.height)});
  ASSERT_EQ(out.grid.size(), map.grid.size());
  for (std::size_t i = 0; i < map.grid.size(); ++i) {
    ASSERT_NEAR(out.grid[i].u, map.grid[i].u, 1e-12);
    ASSERT_NEAR(out.grid[i].v, map.grid[i].v, 1e-12);
  }
}

TEST(CropRescaleMap, HalfSizeIsAffine) {
  const RectifyMap id = RectifyMap::identity({8, 6});
  const CropRect rect{2, 1.5, 4, 3};
  const RectifyMap out = crop_rescale_map(id, rect);
  for (int v = 0; v < 6; ++v)
    for (int u = 0; u < 8; ++u) {
      EXPECT_NEAR(out.at(u, v).u, 2 + 0.5 * u, 1e-12);
      EXPECT_NEAR(out.at(u, v).v, 1.5 + 0.5 * v, 1e-12);
    }
}

TEST(RemapImage, IdentityIsExact) {
  const ImageBuffer img = textured_image({40, 30}, 3);
  const ImageBuffer out = remap_image(img, RectifyMap::identity(img.size));
  EXPECT_EQ(out.samples, img.samples);
}

TEST(RemapImage, HalfPixelShiftOnRamp) {
  const ImageSize size{10, 4};
  ImageBuffer ramp(size, 1);
  for (int v = 0; v < size.height; ++v)
    for (int u = 0; u < size.width; ++u) ramp.at(u, v) = float(3 * u + 1);
  RectifyMap map = RectifyMap::identity(size);
  for (PixelCoord& q : map.grid) q.u += 0.5;
  const ImageBuffer out = remap_image(ramp, map);
  for (int v = 0; v < size.height; ++v) {
    for (int u = 0; u + 1 < size.width; ++u)
      EXPECT_FLOAT_EQ(out.at(u, v), 0.5f * (ramp.at(u, v) + ramp.at(u + 1, v)));
    // Clamped at the right edge.
    EXPECT_FLOAT_EQ(out.at(size.width - 1, v), ramp.at(size.width - 1, v));
  }
}

TEST(RemapImage, ConstantImageStaysConstant) {
  const auto [intr, size] = testing::kitti_scaled(0.05);
  const ImageBuffer flat(size, 1, 77.0f);
  const ImageBuffer out = remap_image(flat, build_map(intr, size));
  for (float s : out.samples) EXPECT_FLOAT_EQ(s, 77.0f);
}

TEST(RemapImage, OutputWithinInputRange) {
  const auto [intr, size] = testing::kitti_scaled(0.1);
  const ImageBuffer img = textured_image(size, 1, 2);
  auto [lo, hi] = std::minmax_element(img.samples.begin(), img.samples.end());
  RectifyMap map = build_map(intr, size);
  for (PixelCoord& q : map.grid) q.u += 3.3;  // push some samples out of bounds
  const ImageBuffer out = remap_image(img, map);
  for (float s : out.samples) {
    EXPECT_GE(s, *lo);
    EXPECT_LE(s, *hi);
  }
}

TEST(RemapImage, SizeMismatch) {
  EXPECT_THROW(remap_image(ImageBuffer({10, 10}, 1), RectifyMap::identity({12, 10})),
               SizeMismatch);
}

TEST(RectifyPipeline, ZeroDistortionIsExactIdentity) {
  const ImageBuffer img = textured_image({64, 48}, 1);
  const auto res = rectify_pipeline(img, pinhole(70, 75, 30.2, 25.9));
  EXPECT_EQ(res.image.samples, img.samples);
  const RectifyMap id = RectifyMap::identity(img.size);
  for (std::size_t i = 0; i < id.grid.size(); ++i) {
    ASSERT_EQ(res.map.grid[i].u, id.grid[i].u);
    ASSERT_EQ(res.map.grid[i].v, id.grid[i].v);
  }
}

TEST(RectifyPipeline, ComposesTheStages) {
  const auto [intr, size] = testing::kitti_scaled(0.25);
  Intrinsics pin = intr;
  pin.kr = {0.25, 0.02, 0.0};  // pincushion so the crop is non-trivial
  const ImageBuffer img = textured_image(size, 3);
  const auto res = rectify_pipeline(img, pin);
  const RectifyMap full = build_map(pin, size);
  const CropRect rect = largest_valid_rect(validity_mask(full), size.aspect());
  EXPECT_LT(rect.w, size.width);
  const RectifyMap expect = crop_rescale_map(full, rect);
  ASSERT_EQ(res.map.grid.size(), expect.grid.size());
  for (std::size_t i = 0; i < expect.grid.size(); ++i) {
    ASSERT_EQ(res.map.grid[i].u, expect.grid[i].u);
    ASSERT_EQ(res.map.grid[i].v, expect.grid[i].v);
  }
  EXPECT_EQ(res.image.size, img.size);
  EXPECT_EQ(res.map.target_size, size);
}

TEST(RectifyPipeline, OutputAlwaysRawSized) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> k(-0.4, 0.4);
  for (int i = 0; i < 10; ++i) {
    auto [intr, size] = testing::kitti_scaled(0.1);
    intr.kr = {k(rng), 0.1 * k(rng), 0.0};
    const auto res = rectify_pipeline(textured_image(size, 1), intr);
    EXPECT_EQ(res.image.size, size);
    EXPECT_EQ(res.map.target_size, size);
    EXPECT_EQ(res.map.raw_size, size);
  }
}

TEST(MapDump, RoundTripAndLayout) {
  const auto [intr, size] = testing::kitti_scaled(0.025);
  ASSERT_EQ(size, (ImageSize{31, 9}));
  RectifyMap map = build_map(intr, size);
  const auto bytes = encode_map(map);
  ASSERT_EQ(bytes.size(), 20u + 31u * 9u * 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RMAP");
  EXPECT_EQ(bytes[4], 31);
  EXPECT_EQ(bytes[8], 9);
  double first = 0;
  std::memcpy(&first, bytes.data() + 20, 8);  // host is little-endian here
  EXPECT_EQ(first, map.grid[0].u);
  const RectifyMap back = decode_map(bytes);
  EXPECT_EQ(back.target_size, map.target_size);
  for (std::size_t i = 0; i < map.grid.size(); ++i) {
    ASSERT_EQ(back.grid[i].u, map.grid[i].u);
    ASSERT_EQ(back.grid[i].v, map.grid[i].v);
  }
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_map(truncated), ParseError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_map(bad), ParseError);
}

}  // namespace
}  // namespace miscalib
