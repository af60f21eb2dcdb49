#pragma once

// Multiplicative parameter perturbation and bin-slot rejection sampling that
// shapes APPD labels into an approximately uniform distribution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "miscalib/appd.hpp"
#include "miscalib/camera_model.hpp"
#include "miscalib/errors.hpp"
#include "miscalib/keyvalue.hpp"
#include "miscalib/parallel.hpp"

namespace miscalib {

struct Interval {
  double lo = 1.0;
  double hi = 1.0;

  bool contains(double x) const { return lo <= x && x <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

// Multiplicative factor intervals. The defaults vary focal lengths from -5%
// to +20%, the principal point by +-5% and distortion coefficients by +-15%.
struct PerturbRanges {
  Interval focal{0.95, 1.20};
  Interval center{0.95, 1.05};
  Interval distortion{0.85, 1.15};
  // Intervals that exclude 1.0 are rejected unless this is set.
  bool biased = false;
  // When > 0, distortion coefficients whose reference value is exactly zero
  // receive an additive Uniform(-eps, eps) draw instead of a factor.
  double zero_epsilon = 0.0;

  static PerturbRanges none() {
    return {{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, false, 0.0};
  }

  const Interval& interval_for(Param p) const {
    switch (p) {
      case Param::fu:
      case Param::fv: return focal;
      case Param::uc:
      case Param::vc: return center;
      default: return distortion;
    }
  }

  friend bool operator==(const PerturbRanges&, const PerturbRanges&) = default;
};

inline void check_ranges(const PerturbRanges& r) {
  for (const Interval* iv : {&r.focal, &r.center, &r.distortion}) {
    if (!std::isfinite(iv->lo) || !std::isfinite(iv->hi) || iv->lo > iv->hi)
      throw InvalidArgument("perturbation interval needs finite lo <= hi");
    if (!r.biased && !iv->contains(1.0))
      throw InvalidArgument(
          "perturbation interval excludes 1.0; set biased to allow it");
  }
  if (!(r.zero_epsilon >= 0.0)) throw InvalidArgument("zero_epsilon must be >= 0");
}

struct SamplerConfig {
  std::size_t n_samples = 1000;
  int n_bins = 10;
  // Upper label bound in percent of the diagonal; 0 means "estimate by pilot".
  double appd_max = 0.0;
  double zero_fraction = 0.01;
  std::size_t max_attempts_per_slot = 1000;
  std::uint64_t seed = 0;
  std::size_t n_pilot = 2000;

  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

inline void check_config(const SamplerConfig& cfg) {
  if (cfg.n_samples < 1) throw InvalidArgument("n_samples must be >= 1");
  if (cfg.n_bins < 2) throw InvalidArgument("n_bins must be >= 2");
  if (!(cfg.appd_max > 0.0) || !std::isfinite(cfg.appd_max))
    throw InvalidArgument("appd_max must be positive");
  if (!(cfg.zero_fraction >= 0.0 && cfg.zero_fraction <= 0.1))
    throw InvalidArgument("zero_fraction must lie in [0, 0.1]");
  if (cfg.max_attempts_per_slot < 1)
    throw InvalidArgument("max_attempts_per_slot must be >= 1");
}

// Keys: the SamplerConfig field names plus focal_lo, focal_hi, center_lo,
// center_hi, distortion_lo, distortion_hi, biased, zero_epsilon. Unset keys
// keep the values already in `cfg` / `ranges`.
inline void apply_sampler_keys(const KeyValues& kv, SamplerConfig& cfg,
                               PerturbRanges& ranges) {
  static const char* const known[] = {
      "n_samples", "n_bins", "appd_max", "zero_fraction", "max_attempts_per_slot",
      "seed", "n_pilot", "focal_lo", "focal_hi", "center_lo", "center_hi",
      "distortion_lo", "distortion_hi", "biased", "zero_epsilon"};
  for (const auto& [key, value] : kv.entries()) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; }) == std::end(known))
      throw ParseError("unknown sampler config key: " + key);
  }
  cfg.n_samples = kv.get_or<std::size_t>("n_samples", cfg.n_samples);
  cfg.n_bins = kv.get_or<int>("n_bins", cfg.n_bins);
  cfg.appd_max = kv.get_or<double>("appd_max", cfg.appd_max);
  cfg.zero_fraction = kv.get_or<double>("zero_fraction", cfg.zero_fraction);
  cfg.max_attempts_per_slot =
      kv.get_or<std::size_t>("max_attempts_per_slot", cfg.max_attempts_per_slot);
  cfg.seed = kv.get_or<std::uint64_t>("seed", cfg.seed);
  cfg.n_pilot = kv.get_or<std::size_t>("n_pilot", cfg.n_pilot);
  ranges.focal.lo = kv.get_or<double>("focal_lo", ranges.focal.lo);
  ranges.focal.hi = kv.get_or<double>("focal_hi", ranges.focal.hi);
  ranges.center.lo = kv.get_or<double>("center_lo", ranges.center.lo);
  ranges.center.hi = kv.get_or<double>("center_hi", ranges.center.hi);
  ranges.distortion.lo = kv.get_or<double>("distortion_lo", ranges.distortion.lo);
  ranges.distortion.hi = kv.get_or<double>("distortion_hi", ranges.distortion.hi);
  ranges.biased = kv.get_or<int>("biased", ranges.biased ? 1 : 0) != 0;
  ranges.zero_epsilon = kv.get_or<double>("zero_epsilon", ranges.zero_epsilon);
}

// ---- random streams

// Independent generator for draw `index` of the stream tagged `stream`.
// A pure function of its arguments, so candidates can be produced in any
// order or on any worker.
inline std::mt19937_64 draw_rng(std::uint64_t seed, std::uint64_t stream,
                                std::uint64_t index) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32),
                    std::uint32_t(stream), std::uint32_t(index),
                    std::uint32_t(index >> 32)};
  return std::mt19937_64(seq);
}

// Uniform double in [lo, hi] from the top 53 bits of one generator output.
template <typename Rng>
double uniform(Rng& rng, double lo, double hi) {
  const double t = double(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * t;
}

inline constexpr std::uint64_t kSampleStream = 1;
inline constexpr std::uint64_t kPilotStream = 2;

// Every parameter gets an independent draw, in the fixed order fu, fv, uc,
// vc, k1, k2, k3, p1, p2.
template <typename Rng>
Intrinsics sample_params(const Intrinsics& theta_star, const PerturbRanges& ranges,
                         Rng& rng) {
  Intrinsics out = theta_star;
  for (Param p : kAllParams) {
    const Interval& iv = ranges.interval_for(p);
    const double t = uniform(rng, 0.0, 1.0);
    double& value = param_ref(out, p);
    const bool distortion = p != Param::fu && p != Param::fv &&
                            p != Param::uc && p != Param::vc;
    if (distortion && value == 0.0 && ranges.zero_epsilon > 0.0)
      value = ranges.zero_epsilon * (2.0 * t - 1.0);
    else
      value *= iv.lo + (iv.hi - iv.lo) * t;
  }
  return out;
}

namespace detail {

// Linear-interpolated quantile of an unsorted sample.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * double(values.size() - 1);
  const std::size_t i = std::size_t(std::floor(pos));
  if (i + 1 >= values.size()) return values.back();
  const double f = pos - double(i);
  return values[i] * (1.0 - f) + values[i + 1] * f;
}

}  // namespace detail

// 95th percentile of APPD over n_pilot unconstrained draws. Draws that have
// no valid region are skipped.
inline double pilot_appd_max(const Intrinsics& theta_star, ImageSize size,
                             const PerturbRanges& ranges, std::size_t n_pilot,
                             std::uint64_t seed, int jobs = 1) {
  if (n_pilot < 100) throw InvalidArgument("n_pilot must be >= 100");
  check_ranges(ranges);
  const AppdEvaluator evaluate(theta_star, size);
  std::vector<std::optional<double>> values(n_pilot);
  parallel_for(n_pilot, jobs, [&](std::size_t i) {
    auto rng = draw_rng(seed, kPilotStream, i);
    try {
      values[i] = evaluate(sample_params(theta_star, ranges, rng));
    } catch (const NoValidRegion&) {
    }
  });
  std::vector<double> ok;
  for (const auto& v : values)
    if (v) ok.push_back(*v);
  return detail::quantile(std::move(ok), 0.95);
}

struct LabeledPerturbation {
  Intrinsics theta;
  double appd = 0.0;
  // Index into the sampling stream; -1 for the unperturbed reference entries.
  std::int64_t draw_index = -1;
};

struct BinStarvation {
  int bin = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t wanted = 0;
  std::size_t filled = 0;
};

struct SamplingResult {
  std::vector<LabeledPerturbation> samples;
  std::vector<BinStarvation> starvation;
  std::size_t attempts = 0;
  std::size_t rejected_no_region = 0;
  double appd_max = 0.0;

  bool starved() const { return !starvation.empty(); }
};

inline std::size_t zero_count(const SamplerConfig& cfg) {
  return std::size_t(std::llround(cfg.zero_fraction * double(cfg.n_samples)));
}

// Label bin in [0, n_bins) for appd in (0, appd_max]; -1 outside that range.
inline int label_bin(double value, double appd_max, int n_bins) {
  if (!(value > 0.0) || value > appd_max) return -1;
  return std::min(n_bins - 1, int(value / appd_max * n_bins));
}

// Reference entries come first, followed by admitted draws in draw order.
// When a bin cannot be filled within max_attempts_per_slot times the number
// of nonzero slots, the partial result carries a per-bin starvation report.
inline SamplingResult sample_uniform_appd(const Intrinsics& theta_star,
                                          ImageSize size,
                                          const PerturbRanges& ranges,
                                          const SamplerConfig& cfg,
                                          int jobs = 1) {
  check_config(cfg);
  check_ranges(ranges);
  check_intrinsics(theta_star, size);

  SamplingResult result;
  result.appd_max = cfg.appd_max;
  const std::size_t zeros = std::min(zero_count(cfg), cfg.n_samples);
  for (std::size_t i = 0; i < zeros; ++i)
    result.samples.push_back({theta_star, 0.0, -1});

  const std::size_t slots = cfg.n_samples - zeros;
  std::vector<std::size_t> wanted(std::size_t(cfg.n_bins), slots / cfg.n_bins);
  for (std::size_t b = 0; b < slots % std::size_t(cfg.n_bins); ++b) ++wanted[b];
  std::vector<std::size_t> filled(std::size_t(cfg.n_bins), 0);
  std::size_t remaining = slots;

  const AppdEvaluator evaluate(theta_star, size);
  const std::size_t budget = cfg.max_attempts_per_slot * slots;
  const std::size_t batch = std::size_t(std::max(jobs, 1)) * 32;
  std::vector<std::optional<LabeledPerturbation>> candidates;

  std::size_t next = 0;
  while (remaining > 0 && next < budget) {
    const std::size_t count = std::min(batch, budget - next);
    candidates.assign(count, std::nullopt);
    parallel_for(count, jobs, [&](std::size_t k) {
      const std::uint64_t index = next + k;
      auto rng = draw_rng(cfg.seed, kSampleStream, index);
      Intrinsics theta = sample_params(theta_star, ranges, rng);
      try {
        candidates[k] = LabeledPerturbation{theta, evaluate(theta),
                                            std::int64_t(index)};
      } catch (const NoValidRegion&) {
      }
    });
    // Admission is serial in draw order.
    for (std::size_t k = 0; k < count && remaining > 0; ++k) {
      ++result.attempts;
      if (!candidates[k]) {
        ++result.rejected_no_region;
        continue;
      }
      const int bin = label_bin(candidates[k]->appd, cfg.appd_max, cfg.n_bins);
      if (bin < 0 || filled[bin] >= wanted[bin]) continue;
      ++filled[bin];
      --remaining;
      result.samples.push_back(*candidates[k]);
    }
    next += count;
  }

  const double width = cfg.appd_max / cfg.n_bins;
  for (int b = 0; b < cfg.n_bins; ++b)
    if (filled[b] < wanted[b])
      result.starvation.push_back(
          {b, b * width, (b + 1) * width, wanted[b], filled[b]});
  return result;
}

inline std::string describe(const BinStarvation& s) {
  std::ostringstream os;
  os << "bin " << s.bin << " (" << s.lo << ", " << s.hi << "]: filled "
     << s.filled << " of " << s.wanted;
  return os.str();
}

}  // namespace miscalib
