// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "appd_oracle.hpp"
#include "miscalib/miscalib.hpp"
#include "test_util.hpp"

namespace miscalib {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Collects failed checks; detail keeps the measured numbers for the report.
class Checks {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  Outcome finish(const std::string& detail) const {
    if (failures_.empty()) return {true, detail};
    std::string text = detail + "; failed: " + failures_.front();
    if (failures_.size() > 1)
      text += " (+" + std::to_string(failures_.size() - 1) + " more)";
    return {false, text};
  }

 private:
  std::vector<std::string> failures_;
};

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

const std::vector<double> kSweepFactors{0.90, 0.95, 1.00, 1.05, 1.10, 1.15, 1.20};

// A 4:3 calibration with moderate barrel distortion for tiny frames.
Intrinsics small_frame_intrinsics(ImageSize size) {
  Intrinsics k;
  k.fu = 0.9 * size.width;
  k.fv = 0.9 * size.width;
  k.uc = 0.5 * (size.width - 1) + 0.3;
  k.vc = 0.5 * (size.height - 1) - 0.2;
  k.kr = {-0.3, 0.1, -0.02};
  k.kt = {0.001, -0.0005};
  return k;
}

Outcome a1_oracle_equivalence() {
  const auto start = Clock::now();
  const std::vector<ImageSize> sizes{{16, 12}, {32, 24}, {48, 36}, {64, 48}};
  const PerturbRanges ranges;
  Checks checks;
  double worst = 0.0;
  for (std::size_t i = 0; i < 100; ++i) {
    const ImageSize size = sizes[i % sizes.size()];
    const Intrinsics base = small_frame_intrinsics(size);
    auto rng = draw_rng(101, 0, i);
    const Intrinsics a = sample_params(base, ranges, rng);
    const Intrinsics b = sample_params(base, ranges, rng);
    const double diff = std::abs(appd_from_params(a, b, size) -
                                 testing::oracle_appd_from_params(a, b, size));
    worst = std::max(worst, diff);
    checks.require(diff <= 1e-9, "pair " + std::to_string(i) + " differs by " +
                                     fmt("%.3e", diff));
  }
  const double elapsed = seconds_since(start);
  checks.require(elapsed < 5.0, "runtime " + fmt("%.2f s", elapsed));
  return checks.finish("100 pairs on 16x12..64x48, max |diff| = " + fmt("%.2e", worst) +
                       ", " + fmt("%.2f s", elapsed));
}

Outcome a2_identity_symmetry() {
  const auto [star, size] = testing::kitti_scaled(0.25);
  const PerturbRanges ranges;
  Checks checks;
  for (std::size_t i = 0; i < 100; ++i) {
    auto rng = draw_rng(202, 0, i);
    const Intrinsics a = sample_params(star, ranges, rng);
    const Intrinsics b = sample_params(star, ranges, rng);
    const RectifyMap ma = rectified_map(a, size);
    const RectifyMap mb = rectified_map(b, size);
    checks.require(appd(ma, rectified_map(a, size)) == 0.0,
                   "APPD(theta, theta) != 0 for draw " + std::to_string(i));
    checks.require(appd(ma, mb) == appd(mb, ma),
                   "asymmetric for draw " + std::to_string(i));
  }
  return checks.finish("100 random sets at 311x94");
}

// Sweep curves for every parameter, indexed like kAllParams.
std::vector<std::vector<SweepPoint>> sweep_all(const Intrinsics& star, ImageSize size) {
  const AppdEvaluator evaluate(star, size);
  std::vector<std::vector<SweepPoint>> curves;
  for (Param p : kAllParams) curves.push_back(sweep_parameter(evaluate, p, kSweepFactors));
  return curves;
}

double at_factor(const std::vector<SweepPoint>& curve, double factor) {
  for (const SweepPoint& s : curve)
    if (s.factor == factor) return s.appd;
  return std::nan("");
}

std::vector<std::vector<SweepPoint>> g_sweep_1x;

Outcome a3_sweep_shape() {
  const auto start = Clock::now();
  const Intrinsics star = testing::kitti_like();
  g_sweep_1x = sweep_all(star, testing::kKittiSize);
  Checks checks;
  const std::size_t unit = 2;
  for (std::size_t k = 0; k < kAllParams.size(); ++k) {
    const auto& c = g_sweep_1x[k];
    const std::string name(param_name(kAllParams[k]));
    for (const SweepPoint& s : c) checks.require(s.ok, name + " has no valid region");
    checks.require(c[unit].appd == 0.0, name + " nonzero at factor 1.0");
    for (std::size_t i = unit; i + 1 < c.size(); ++i)
      checks.require(c[i + 1].appd >= c[i].appd - 1e-3,
                     name + " decreases above 1.0 at " + fmt("%.2f", c[i + 1].factor));
    for (std::size_t i = unit; i > 0; --i)
      checks.require(c[i - 1].appd >= c[i].appd - 1e-3,
                     name + " decreases below 1.0 at " + fmt("%.2f", c[i - 1].factor));
  }
  auto curve = [&](Param p) { return g_sweep_1x[std::size_t(p)]; };
  const double fu = at_factor(curve(Param::fu), 1.10);
  const double fv = at_factor(curve(Param::fv), 1.10);
  const double uc = at_factor(curve(Param::uc), 1.05);
  const double vc = at_factor(curve(Param::vc), 1.05);
  checks.require(fu > fv, "APPD(fu x1.1) <= APPD(fv x1.1)");
  checks.require(uc > vc, "APPD(uc x1.05) <= APPD(vc x1.05)");
  const double elapsed = seconds_since(start);
  checks.require(elapsed < 30.0, "runtime " + fmt("%.2f s", elapsed));
  return checks.finish("9 params x 7 factors at 1242x375; fu1.1=" + fmt("%.4f", fu) +
                       " fv1.1=" + fmt("%.4f", fv) + " uc1.05=" + fmt("%.4f", uc) +
                       " vc1.05=" + fmt("%.4f", vc) + ", " + fmt("%.2f s", elapsed));
}

Outcome a4_resolution() {
  if (g_sweep_1x.empty()) g_sweep_1x = sweep_all(testing::kitti_like(), testing::kKittiSize);
  const ImageSize size2{2 * testing::kKittiSize.width, 2 * testing::kKittiSize.height};
  const auto sweep_2x = sweep_all(scale_intrinsics(testing::kitti_like(), 2.0), size2);
  Checks checks;
  double worst_abs = 0.0;
  for (std::size_t k = 0; k < kAllParams.size(); ++k)
    for (std::size_t i = 0; i < kSweepFactors.size(); ++i) {
      const double a = g_sweep_1x[k][i].appd, b = sweep_2x[k][i].appd;
      const double diff = std::abs(a - b);
      worst_abs = std::max(worst_abs, diff);
      checks.require(diff <= std::max(0.05 * std::max(a, b), 0.02),
                     std::string(param_name(kAllParams[k])) + " x" +
                         fmt("%.2f", kSweepFactors[i]) + ": " + fmt("%.4f", a) +
                         " vs " + fmt("%.4f", b));
    }
  return checks.finish("1242x375 vs 2484x750, max |diff| = " + fmt("%.4f", worst_abs));
}

Outcome a5_sampler() {
  const auto [star, size] = testing::kitti_scaled(0.25);
  SamplerConfig cfg;
  cfg.n_samples = 5000;
  cfg.n_bins = 10;
  cfg.seed = 505;
  const PerturbRanges ranges;
  const int jobs = int(std::max(1u, std::thread::hardware_concurrency()));

  auto run = [&] {
    SamplerConfig c = cfg;
    c.appd_max = pilot_appd_max(star, size, ranges, c.n_pilot, c.seed, jobs);
    return sample_uniform_appd(star, size, ranges, c, jobs);
  };
  const auto start = Clock::now();
  const SamplingResult first = run();
  const double elapsed = seconds_since(start);
  const SamplingResult second = run();

  Checks checks;
  std::vector<std::size_t> counts(cfg.n_bins, 0);
  std::size_t zeros = 0;
  for (const auto& s : first.samples) {
    if (s.appd == 0.0) ++zeros;
    else if (int b = label_bin(s.appd, first.appd_max, cfg.n_bins); b >= 0) ++counts[b];
  }
  double mean = 0.0;
  std::size_t nonzero_bins = 0;
  for (std::size_t c : counts)
    if (c) mean += double(c), ++nonzero_bins;
  mean = nonzero_bins ? mean / double(nonzero_bins) : 0.0;
  std::string histogram;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    histogram += (b ? " " : "") + std::to_string(counts[b]);
    if (counts[b])
      checks.require(counts[b] >= 0.5 * mean && counts[b] <= 2.0 * mean,
                     "bin " + std::to_string(b) + " count " + std::to_string(counts[b]));
  }
  checks.require(first.samples.size() == 5000, "only " +
                                                   std::to_string(first.samples.size()) +
                                                   " samples");
  checks.require(zeros == 50, std::to_string(zeros) + " zero labels");
  bool same = first.samples.size() == second.samples.size() &&
              first.appd_max == second.appd_max;
  for (std::size_t i = 0; same && i < first.samples.size(); ++i)
    same = first.samples[i].theta == second.samples[i].theta &&
           first.samples[i].appd == second.samples[i].appd;
  checks.require(same, "two runs with the same seed differ");
  checks.require(elapsed < 120.0, "runtime " + fmt("%.1f s", elapsed));
  return checks.finish("appd_max=" + fmt("%.4f", first.appd_max) + ", zeros=" +
                       std::to_string(zeros) + ", bins [" + histogram + "], " +
                       fmt("%.1f s", elapsed) + " per run");
}

Outcome a6_reprojection() {
  const Intrinsics star = testing::kitti_like();
  const FrustumSpec frustum{500, 2.0, 50.0, 606};
  const int jobs = int(std::max(1u, std::thread::hardware_concurrency()));
  const ReprojExperiment exp = run_reproj_experiment(star, testing::kKittiSize,
                                                     PerturbRanges{}, 200, frustum, 606,
                                                     jobs);
  Checks checks;
  checks.require(exp.spearman_fixed_projection >= 0.9,
                 "Spearman " + fmt("%.4f", exp.spearman_fixed_projection));
  for (auto run : {run_fixed_projection, run_fixed_rectification}) {
    const ReprojResult r = run(star, star, testing::kKittiSize, frustum);
    checks.require(r.reproj_error == 0.0 && r.appd == 0.0,
                   std::string(protocol_name(r.protocol)) + " nonzero at reference");
  }
  const std::string csv_path = "acceptance_reproj_scatter.csv";
  std::ofstream csv(csv_path);
  csv << "sample_index,appd,fixed_projection,fixed_rectification\n"
      << std::setprecision(17);
  for (const auto& row : exp.rows)
    csv << row.sample_index << ',' << row.appd << ',' << row.fixed_projection.mean << ','
        << row.fixed_rectification.mean << '\n';
  checks.require(bool(csv), "cannot write " + csv_path);
  return checks.finish("200 draws x 500 points, Spearman fixed_projection=" +
                       fmt("%.4f", exp.spearman_fixed_projection) +
                       ", fixed_rectification=" +
                       fmt("%.4f", exp.spearman_fixed_rectification) +
                       " (reported only), scatter in " + csv_path);
}

Outcome a7_geometry() {
  Checks checks;
  const Intrinsics star = testing::kitti_like();
  auto rng = draw_rng(707, 0, 0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double r = 0.7 * std::sqrt(uniform(rng, 0.0, 1.0));
    const double phi = uniform(rng, 0.0, 2.0 * std::acos(-1.0));
    const NormalizedPoint x{r * std::cos(phi), r * std::sin(phi)};
    const NormalizedPoint back = undistort_normalized(distort_normalized(x, star), star);
    worst = std::max(worst, std::hypot(back.x - x.x, back.y - x.y));
  }
  checks.require(worst <= 1e-8, "round trip error " + fmt("%.2e", worst));

  const PerturbRanges ranges;
  const ImageSize size = testing::kKittiSize;
  const ImageBuffer raw = testing::textured_image(size, 3);
  double worst_aspect = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    auto draw = draw_rng(707, 1, i);
    const Intrinsics theta = i ? sample_params(star, ranges, draw) : star;
    const RectifyResult res = rectify_pipeline(raw, theta);
    const double aspect_px = std::abs(res.rect.w - res.rect.h * size.aspect());
    worst_aspect = std::max(worst_aspect, aspect_px);
    checks.require(aspect_px <= 1.0, "crop aspect off by " + fmt("%.3f px", aspect_px));
    checks.require(res.image.size == size && res.map.target_size == size,
                   "output not raw-sized for draw " + std::to_string(i));
  }

  Intrinsics pinhole = star;
  pinhole.kr = {0.0, 0.0, 0.0};
  pinhole.kt = {0.0, 0.0};
  const RectifyResult identity = rectify_pipeline(raw, pinhole);
  checks.require(identity.image.samples == raw.samples,
                 "zero-distortion output differs from input");
  return checks.finish("round trip max " + fmt("%.2e", worst) + " over 1000 points, aspect max " +
                       fmt("%.3f px", worst_aspect) + " over 20 sets");
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome a8_dataset() {
  testing::TempDir input("accept_input");
  testing::TempDir output("accept_output");
  const auto [star, size] = testing::kitti_scaled(0.1);
  for (unsigned i = 0; i < 3; ++i)
    write_png(input.str("frame" + std::to_string(i) + ".png"),
              testing::textured_image(size, 3, i));
  GenerateOptions opt;
  opt.image_dir = input.str();
  opt.calib = {"accept", star, size, "<acceptance>", CalibFormat::native};
  opt.per_image = 20;
  opt.sampler.n_bins = 5;
  opt.sampler.n_pilot = 200;
  opt.sampler.seed = 808;
  std::ostringstream log;
  opt.log = &log;

  Checks checks;
  opt.out_dir = output.str("a");
  generate_dataset(opt);
  opt.out_dir = output.str("b");
  generate_dataset(opt);

  const auto dir_a = output.path() / "a";
  const Manifest m = read_manifest((dir_a / "manifest.jsonl").string());
  const ValidationReport report = validate_manifest(m, dir_a, 10, 808);
  checks.require(report.ok(), report.ok() ? "" : report.problems.front());
  checks.require(report.recomputed_labels == 10,
                 std::to_string(report.recomputed_labels) + " labels recomputed");
  checks.require(report.max_label_error <= 1e-9,
                 "label error " + fmt("%.2e", report.max_label_error));

  const auto dir_b = output.path() / "b";
  checks.require(slurp(dir_a / "manifest.jsonl") == slurp(dir_b / "manifest.jsonl"),
                 "manifests differ");
  std::size_t identical = 0;
  for (const auto& r : m.records)
    if (slurp(dir_a / r.output_image) == slurp(dir_b / r.output_image)) ++identical;
  checks.require(identical == m.records.size(), "images differ between runs");
  return checks.finish(std::to_string(m.records.size()) + " records, max label error " +
                       fmt("%.2e", report.max_label_error) + ", " +
                       std::to_string(identical) + " identical images");
}

}  // namespace
}  // namespace miscalib

int main() {
  using namespace miscalib;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"A1", a1_oracle_equivalence}, {"A2", a2_identity_symmetry},
      {"A3", a3_sweep_shape},        {"A4", a4_resolution},
      {"A5", a5_sampler},            {"A6", a6_reprojection},
      {"A7", a7_geometry},           {"A8", a8_dataset},
  };
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    Outcome outcome;
    try {
      outcome = run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    if (!outcome.pass) ++failed;
    std::cout << id << ' ' << (outcome.pass ? "PASS" : "FAIL") << "  " << outcome.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
