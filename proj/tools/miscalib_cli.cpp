// miscalib: dataset generation, APPD evaluation, sweeps and reprojection
// simulations from the command line.
//
// Exit codes: 0 ok, 2 usage, 3 parse, 4 io, 5 no valid region,
// 6 non-convergence / too few points, 7 validation failed,
// 8 starvation under --strict, 9 size mismatch, 10 empty input,
// 11 invalid argument, 1 anything else.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "miscalib/miscalib.hpp"

namespace fs = std::filesystem;
using namespace miscalib;

namespace {

enum ExitCode {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kParse = 3,
  kIo = 4,
  kNoValidRegion = 5,
  kNumeric = 6,
  kValidation = 7,
  kStarvation = 8,
  kSizeMismatch = 9,
  kEmptyInput = 10,
  kInvalidArgument = 11,
};

struct Common {
  std::string calib;
  std::string calib_format = "native";
  int camera = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
  bool strict = false;

  std::uint64_t resolved_seed() const {
    if (seed) return *seed;
    if (const char* env = std::getenv("MISCALIB_SEED")) {
      try {
        std::size_t used = 0;
        const auto value = std::stoull(env, &used);
        if (used == std::string(env).size()) return value;
      } catch (const std::exception&) {
      }
      throw ParseError(std::string("MISCALIB_SEED is not an unsigned integer: ") + env);
    }
    return 0;
  }

  CalibFormat format() const {
    return calib_format == "kitti" ? CalibFormat::kitti : CalibFormat::native;
  }
};

void add_common(CLI::App* cmd, Common& c, bool needs_calib = true) {
  auto* calib = cmd->add_option("--calib", c.calib, "Reference calibration file");
  if (needs_calib) calib->required()->check(CLI::ExistingFile);
  cmd->add_option("--calib-format", c.calib_format, "Calibration file format")
      ->check(CLI::IsMember({"native", "kitti"}));
  cmd->add_option("--camera", c.camera, "Camera index for KITTI files")
      ->check(CLI::Range(0, 99));
  cmd->add_option("--seed", c.seed, "Random seed (fallback: MISCALIB_SEED, then 0)");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--strict", c.strict, "Treat starvation warnings as errors");
}

class ConfigPrinter {
 public:
  explicit ConfigPrinter(std::string command) {
    os_ << std::setprecision(17) << "# resolved config\ncommand = " << command << '\n';
  }
  template <typename T>
  ConfigPrinter& operator()(const std::string& key, const T& value) {
    os_ << key << " = " << value << '\n';
    return *this;
  }
  ConfigPrinter& calib(const CalibSource& c) {
    (*this)("calib", c.origin_path)("calib_format", format_name(c.format))(
        "camera_id", c.camera_id)("width", c.raw_size.width)("height",
                                                              c.raw_size.height);
    for (Param p : kAllParams)
      (*this)(std::string(param_name(p)), param_value(c.intrinsics, p));
    return *this;
  }
  void print() const { std::cout << os_.str() << "# end config\n"; }

 private:
  std::ostringstream os_;
};

fs::path ensure_out(const Common& c, const std::string& fallback) {
  fs::path out = c.out.empty() ? fs::path(fallback) : fs::path(c.out);
  fs::create_directories(out);
  return out;
}

// ---- rectify

struct RectifyArgs {
  Common common;
  std::string image;
  std::string perturbed;
  bool dump_map = false;
};

int run_rectify(const RectifyArgs& a) {
  const CalibSource calib = parse_calib(a.common.calib, a.common.format(), a.common.camera);
  const fs::path out = ensure_out(a.common, ".");
  ConfigPrinter cfg("rectify");
  cfg.calib(calib)("image", a.image)("perturbed_calib", a.perturbed)(
      "dump_map", a.dump_map)("seed", a.common.resolved_seed())("jobs", a.common.jobs)(
      "out", out.string());
  cfg.print();

  const ImageBuffer img = read_png(a.image);
  if (!(img.size == calib.raw_size))
    throw SizeMismatch("image is " + std::to_string(img.size.width) + "x" +
                       std::to_string(img.size.height) + " but calibration is " +
                       std::to_string(calib.raw_size.width) + "x" +
                       std::to_string(calib.raw_size.height));
  const RectifyResult result = rectify_pipeline(img, calib.intrinsics, a.common.jobs);
  write_png((out / "rectified.png").string(), result.image);
  std::cout << "wrote " << (out / "rectified.png").string() << '\n';
  std::cout << std::setprecision(6) << std::fixed << "crop x0=" << result.rect.x0
            << " y0=" << result.rect.y0 << " w=" << result.rect.w
            << " h=" << result.rect.h << '\n';
  if (a.dump_map) {
    write_map((out / "rectified_map.rmap").string(), result.map);
    std::cout << "wrote " << (out / "rectified_map.rmap").string() << '\n';
  }
  if (!a.perturbed.empty()) {
    const CalibSource pert = parse_calib(a.perturbed, a.common.format(), a.common.camera);
    const RectifyResult pr = rectify_pipeline(img, pert.intrinsics, a.common.jobs);
    write_png((out / "rectified_perturbed.png").string(), pr.image);
    std::cout << "wrote " << (out / "rectified_perturbed.png").string() << '\n';
    if (a.dump_map) write_map((out / "rectified_perturbed_map.rmap").string(), pr.map);
    std::cout << "appd = " << std::setprecision(6) << std::fixed
              << appd(result.map, pr.map, a.common.jobs) << '\n';
  }
  return kOk;
}

// ---- appd

struct AppdArgs {
  Common common;
  std::string perturbed;
};

int run_appd(const AppdArgs& a) {
  const CalibSource calib = parse_calib(a.common.calib, a.common.format(), a.common.camera);
  const CalibSource pert = parse_calib(a.perturbed, a.common.format(), a.common.camera);
  ConfigPrinter cfg("appd");
  cfg.calib(calib)("perturbed_calib", a.perturbed)("seed", a.common.resolved_seed())(
      "jobs", a.common.jobs);
  cfg.print();
  if (!(pert.raw_size == calib.raw_size))
    throw SizeMismatch("calibrations describe different image sizes");
  const double value =
      appd_from_params(calib.intrinsics, pert.intrinsics, calib.raw_size, a.common.jobs);
  std::cout << "appd = " << std::setprecision(6) << std::fixed << value << '\n';
  return kOk;
}

// ---- generate

struct GenerateArgs {
  Common common;
  std::string images;
  std::string config;
  std::size_t per_image = 1;
  std::optional<std::size_t> n;
  std::optional<int> n_bins;
  std::optional<double> zero_fraction;
  std::optional<double> appd_max;
  std::optional<std::size_t> max_attempts;
  std::optional<std::size_t> n_pilot;
};

int run_generate(const GenerateArgs& a) {
  GenerateOptions opt;
  opt.calib = parse_calib(a.common.calib, a.common.format(), a.common.camera);
  opt.image_dir = a.images;
  opt.per_image = a.per_image;
  if (!a.config.empty()) apply_sampler_keys(KeyValues::load(a.config), opt.sampler, opt.ranges);
  if (a.n_bins) opt.sampler.n_bins = *a.n_bins;
  if (a.zero_fraction) opt.sampler.zero_fraction = *a.zero_fraction;
  if (a.appd_max) opt.sampler.appd_max = *a.appd_max;
  if (a.max_attempts) opt.sampler.max_attempts_per_slot = *a.max_attempts;
  if (a.n_pilot) opt.sampler.n_pilot = *a.n_pilot;
  opt.sampler.seed = a.common.seed || std::getenv("MISCALIB_SEED")
                         ? a.common.resolved_seed()
                         : opt.sampler.seed;
  if (a.n) {
    const std::size_t n_images = list_images(a.images).size();
    if (n_images == 0) throw EmptyInputDir(a.images + " contains no PNG images");
    if (*a.n % n_images != 0)
      throw InvalidArgument("--n must be a multiple of the image count (" +
                            std::to_string(n_images) + ")");
    opt.per_image = *a.n / n_images;
  }
  opt.out_dir = ensure_out(a.common, "dataset").string();
  opt.jobs = a.common.jobs;

  ConfigPrinter cfg("generate");
  cfg.calib(opt.calib)("images", opt.image_dir)("per_image", opt.per_image)(
      "n_bins", opt.sampler.n_bins)("appd_max", opt.sampler.appd_max)(
      "zero_fraction", opt.sampler.zero_fraction)(
      "max_attempts_per_slot", opt.sampler.max_attempts_per_slot)(
      "n_pilot", opt.sampler.n_pilot)("focal", std::to_string(opt.ranges.focal.lo) +
                                                   "," + std::to_string(opt.ranges.focal.hi))(
      "center", std::to_string(opt.ranges.center.lo) + "," +
                    std::to_string(opt.ranges.center.hi))(
      "distortion", std::to_string(opt.ranges.distortion.lo) + "," +
                        std::to_string(opt.ranges.distortion.hi))(
      "seed", opt.sampler.seed)("jobs", opt.jobs)("out", opt.out_dir);
  cfg.print();

  const GenerateSummary summary = generate_dataset(opt);
  const Manifest& m = summary.manifest;
  const double appd_max = m.header.sampler.appd_max;
  const int bins = m.header.sampler.n_bins;
  std::vector<std::size_t> histogram(std::size_t(bins), 0);
  std::size_t zeros = 0;
  for (const auto& r : m.records) {
    if (r.appd == 0.0) ++zeros;
    else if (int b = label_bin(r.appd, appd_max, bins); b >= 0) ++histogram[b];
  }
  std::cout << std::setprecision(6) << std::fixed;
  std::cout << "records = " << m.records.size() << '\n'
            << "zero_labels = " << zeros << '\n'
            << "appd_max = " << appd_max << '\n'
            << "attempts = " << summary.sampling.attempts << '\n';
  std::cout << "histogram (bin, lo, hi, count):\n";
  for (int b = 0; b < bins; ++b)
    std::cout << b << ' ' << b * appd_max / bins << ' ' << (b + 1) * appd_max / bins
              << ' ' << histogram[b] << '\n';
  std::cout << "manifest = " << (fs::path(opt.out_dir) / "manifest.jsonl").string() << '\n';
  if (summary.sampling.starved()) {
    std::cout << "starvation: " << summary.sampling.starvation.size() << " bin(s)\n";
    if (a.common.strict) return kStarvation;
  }
  return kOk;
}

// ---- sweep

struct SweepArgs {
  Common common;
  std::vector<std::string> params{"fu", "fv", "uc", "vc", "k1"};
  std::vector<double> factors{0.90, 0.95, 1.00, 1.05, 1.10, 1.15, 1.20};
  double scale = 1.0;
};

int run_sweep(const SweepArgs& a) {
  const CalibSource calib = parse_calib(a.common.calib, a.common.format(), a.common.camera);
  std::vector<Param> params;
  for (const auto& name : a.params) {
    auto p = param_from_name(name);
    if (!p) throw InvalidArgument("unknown parameter: " + name);
    params.push_back(*p);
  }
  const ImageSize size{int(std::lround(calib.raw_size.width * a.scale)),
                       int(std::lround(calib.raw_size.height * a.scale))};
  const Intrinsics theta = scale_intrinsics(calib.intrinsics, a.scale);
  const fs::path out = ensure_out(a.common, ".");

  std::ostringstream factors;
  for (double f : a.factors) factors << (factors.tellp() > 0 ? "," : "") << f;
  std::ostringstream names;
  for (const auto& n : a.params) names << (names.tellp() > 0 ? "," : "") << n;
  ConfigPrinter cfg("sweep");
  cfg.calib(calib)("params", names.str())("factors", factors.str())("scale", a.scale)(
      "seed", a.common.resolved_seed())("jobs", a.common.jobs)("out", out.string());
  cfg.print();

  const AppdEvaluator evaluate(theta, size, 1);
  const auto csv_path = out / "sweep.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot open " + csv_path.string());
  csv << "param,factor,appd\n" << std::setprecision(17);
  bool any_failed = false;
  for (Param p : params) {
    for (const SweepPoint& s : sweep_parameter(evaluate, p, a.factors, a.common.jobs)) {
      csv << param_name(p) << ',' << s.factor << ',';
      if (s.ok) csv << s.appd;
      else {
        csv << "nan";
        any_failed = true;
      }
      csv << '\n';
    }
  }
  std::cout << "wrote " << csv_path.string() << '\n';
  return any_failed ? kNoValidRegion : kOk;
}

// ---- reproj

struct ReprojArgs {
  Common common;
  std::size_t n_perturbations = 200;
  std::size_t n_points = 500;
  double z_min = 2.0;
  double z_max = 50.0;
};

int run_reproj(const ReprojArgs& a) {
  const CalibSource calib = parse_calib(a.common.calib, a.common.format(), a.common.camera);
  const std::uint64_t seed = a.common.resolved_seed();
  const fs::path out = ensure_out(a.common, ".");
  const PerturbRanges ranges;
  ConfigPrinter cfg("reproj");
  cfg.calib(calib)("n_perturbations", a.n_perturbations)("n_points", a.n_points)(
      "z_min", a.z_min)("z_max", a.z_max)("seed", seed)("jobs", a.common.jobs)(
      "out", out.string());
  cfg.print();

  const FrustumSpec frustum{a.n_points, a.z_min, a.z_max, seed};
  const ReprojExperiment exp = run_reproj_experiment(
      calib.intrinsics, calib.raw_size, ranges, a.n_perturbations, frustum, seed,
      a.common.jobs);
  const auto csv_path = out / "reproj.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot open " + csv_path.string());
  csv << "protocol,sample_index,appd,reproj_error,n_valid\n" << std::setprecision(17);
  for (Protocol protocol : {Protocol::fixed_projection, Protocol::fixed_rectification})
    for (const auto& row : exp.rows) {
      const ReprojError& e = protocol == Protocol::fixed_projection
                                 ? row.fixed_projection
                                 : row.fixed_rectification;
      csv << protocol_name(protocol) << ',' << row.sample_index << ',' << row.appd
          << ',' << e.mean << ',' << e.n_valid << '\n';
    }
  std::cout << "wrote " << csv_path.string() << '\n'
            << std::setprecision(4) << std::fixed
            << "spearman fixed_projection = " << exp.spearman_fixed_projection << '\n'
            << "spearman fixed_rectification = " << exp.spearman_fixed_rectification
            << '\n';
  return kOk;
}

// ---- validate

struct ValidateArgs {
  Common common;
  std::string manifest;
  std::size_t recompute = 10;
};

int run_validate(const ValidateArgs& a) {
  fs::path path = a.manifest;
  if (path.empty()) path = fs::path(a.common.out.empty() ? "dataset" : a.common.out) / "manifest.jsonl";
  if (fs::is_directory(path)) path /= "manifest.jsonl";
  const std::uint64_t seed = a.common.resolved_seed();
  ConfigPrinter cfg("validate");
  cfg("manifest", path.string())("recompute", a.recompute)("seed", seed)("jobs",
                                                                         a.common.jobs);
  cfg.print();
  const Manifest m = read_manifest(path.string());
  const ValidationReport report =
      validate_manifest(m, path.parent_path(), a.recompute, seed, a.common.jobs);
  std::cout << "records = " << m.records.size() << '\n'
            << "recomputed_labels = " << report.recomputed_labels << '\n'
            << "max_label_error = " << std::setprecision(3) << std::scientific
            << report.max_label_error << '\n';
  for (const auto& p : report.problems) std::cerr << "invalid: " << p << '\n';
  if (!report.ok()) {
    std::cerr << report.problems.size() << " problem(s) found\n";
    return kValidation;
  }
  if (a.common.strict && !m.header.starvation.empty()) {
    std::cerr << "dataset was generated with starved bins\n";
    return kStarvation;
  }
  std::cout << "ok\n";
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return kParse;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const NoValidRegion*>(&e)) return kNoValidRegion;
  if (dynamic_cast<const NonConvergence*>(&e) || dynamic_cast<const TooFewValidPoints*>(&e))
    return kNumeric;
  if (dynamic_cast<const ValidationError*>(&e)) return kValidation;
  if (dynamic_cast<const SizeMismatch*>(&e)) return kSizeMismatch;
  if (dynamic_cast<const EmptyInputDir*>(&e)) return kEmptyInput;
  if (dynamic_cast<const InvalidArgument*>(&e)) return kInvalidArgument;
  return kOther;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera miscalibration dataset and metric toolkit"};
  app.require_subcommand(1);

  RectifyArgs rectify;
  auto* c_rectify = app.add_subcommand("rectify", "Rectify one image (crop + rescale)");
  add_common(c_rectify, rectify.common);
  c_rectify->add_option("--image", rectify.image, "Raw PNG image")
      ->required()
      ->check(CLI::ExistingFile);
  c_rectify->add_option("--perturbed-calib", rectify.perturbed,
                        "Second calibration; also prints APPD")
      ->check(CLI::ExistingFile);
  c_rectify->add_flag("--dump-map", rectify.dump_map, "Write the RMAP map dump");

  AppdArgs appd_args;
  auto* c_appd = app.add_subcommand("appd", "APPD between two calibrations");
  add_common(c_appd, appd_args.common);
  c_appd->add_option("--perturbed-calib", appd_args.perturbed, "Perturbed calibration")
      ->required()
      ->check(CLI::ExistingFile);

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Generate a labeled dataset");
  add_common(c_gen, gen.common);
  c_gen->add_option("--images", gen.images, "Directory of raw PNG images")->required();
  c_gen->add_option("--config", gen.config, "Sampler key-value config")
      ->check(CLI::ExistingFile);
  c_gen->add_option("--per-image", gen.per_image, "Samples per raw image")
      ->check(CLI::PositiveNumber);
  c_gen->add_option("--n", gen.n, "Total samples (multiple of the image count)")
      ->check(CLI::PositiveNumber);
  c_gen->add_option("--n-bins", gen.n_bins, "Label histogram bins");
  c_gen->add_option("--zero-fraction", gen.zero_fraction, "Fraction of exact-zero labels");
  c_gen->add_option("--appd-max", gen.appd_max, "Upper label bound (0: pilot estimate)");
  c_gen->add_option("--max-attempts", gen.max_attempts, "Attempts per slot");
  c_gen->add_option("--n-pilot", gen.n_pilot, "Pilot draws for appd_max");

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Single-parameter APPD sweeps (CSV)");
  add_common(c_sweep, sweep.common);
  c_sweep->add_option("--params", sweep.params, "Parameters to sweep")->delimiter(',');
  c_sweep->add_option("--factors", sweep.factors, "Multiplication factors")->delimiter(',');
  c_sweep->add_option("--scale", sweep.scale, "Evaluation resolution factor")
      ->check(CLI::PositiveNumber);

  ReprojArgs reproj;
  auto* c_reproj = app.add_subcommand("reproj", "APPD vs reprojection error (CSV)");
  add_common(c_reproj, reproj.common);
  c_reproj->add_option("--n-perturbations", reproj.n_perturbations, "Perturbed sets");
  c_reproj->add_option("--n-points", reproj.n_points, "3D points");
  c_reproj->add_option("--z-min", reproj.z_min, "Minimum depth");
  c_reproj->add_option("--z-max", reproj.z_max, "Maximum depth");

  ValidateArgs validate;
  auto* c_validate = app.add_subcommand("validate", "Re-check a generated dataset");
  add_common(c_validate, validate.common, false);
  c_validate->add_option("--manifest", validate.manifest,
                         "manifest.jsonl or dataset directory");
  c_validate->add_option("--recompute", validate.recompute, "Labels to recompute");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (c_rectify->parsed()) return run_rectify(rectify);
    if (c_appd->parsed()) return run_appd(appd_args);
    if (c_gen->parsed()) return run_generate(gen);
    if (c_sweep->parsed()) return run_sweep(sweep);
    if (c_reproj->parsed()) return run_reproj(reproj);
    if (c_validate->parsed()) return run_validate(validate);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kOther;
}
