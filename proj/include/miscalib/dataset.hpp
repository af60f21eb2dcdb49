#pragma once

// Calibration ingestion, semi-synthetic dataset generation and the JSON-lines
// manifest that indexes it.
//
// Layout of a generated dataset:
//   <out_dir>/manifest.jsonl      header line, then one record per line
//   <out_dir>/images/<id>.png     rectified sample images, raw-image sized

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "miscalib/appd.hpp"
#include "miscalib/camera_model.hpp"
#include "miscalib/errors.hpp"
#include "miscalib/image_io.hpp"
#include "miscalib/keyvalue.hpp"
#include "miscalib/parallel.hpp"
#include "miscalib/perturb_sampler.hpp"
#include "miscalib/rectify.hpp"

namespace miscalib {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kManifestVersion = 1;

enum class CalibFormat { native, kitti };

struct CalibSource {
  std::string camera_id;
  Intrinsics intrinsics;
  ImageSize raw_size;
  std::string origin_path;
  CalibFormat format = CalibFormat::native;
};

inline const char* format_name(CalibFormat f) {
  return f == CalibFormat::native ? "native" : "kitti";
}

namespace detail {

inline void check_focal(const Intrinsics& intr, const std::string& origin) {
  if (!(intr.fu > 0.0) || !(intr.fv > 0.0))
    throw NonPositiveFocal(origin + ": focal lengths must be positive");
}

inline void check_calib(const CalibSource& c) {
  check_focal(c.intrinsics, c.origin_path);
  try {
    check_intrinsics(c.intrinsics, c.raw_size);
  } catch (const InvalidArgument& e) {
    throw ParseError(c.origin_path + ": " + e.what());
  }
}

inline std::vector<double> parse_numbers(const std::string& text,
                                         const std::string& what) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ParseError(what + ": malformed number '" + token + "'");
    }
  }
  return out;
}

}  // namespace detail

// Native format: "key = value" lines with fu fv uc vc k1 k2 k3 p1 p2 width
// height, and an optional camera_id.
inline CalibSource parse_native_calib(std::istream& in, const std::string& origin) {
  const KeyValues kv = KeyValues::parse(in, origin);
  CalibSource c;
  c.origin_path = origin;
  c.format = CalibFormat::native;
  c.camera_id = kv.has("camera_id") ? kv.str("camera_id") : "camera";
  for (Param p : kAllParams)
    param_ref(c.intrinsics, p) = kv.number(std::string(param_name(p)));
  c.raw_size = {int(kv.unsigned_integer("width")), int(kv.unsigned_integer("height"))};
  detail::check_calib(c);
  return c;
}

// KITTI calib_cam_to_cam.txt subset: K_0X (3x3 row-major), D_0X in the order
// k1 k2 p1 p2 k3, and S_0X (width height) for camera index X.
inline CalibSource parse_kitti_calib(std::istream& in, const std::string& origin,
                                     int camera) {
  if (camera < 0 || camera > 99) throw InvalidArgument("camera index out of range");
  std::ostringstream suffix;
  suffix << '_' << std::setw(2) << std::setfill('0') << camera;
  const std::string k_key = "K" + suffix.str();
  const std::string d_key = "D" + suffix.str();
  const std::string s_key = "S" + suffix.str();

  std::map<std::string, std::string> lines;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto colon = line.find(':');
    if (std::string(trim(line)).empty()) continue;
    if (colon == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 'KEY: values'");
    lines[std::string(trim(std::string_view(line).substr(0, colon)))] =
        line.substr(colon + 1);
  }
  auto values = [&](const std::string& key, std::size_t count) {
    auto it = lines.find(key);
    if (it == lines.end()) throw MissingKey(key);
    auto v = detail::parse_numbers(it->second, origin + ": " + key);
    if (v.size() != count)
      throw ParseError(origin + ": " + key + " needs " + std::to_string(count) +
                       " values, got " + std::to_string(v.size()));
    return v;
  };
  const auto K = values(k_key, 9);
  const auto D = values(d_key, 5);
  const auto S = values(s_key, 2);

  CalibSource c;
  c.origin_path = origin;
  c.format = CalibFormat::kitti;
  c.camera_id = "kitti_cam" + suffix.str().substr(1);
  c.intrinsics.fu = K[0];
  c.intrinsics.fv = K[4];
  c.intrinsics.uc = K[2];
  c.intrinsics.vc = K[5];
  c.intrinsics.kr = {D[0], D[1], D[4]};
  c.intrinsics.kt = {D[2], D[3]};
  c.raw_size = {int(std::lround(S[0])), int(std::lround(S[1]))};
  detail::check_calib(c);
  return c;
}

inline CalibSource parse_calib(const std::string& path, CalibFormat format,
                               int camera = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return format == CalibFormat::native ? parse_native_calib(in, path)
                                       : parse_kitti_calib(in, path, camera);
}

inline void write_native_calib(std::ostream& out, const CalibSource& c) {
  out << std::setprecision(17);
  out << "camera_id = " << c.camera_id << '\n';
  for (Param p : kAllParams)
    out << param_name(p) << " = " << param_value(c.intrinsics, p) << '\n';
  out << "width = " << c.raw_size.width << '\n'
      << "height = " << c.raw_size.height << '\n';
}

// ---- manifest

struct SampleRecord {
  std::string sample_id;
  std::string source_image;
  std::string output_image;  // relative to the manifest directory
  Intrinsics theta_m;
  double appd = 0.0;
  std::uint64_t seed = 0;
  std::int64_t draw_index = -1;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct SkippedInput {
  std::string path;
  std::string reason;
  friend bool operator==(const SkippedInput&, const SkippedInput&) = default;
};

struct ManifestHeader {
  int format_version = kManifestVersion;
  std::string tool_version = kToolVersion;
  std::string camera_id;
  Intrinsics theta_star;
  ImageSize raw_size;
  PerturbRanges ranges;
  SamplerConfig sampler;
  std::size_t per_image = 0;
  std::size_t record_count = 0;
  std::vector<std::string> images;
  std::vector<SkippedInput> skipped;
  std::vector<std::string> starvation;
  std::vector<std::string> dropped;

  friend bool operator==(const ManifestHeader&, const ManifestHeader&) = default;
};

struct Manifest {
  ManifestHeader header;
  std::vector<SampleRecord> records;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

namespace detail {

using nlohmann::json;

inline json intrinsics_json(const Intrinsics& intr) {
  json j = json::object();
  for (Param p : kAllParams) j[std::string(param_name(p))] = param_value(intr, p);
  return j;
}

inline Intrinsics intrinsics_from_json(const json& j) {
  Intrinsics intr;
  for (Param p : kAllParams) {
    const std::string key(param_name(p));
    if (!j.contains(key)) throw MissingKey(key);
    param_ref(intr, p) = j.at(key).get<double>();
  }
  return intr;
}

inline json interval_json(const Interval& iv) { return json::array({iv.lo, iv.hi}); }

inline Interval interval_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline json header_json(const ManifestHeader& h) {
  json skipped = json::array();
  for (const auto& s : h.skipped) skipped.push_back({{"path", s.path}, {"reason", s.reason}});
  return {
      {"kind", "header"},
      {"format_version", h.format_version},
      {"tool_version", h.tool_version},
      {"camera_id", h.camera_id},
      {"theta_star", intrinsics_json(h.theta_star)},
      {"raw_size", {{"width", h.raw_size.width}, {"height", h.raw_size.height}}},
      {"ranges",
       {{"focal", interval_json(h.ranges.focal)},
        {"center", interval_json(h.ranges.center)},
        {"distortion", interval_json(h.ranges.distortion)},
        {"biased", h.ranges.biased},
        {"zero_epsilon", h.ranges.zero_epsilon}}},
      {"sampler",
       {{"n_samples", h.sampler.n_samples},
        {"n_bins", h.sampler.n_bins},
        {"appd_max", h.sampler.appd_max},
        {"zero_fraction", h.sampler.zero_fraction},
        {"max_attempts_per_slot", h.sampler.max_attempts_per_slot},
        {"seed", h.sampler.seed},
        {"n_pilot", h.sampler.n_pilot}}},
      {"per_image", h.per_image},
      {"record_count", h.record_count},
      {"images", h.images},
      {"skipped", skipped},
      {"starvation", h.starvation},
      {"dropped", h.dropped},
  };
}

inline ManifestHeader header_from_json(const json& j) {
  ManifestHeader h;
  if (j.value("kind", "") != "header") throw ParseError("first manifest line is not a header");
  h.format_version = j.at("format_version").get<int>();
  if (h.format_version != kManifestVersion)
    throw VersionMismatch("manifest format_version " +
                          std::to_string(h.format_version) + ", expected " +
                          std::to_string(kManifestVersion));
  h.tool_version = j.at("tool_version").get<std::string>();
  h.camera_id = j.at("camera_id").get<std::string>();
  h.theta_star = intrinsics_from_json(j.at("theta_star"));
  h.raw_size = {j.at("raw_size").at("width").get<int>(),
                j.at("raw_size").at("height").get<int>()};
  const json& r = j.at("ranges");
  h.ranges.focal = interval_from_json(r.at("focal"));
  h.ranges.center = interval_from_json(r.at("center"));
  h.ranges.distortion = interval_from_json(r.at("distortion"));
  h.ranges.biased = r.at("biased").get<bool>();
  h.ranges.zero_epsilon = r.at("zero_epsilon").get<double>();
  const json& s = j.at("sampler");
  h.sampler.n_samples = s.at("n_samples").get<std::size_t>();
  h.sampler.n_bins = s.at("n_bins").get<int>();
  h.sampler.appd_max = s.at("appd_max").get<double>();
  h.sampler.zero_fraction = s.at("zero_fraction").get<double>();
  h.sampler.max_attempts_per_slot = s.at("max_attempts_per_slot").get<std::size_t>();
  h.sampler.seed = s.at("seed").get<std::uint64_t>();
  h.sampler.n_pilot = s.at("n_pilot").get<std::size_t>();
  h.per_image = j.at("per_image").get<std::size_t>();
  h.record_count = j.at("record_count").get<std::size_t>();
  h.images = j.at("images").get<std::vector<std::string>>();
  for (const auto& e : j.at("skipped"))
    h.skipped.push_back({e.at("path").get<std::string>(), e.at("reason").get<std::string>()});
  h.starvation = j.at("starvation").get<std::vector<std::string>>();
  h.dropped = j.at("dropped").get<std::vector<std::string>>();
  return h;
}

inline json record_json(const SampleRecord& r) {
  return {{"kind", "record"},
          {"sample_id", r.sample_id},
          {"source_image", r.source_image},
          {"output_image", r.output_image},
          {"theta_m", intrinsics_json(r.theta_m)},
          {"appd", r.appd},
          {"seed", r.seed},
          {"draw_index", r.draw_index}};
}

inline SampleRecord record_from_json(const json& j) {
  if (j.value("kind", "") != "record") throw ParseError("manifest line is not a record");
  SampleRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.source_image = j.at("source_image").get<std::string>();
  r.output_image = j.at("output_image").get<std::string>();
  r.theta_m = intrinsics_from_json(j.at("theta_m"));
  r.appd = j.at("appd").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.draw_index = j.at("draw_index").get<std::int64_t>();
  return r;
}

}  // namespace detail

inline void write_manifest(std::ostream& out, const Manifest& m) {
  out << detail::header_json(m.header).dump() << '\n';
  for (const auto& r : m.records) out << detail::record_json(r).dump() << '\n';
}

inline void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_manifest(out, m);
  if (!out) throw IoError("failed writing " + path);
}

inline Manifest read_manifest(std::istream& in, const std::string& origin = "<manifest>") {
  Manifest m;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        m.header = detail::header_from_json(j);
        have_header = true;
      } else {
        m.records.push_back(detail::record_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const VersionMismatch&) {
      throw;
    } catch (const ParseError& e) {
      throw ParseError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw ParseError(origin + ": manifest has no header");
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_manifest(in, path);
}

// ---- generation

struct GenerateOptions {
  std::string image_dir;
  CalibSource calib;
  PerturbRanges ranges;
  SamplerConfig sampler;  // n_samples is replaced by images * per_image
  std::size_t per_image = 1;
  std::string out_dir;
  int jobs = 1;
  std::ostream* log = nullptr;
};

struct GenerateSummary {
  Manifest manifest;
  SamplingResult sampling;
};

inline std::string sample_id(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

// Sorted list of regular files with a .png extension.
inline std::vector<std::filesystem::path> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw EmptyInputDir(dir + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Draws one label pool for the whole dataset (labels are uniform globally,
// not per image), assigns it round-robin to the input images, rectifies and
// writes every sample, then writes the manifest.
inline GenerateSummary generate_dataset(const GenerateOptions& opt) {
  namespace fs = std::filesystem;
  std::ostream& log = opt.log ? *opt.log : std::cerr;
  if (opt.per_image < 1) throw InvalidArgument("per_image must be >= 1");
  const ImageSize raw = opt.calib.raw_size;

  ManifestHeader header;
  header.camera_id = opt.calib.camera_id;
  header.theta_star = opt.calib.intrinsics;
  header.raw_size = raw;
  header.ranges = opt.ranges;
  header.per_image = opt.per_image;

  std::vector<ImageBuffer> images;
  for (const fs::path& path : list_images(opt.image_dir)) {
    try {
      ImageBuffer img = read_png(path.string());
      if (!(img.size == raw)) {
        std::ostringstream why;
        why << "size " << img.size.width << "x" << img.size.height
            << " does not match calibration " << raw.width << "x" << raw.height;
        log << "warning: skipping " << path.string() << ": " << why.str() << '\n';
        header.skipped.push_back({path.string(), why.str()});
        continue;
      }
      header.images.push_back(path.string());
      images.push_back(std::move(img));
    } catch (const IoError& e) {
      log << "warning: skipping " << path.string() << ": " << e.what() << '\n';
      header.skipped.push_back({path.string(), e.what()});
    }
  }
  if (images.empty())
    throw EmptyInputDir(opt.image_dir + " has no decodable images of size " +
                        std::to_string(raw.width) + "x" + std::to_string(raw.height));

  SamplerConfig cfg = opt.sampler;
  cfg.n_samples = images.size() * opt.per_image;
  if (!(cfg.appd_max > 0.0))
    cfg.appd_max = pilot_appd_max(opt.calib.intrinsics, raw, opt.ranges,
                                  cfg.n_pilot, cfg.seed, opt.jobs);
  header.sampler = cfg;

  SamplingResult pool =
      sample_uniform_appd(opt.calib.intrinsics, raw, opt.ranges, cfg, opt.jobs);
  for (const auto& s : pool.starvation) {
    log << "warning: starvation: " << describe(s) << '\n';
    header.starvation.push_back(describe(s));
  }

  fs::create_directories(fs::path(opt.out_dir) / "images");
  const std::size_t n = pool.samples.size();
  std::vector<std::optional<SampleRecord>> records(n);
  std::vector<std::string> failures(n);
  parallel_for(n, opt.jobs, [&](std::size_t k) {
    const LabeledPerturbation& s = pool.samples[k];
    const std::size_t image_index = k % images.size();
    SampleRecord rec;
    rec.sample_id = sample_id(k);
    rec.source_image = header.images[image_index];
    rec.output_image = "images/" + rec.sample_id + ".png";
    rec.theta_m = s.theta;
    rec.appd = s.appd;
    rec.seed = cfg.seed;
    rec.draw_index = s.draw_index;
    try {
      const ImageBuffer out = remap_image(images[image_index],
                                          rectified_map(s.theta, raw));
      write_png((fs::path(opt.out_dir) / rec.output_image).string(), out);
      records[k] = std::move(rec);
    } catch (const NoValidRegion& e) {
      failures[k] = rec.sample_id + ": " + e.what();
    }
  });

  Manifest m;
  for (std::size_t k = 0; k < n; ++k) {
    if (records[k]) {
      m.records.push_back(std::move(*records[k]));
    } else {
      log << "warning: dropped sample " << failures[k] << '\n';
      header.dropped.push_back(failures[k]);
    }
  }
  header.record_count = m.records.size();
  m.header = std::move(header);
  write_manifest(m, (fs::path(opt.out_dir) / "manifest.jsonl").string());
  return {std::move(m), std::move(pool)};
}

// ---- validation

struct ValidationReport {
  std::vector<std::string> problems;  // each starts with the sample_id
  std::size_t checked_images = 0;
  std::size_t recomputed_labels = 0;
  double max_label_error = 0.0;

  bool ok() const { return problems.empty(); }
};

// Checks that every record's image exists, decodes and is raw-sized, that
// labels are non-negative, and recomputes `recompute` randomly chosen labels
// (chosen by `seed`) against |stored - recomputed| <= 1e-9.
inline ValidationReport validate_manifest(const Manifest& m,
                                          const std::filesystem::path& base_dir,
                                          std::size_t recompute = 0,
                                          std::uint64_t seed = 0, int jobs = 1) {
  ValidationReport report;
  if (m.records.size() != m.header.record_count)
    report.problems.push_back("header: record_count " +
                              std::to_string(m.header.record_count) + " but " +
                              std::to_string(m.records.size()) + " records");
  std::vector<std::string> image_problems(m.records.size());
  parallel_for(m.records.size(), jobs, [&](std::size_t i) {
    const SampleRecord& r = m.records[i];
    const auto path = base_dir / r.output_image;
    std::string problem;
    if (!(r.appd >= 0.0) || !std::isfinite(r.appd)) {
      problem = "negative or non-finite label";
    } else if (!std::filesystem::exists(path)) {
      problem = "missing image " + path.string();
    } else {
      try {
        const ImageBuffer img = read_png(path.string());
        if (!(img.size == m.header.raw_size)) problem = "image is not raw-sized";
      } catch (const Error& e) {
        problem = e.what();
      }
    }
    if (!problem.empty()) image_problems[i] = r.sample_id + ": " + problem;
  });
  for (auto& p : image_problems)
    if (!p.empty()) report.problems.push_back(std::move(p));
  report.checked_images = m.records.size();

  if (recompute > 0 && !m.records.empty()) {
    std::vector<std::size_t> order(m.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::min(recompute, order.size()));
    std::sort(order.begin(), order.end());
    const AppdEvaluator evaluate(m.header.theta_star, m.header.raw_size);
    std::vector<double> errors(order.size(), 0.0);
    std::vector<std::string> label_problems(order.size());
    parallel_for(order.size(), jobs, [&](std::size_t k) {
      const SampleRecord& r = m.records[order[k]];
      try {
        const double value = evaluate(r.theta_m);
        errors[k] = std::abs(value - r.appd);
        if (errors[k] > 1e-9) {
          std::ostringstream os;
          os << r.sample_id << ": stored label " << std::setprecision(17) << r.appd
             << " but recomputed " << value;
          label_problems[k] = os.str();
        }
      } catch (const Error& e) {
        label_problems[k] = r.sample_id + ": " + e.what();
      }
    });
    for (std::size_t k = 0; k < order.size(); ++k) {
      report.max_label_error = std::max(report.max_label_error, errors[k]);
      if (!label_problems[k].empty()) report.problems.push_back(label_problems[k]);
    }
    report.recomputed_labels = order.size();
  }
  return report;
}

}  // namespace miscalib
