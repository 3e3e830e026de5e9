#pragma once

// End-to-end orchestration: synth -> align -> calibrate -> reconstruct -> train-field,
// plus query and eval. Every stage reads and writes files under the output directory,
// so any stage can be run alone or fed with externally produced inputs.
//
// Output layout (relative to output_dir):
//   synth/            end_effector.json, pairs.json + pair_*.jcrpm, color_*.ppm,
//                     label_*.pgm, ground_truth.json, inputs.json
//   align/            alignment.json, aligned.bin
//   calibration.json
//   cloud_model.ply   confidence-filtered cloud, model units
//   cloud.ply         same cloud in the robot base frame, metres
//   fields/<head>.json (+ .bin)
//   query/<head>.csv
//   report.json, report.txt

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jcr/alignment.hpp"
#include "jcr/calibration.hpp"
#include "jcr/errors.hpp"
#include "jcr/fields.hpp"
#include "jcr/geometry.hpp"
#include "jcr/io.hpp"
#include "jcr/reconstruction.hpp"
#include "jcr/synth.hpp"

namespace jcr::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

enum class Stage { synth, align, calibrate, reconstruct, train_field, query, eval, run };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::synth: return "synth";
    case Stage::align: return "align";
    case Stage::calibrate: return "calibrate";
    case Stage::reconstruct: return "reconstruct";
    case Stage::train_field: return "train-field";
    case Stage::query: return "query";
    case Stage::eval: return "eval";
    case Stage::run: return "run";
  }
  return "?";
}

inline Stage stage_from_string(std::string_view s) {
  for (Stage st : {Stage::synth, Stage::align, Stage::calibrate, Stage::reconstruct, Stage::train_field, Stage::query,
                   Stage::eval, Stage::run})
    if (to_string(st) == s) return st;
  throw Error(ErrorKind::InvalidInput, "unknown stage '" + std::string(s) + "'");
}

// Per-stage seed streams derived from the manifest seed (splitmix64 finaliser).
inline std::uint64_t stage_seed(std::uint64_t seed, Stage s) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(s) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Inputs {
  fs::path end_effector_poses;
  fs::path pairs;
  std::vector<fs::path> color_images;
  std::vector<fs::path> label_images;
  std::optional<fs::path> ground_truth;
};

struct Manifest {
  json raw = json::object();
  fs::path base_dir;  // relative paths resolve against this
  fs::path output_dir = "jcr_out";
  std::uint64_t seed = 0;

  json section(std::string_view name) const {
    const std::string key(name);
    return raw.contains(key) ? raw[key] : json::object();
  }
  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }
};

struct Options {
  std::optional<fs::path> output_dir;
  std::optional<std::uint64_t> seed;
  bool force_uncalibrated = false;
};

using Logger = std::function<void(int level, const std::string& message)>;  // 0 debug, 1 info, 2 warn

struct Context {
  Manifest manifest;
  Options options;
  Logger log = [](int, const std::string&) {};

  fs::path out(const fs::path& rel = {}) const { return rel.empty() ? manifest.output_dir : manifest.output_dir / rel; }
  void info(const std::string& m) const { log(1, m); }
  void warn(const std::string& m) const { log(2, m); }
  void debug(const std::string& m) const { log(0, m); }
};

inline Manifest parse_manifest(const json& raw, const fs::path& base_dir, const Options& opt = {}) {
  if (!raw.is_object()) throw Error(ErrorKind::ParseError, "manifest must be a JSON object");
  Manifest m;
  m.raw = raw;
  m.base_dir = base_dir;
  try {
    m.seed = opt.seed ? *opt.seed : raw.value("seed", std::uint64_t{0});
    m.output_dir = opt.output_dir ? *opt.output_dir : m.resolve(raw.value("output_dir", std::string("jcr_out")));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("manifest: ") + e.what());
  }
  m.raw["seed"] = m.seed;
  return m;
}

inline Manifest load_manifest(const fs::path& path, const Options& opt = {}) {
  return parse_manifest(io::read_json(path), fs::absolute(path).parent_path(), opt);
}

inline json provenance(const Context& ctx, Stage stage) {
  return json{{"stage", std::string(to_string(stage))},
              {"seed", ctx.manifest.seed},
              {"stage_seed", stage_seed(ctx.manifest.seed, stage)},
              {"manifest", ctx.manifest.raw}};
}

// ---------------------------------------------------------------- input resolution

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw Error(ErrorKind::IoError, what + " '" + p.string() + "' does not exist");
}

inline Inputs inputs_from_json(const json& j, const fs::path& base) {
  auto abs = [&](const std::string& s) { return fs::path(s).is_absolute() ? fs::path(s) : base / s; };
  Inputs in;
  try {
    in.end_effector_poses = abs(j.at("end_effector_poses").get<std::string>());
    in.pairs = abs(j.at("pairs").get<std::string>());
    for (const auto& p : j.value("color_images", json::array())) in.color_images.push_back(abs(p.get<std::string>()));
    for (const auto& p : j.value("label_images", json::array())) in.label_images.push_back(abs(p.get<std::string>()));
    if (j.contains("ground_truth")) in.ground_truth = abs(j["ground_truth"].get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("inputs: ") + e.what());
  }
  require_file(in.end_effector_poses, "end-effector pose file");
  require_file(in.pairs, "pair manifest");
  for (const auto& p : in.color_images) require_file(p, "colour image");
  for (const auto& p : in.label_images) require_file(p, "label image");
  if (in.ground_truth) require_file(*in.ground_truth, "ground-truth record");
  return in;
}

/// Manifest "inputs" win; otherwise the synth stage's inputs.json under the output dir.
inline Inputs resolve_inputs(const Context& ctx) {
  if (ctx.manifest.raw.contains("inputs")) return inputs_from_json(ctx.manifest.raw["inputs"], ctx.manifest.base_dir);
  const fs::path synth_inputs = ctx.out("synth/inputs.json");
  if (fs::is_regular_file(synth_inputs)) return inputs_from_json(io::read_json(synth_inputs), synth_inputs.parent_path());
  throw Error(ErrorKind::InvalidInput, "manifest has no 'inputs' and no synth output exists; run the synth stage first");
}

// ---------------------------------------------------------------- configs

inline NoiseProfile noise_from_json(const json& j) {
  if (j.is_string()) {
    if (j == "zero") return NoiseProfile::zero();
    if (j == "realistic" || j == "default") return NoiseProfile::realistic();
    throw Error(ErrorKind::InvalidInput, "unknown noise profile '" + j.get<std::string>() + "'");
  }
  NoiseProfile n = j.value("base", std::string("zero")) == "realistic" ? NoiseProfile::realistic() : NoiseProfile::zero();
  if (j.contains("ee_rotation_deg")) n.ee_rotation_sigma = j["ee_rotation_deg"].get<double>() * std::numbers::pi / 180.0;
  n.ee_translation_sigma = j.value("ee_translation_sigma", n.ee_translation_sigma);
  n.point_sigma = j.value("point_sigma", n.point_sigma);
  n.dropout = j.value("dropout", n.dropout);
  n.pair_scale_jitter = j.value("pair_scale_jitter", n.pair_scale_jitter);
  n.confidence_min = j.value("confidence_min", n.confidence_min);
  n.confidence_max = j.value("confidence_max", n.confidence_max);
  n.confidence_falloff = j.value("confidence_falloff", n.confidence_falloff);
  n.validate();
  return n;
}

inline AlignConfig align_config(const json& j) {
  AlignConfig c;
  c.step = j.value("step", c.step);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.tol = j.value("tol", c.tol);
  const std::string mode = j.value("scale_mode", std::string("per_edge"));
  if (mode == "per_edge") c.scale_mode = ScaleMode::per_edge;
  else if (mode == "per_view") c.scale_mode = ScaleMode::per_view;
  else throw Error(ErrorKind::InvalidInput, "unknown scale_mode '" + mode + "'");
  return c;
}

inline CalibrationConfig calibration_config(const json& j) {
  CalibrationConfig c;
  const std::string pairing = j.value("pairing", std::string("consecutive"));
  if (pairing == "consecutive") c.pairing = PairingMode::consecutive;
  else if (pairing == "all_pairs") c.pairing = PairingMode::all_pairs;
  else throw Error(ErrorKind::InvalidInput, "unknown pairing '" + pairing + "'");
  c.tau_t = j.value("tau_t", c.tau_t);
  c.tau_r = j.value("tau_r", c.tau_r);
  c.rotation_rank_tol = j.value("rotation_rank_tol", c.rotation_rank_tol);
  c.scale.lower = j.value("scale_lower", c.scale.lower);
  c.scale.upper = j.value("scale_upper", c.scale.upper);
  return c;
}

// ---------------------------------------------------------------- stages

inline void stage_synth(const Context& ctx) {
  const json cfg = ctx.manifest.section("synth");
  const std::uint64_t seed = stage_seed(ctx.manifest.seed, Stage::synth);
  TrajectorySpec traj;
  traj.num_poses = cfg.value("num_poses", traj.num_poses);
  const std::string kind = cfg.value("trajectory", std::string("view_sphere"));
  if (kind == "view_sphere") traj.kind = TrajectoryKind::view_sphere;
  else if (kind == "single_axis") traj.kind = TrajectoryKind::single_axis;
  else throw Error(ErrorKind::InvalidInput, "unknown trajectory '" + kind + "'");
  traj.radius = cfg.value("radius", traj.radius);
  traj.allow_degenerate = cfg.value("allow_degenerate", false);
  HiddenCalibration hidden;
  if (cfg.contains("hidden")) {
    const json& h = cfg["hidden"];
    hidden.scale = h.value("scale", hidden.scale);
    if (h.contains("hand_eye")) hidden.hand_eye = io::pose_from_json(h["hand_eye"]).with_frame(Frame::end_effector);
  }
  const NoiseProfile noise = cfg.contains("noise") ? noise_from_json(cfg["noise"]) : NoiseProfile::zero();
  const Intrinsics k = Intrinsics::from_fov(cfg.value("width", 32), cfg.value("height", 24), cfg.value("fov_deg", 60.0));
  SynthOptions opt;
  const std::string graph = cfg.value("graph", std::string("default"));
  if (graph == "complete") opt.graph = PairGraph::complete(traj.num_poses);
  else if (graph == "sliding_window") opt.graph = PairGraph::sliding_window(traj.num_poses, cfg.value("window", 5));
  else if (graph != "default") throw Error(ErrorKind::InvalidInput, "unknown graph '" + graph + "'");

  ctx.info("synth: " + std::to_string(traj.num_poses) + " views, " + kind + " trajectory, " +
           std::to_string(k.width) + "x" + std::to_string(k.height) + " px");
  const Dataset ds = generate_dataset(tabletop_scene(), traj, hidden, noise, k, seed, opt);

  const fs::path dir = ctx.out("synth");
  fs::create_directories(dir);
  io::write_pose_list(dir / "end_effector.json", ds.end_effector);
  io::write_pair_manifest(dir, ds.pairs, ds.graph.num_views);
  json colors = json::array(), labels = json::array();
  const auto color_images = ds.color_images();
  const auto label_images = ds.label_images();
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    char name[32];
    std::snprintf(name, sizeof name, "color_%03zu.ppm", v);
    io::write_ppm(dir / name, color_images[v]);
    colors.push_back(name);
    std::snprintf(name, sizeof name, "label_%03zu.pgm", v);
    io::write_pgm16(dir / name, label_images[v]);
    labels.push_back(name);
  }
  json gt = io::ground_truth_json(ds.truth);
  gt["provenance"] = provenance(ctx, Stage::synth);
  io::write_json(dir / "ground_truth.json", gt);
  io::write_json(dir / "inputs.json", json{{"end_effector_poses", "end_effector.json"},
                                           {"pairs", "pairs.json"},
                                           {"color_images", colors},
                                           {"label_images", labels},
                                           {"ground_truth", "ground_truth.json"}});
}

inline AlignmentResult stage_align(const Context& ctx) {
  const Inputs in = resolve_inputs(ctx);
  const io::PairSet set = io::read_pair_manifest(in.pairs);
  const AlignConfig cfg = align_config(ctx.manifest.section("align"));
  ctx.info("align: " + std::to_string(set.graph.num_views) + " views, " + std::to_string(set.pairs.size()) + " pairs");
  AlignmentResult r = align_global(set.pairs, set.graph, cfg);
  ctx.info("align: objective " + std::to_string(r.objective) + " after " + std::to_string(r.iterations) + " iterations");
  if (!r.warning.empty()) ctx.warn("align: " + r.warning);
  if (!r.converged) ctx.warn("align: descent stopped before reaching the tolerance");
  io::write_alignment(ctx.out("align"), r, provenance(ctx, Stage::align));
  return r;
}

inline CalibrationResult stage_calibrate(const Context& ctx) {
  const Inputs in = resolve_inputs(ctx);
  const auto ee = io::read_pose_list(in.end_effector_poses);
  const AlignmentResult aligned = io::read_alignment(ctx.out("align"));
  if (ee.size() != aligned.poses.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(ee.size()) + " end-effector poses but " +
                                               std::to_string(aligned.poses.size()) + " aligned cameras");
  }
  const CalibrationConfig cfg = calibration_config(ctx.manifest.section("calibrate"));
  CalibrationResult c = calibrate(ee, aligned.poses, cfg);
  ctx.info("calibrate: scale " + std::to_string(c.scale) + ", mean residuals t " +
           std::to_string(c.mean_translation_residual()) + " R " + std::to_string(c.mean_rotation_residual()));
  if (!c.converged) ctx.warn("calibrate: residuals above the convergence thresholds");
  io::write_json(ctx.out("calibration.json"), io::calibration_json(c, provenance(ctx, Stage::calibrate)));
  return c;
}

inline LabeledPointCloud stage_reconstruct(const Context& ctx) {
  const Inputs in = resolve_inputs(ctx);
  const auto ee = io::read_pose_list(in.end_effector_poses);
  const AlignmentResult aligned = io::read_alignment(ctx.out("align"));
  const CalibrationResult calib = io::calibration_from_json(io::read_json(ctx.out("calibration.json")));
  const json cfg = ctx.manifest.section("reconstruct");
  const double threshold = cfg.contains("threshold") ? cfg["threshold"].get<double>()
                                                     : confidence_percentile(aligned, cfg.value("percentile", 65.0));
  LabeledPointCloud model = model_cloud(extract_point_cloud(aligned, threshold), aligned.width, aligned.height);
  if (!in.color_images.empty()) {
    std::vector<ColorImage> imgs;
    for (const auto& p : in.color_images) imgs.push_back(io::read_ppm(p));
    model = join_pixel_labels(model, std::span<const ColorImage>(imgs));
  }
  if (!in.label_images.empty()) {
    std::vector<LabelImage> imgs;
    for (const auto& p : in.label_images) imgs.push_back(io::read_pgm16(p));
    model = join_pixel_labels(model, std::span<const LabelImage>(imgs));
  }
  io::write_ply(ctx.out("cloud_model.ply"), model);
  if (!calib.converged && ctx.options.force_uncalibrated) ctx.warn("reconstruct: using an unconverged calibration");
  LabeledPointCloud base = transform_to_base(model, aligned.poses, ee, calib, ctx.options.force_uncalibrated);
  ctx.info("reconstruct: " + std::to_string(base.size()) + " points above confidence " + std::to_string(threshold));
  io::write_ply(ctx.out("cloud.ply"), base);
  return base;
}

inline TrainConfig field_config(const Context& ctx) {
  TrainConfig c = io::train_config_from_json(ctx.manifest.section("field"));
  c.seed = stage_seed(ctx.manifest.seed, Stage::train_field);
  return c;
}

inline std::vector<HeadKind> field_heads(const json& cfg, const LabeledPointCloud& cloud) {
  std::vector<HeadKind> heads;
  if (cfg.contains("heads")) {
    for (const auto& h : cfg["heads"]) heads.push_back(head_from_string(h.get<std::string>()));
  } else {
    heads.push_back(HeadKind::occupancy);
    if (cloud.segmentation) heads.push_back(HeadKind::segmentation);
    if (cloud.colors) heads.push_back(HeadKind::color);
  }
  return heads;
}

inline std::vector<FieldModel> stage_train_field(const Context& ctx) {
  LabeledPointCloud cloud = io::read_ply(ctx.out("cloud.ply"));
  cloud.frame = Frame::robot_base;
  const TrainConfig cfg = field_config(ctx);
  std::vector<FieldModel> models;
  for (HeadKind head : field_heads(ctx.manifest.section("field"), cloud)) {
    ctx.info("train-field: " + std::string(to_string(head)) + " head on " + std::to_string(cloud.size()) + " points");
    FieldModel m;
    switch (head) {
      case HeadKind::occupancy: m = train_occupancy(cloud, cfg); break;
      case HeadKind::segmentation: m = train_segmentation(cloud, cfg); break;
      case HeadKind::color: m = train_color(cloud, cfg); break;
    }
    ctx.info("train-field: final loss " + std::to_string(m.final_loss()));
    io::save_field(ctx.out("fields") / (std::string(to_string(head)) + ".json"), m);
    models.push_back(std::move(m));
  }
  return models;
}

inline void stage_query(const Context& ctx) {
  const json cfg = ctx.manifest.section("query");
  if (!cfg.contains("points")) throw Error(ErrorKind::InvalidInput, "query stage needs query.points (CSV of x,y,z)");
  const fs::path pts_path = ctx.manifest.resolve(cfg["points"].get<std::string>());
  require_file(pts_path, "query point file");
  const auto points = io::read_points_csv(pts_path);
  std::vector<std::string> heads;
  if (cfg.contains("heads")) heads = cfg["heads"].get<std::vector<std::string>>();
  else
    for (const char* h : {"occupancy", "segmentation", "color"})
      if (fs::is_regular_file(ctx.out("fields") / (std::string(h) + ".json"))) heads.emplace_back(h);
  if (heads.empty()) throw Error(ErrorKind::InvalidInput, "no trained field found; run train-field first");
  for (const auto& h : heads) {
    const FieldModel m = io::load_field(ctx.out("fields") / (h + ".json"));
    io::write_query_csv(ctx.out("query") / (h + ".csv"), points, query(m, points), m.head);
    ctx.info("query: " + std::to_string(points.size()) + " points through the " + h + " field");
  }
}

// ---------------------------------------------------------------- evaluation

struct HeightMeasurement {
  std::string name;
  int class_id = 0;
  double truth = 0.0;
  std::optional<double> measured;  // absent when the object has no reconstructed points
  std::optional<double> percent_error;
};

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw Error(ErrorKind::EmptyCloud, "percentile of an empty set");
  const auto k = static_cast<std::size_t>(std::floor(std::clamp(q, 0.0, 100.0) / 100.0 * (v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

/// Per view: fit a plane to the support-class points, take the `top` percentile of the
/// object's signed distance above it. The reported height is the median over views that
/// see both the support and the object.
inline std::vector<HeightMeasurement> measure_heights(const LabeledPointCloud& cloud, std::span<const ObjectHeight> objects,
                                                     int support_class, double top = 95.0,
                                                     std::size_t min_support = 10, std::size_t min_object = 5) {
  if (!cloud.segmentation) throw Error(ErrorKind::InvalidInput, "height measurement needs a segmented cloud");
  std::map<int, std::map<int, std::vector<Vec3>>> by_view;  // view -> class -> points
  for (std::size_t i = 0; i < cloud.size(); ++i) by_view[cloud.sources[i].view][(*cloud.segmentation)[i]].push_back(cloud.points[i]);

  std::map<int, std::vector<double>> per_object;  // class -> per-view heights
  for (auto& [view, classes] : by_view) {
    const auto support = classes.find(support_class);
    if (support == classes.end() || support->second.size() < min_support) continue;
    const auto& sp = support->second;
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : sp) centroid += p;
    centroid /= static_cast<double>(sp.size());
    Mat3 scatter = Mat3::Zero();
    for (const auto& p : sp) scatter += (p - centroid) * (p - centroid).transpose();
    Vec3 normal = Eigen::SelfAdjointEigenSolver<Mat3>(scatter).eigenvectors().col(0);
    if (normal.z() < 0.0) normal = -normal;
    for (const auto& o : objects) {
      const auto it = classes.find(o.class_id);
      if (it == classes.end() || it->second.size() < min_object) continue;
      std::vector<double> d;
      for (const auto& p : it->second) d.push_back(normal.dot(p - centroid));
      per_object[o.class_id].push_back(percentile(std::move(d), top));
    }
  }
  std::vector<HeightMeasurement> out;
  for (const auto& o : objects) {
    HeightMeasurement h{o.name, o.class_id, o.height, std::nullopt, std::nullopt};
    if (per_object.count(o.class_id)) {
      h.measured = percentile(per_object[o.class_id], 50.0);
      h.percent_error = 100.0 * std::abs(*h.measured - o.height) / o.height;
    }
    out.push_back(h);
  }
  return out;
}

struct EvalReport {
  double mean_translation_residual = 0.0;
  double max_translation_residual = 0.0;
  double mean_rotation_residual = 0.0;
  double max_rotation_residual = 0.0;
  bool converged = false;
  bool has_truth = false;
  double rotation_error_deg = 0.0;
  double translation_error_m = 0.0;
  double scale_error_percent = 0.0;
  std::vector<HeightMeasurement> heights;

  json to_json() const {
    json j{{"mean_translation_residual", mean_translation_residual},
           {"max_translation_residual", max_translation_residual},
           {"mean_rotation_residual", mean_rotation_residual},
           {"max_rotation_residual", max_rotation_residual},
           {"converged", converged},
           {"has_ground_truth", has_truth}};
    if (!has_truth) return j;
    j["rotation_error_deg"] = rotation_error_deg;
    j["translation_error_m"] = translation_error_m;
    j["scale_error_percent"] = scale_error_percent;
    json hs = json::array();
    for (const auto& h : heights) {
      hs.push_back(json{{"name", h.name},
                        {"class_id", h.class_id},
                        {"true_height", h.truth},
                        {"measured_height", h.measured ? json(*h.measured) : json(nullptr)},
                        {"percent_error", h.percent_error ? json(*h.percent_error) : json(nullptr)}});
    }
    j["object_heights"] = hs;
    return j;
  }

  std::string table() const {
    std::ostringstream s;
    s.setf(std::ios::scientific);
    s.precision(4);
    s << "metric                      value\n";
    if (has_truth) {
      s << "rotation error (deg)        " << rotation_error_deg << "\n"
        << "translation error (m)       " << translation_error_m << "\n"
        << "scale error (%)             " << scale_error_percent << "\n";
    }
    s << "mean residual dt            " << mean_translation_residual << "\n"
      << "max residual dt             " << max_translation_residual << "\n"
      << "mean residual dR            " << mean_rotation_residual << "\n"
      << "max residual dR             " << max_rotation_residual << "\n"
      << "converged                   " << (converged ? "yes" : "no") << "\n";
    for (const auto& h : heights) {
      s << "height error " << h.name << std::string(h.name.size() < 15 ? 15 - h.name.size() : 1, ' ');
      if (h.percent_error) s << *h.percent_error << " %\n";
      else s << "n/a\n";
    }
    return s.str();
  }
};

inline EvalReport evaluate(const CalibrationResult& c, const GroundTruth* truth, const LabeledPointCloud* cloud) {
  EvalReport r;
  r.mean_translation_residual = c.mean_translation_residual();
  r.max_translation_residual = c.max_translation_residual();
  r.mean_rotation_residual = c.mean_rotation_residual();
  r.max_rotation_residual = c.max_rotation_residual();
  r.converged = c.converged;
  if (!truth) return r;
  r.has_truth = true;
  const Pose& x = truth->hidden.hand_eye;
  r.rotation_error_deg = rotation_distance(c.rotation, x.rotation()) * 180.0 / std::numbers::pi;
  r.translation_error_m = (c.translation - x.translation()).norm();
  r.scale_error_percent = 100.0 * std::abs(c.scale - truth->hidden.scale) / truth->hidden.scale;
  if (cloud && cloud->segmentation && !truth->objects.empty()) {
    r.heights = measure_heights(*cloud, truth->objects, truth->support_class);
  }
  return r;
}

inline EvalReport stage_eval(const Context& ctx) {
  const CalibrationResult calib = io::calibration_from_json(io::read_json(ctx.out("calibration.json")));
  std::optional<GroundTruth> truth;
  std::optional<fs::path> gt_path;
  if (ctx.manifest.raw.contains("ground_truth")) {
    gt_path = ctx.manifest.resolve(ctx.manifest.raw["ground_truth"].get<std::string>());
  } else {
    try {
      gt_path = resolve_inputs(ctx).ground_truth;
    } catch (const Error&) {
    }
  }
  if (gt_path) {
    require_file(*gt_path, "ground-truth record");
    truth = io::ground_truth_from_json(io::read_json(*gt_path));
  } else {
    ctx.warn("eval: no ground truth, reporting residuals only");
  }
  std::optional<LabeledPointCloud> cloud;
  if (fs::is_regular_file(ctx.out("cloud.ply"))) cloud = io::read_ply(ctx.out("cloud.ply"));
  const EvalReport r = evaluate(calib, truth ? &*truth : nullptr, cloud ? &*cloud : nullptr);
  json j = r.to_json();
  j["provenance"] = provenance(ctx, Stage::eval);
  io::write_json(ctx.out("report.json"), j);
  auto txt = io::open_out(ctx.out("report.txt"));
  txt << r.table();
  ctx.info("eval:\n" + r.table());
  return r;
}

// ---------------------------------------------------------------- dispatch

/// Runs one stage; errors are rethrown with the stage name prefixed.
inline void run_stage(const Context& ctx, Stage stage) {
  try {
    switch (stage) {
      case Stage::synth: stage_synth(ctx); break;
      case Stage::align: stage_align(ctx); break;
      case Stage::calibrate: stage_calibrate(ctx); break;
      case Stage::reconstruct: stage_reconstruct(ctx); break;
      case Stage::train_field: stage_train_field(ctx); break;
      case Stage::query: stage_query(ctx); break;
      case Stage::eval: stage_eval(ctx); break;
      case Stage::run: {
        if (!ctx.manifest.raw.contains("inputs") && ctx.manifest.raw.contains("synth")) run_stage(ctx, Stage::synth);
        for (Stage s : {Stage::align, Stage::calibrate, Stage::reconstruct, Stage::train_field}) run_stage(ctx, s);
        if (ctx.manifest.raw.contains("query")) run_stage(ctx, Stage::query);
        run_stage(ctx, Stage::eval);
        return;
      }
    }
  } catch (const Error& e) {
    const std::string prefix = "stage '" + std::string(to_string(stage)) + "': ";
    if (e.message().starts_with("stage '")) throw;
    throw Error(e.kind(), prefix + e.message());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, "stage '" + std::string(to_string(stage)) + "': " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorKind::IoError, "stage '" + std::string(to_string(stage)) + "': " + e.what());
  }
}

}  // namespace jcr::pipeline
