#pragma once

// Synthetic ground truth: desk-scale scenes of boxes, cylinders and planes,
// end-effector trajectories under a hidden (T_c^e, lambda), ray-cast
// pointmaps and pairwise predictions in the layout a 3D foundation model
// would emit.

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "jcr/alignment.hpp"
#include "jcr/calibration.hpp"
#include "jcr/errors.hpp"
#include "jcr/geometry.hpp"
#include "jcr/reconstruction.hpp"

namespace jcr {

enum class PrimitiveKind { box, cylinder, plane };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::box;
  std::string name;
  Pose pose;        // local -> world; box/cylinder centred on the origin, plane at local z = 0
  Vec3 size = Vec3::Ones();  // box: full extents; cylinder: (radius, radius, height); plane: (x, y, unused)
  Vec3 color = Vec3::Constant(0.5);
  int class_id = 0;
  bool support = false;  // the surface object heights are measured from
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  Vec3 workspace_lower = Vec3(-0.5, -0.5, -0.05);
  Vec3 workspace_upper = Vec3(0.5, 0.5, 0.5);
  Vec3 target = Vec3(0.0, 0.0, 0.05);  // look-at point for generated trajectories
  double sampling_density = 40000.0;   // points per m^2 for surface sampling
  std::uint64_t seed = 0;

  /// Throws InvalidInput if any primitive's centre leaves the workspace.
  void validate() const {
    for (const auto& p : primitives) {
      const Vec3 c = p.pose.translation();
      if ((c.array() < workspace_lower.array()).any() || (c.array() > workspace_upper.array()).any()) {
        throw Error(ErrorKind::InvalidInput, "primitive '" + p.name + "' lies outside the workspace");
      }
    }
  }
};

struct ObjectHeight {
  std::string name;
  int class_id = 0;
  double height = 0.0;  // metres above the support surface
};

/// Table plane with a box, a cylinder and a flat box, classes 0..3.
inline SceneSpec tabletop_scene() {
  SceneSpec s;
  auto at = [](double x, double y, double z) { return Pose(Rotation(), Vec3(x, y, z)); };
  s.primitives.push_back({PrimitiveKind::plane, "table", at(0, 0, 0), Vec3(0.8, 0.8, 0), Vec3(0.75, 0.72, 0.65), 0, true});
  s.primitives.push_back(
      {PrimitiveKind::box, "box", Pose(exp_map(Vec3(0, 0, 0.3)), Vec3(-0.08, 0.06, 0.075)), Vec3(0.12, 0.10, 0.15),
       Vec3(0.85, 0.2, 0.15), 1, false});
  s.primitives.push_back({PrimitiveKind::cylinder, "mug", at(0.1, -0.05, 0.05), Vec3(0.04, 0.04, 0.10),
                          Vec3(0.15, 0.3, 0.85), 2, false});
  s.primitives.push_back({PrimitiveKind::box, "toolbox", Pose(exp_map(Vec3(0, 0, -0.4)), Vec3(0.05, 0.16, 0.04)),
                          Vec3(0.20, 0.09, 0.08), Vec3(0.2, 0.7, 0.25), 3, false});
  return s;
}

inline std::vector<ObjectHeight> object_heights(const SceneSpec& scene) {
  double support_z = 0.0;
  for (const auto& p : scene.primitives)
    if (p.support) support_z = p.pose.translation().z();
  std::vector<ObjectHeight> out;
  for (const auto& p : scene.primitives) {
    if (p.support || p.kind == PrimitiveKind::plane) continue;
    // Axis-aligned vertical extent of the (possibly yawed) primitive.
    const Mat3& r = p.pose.rotation().matrix();
    double half = 0.0;
    if (p.kind == PrimitiveKind::box) {
      half = 0.5 * (std::abs(r(2, 0)) * p.size.x() + std::abs(r(2, 1)) * p.size.y() + std::abs(r(2, 2)) * p.size.z());
    } else {
      half = 0.5 * p.size.z();
    }
    out.push_back({p.name, p.class_id, p.pose.translation().z() + half - support_z});
  }
  return out;
}

struct Intrinsics {
  int width = 32;
  int height = 24;
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  static Intrinsics from_fov(int width, int height, double horizontal_fov_deg) {
    if (!(horizontal_fov_deg > 10.0 && horizontal_fov_deg < 120.0)) {
      throw Error(ErrorKind::InvalidInput, "field of view must lie in (10, 120) degrees");
    }
    if (width <= 0 || height <= 0) throw Error(ErrorKind::InvalidInput, "image size must be positive");
    Intrinsics k;
    k.width = width;
    k.height = height;
    k.fx = 0.5 * width / std::tan(0.5 * horizontal_fov_deg * std::numbers::pi / 180.0);
    k.fy = k.fx;
    k.cx = 0.5 * (width - 1);
    k.cy = 0.5 * (height - 1);
    return k;
  }

  double horizontal_fov_deg() const { return 2.0 * std::atan(0.5 * width / fx) * 180.0 / std::numbers::pi; }
};

/// Per-pixel nearest hit, camera frame (x right, y down, z forward), metres.
struct RayCastResult {
  int width = 0;
  int height = 0;
  std::vector<Vec3> points;
  std::vector<double> confidence;  // 0 on misses
  std::vector<int> primitive;      // -1 on misses
  std::vector<int> class_id;
  std::vector<Vec3> color;
};

struct NoiseProfile {
  double ee_rotation_sigma = 0.0;     // radians
  double ee_translation_sigma = 0.0;  // metres
  double point_sigma = 0.0;           // model units at confidence 1, scaled by 1/confidence
  double confidence_min = 0.5;
  double confidence_max = 3.0;
  double confidence_falloff = 1.5;    // metres
  double dropout = 0.0;               // pair-level, outside the protected chain
  double pair_scale_jitter = 0.0;     // log-uniform half width of per-pair model scale

  static NoiseProfile zero() { return {}; }

  static NoiseProfile realistic() {
    NoiseProfile n;
    n.ee_rotation_sigma = 0.5 * std::numbers::pi / 180.0;
    n.ee_translation_sigma = 0.002;
    n.point_sigma = 0.002;
    n.pair_scale_jitter = 0.1;
    return n;
  }

  void validate() const {
    if (!(ee_rotation_sigma >= 0 && ee_translation_sigma >= 0 && point_sigma >= 0 && pair_scale_jitter >= 0 &&
          dropout >= 0 && dropout <= 1 && confidence_min > 0 && confidence_max >= confidence_min)) {
      throw Error(ErrorKind::InvalidInput, "noise profile parameters out of range");
    }
  }
};

namespace detail {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::UnitZ();
};

inline std::optional<Hit> intersect_local(const Primitive& p, const Vec3& o, const Vec3& d) {
  constexpr double eps = 1e-9;
  Hit best;
  auto consider = [&](double t, const Vec3& n) {
    if (t > eps && t < best.t) {
      best.t = t;
      best.normal = n;
    }
  };
  switch (p.kind) {
    case PrimitiveKind::plane: {
      if (std::abs(d.z()) < 1e-15) return std::nullopt;
      const double t = -o.z() / d.z();
      const Vec3 x = o + t * d;
      if (std::abs(x.x()) <= 0.5 * p.size.x() && std::abs(x.y()) <= 0.5 * p.size.y()) consider(t, Vec3::UnitZ());
      break;
    }
    case PrimitiveKind::box: {
      const Vec3 e = 0.5 * p.size;
      double t_near = -std::numeric_limits<double>::infinity(), t_far = std::numeric_limits<double>::infinity();
      int axis = -1;
      double sign = 1.0;
      for (int a = 0; a < 3; ++a) {
        if (std::abs(d(a)) < 1e-15) {
          if (std::abs(o(a)) > e(a)) return std::nullopt;
          continue;
        }
        double t1 = (-e(a) - o(a)) / d(a), t2 = (e(a) - o(a)) / d(a);
        double s = -1.0;
        if (t1 > t2) {
          std::swap(t1, t2);
          s = 1.0;
        }
        if (t1 > t_near) {
          t_near = t1;
          axis = a;
          sign = s;
        }
        t_far = std::min(t_far, t2);
      }
      if (axis >= 0 && t_near <= t_far) {
        Vec3 n = Vec3::Zero();
        n(axis) = sign;
        consider(t_near, n);
      }
      break;
    }
    case PrimitiveKind::cylinder: {
      const double r = p.size.x(), hz = 0.5 * p.size.z();
      const double a = d.x() * d.x() + d.y() * d.y();
      const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
      const double c = o.x() * o.x() + o.y() * o.y() - r * r;
      const double disc = b * b - 4.0 * a * c;
      if (a > 1e-15 && disc >= 0.0) {
        const double sq = std::sqrt(disc);
        for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
          const Vec3 x = o + t * d;
          if (std::abs(x.z()) <= hz) consider(t, Vec3(x.x(), x.y(), 0.0).normalized());
        }
      }
      if (std::abs(d.z()) > 1e-15) {
        for (double zc : {hz, -hz}) {
          const double t = (zc - o.z()) / d.z();
          const Vec3 x = o + t * d;
          if (x.x() * x.x() + x.y() * x.y() <= r * r) consider(t, Vec3(0, 0, zc > 0 ? 1.0 : -1.0));
        }
      }
      break;
    }
  }
  if (!std::isfinite(best.t)) return std::nullopt;
  return best;
}

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// `camera` maps world -> camera (metres).
inline RayCastResult ray_cast(const SceneSpec& scene, const Pose& camera, const Intrinsics& k,
                              const NoiseProfile& conf_model = {}) {
  const double fov = k.horizontal_fov_deg();
  if (!(fov > 10.0 && fov < 120.0)) throw Error(ErrorKind::InvalidInput, "field of view must lie in (10, 120) degrees");
  RayCastResult out;
  out.width = k.width;
  out.height = k.height;
  const std::size_t count = static_cast<std::size_t>(k.width) * k.height;
  out.points.assign(count, Vec3::Zero());
  out.confidence.assign(count, 0.0);
  out.primitive.assign(count, -1);
  out.class_id.assign(count, 0);
  out.color.assign(count, Vec3::Zero());

  const Pose cam_to_world = camera.inverse();
  std::vector<Pose> to_local;
  for (const auto& p : scene.primitives) to_local.push_back(p.pose.inverse() * cam_to_world);

  for (int h = 0; h < k.height; ++h) {
    for (int w = 0; w < k.width; ++w) {
      const Vec3 dir((w - k.cx) / k.fx, (h - k.cy) / k.fy, 1.0);  // z-depth parameterisation
      double best_t = std::numeric_limits<double>::infinity();
      int best = -1;
      Vec3 normal_cam = Vec3::UnitZ();
      for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const Vec3 o = to_local[i].translation();
        const Vec3 d = to_local[i].rotation() * dir;
        if (auto hit = detail::intersect_local(scene.primitives[i], o, d); hit && hit->t < best_t) {
          best_t = hit->t;
          best = static_cast<int>(i);
          normal_cam = to_local[i].rotation().inverse() * hit->normal;
        }
      }
      if (best < 0) continue;
      const std::size_t q = static_cast<std::size_t>(h) * k.width + w;
      const Vec3 x = best_t * dir;
      const Primitive& prim = scene.primitives[static_cast<std::size_t>(best)];
      out.points[q] = x;
      const double incidence = std::abs(normal_cam.dot(x.normalized()));
      const double raw = incidence * std::exp(-x.norm() / conf_model.confidence_falloff);
      out.confidence[q] = conf_model.confidence_min + (conf_model.confidence_max - conf_model.confidence_min) * raw;
      out.primitive[q] = best;
      out.class_id[q] = prim.class_id;
      out.color[q] = prim.color;
    }
  }
  return out;
}

/// Uniform samples on visible-from-above surfaces (box sides/top, cylinder
/// side/top, planes), labelled with colour and class.
inline LabeledPointCloud sample_surface(const SceneSpec& scene, std::uint64_t seed, double density = 0.0) {
  if (density <= 0.0) density = scene.sampling_density;
  auto rng = detail::stream_rng(seed, 0x5a5aULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabeledPointCloud cloud;
  cloud.frame = Frame::robot_base;
  cloud.colors.emplace();
  cloud.segmentation.emplace();
  auto emit = [&](const Primitive& p, const Vec3& local) {
    cloud.points.push_back(p.pose * local);
    cloud.sources.push_back(PixelRef{});
    cloud.colors->push_back(p.color);
    cloud.segmentation->push_back(p.class_id);
  };
  auto count_for = [&](double area) { return static_cast<int>(std::ceil(area * density)); };
  for (const auto& p : scene.primitives) {
    const Vec3 s = p.size;
    switch (p.kind) {
      case PrimitiveKind::plane:
        for (int i = 0, n = count_for(s.x() * s.y()); i < n; ++i)
          emit(p, Vec3((u(rng) - 0.5) * s.x(), (u(rng) - 0.5) * s.y(), 0.0));
        break;
      case PrimitiveKind::box: {
        // top face plus four sides
        for (int i = 0, n = count_for(s.x() * s.y()); i < n; ++i)
          emit(p, Vec3((u(rng) - 0.5) * s.x(), (u(rng) - 0.5) * s.y(), 0.5 * s.z()));
        for (int side = 0; side < 4; ++side) {
          const bool along_x = side < 2;
          const double sign = side % 2 == 0 ? 1.0 : -1.0;
          const double width = along_x ? s.y() : s.x();
          for (int i = 0, n = count_for(width * s.z()); i < n; ++i) {
            const double a = (u(rng) - 0.5) * width, z = (u(rng) - 0.5) * s.z();
            emit(p, along_x ? Vec3(sign * 0.5 * s.x(), a, z) : Vec3(a, sign * 0.5 * s.y(), z));
          }
        }
        break;
      }
      case PrimitiveKind::cylinder: {
        const double r = s.x(), hgt = s.z();
        for (int i = 0, n = count_for(std::numbers::pi * r * r); i < n; ++i) {
          const double rr = r * std::sqrt(u(rng)), th = 2.0 * std::numbers::pi * u(rng);
          emit(p, Vec3(rr * std::cos(th), rr * std::sin(th), 0.5 * hgt));
        }
        for (int i = 0, n = count_for(2.0 * std::numbers::pi * r * hgt); i < n; ++i) {
          const double th = 2.0 * std::numbers::pi * u(rng);
          emit(p, Vec3(r * std::cos(th), r * std::sin(th), (u(rng) - 0.5) * hgt));
        }
        break;
      }
    }
  }
  return cloud;
}

enum class TrajectoryKind { view_sphere, single_axis };

struct TrajectorySpec {
  int num_poses = 10;
  TrajectoryKind kind = TrajectoryKind::view_sphere;
  double radius = 0.55;
  double min_elevation = 35.0 * std::numbers::pi / 180.0;
  double max_elevation = 70.0 * std::numbers::pi / 180.0;
  double azimuth_span = 140.0 * std::numbers::pi / 180.0;
  double roll_span = 20.0 * std::numbers::pi / 180.0;  // half width of the uniform random roll
  // A fixed radius and aim point make every camera motion a rotation about the aim point,
  // which leaves the metric scale unobservable; both are jittered per pose.
  double radius_jitter = 0.25;  // relative half width
  double aim_jitter = 0.06;     // metres, half width per horizontal axis
  bool allow_degenerate = false;
};

struct HiddenCalibration {
  Pose hand_eye = Pose(exp_map(Vec3(0.15, -0.25, 1.4)), Vec3(0.03, -0.02, 0.10), Frame::end_effector);
  double scale = 0.5;  // metres per model unit
};

struct GroundTruth {
  HiddenCalibration hidden;
  std::vector<Pose> end_effector;   // noise-free, base -> end effector
  std::vector<Pose> camera_metric;  // world -> camera, metres
  std::vector<ObjectHeight> objects;
  int support_class = 0;  // label of the surface heights are measured from
  NoiseProfile noise;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<Pose> end_effector;  // measured (noisy) poses
  std::vector<Pose> camera;        // ground-truth camera poses in model units
  std::vector<PairwisePrediction> pairs;
  PairGraph graph;
  std::vector<RayCastResult> views;
  Intrinsics intrinsics;
  GroundTruth truth;

  std::vector<ColorImage> color_images() const {
    std::vector<ColorImage> out;
    for (const auto& v : views) out.push_back(ColorImage{v.width, v.height, v.color});
    return out;
  }
  std::vector<LabelImage> label_images() const {
    std::vector<LabelImage> out;
    for (const auto& v : views) out.push_back(LabelImage{v.width, v.height, v.class_id});
    return out;
  }
};

struct SynthOptions {
  bool pointmaps = true;
  std::optional<PairGraph> graph;  // default: PairGraph::default_for(N)
};

/// Camera poses (world -> camera, metres) looking at the scene target.
inline std::vector<Pose> generate_camera_trajectory(const SceneSpec& scene, const TrajectorySpec& spec,
                                                    std::uint64_t seed) {
  if (spec.num_poses < 3) throw Error(ErrorKind::InsufficientDiversity, "need at least 3 poses");
  if (spec.kind == TrajectoryKind::single_axis && !spec.allow_degenerate) {
    throw Error(ErrorKind::InsufficientDiversity, "single-axis trajectory has only one rotation axis");
  }
  auto rng = detail::stream_rng(seed, 0x7a7aULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  auto look_at = [&](const Vec3& eye, const Vec3& aim, double roll) {
    const Vec3 z = (aim - eye).normalized();
    Vec3 x = z.cross(Vec3::UnitZ());
    if (x.norm() < 1e-9) x = Vec3::UnitX();
    x.normalize();
    const Vec3 y = z.cross(x);
    Mat3 cam_to_world;
    cam_to_world << x, y, z;
    const Mat3 rolled = cam_to_world * exp_map(Vec3(0, 0, roll)).matrix();
    return Pose(Rotation::nearest(rolled), eye, Frame::camera_metric).inverse();
  };

  std::vector<Pose> out;
  const double mid_elev = 0.5 * (spec.min_elevation + spec.max_elevation);
  for (int i = 0; i < spec.num_poses; ++i) {
    double az, el, roll, radius = spec.radius;
    Vec3 aim = scene.target;
    if (spec.kind == TrajectoryKind::single_axis) {
      az = -0.5 * spec.azimuth_span + spec.azimuth_span * i / (spec.num_poses - 1);
      el = mid_elev;
      roll = 0.0;
    } else {
      az = (u(rng) - 0.5) * spec.azimuth_span;
      el = spec.min_elevation + u(rng) * (spec.max_elevation - spec.min_elevation);
      roll = (2.0 * u(rng) - 1.0) * spec.roll_span;
      radius *= 1.0 + (2.0 * u(rng) - 1.0) * spec.radius_jitter;
      aim += spec.aim_jitter * Vec3(2.0 * u(rng) - 1.0, 2.0 * u(rng) - 1.0, 0.0);
    }
    const Vec3 eye = aim + radius * Vec3(-std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    out.push_back(look_at(eye, aim, roll));
  }
  return out;
}

inline Dataset generate_dataset(const SceneSpec& scene, const TrajectorySpec& trajectory,
                                const HiddenCalibration& hidden, const NoiseProfile& noise, const Intrinsics& intrinsics,
                                std::uint64_t seed, const SynthOptions& options = {}) {
  scene.validate();
  noise.validate();
  if (!(hidden.scale > 0.0)) throw Error(ErrorKind::InvalidInput, "hidden scale must be positive");
  const int n = trajectory.num_poses;

  Dataset ds;
  ds.intrinsics = intrinsics;
  ds.truth.hidden = hidden;
  ds.truth.noise = noise;
  ds.truth.seed = seed;
  ds.truth.objects = object_heights(scene);
  for (const auto& p : scene.primitives)
    if (p.support) ds.truth.support_class = p.class_id;
  ds.truth.camera_metric = generate_camera_trajectory(scene, trajectory, seed);

  const Pose& x = hidden.hand_eye;
  for (const auto& cam : ds.truth.camera_metric) {
    ds.truth.end_effector.push_back((x * cam).with_frame(Frame::end_effector));
    ds.camera.push_back(Pose(cam.rotation(), cam.translation() / hidden.scale, Frame::camera_model));
  }

  if (trajectory.kind == TrajectoryKind::view_sphere) {
    std::vector<MotionPair> motions;
    // all pairs, so N = 3 (two consecutive motions, never rank 3) is still accepted
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        motions.push_back({relative_transform(ds.truth.end_effector[i], ds.truth.end_effector[j]), Pose()});
    Mat3 m = Mat3::Zero();
    for (const auto& mp : motions) {
      const Vec3 a = log_map(mp.end_effector.rotation());
      m += a * a.transpose();
    }
    const Vec3 sv = Eigen::JacobiSVD<Mat3>(m).singularValues();
    if (!(sv(2) > 1e-6 * sv(0)) && !trajectory.allow_degenerate) {
      throw Error(ErrorKind::InsufficientDiversity, "generated trajectory lacks rotation diversity");
    }
  }

  {
    auto rng = detail::stream_rng(seed, 0xe0e0ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& e : ds.truth.end_effector) {
      const Vec3 dr(normal(rng), normal(rng), normal(rng));
      const Vec3 dt(normal(rng), normal(rng), normal(rng));
      const Pose perturb(exp_map(noise.ee_rotation_sigma * dr), noise.ee_translation_sigma * dt);
      ds.end_effector.push_back((perturb * e).with_frame(Frame::end_effector));
    }
  }

  if (!options.pointmaps) return ds;

  for (int v = 0; v < n; ++v) {
    ds.views.push_back(ray_cast(scene, ds.truth.camera_metric[static_cast<std::size_t>(v)], intrinsics, noise));
  }

  // Pair graph with pair-level dropout outside the chain (i, i+1), (i+1, i).
  const PairGraph full = options.graph ? *options.graph : PairGraph::default_for(n);
  ds.graph.num_views = full.num_views;
  {
    auto rng = detail::stream_rng(seed, 0xd0d0ULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto [a, b] : full.edges) {
      const bool chain = std::abs(a - b) == 1;
      const double draw = u(rng);
      if (chain || !(draw < noise.dropout)) ds.graph.edges.emplace_back(a, b);
    }
  }

  const std::size_t pixels = static_cast<std::size_t>(intrinsics.width) * intrinsics.height;
  for (std::size_t e = 0; e < ds.graph.edges.size(); ++e) {
    const auto [a, b] = ds.graph.edges[e];
    auto rng = detail::stream_rng(seed, 0x10000ULL + static_cast<std::uint64_t>(a) * 4096 + b);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double pair_scale = e == 0 ? 1.0 : std::exp(noise.pair_scale_jitter * u(rng));
    const Pose b_to_a = ds.camera[static_cast<std::size_t>(a)] * ds.camera[static_cast<std::size_t>(b)].inverse();

    PairwisePrediction p;
    p.n = a;
    p.m = b;
    p.width = intrinsics.width;
    p.height = intrinsics.height;
    p.pointmap_self.resize(pixels);
    p.pointmap_other.resize(pixels);
    p.confidence_self = ds.views[static_cast<std::size_t>(a)].confidence;
    p.confidence_other = ds.views[static_cast<std::size_t>(b)].confidence;
    auto noisy = [&](const Vec3& pt, double conf) {
      if (!(conf > 0.0) || noise.point_sigma == 0.0) return pt;
      const double s = noise.point_sigma / conf;
      return Vec3(pt + s * Vec3(normal(rng), normal(rng), normal(rng)));
    };
    for (std::size_t q = 0; q < pixels; ++q) {
      const double ca = p.confidence_self[q], cb = p.confidence_other[q];
      const Vec3 self = ds.views[static_cast<std::size_t>(a)].points[q] / hidden.scale;
      const Vec3 other = b_to_a * (ds.views[static_cast<std::size_t>(b)].points[q] / hidden.scale);
      p.pointmap_self[q] = ca > 0.0 ? Vec3(pair_scale * noisy(self, ca)) : Vec3::Zero();
      p.pointmap_other[q] = cb > 0.0 ? Vec3(pair_scale * noisy(other, cb)) : Vec3::Zero();
    }
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

}  // namespace jcr
