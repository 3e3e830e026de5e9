#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "jcr/jcr.hpp"

namespace jcr::test {

inline Vec3 random_vector(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  return scale * Vec3(n(rng), n(rng), n(rng));
}

/// Axis-angle vector with angle uniform in [0, max_angle].
inline Vec3 random_axis_angle(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> u(0.0, max_angle);
  return random_vector(rng).normalized() * u(rng);
}

inline Rotation random_rotation(std::mt19937_64& rng) { return exp_map(random_axis_angle(rng, 3.0)); }

inline Pose random_pose(std::mt19937_64& rng, double translation_scale = 0.5, Frame frame = Frame::robot_base) {
  return Pose(random_rotation(rng), random_vector(rng, translation_scale), frame);
}

inline double pose_distance(const Pose& a, const Pose& b) {
  return rotation_distance(a.rotation(), b.rotation()) + (a.translation() - b.translation()).norm();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("jcr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Dataset small_dataset(std::uint64_t seed, const NoiseProfile& noise = NoiseProfile::zero(), int views = 10,
                             int width = 32, int height = 24) {
  TrajectorySpec traj;
  traj.num_poses = views;
  return generate_dataset(tabletop_scene(), traj, HiddenCalibration{}, noise, Intrinsics::from_fov(width, height, 60.0),
                          seed);
}

/// Box and cylinder standing on z = 0, classes 1 and 2, no support plane.
inline SceneSpec box_cylinder_scene() {
  SceneSpec s;
  s.primitives.push_back({PrimitiveKind::box, "box", Pose(Rotation(), Vec3(-0.06, 0, 0.05)), Vec3(0.1, 0.1, 0.1),
                          Vec3(0.9, 0.1, 0.1), 1, false});
  s.primitives.push_back({PrimitiveKind::cylinder, "cylinder", Pose(Rotation(), Vec3(0.07, 0, 0.05)),
                          Vec3(0.04, 0.04, 0.1), Vec3(0.1, 0.1, 0.9), 2, false});
  return s;
}

/// True when p lies inside a box or cylinder inflated by margin.
inline bool inside_solid(const SceneSpec& scene, const Vec3& p, double margin) {
  for (const auto& prim : scene.primitives) {
    const Vec3 l = prim.pose.inverse() * p;
    if (prim.kind == PrimitiveKind::box && (l.cwiseAbs() - 0.5 * prim.size).maxCoeff() <= margin) return true;
    if (prim.kind == PrimitiveKind::cylinder && l.head<2>().norm() <= prim.size.x() + margin &&
        std::abs(l.z()) <= 0.5 * prim.size.z() + margin)
      return true;
  }
  return false;
}

/// Held-out accuracy at threshold 0.5: fresh surface samples as positives,
/// uniform free-space points (1 cm clear of every solid) inside the model box as negatives.
inline double occupancy_accuracy(const FieldModel& model, const SceneSpec& scene, std::uint64_t seed, int count) {
  const LabeledPointCloud surface = sample_surface(scene, seed, 20000.0);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, surface.size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pos, neg;
  while (static_cast<int>(pos.size()) < count) pos.push_back(surface.points[pick(rng)]);
  while (static_cast<int>(neg.size()) < count) {
    const Vec3 p = model.box.lower + (model.box.extent().array() * Vec3(u(rng), u(rng), u(rng)).array()).matrix();
    if (!inside_solid(scene, p, 0.01)) neg.push_back(p);
  }
  const Eigen::MatrixXd yp = query(model, pos), yn = query(model, neg);
  const auto correct = (yp.array() > 0.5).count() + (yn.array() <= 0.5).count();
  return static_cast<double>(correct) / (2.0 * count);
}

/// Two blobs of radius 5 cm, centres 0.5 m apart, labels 0 and 1; optional third at z = 0.5.
inline LabeledPointCloud cluster_cloud(std::uint64_t seed, int per_cluster, int clusters = 2) {
  std::mt19937_64 rng(seed);
  const std::vector<Vec3> centres{Vec3(-0.25, 0, 0), Vec3(0.25, 0, 0), Vec3(0, 0, 0.5)};
  LabeledPointCloud c;
  c.segmentation.emplace();
  c.colors.emplace();
  for (int k = 0; k < clusters; ++k)
    for (int i = 0; i < per_cluster; ++i) {
      c.points.push_back(centres[k] + random_vector(rng, 0.05).cwiseMax(-0.1).cwiseMin(0.1));
      c.sources.push_back(PixelRef{});
      c.segmentation->push_back(k);
      c.colors->push_back(k == 0 ? Vec3(0.9, 0.2, 0.1) : (k == 1 ? Vec3(0.1, 0.3, 0.8) : Vec3(0.2, 0.8, 0.2)));
    }
  return c;
}

}  // namespace jcr::test
