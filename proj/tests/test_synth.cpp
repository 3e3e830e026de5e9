#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "jcr/io.hpp"
#include "support.hpp"

using namespace jcr;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  io::write_pose_list(dir / "ee.json", ds.end_effector);
  io::write_pair_manifest(dir, ds.pairs, ds.graph.num_views);
  io::write_json(dir / "truth.json", io::ground_truth_json(ds.truth));
}

}  // namespace

TEST(Synth, IdentityHiddenCalibrationGivesCameraEqualsEndEffector) {
  HiddenCalibration hid;
  hid.hand_eye = Pose(Rotation(), Vec3::Zero(), Frame::end_effector);
  hid.scale = 1.0;
  TrajectorySpec traj;
  traj.num_poses = 6;
  const Dataset ds = generate_dataset(tabletop_scene(), traj, hid, NoiseProfile::zero(),
                                      Intrinsics::from_fov(16, 12, 60), 1, SynthOptions{false, std::nullopt});
  for (int i = 0; i < 6; ++i) {
    EXPECT_LT(test::pose_distance(ds.camera[i], ds.end_effector[i]), 1e-15);
  }
}

TEST(Synth, NoiselessDatasetsSatisfyHandEyeEquationExactly) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = test::small_dataset(seed, NoiseProfile::zero(), 8);
    const auto& hid = ds.truth.hidden;
    for (PairingMode mode : {PairingMode::consecutive, PairingMode::all_pairs}) {
      const auto pairs = motion_pairs(ds.end_effector, ds.camera, mode);
      for (const auto& r : residuals(pairs, hid.hand_eye.rotation(), hid.hand_eye.translation(), hid.scale)) {
        EXPECT_LT(r.translation, 1e-10);
        EXPECT_LT(r.rotation, 1e-10);
      }
    }
  }
}

TEST(Synth, NoiselessCalibrationRecoversHiddenParameters) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = test::small_dataset(seed, NoiseProfile::zero(), 10);
    const CalibrationResult c = calibrate(ds.end_effector, ds.camera);
    EXPECT_LT(rotation_distance(c.rotation, ds.truth.hidden.hand_eye.rotation()), 1e-5);
    EXPECT_LT((c.translation - ds.truth.hidden.hand_eye.translation()).norm(), 1e-5);
    EXPECT_LT(std::abs(c.scale / ds.truth.hidden.scale - 1.0), 1e-5);
  }
}

TEST(Synth, PointmapsAreScaledRayCastsInTheSourceFrame) {
  const Dataset ds = test::small_dataset(2, NoiseProfile::zero(), 4);
  const double lambda = ds.truth.hidden.scale;
  for (const auto& p : ds.pairs) {
    const Pose b_to_a = ds.camera[p.n] * ds.camera[p.m].inverse();
    for (std::size_t q = 0; q < p.pointmap_self.size(); ++q) {
      if (p.confidence_self[q] > 0)
        ASSERT_LT((p.pointmap_self[q] * lambda - ds.views[p.n].points[q]).norm(), 1e-12);
      if (p.confidence_other[q] > 0)
        ASSERT_LT((p.pointmap_other[q] - b_to_a * (ds.views[p.m].points[q] / lambda)).norm(), 1e-12);
    }
  }
}

TEST(Synth, DropoutKeepsChainConnected) {
  NoiseProfile n = NoiseProfile::zero();
  n.dropout = 1.0;
  const Dataset ds = test::small_dataset(3, n, 8, 8, 6);
  EXPECT_TRUE(ds.graph.connected());
  EXPECT_EQ(ds.graph.edges.size(), 14u);
  for (auto [a, b] : ds.graph.edges) EXPECT_EQ(std::abs(a - b), 1);
  EXPECT_NO_THROW(ds.graph.validate());
}

TEST(Synth, SingleAxisTrajectoryIsRejectedUnlessAllowed) {
  TrajectorySpec t;
  t.kind = TrajectoryKind::single_axis;
  try {
    generate_camera_trajectory(tabletop_scene(), t, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientDiversity);
  }
  t.allow_degenerate = true;
  EXPECT_EQ(generate_camera_trajectory(tabletop_scene(), t, 1).size(), 10u);
  t.num_poses = 2;
  EXPECT_THROW(generate_camera_trajectory(tabletop_scene(), t, 1), Error);
}

TEST(Synth, WorkspaceAndIntrinsicsValidation) {
  SceneSpec s = tabletop_scene();
  s.primitives[1].pose = Pose(Rotation(), Vec3(2, 0, 0));
  EXPECT_THROW(s.validate(), Error);
  EXPECT_THROW(Intrinsics::from_fov(32, 24, 5), Error);
  EXPECT_THROW(Intrinsics::from_fov(32, 24, 130), Error);
  NoiseProfile n;
  n.point_sigma = -1;
  EXPECT_THROW(n.validate(), Error);
}

TEST(RayCast, PrincipalRayHitsPlaneAtDepth) {
  SceneSpec s;
  s.primitives.push_back({PrimitiveKind::plane, "wall", Pose(), Vec3(4, 4, 0), Vec3::Constant(0.5), 0, true});
  const double d = 0.8;
  // camera at height d looking straight down
  const Pose cam_to_world(Rotation::nearest((Mat3() << 1, 0, 0, 0, -1, 0, 0, 0, -1).finished()), Vec3(0, 0, d));
  const Intrinsics k = Intrinsics::from_fov(33, 25, 60);
  const RayCastResult r = ray_cast(s, cam_to_world.inverse(), k);
  const std::size_t centre = 12 * 33 + 16;
  EXPECT_LT((r.points[centre] - Vec3(0, 0, d)).norm(), 1e-12);
  for (std::size_t q = 0; q < r.points.size(); ++q) {
    EXPECT_NEAR(r.points[q].z(), d, 1e-12);
    EXPECT_GT(r.confidence[q], 0.0);
  }
}

TEST(RayCast, BoxHeightFromHitExtent) {
  SceneSpec s;
  const double h = 0.15;
  s.primitives.push_back({PrimitiveKind::box, "box", Pose(Rotation(), Vec3(0, 0, h / 2)), Vec3(0.2, 0.2, h),
                          Vec3::Constant(0.5), 1, false});
  // horizontal camera 1 m away on -x, looking along +x; camera y points down (-z world)
  Mat3 r;
  r.col(0) = Vec3(0, -1, 0);
  r.col(1) = Vec3(0, 0, -1);
  r.col(2) = Vec3(1, 0, 0);
  const Pose cam_to_world(Rotation::nearest(r), Vec3(-1.0, 0, h / 2));
  const Intrinsics k = Intrinsics::from_fov(64, 64, 30);
  const RayCastResult rc = ray_cast(s, cam_to_world.inverse(), k);
  double lo = 1e9, hi = -1e9;
  for (std::size_t q = 0; q < rc.points.size(); ++q) {
    if (rc.primitive[q] < 0) continue;
    const double z = (cam_to_world * rc.points[q]).z();
    lo = std::min(lo, z);
    hi = std::max(hi, z);
  }
  const double pixel = 0.9 / k.fy;  // footprint at the front face depth
  EXPECT_LE(hi - lo, h + 1e-12);
  EXPECT_GE(hi - lo, h - 2 * pixel);
}

TEST(RayCast, FacingAwayIsAllMiss) {
  const SceneSpec s = tabletop_scene();
  // camera above the table looking straight up
  const Pose cam_to_world(Rotation(), Vec3(0, 0, 0.5));
  const RayCastResult r = ray_cast(s, cam_to_world.inverse(), Intrinsics::from_fov(16, 12, 60));
  for (std::size_t q = 0; q < r.points.size(); ++q) {
    EXPECT_EQ(r.primitive[q], -1);
    EXPECT_EQ(r.confidence[q], 0.0);
  }
}

TEST(RayCast, ConfidenceLiesInConfiguredRange) {
  const Dataset ds = test::small_dataset(4, NoiseProfile::realistic(), 3);
  for (const auto& v : ds.views)
    for (std::size_t q = 0; q < v.confidence.size(); ++q) {
      if (v.primitive[q] < 0) continue;
      EXPECT_GE(v.confidence[q], 0.5);
      EXPECT_LE(v.confidence[q], 3.0);
    }
}

TEST(SampleSurface, PointsLieOnPrimitiveSurfaces) {
  const SceneSpec s = test::box_cylinder_scene();
  const LabeledPointCloud c = sample_surface(s, 1, 20000);
  ASSERT_GT(c.size(), 500u);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_TRUE(test::inside_solid(s, c.points[i], 1e-12));
    EXPECT_FALSE(test::inside_solid(s, c.points[i], -1e-9)) << "interior point " << i;
  }
  EXPECT_EQ(c.segmentation->size(), c.size());
}

TEST(Synth, SeedDeterminismIsByteExact) {
  const auto a = test::scratch_dir("synth_a"), b = test::scratch_dir("synth_b"), c = test::scratch_dir("synth_c");
  write_dataset(a, test::small_dataset(11, NoiseProfile::realistic(), 5));
  write_dataset(b, test::small_dataset(11, NoiseProfile::realistic(), 5));
  write_dataset(c, test::small_dataset(12, NoiseProfile::realistic(), 5));
  int files = 0;
  bool any_differs = false;
  for (const auto& entry : std::filesystem::directory_iterator(a)) {
    const auto name = entry.path().filename();
    ++files;
    EXPECT_EQ(file_bytes(entry.path()), file_bytes(b / name)) << name;
    if (std::filesystem::exists(c / name) && file_bytes(entry.path()) != file_bytes(c / name)) any_differs = true;
  }
  EXPECT_GT(files, 5);
  EXPECT_TRUE(any_differs);
}

TEST(Synth, MeanTranslationResidualGrowsWithPoseNoise) {
  // 5-point sweep of sigma_trans, 20 seeds each, compared on means
  const std::vector<double> sweep{0.0, 0.001, 0.002, 0.004, 0.008};
  double previous = -1.0;
  for (double sigma : sweep) {
    NoiseProfile n = NoiseProfile::zero();
    n.ee_translation_sigma = sigma;
    double mean = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      TrajectorySpec t;
      const Dataset ds = generate_dataset(tabletop_scene(), t, HiddenCalibration{}, n, Intrinsics::from_fov(8, 6, 60),
                                          seed, SynthOptions{false, std::nullopt});
      mean += calibrate(ds.end_effector, ds.camera).mean_translation_residual() / 20.0;
    }
    EXPECT_GE(mean, previous) << "sigma " << sigma;
    previous = mean;
  }
}
