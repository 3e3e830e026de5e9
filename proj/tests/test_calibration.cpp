#include <gtest/gtest.h>

#include "support.hpp"

using namespace jcr;
using jcr::test::random_pose;

namespace {

struct HandEyeProblem {
  Pose x;
  double lambda;
  std::vector<Pose> ee;      // base -> end effector
  std::vector<Pose> camera;  // world(=base) -> camera, model units
};

// Cameras follow from the end-effector poses: x_cam = X^-1 E x_base, translations divided by lambda.
HandEyeProblem make_problem(std::uint64_t seed, int n = 10, double lambda = 0.5) {
  std::mt19937_64 rng(seed);
  HandEyeProblem p;
  p.x = Pose(jcr::test::random_rotation(rng), Vec3(0.03, -0.02, 0.10));
  p.lambda = lambda;
  for (int i = 0; i < n; ++i) {
    const Pose e = random_pose(rng, 0.4);
    const Pose c = p.x.inverse() * e;
    p.ee.push_back(e);
    p.camera.push_back(Pose(c.rotation(), c.translation() / lambda));
  }
  return p;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no jcr::Error thrown";
  return ErrorKind::InvalidInput;
}

}  // namespace

TEST(MotionPairs, IdenticalEndEffectorPosesGiveIdentity) {
  std::mt19937_64 rng(1);
  const Pose e = random_pose(rng);
  const std::vector<Pose> ee{e, e, e}, cam{random_pose(rng), random_pose(rng), random_pose(rng)};
  for (const auto& m : motion_pairs(ee, cam)) {
    EXPECT_LT(m.end_effector.rotation().angle() + m.end_effector.translation().norm(), 1e-12);
  }
}

TEST(MotionPairs, MatchHandComputedComposition) {
  std::mt19937_64 rng(2);
  std::vector<Pose> ee, cam;
  for (int i = 0; i < 3; ++i) {
    ee.push_back(random_pose(rng));
    cam.push_back(random_pose(rng));
  }
  const auto pairs = motion_pairs(ee, cam);
  ASSERT_EQ(pairs.size(), 2u);
  for (int i = 0; i < 2; ++i) {
    const Mat4 expected_e = ee[i + 1].matrix() * ee[i].matrix().inverse();
    const Mat4 expected_c = cam[i + 1].matrix() * cam[i].matrix().inverse();
    EXPECT_NEAR((pairs[i].end_effector.matrix() - expected_e).norm(), 0.0, 1e-12);
    EXPECT_NEAR((pairs[i].camera.matrix() - expected_c).norm(), 0.0, 1e-12);
  }
  EXPECT_EQ(motion_pairs(ee, cam, PairingMode::all_pairs).size(), 3u);
}

TEST(MotionPairs, LengthAndCountErrors) {
  const std::vector<Pose> two(2), three(3);
  EXPECT_EQ(kind_of([&] { motion_pairs(two, three); }), ErrorKind::LengthMismatch);
  EXPECT_EQ(kind_of([&] { motion_pairs(two, two); }), ErrorKind::TooFewPoses);
}

TEST(SolveRotation, IdentityHandEye) {
  std::mt19937_64 rng(3);
  std::vector<MotionPair> pairs;
  for (int i = 0; i < 10; ++i) {
    const Pose m = random_pose(rng);
    pairs.push_back({m, m});
  }
  EXPECT_LT(solve_rotation(pairs).angle(), 1e-9);
}

TEST(SolveRotation, RandomGroundTruthTwentyPairs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = make_problem(seed, 21);
    const Rotation r = solve_rotation(motion_pairs(p.ee, p.camera));
    EXPECT_LT(rotation_distance(r, p.x.rotation()), 1e-6);
  }
}

TEST(SolveRotation, SingleAxisIsDegenerate) {
  std::vector<MotionPair> pairs;
  for (int i = 1; i <= 6; ++i) {
    const Pose m(exp_map(Vec3(0, 0, 0.2 * i)), Vec3(0.1 * i, 0, 0));
    pairs.push_back({m, m});
  }
  EXPECT_EQ(kind_of([&] { solve_rotation(pairs); }), ErrorKind::DegenerateMotion);
}

TEST(SolveTranslationScale, NoiselessRecovery) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = make_problem(seed);
    const auto pairs = motion_pairs(p.ee, p.camera);
    const auto ts = solve_translation_scale(pairs, p.x.rotation());
    EXPECT_LT(std::abs(ts.scale - 0.5) / 0.5, 1e-6);
    EXPECT_LT((ts.translation - p.x.translation()).norm() / p.x.translation().norm(), 1e-6);
  }
}

TEST(SolveTranslationScale, ClosedFormBeatsRandomSamples) {
  std::mt19937_64 rng(4);
  const auto p = make_problem(7);
  auto pairs = motion_pairs(p.ee, p.camera);
  for (auto& m : pairs) m.end_effector = Pose(m.end_effector.rotation(), m.end_effector.translation() + jcr::test::random_vector(rng, 0.01));
  const Rotation r = solve_rotation(pairs);
  const Vec3 t_star = closed_form_translation(pairs, r, p.lambda);
  const double best = srp_residual(pairs, r, t_star, p.lambda);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 t = t_star + Vec3(u(rng), u(rng), u(rng));
    EXPECT_LE(best, srp_residual(pairs, r, t, p.lambda) + 1e-15);
  }
}

TEST(SolveTranslationScale, ClosedFormOptimalUnderSmallPerturbations) {
  std::mt19937_64 rng(5);
  const auto p = make_problem(9);
  auto pairs = motion_pairs(p.ee, p.camera);
  for (auto& m : pairs) m.camera = m.camera.with_translation(m.camera.translation() + jcr::test::random_vector(rng, 0.005));
  const Rotation r = solve_rotation(pairs);
  for (double lambda : {0.2, 0.5, 1.3}) {
    const Vec3 t_star = closed_form_translation(pairs, r, lambda);
    const double best = srp_residual(pairs, r, t_star, lambda);
    for (int i = 0; i < 100; ++i) {
      const Vec3 dir = jcr::test::random_vector(rng).normalized();
      EXPECT_LE(best, srp_residual(pairs, r, t_star + 1e-3 * dir, lambda));
    }
  }
}

TEST(SolveTranslationScale, PureCameraRotationIsRankDeficient) {
  auto p = make_problem(11);
  for (auto& c : p.camera) c = c.with_translation(Vec3::Zero());
  const auto pairs = motion_pairs(p.ee, p.camera);
  EXPECT_EQ(kind_of([&] { solve_translation_scale(pairs, p.x.rotation()); }), ErrorKind::RankDeficientC);
}

TEST(SolveTranslationScale, ScaleOutsideBoundsIsReported) {
  const auto p = make_problem(12);
  ScaleSearchConfig cfg;
  cfg.lower = 1e-3;
  cfg.upper = 0.1;
  EXPECT_EQ(kind_of([&] { solve_translation_scale(motion_pairs(p.ee, p.camera), p.x.rotation(), cfg); }),
            ErrorKind::ScaleAtBound);
}

TEST(GoldenSection, FindsParabolaMinimum) {
  const double x = golden_section_minimize([](double v) { return (v - 1.7) * (v - 1.7); }, 0.1, 10.0, 1e-10);
  EXPECT_NEAR(x, 1.7, 1e-8);
}

TEST(Residuals, NoiselessAreZero) {
  const auto p = make_problem(13);
  const auto pairs = motion_pairs(p.ee, p.camera);
  for (const auto& r : residuals(pairs, p.x.rotation(), p.x.translation(), p.lambda)) {
    EXPECT_LT(r.translation, 1e-9);
    EXPECT_LT(r.rotation, 1e-9);
  }
}

TEST(Residuals, HandEyeEquationHoldsPerPair) {
  const auto p = make_problem(14);
  const Mat4 x = p.x.matrix();
  for (const auto& m : motion_pairs(p.ee, p.camera)) {
    const Pose scaled = m.camera.with_translation(p.lambda * m.camera.translation());
    EXPECT_LT((m.end_effector.matrix() * x - x * scaled.matrix()).norm(), 1e-8);
  }
}

TEST(Residuals, OneCentimetreOffsetRaisesMeanTranslationResidual) {
  const auto p = make_problem(15);
  const auto pairs = motion_pairs(p.ee, p.camera);
  auto mean_t = [&](const Vec3& t) {
    double s = 0;
    for (const auto& r : residuals(pairs, p.x.rotation(), t, p.lambda)) s += r.translation;
    return s / static_cast<double>(pairs.size());
  };
  for (const Vec3& d : {Vec3(0.01, 0, 0), Vec3(0, 0.01, 0), Vec3(0, 0, 0.01)}) {
    EXPECT_GT(mean_t(p.x.translation() + d), mean_t(p.x.translation()));
  }
}

TEST(Calibrate, NoiselessSyntheticDataset) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrajectorySpec traj;
    const HiddenCalibration hidden;
    const Dataset ds = generate_dataset(tabletop_scene(), traj, hidden, NoiseProfile::zero(),
                                        Intrinsics::from_fov(32, 24, 60), seed, SynthOptions{false, std::nullopt});
    const CalibrationResult c = calibrate(ds.end_effector, ds.camera);
    EXPECT_TRUE(c.converged);
    EXPECT_LT(rotation_distance(c.rotation, hidden.hand_eye.rotation()), 1e-5);
    EXPECT_LT((c.translation - hidden.hand_eye.translation()).norm(), 1e-5);
    EXPECT_LT(std::abs(c.scale - hidden.scale) / hidden.scale, 1e-5);
  }
}

TEST(Calibrate, PoseNoiseStaysInsideResidualBands) {
  int converged = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Dataset ds = generate_dataset(tabletop_scene(), TrajectorySpec{}, HiddenCalibration{}, NoiseProfile::realistic(),
                                        Intrinsics::from_fov(32, 24, 60), seed, SynthOptions{false, std::nullopt});
    const CalibrationResult c = calibrate(ds.end_effector, ds.camera);
    converged += c.converged && c.mean_translation_residual() < 0.1 && c.mean_rotation_residual() < 0.15;
  }
  EXPECT_GE(converged, 19);
}

TEST(Calibrate, SingleAxisTrajectoryIsDegenerate) {
  TrajectorySpec traj;
  traj.kind = TrajectoryKind::single_axis;
  traj.allow_degenerate = true;
  const Dataset ds = generate_dataset(tabletop_scene(), traj, HiddenCalibration{}, NoiseProfile::zero(),
                                      Intrinsics::from_fov(32, 24, 60), 1, SynthOptions{false, std::nullopt});
  EXPECT_EQ(kind_of([&] { calibrate(ds.end_effector, ds.camera); }), ErrorKind::DegenerateMotion);
}

TEST(Calibrate, ScaleEquivariance) {
  const auto p = make_problem(16);
  const CalibrationResult base = calibrate(p.ee, p.camera);
  for (double k : {0.1, 3.0, 40.0}) {
    std::vector<Pose> scaled;
    for (const auto& c : p.camera) scaled.push_back(c.with_translation(k * c.translation()));
    const CalibrationResult r = calibrate(p.ee, scaled);
    EXPECT_LT(std::abs(r.scale * k - base.scale) / base.scale, 1e-6);
    EXPECT_LT(rotation_distance(r.rotation, base.rotation), 1e-6);
    EXPECT_LT((r.translation - base.translation).norm(), 1e-6);
  }
}

TEST(Calibrate, BaseFrameChangeLeavesResultUnchanged) {
  std::mt19937_64 rng(17);
  const auto p = make_problem(17);
  const CalibrationResult base = calibrate(p.ee, p.camera);
  const Pose g = random_pose(rng, 1.0);
  std::vector<Pose> moved;
  for (const auto& e : p.ee) moved.push_back(e * g);
  const CalibrationResult r = calibrate(moved, p.camera);
  EXPECT_LT(rotation_distance(r.rotation, base.rotation), 1e-6);
  EXPECT_LT((r.translation - base.translation).norm(), 1e-6);
  EXPECT_LT(std::abs(r.scale - base.scale) / base.scale, 1e-6);
}

TEST(Calibrate, ConvergedFlagFollowsThresholds) {
  auto p = make_problem(18);
  std::mt19937_64 rng(18);
  for (auto& e : p.ee) e = Pose(e.rotation(), e.translation() + jcr::test::random_vector(rng, 0.05));
  CalibrationConfig strict;
  strict.tau_t = 1e-6;
  const CalibrationResult r = calibrate(p.ee, p.camera, strict);
  EXPECT_FALSE(r.converged);
  CalibrationConfig loose;
  loose.tau_t = 10;
  loose.tau_r = 10;
  EXPECT_TRUE(calibrate(p.ee, p.camera, loose).converged);
}
