#pragma once

// Marker-free hand-eye calibration with unknown camera scale.
//
// Given end-effector poses E_i (base -> end effector, metres) and camera poses
// P_i (world -> camera, unscaled model units), find X = T_c^e and lambda with
//
//   T_E X = X T_P(lambda),  T_E = E_{i+1} E_i^-1,  T_P = P_{i+1} P_i^-1,
//
// where T_P(lambda) has its translation multiplied by lambda.

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "jcr/errors.hpp"
#include "jcr/geometry.hpp"

namespace jcr {

struct MotionPair {
  Pose end_effector;  // relative end-effector motion, metres
  Pose camera;        // relative camera motion, model units
};

enum class PairingMode { consecutive, all_pairs };

struct ScaleSearchConfig {
  double lower = 1e-3;
  double upper = 1e3;
  int probes = 20;           // log-spaced bracketing pre-scan
  double rel_tol = 1e-8;     // golden-section stopping width, relative
  double bound_margin = 0.01;
  double rank_tol = 1e-9;    // on the column-normalised [C | R t_P] design
};

struct CalibrationConfig {
  PairingMode pairing = PairingMode::consecutive;
  ScaleSearchConfig scale;
  double rotation_rank_tol = 1e-6;  // smallest / largest singular value of M
  double tau_t = 0.1;
  double tau_r = 0.15;
};

struct PairResidual {
  double translation = 0.0;  // L2 norm of the translation block of dT, metres
  double rotation = 0.0;     // Frobenius norm of the rotation block of dT
};

struct TranslationScale {
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
  double residual = 0.0;  // sum of squared SRP residuals at the optimum
};

struct CalibrationResult {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;  // metres per model unit
  std::vector<PairResidual> residuals;
  bool converged = false;
  int num_pairs = 0;

  /// Camera -> end-effector transform.
  Pose transform() const { return Pose(rotation, translation, Frame::end_effector); }

  double mean_translation_residual() const {
    if (residuals.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : residuals) s += r.translation;
    return s / static_cast<double>(residuals.size());
  }
  double mean_rotation_residual() const {
    if (residuals.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : residuals) s += r.rotation;
    return s / static_cast<double>(residuals.size());
  }
  double max_translation_residual() const {
    double s = 0.0;
    for (const auto& r : residuals) s = std::max(s, r.translation);
    return s;
  }
  double max_rotation_residual() const {
    double s = 0.0;
    for (const auto& r : residuals) s = std::max(s, r.rotation);
    return s;
  }
};

inline std::vector<MotionPair> motion_pairs(std::span<const Pose> end_effector, std::span<const Pose> camera,
                                            PairingMode mode = PairingMode::consecutive) {
  if (end_effector.size() != camera.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(end_effector.size()) + " end-effector poses vs " +
                                               std::to_string(camera.size()) + " camera poses");
  }
  if (end_effector.size() < 3) {
    throw Error(ErrorKind::TooFewPoses, "need at least 3 poses, got " + std::to_string(end_effector.size()));
  }
  std::vector<MotionPair> pairs;
  const std::size_t n = end_effector.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::size_t last = mode == PairingMode::consecutive ? i + 1 : n - 1;
    for (std::size_t j = i + 1; j <= last; ++j) {
      pairs.push_back(MotionPair{relative_transform(end_effector[i], end_effector[j]),
                                 relative_transform(camera[i], camera[j])});
    }
  }
  return pairs;
}

/// Rotation-correlation matrix sum_i log(R_P,i) log(R_E,i)^T.
inline Mat3 rotation_correlation(std::span<const MotionPair> pairs) {
  Mat3 m = Mat3::Zero();
  for (const auto& p : pairs) {
    m += log_map(p.camera.rotation()) * log_map(p.end_effector.rotation()).transpose();
  }
  return m;
}

/// Best-fit rotation (M^T M)^(-1/2) M^T.
inline Rotation solve_rotation(std::span<const MotionPair> pairs, double rank_tol = 1e-6) {
  if (pairs.size() < 2) throw Error(ErrorKind::DegenerateMotion, "need at least 2 motion pairs");
  const Mat3 m = rotation_correlation(pairs);
  const Vec3 sv = Eigen::JacobiSVD<Mat3>(m).singularValues();
  if (!(sv(0) > 0.0) || !(sv(2) > rank_tol * sv(0))) {
    throw Error(ErrorKind::DegenerateMotion,
                "rotation axes do not span 3D (singular values " + std::to_string(sv(0)) + ", " +
                    std::to_string(sv(1)) + ", " + std::to_string(sv(2)) + ")");
  }
  Mat3 r;
  try {
    r = inv_sqrt_psd(m.transpose() * m) * m.transpose();
  } catch (const Error& e) {
    throw Error(ErrorKind::DegenerateMotion, e.what());
  }
  if (r.determinant() < 0.0) r = project_to_so3(m.transpose());
  return Rotation::nearest(r);
}

namespace detail {

/// Precomputed pieces of the Scale Recovery Problem for a fixed rotation:
/// residual(t, lambda) = C t - (t_E - lambda R t_P), stacked over pairs.
struct ScaleRecovery {
  Eigen::MatrixXd c;        // 3n x 3, rows I - R_E
  Eigen::VectorXd t_e;      // 3n
  Eigen::VectorXd rot_t_p;  // 3n, R t_P
  Eigen::Matrix3d normal_inv;

  ScaleRecovery(std::span<const MotionPair> pairs, const Rotation& rot, double rank_tol) {
    const auto n = static_cast<Eigen::Index>(pairs.size());
    c.resize(3 * n, 3);
    t_e.resize(3 * n);
    rot_t_p.resize(3 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& p = pairs[static_cast<std::size_t>(i)];
      c.block<3, 3>(3 * i, 0) = Mat3::Identity() - p.end_effector.rotation().matrix();
      t_e.segment<3>(3 * i) = p.end_effector.translation();
      rot_t_p.segment<3>(3 * i) = rot * p.camera.translation();
    }
    // Joint identifiability of (t, lambda): [C | R t_P] must have rank 4.
    Eigen::MatrixXd design(3 * n, 4);
    design << c, rot_t_p;
    Eigen::Vector4d norms = design.colwise().norm().transpose();
    if (!(norms.minCoeff() > rank_tol * std::max(norms.maxCoeff(), 1e-300))) {
      throw Error(ErrorKind::RankDeficientC,
                  norms.head<3>().minCoeff() <= rank_tol * norms.maxCoeff()
                      ? "end-effector rotations leave a translation direction unobservable"
                      : "camera translations vanish; scale is unobservable");
    }
    const Eigen::MatrixXd scaled = design * norms.cwiseInverse().asDiagonal();
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(scaled).singularValues();
    if (!(sv(sv.size() - 1) > rank_tol * sv(0))) {
      throw Error(ErrorKind::RankDeficientC, "stacked [C | R t_P] is rank deficient (singular value ratio " +
                                                 std::to_string(sv(sv.size() - 1) / sv(0)) + ")");
    }
    normal_inv = (c.transpose() * c).inverse();
  }

  Eigen::VectorXd d(double lambda) const { return t_e - lambda * rot_t_p; }

  Vec3 translation(double lambda) const { return normal_inv * (c.transpose() * d(lambda)); }

  double residual(const Vec3& t, double lambda) const { return (c * t - d(lambda)).squaredNorm(); }

  double residual(double lambda) const { return residual(translation(lambda), lambda); }
};

}  // namespace detail

/// Closed-form t*(lambda) = (C^T C)^-1 C^T d(lambda).
inline Vec3 closed_form_translation(std::span<const MotionPair> pairs, const Rotation& rot, double lambda) {
  return detail::ScaleRecovery(pairs, rot, 0.0).translation(lambda);
}

/// Sum of squared SRP residuals at (t, lambda).
inline double srp_residual(std::span<const MotionPair> pairs, const Rotation& rot, const Vec3& t, double lambda) {
  double total = 0.0;
  for (const auto& p : pairs) {
    const Vec3 r = (Mat3::Identity() - p.end_effector.rotation().matrix()) * t -
                   (p.end_effector.translation() - lambda * (rot * p.camera.translation()));
    total += r.squaredNorm();
  }
  return total;
}

/// Golden-section minimisation of a unimodal function on [a, b].
template <typename Fn>
double golden_section_minimize(Fn&& f, double a, double b, double rel_tol, int max_iters = 500) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int i = 0; i < max_iters; ++i) {
    if (b - a <= rel_tol * 0.5 * (std::abs(a) + std::abs(b))) break;
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// Scale Recovery Problem: closed-form translation for each lambda, golden-section
/// search over lambda after a log-spaced bracketing scan.
inline TranslationScale solve_translation_scale(std::span<const MotionPair> pairs, const Rotation& rot,
                                                const ScaleSearchConfig& cfg = {}) {
  if (!(cfg.lower > 0.0) || !(cfg.upper > cfg.lower) || cfg.probes < 3) {
    throw Error(ErrorKind::InvalidInput, "invalid scale search bounds");
  }
  const detail::ScaleRecovery srp(pairs, rot, cfg.rank_tol);
  auto cost = [&](double lambda) { return srp.residual(lambda); };

  std::vector<double> grid(static_cast<std::size_t>(cfg.probes));
  const double log_lo = std::log(cfg.lower), log_hi = std::log(cfg.upper);
  for (int k = 0; k < cfg.probes; ++k) {
    grid[static_cast<std::size_t>(k)] = std::exp(log_lo + (log_hi - log_lo) * k / (cfg.probes - 1));
  }
  std::size_t best = 0;
  double best_cost = cost(grid[0]);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double v = cost(grid[k]);
    if (v < best_cost) {
      best_cost = v;
      best = k;
    }
  }
  const double a = grid[best == 0 ? 0 : best - 1];
  const double b = grid[std::min(best + 1, grid.size() - 1)];
  const double lambda = golden_section_minimize(cost, a, b, cfg.rel_tol);

  if (lambda <= cfg.lower * (1.0 + cfg.bound_margin) || lambda >= cfg.upper * (1.0 - cfg.bound_margin)) {
    throw Error(ErrorKind::ScaleAtBound, "scale " + std::to_string(lambda) + " is within " +
                                             std::to_string(100.0 * cfg.bound_margin) + "% of a search bound");
  }
  const Vec3 t = srp.translation(lambda);
  return TranslationScale{t, lambda, srp.residual(t, lambda)};
}

/// dT = T_E X - X T_P(lambda) per pair.
inline std::vector<PairResidual> residuals(std::span<const MotionPair> pairs, const Rotation& rot, const Vec3& t,
                                           double lambda) {
  const Mat4 x = Pose(rot, t).matrix();
  std::vector<PairResidual> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const Pose scaled_camera = p.camera.with_translation(lambda * p.camera.translation());
    const Mat4 delta = p.end_effector.matrix() * x - x * scaled_camera.matrix();
    out.push_back(PairResidual{delta.topRightCorner<3, 1>().norm(), delta.topLeftCorner<3, 3>().norm()});
  }
  return out;
}

inline CalibrationResult calibrate(std::span<const Pose> end_effector, std::span<const Pose> camera,
                                   const CalibrationConfig& config = {}) {
  const auto pairs = motion_pairs(end_effector, camera, config.pairing);
  CalibrationResult result;
  result.rotation = solve_rotation(pairs, config.rotation_rank_tol);
  const TranslationScale ts = solve_translation_scale(pairs, result.rotation, config.scale);
  result.translation = ts.translation;
  result.scale = ts.scale;
  result.residuals = residuals(pairs, result.rotation, result.translation, result.scale);
  result.num_pairs = static_cast<int>(pairs.size());
  result.converged =
      result.mean_translation_residual() < config.tau_t && result.mean_rotation_residual() < config.tau_r;
  return result;
}

}  // namespace jcr
