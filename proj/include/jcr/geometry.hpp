#pragma once

// SO(3) / SE(3) value types and the Lie-group maps used by calibration.

#include <Eigen/Core>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "jcr/errors.hpp"

namespace jcr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Rotation axis scaled by angle, radians.
using AxisAngle = Eigen::Vector3d;

enum class Frame { robot_base, end_effector, camera_model, camera_metric };

inline std::string_view to_string(Frame frame) {
  switch (frame) {
    case Frame::robot_base: return "robot_base";
    case Frame::end_effector: return "end_effector";
    case Frame::camera_model: return "camera_model";
    case Frame::camera_metric: return "camera_metric";
  }
  return "robot_base";
}

inline Frame frame_from_string(std::string_view name) {
  if (name == "robot_base") return Frame::robot_base;
  if (name == "end_effector") return Frame::end_effector;
  if (name == "camera_model") return Frame::camera_model;
  if (name == "camera_metric") return Frame::camera_metric;
  throw Error(ErrorKind::ParseError, "unknown frame tag '" + std::string(name) + "'");
}

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<  0.0,   -v.z(),  v.y(),
        v.z(),  0.0,   -v.x(),
       -v.y(),  v.x(),  0.0;
  // clang-format on
  return s;
}

/// Nearest rotation in the Frobenius sense (polar factor with det fixed to +1).
inline Mat3 project_to_so3(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

inline double orthonormality_error(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity()).norm();
}

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Accepts matrices within 1e-6 of SO(3) and snaps them onto it.
  explicit Rotation(const Mat3& m) : m_(m) {
    const double err = orthonormality_error(m);
    if (!(err < 1e-6) || m.determinant() < 0.0) {
      throw Error(ErrorKind::InvalidRotation,
                  "matrix is not a proper rotation (orthonormality error " + std::to_string(err) + ")");
    }
    if (err > 1e-12) m_ = project_to_so3(m);
  }

  /// Projects any 3x3 matrix (e.g. one read back from a file) onto SO(3).
  static Rotation nearest(const Mat3& m) { return Rotation(project_to_so3(m)); }

  static Rotation identity() { return Rotation(); }

  const Mat3& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  Rotation inverse() const {
    Rotation out;
    out.m_ = m_.transpose();
    return out;
  }

  Rotation operator*(const Rotation& other) const {
    Rotation out;
    out.m_ = m_ * other.m_;
    return out;
  }

  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Angle of the rotation in [0, pi].
  double angle() const;

 private:
  Mat3 m_;
};

/// Rodrigues' formula.
inline Rotation exp_map(const AxisAngle& v) {
  const double theta = v.norm();
  const Mat3 k = skew(v);
  Mat3 r;
  if (theta < 1e-8) {
    r = Mat3::Identity() + k + 0.5 * k * k;
  } else {
    const double half = 0.5 * theta;
    const double s = std::sin(half) / half;
    const double a = std::sin(theta) / theta;
    const double b = 0.5 * s * s;  // (1 - cos theta) / theta^2
    r = Mat3::Identity() + a * k + b * k * k;
  }
  return Rotation(r);
}

/// Logarithm of SO(3): omega / (2 sin omega) * vee(R - R^T), with explicit
/// branches near omega = 0 and omega = pi where the ratio is ill-conditioned.
inline AxisAngle log_map(const Rotation& rotation) {
  const Mat3& r = rotation.matrix();
  const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double cos_w = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  // atan2 form of arccos((tr R - 1) / 2); same angle, better conditioned.
  const double omega = std::atan2(0.5 * v.norm(), cos_w);

  if (omega < 1e-8) return 0.5 * v;

  if (std::numbers::pi - omega < 1e-6) {
    // Symmetric part is cos(w) I + (1 - cos(w)) a a^T; read the axis off its
    // dominant column and take the sign from the (tiny) antisymmetric part.
    const Mat3 outer = (0.5 * (r + r.transpose()) - cos_w * Mat3::Identity()) / (1.0 - cos_w);
    int k = 0;
    outer.diagonal().maxCoeff(&k);
    Vec3 axis = outer.col(k) / std::sqrt(std::max(outer(k, k), 1e-300));
    axis.normalize();
    if (axis.dot(v) < 0.0) axis = -axis;
    return omega * axis;
  }

  return (omega / (2.0 * std::sin(omega))) * v;
}

inline double Rotation::angle() const { return log_map(*this).norm(); }

/// Geodesic distance between two rotations, radians.
inline double rotation_distance(const Rotation& a, const Rotation& b) {
  return (a.inverse() * b).angle();
}

/// A^(-1/2) for symmetric positive-definite A via symmetric eigendecomposition.
inline Mat3 inv_sqrt_psd(const Mat3& a, double min_eigenvalue = 1e-12) {
  const Mat3 sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw Error(ErrorKind::DegenerateMatrix, "eigendecomposition failed");
  }
  const Vec3 values = eig.eigenvalues();
  if (!(values.minCoeff() > min_eigenvalue)) {
    throw Error(ErrorKind::DegenerateMatrix,
                "smallest eigenvalue " + std::to_string(values.minCoeff()) + " is not above " +
                    std::to_string(min_eigenvalue));
  }
  const Mat3& vecs = eig.eigenvectors();
  return vecs * values.cwiseSqrt().cwiseInverse().asDiagonal() * vecs.transpose();
}

/// Rigid transform x -> R x + t. The frame tag records what kind of pose this
/// is (it is carried through composition from the left operand).
class Pose {
 public:
  Pose() = default;
  Pose(Rotation rotation, Vec3 translation, Frame frame = Frame::robot_base)
      : rotation_(std::move(rotation)), translation_(std::move(translation)), frame_(frame) {}

  static Pose identity(Frame frame = Frame::robot_base) { return Pose(Rotation(), Vec3::Zero(), frame); }

  /// Homogeneous 4x4 ingestion; the rotation block is projected onto SO(3).
  static Pose from_matrix(const Mat4& m, Frame frame = Frame::robot_base) {
    return Pose(Rotation::nearest(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>(), frame);
  }

  const Rotation& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Frame frame() const { return frame_; }

  Pose with_frame(Frame frame) const { return Pose(rotation_, translation_, frame); }
  Pose with_translation(const Vec3& t) const { return Pose(rotation_, t, frame_); }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_.matrix();
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  Pose inverse() const {
    const Rotation rt = rotation_.inverse();
    return Pose(rt, -(rt * translation_), frame_);
  }

  Pose operator*(const Pose& other) const {
    return Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_, frame_);
  }

  Vec3 operator*(const Vec3& point) const { return rotation_ * point + translation_; }

 private:
  Rotation rotation_;
  Vec3 translation_ = Vec3::Zero();
  Frame frame_ = Frame::robot_base;
};

/// T with b = T * a, i.e. T = b * a^-1.
inline Pose relative_transform(const Pose& a, const Pose& b) { return b * a.inverse(); }

}  // namespace jcr
