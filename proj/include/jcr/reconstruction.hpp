#pragma once

// Confidence-filtered model-frame points -> metric robot base frame, with
// per-pixel labels joined through each point's source (view, w, h).

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "jcr/alignment.hpp"
#include "jcr/calibration.hpp"
#include "jcr/errors.hpp"
#include "jcr/geometry.hpp"

namespace jcr {

struct PixelRef {
  int view = 0;
  int w = 0;
  int h = 0;
};

struct LabeledPointCloud {
  Frame frame = Frame::robot_base;  // camera_model clouds are in model units
  int source_width = 0;
  int source_height = 0;
  std::vector<Vec3> points;
  std::vector<PixelRef> sources;
  std::optional<std::vector<Vec3>> colors;      // [0,1]^3
  std::optional<std::vector<int>> segmentation;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  void validate() const {
    if (sources.size() != points.size() || (colors && colors->size() != points.size()) ||
        (segmentation && segmentation->size() != points.size())) {
      throw Error(ErrorKind::DimensionMismatch, "label arrays must match the point count");
    }
  }

  /// Concatenates another cloud; model-unit and metric clouds never mix.
  void append(const LabeledPointCloud& other) {
    if (other.frame != frame) {
      throw Error(ErrorKind::InvalidInput, "cannot mix a " + std::string(to_string(other.frame)) + " cloud into a " +
                                               std::string(to_string(frame)) + " cloud");
    }
    if ((colors.has_value() != other.colors.has_value() && !empty()) ||
        (segmentation.has_value() != other.segmentation.has_value() && !empty())) {
      throw Error(ErrorKind::InvalidInput, "clouds carry different label sets");
    }
    if (empty()) {
      source_width = other.source_width;
      source_height = other.source_height;
      if (other.colors) colors.emplace();
      if (other.segmentation) segmentation.emplace();
    }
    points.insert(points.end(), other.points.begin(), other.points.end());
    sources.insert(sources.end(), other.sources.begin(), other.sources.end());
    if (colors) colors->insert(colors->end(), other.colors->begin(), other.colors->end());
    if (segmentation) segmentation->insert(segmentation->end(), other.segmentation->begin(), other.segmentation->end());
  }
};

struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<Vec3> pixels;  // row-major, [0,1]
};

struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<int> labels;  // row-major
};

/// q-th percentile (0..100) of the strictly positive per-view confidences.
inline double confidence_percentile(const AlignmentResult& result, double q = 65.0) {
  std::vector<double> all;
  for (const auto& view : result.confidence)
    for (double c : view)
      if (c > 0.0) all.push_back(c);
  if (all.empty()) throw Error(ErrorKind::EmptyCloud, "no positive confidence in alignment result");
  q = std::clamp(q, 0.0, 100.0);
  const auto k = static_cast<std::size_t>(std::floor(q / 100.0 * static_cast<double>(all.size() - 1)));
  std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  return all[k];
}

/// Model-frame cloud (as produced by alignment) wrapped as a tagged cloud.
inline LabeledPointCloud model_cloud(std::span<const CloudPoint> points, int width, int height) {
  LabeledPointCloud cloud;
  cloud.frame = Frame::camera_model;
  cloud.source_width = width;
  cloud.source_height = height;
  bool has_color = !points.empty() && points.front().color.has_value();
  if (has_color) cloud.colors.emplace();
  for (const auto& p : points) {
    cloud.points.push_back(p.point);
    cloud.sources.push_back(PixelRef{p.view, p.w, p.h});
    if (has_color) {
      if (!p.color) throw Error(ErrorKind::InvalidInput, "colour present on some points only");
      cloud.colors->push_back(*p.color);
    }
  }
  return cloud;
}

/// x_bar = E_v^-1 T_c^e (lambda * P_v x) for a point x in the alignment world frame
/// seen from view v.
inline Vec3 to_base_frame(const Vec3& world_point, const Pose& camera, const Pose& end_effector,
                          const CalibrationResult& calib) {
  const Vec3 in_camera = camera * world_point;
  return end_effector.inverse() * (calib.transform() * (calib.scale * in_camera));
}

inline LabeledPointCloud transform_to_base(const LabeledPointCloud& cloud, std::span<const Pose> cameras,
                                           std::span<const Pose> end_effectors, const CalibrationResult& calib,
                                           bool force = false) {
  cloud.validate();
  if (cloud.frame != Frame::camera_model) {
    throw Error(ErrorKind::InvalidInput, "transform_to_base expects a model-frame cloud");
  }
  if (!calib.converged && !force) {
    throw Error(ErrorKind::UncalibratedInput, "calibration did not converge (pass force to override)");
  }
  if (!(calib.scale > 0.0)) throw Error(ErrorKind::InvalidInput, "calibration scale must be positive");
  LabeledPointCloud out = cloud;
  out.frame = Frame::robot_base;
  const std::size_t views = std::min(cameras.size(), end_effectors.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto v = static_cast<std::size_t>(cloud.sources[i].view);
    if (cloud.sources[i].view < 0 || v >= views) {
      throw Error(ErrorKind::MissingView, "no camera/end-effector pose for view " + std::to_string(v));
    }
    out.points[i] = to_base_frame(cloud.points[i], cameras[v], end_effectors[v], calib);
  }
  return out;
}

namespace detail {

template <typename Image, typename Fn>
void join_labels(const LabeledPointCloud& cloud, std::span<const Image> images, Fn&& assign) {
  cloud.validate();
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const PixelRef& s = cloud.sources[i];
    if (s.view < 0 || static_cast<std::size_t>(s.view) >= images.size()) {
      throw Error(ErrorKind::MissingView, "no label image for view " + std::to_string(s.view));
    }
    const Image& img = images[static_cast<std::size_t>(s.view)];
    if (img.width != cloud.source_width || img.height != cloud.source_height) {
      throw Error(ErrorKind::DimensionMismatch, "label image for view " + std::to_string(s.view) + " is " +
                                                    std::to_string(img.width) + "x" + std::to_string(img.height) +
                                                    ", pointmaps are " + std::to_string(cloud.source_width) + "x" +
                                                    std::to_string(cloud.source_height));
    }
    assign(i, img, static_cast<std::size_t>(s.h) * img.width + s.w);
  }
}

}  // namespace detail

inline LabeledPointCloud join_pixel_labels(const LabeledPointCloud& cloud, std::span<const ColorImage> images) {
  LabeledPointCloud out = cloud;
  out.colors.emplace(cloud.size());
  detail::join_labels(cloud, images, [&](std::size_t i, const ColorImage& img, std::size_t q) {
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
      throw Error(ErrorKind::DimensionMismatch, "colour image buffer size");
    (*out.colors)[i] = img.pixels[q];
  });
  return out;
}

inline LabeledPointCloud join_pixel_labels(const LabeledPointCloud& cloud, std::span<const LabelImage> images) {
  LabeledPointCloud out = cloud;
  out.segmentation.emplace(cloud.size());
  detail::join_labels(cloud, images, [&](std::size_t i, const LabelImage& img, std::size_t q) {
    if (img.labels.size() != static_cast<std::size_t>(img.width) * img.height)
      throw Error(ErrorKind::DimensionMismatch, "label image buffer size");
    (*out.segmentation)[i] = img.labels[q];
  });
  return out;
}

}  // namespace jcr
