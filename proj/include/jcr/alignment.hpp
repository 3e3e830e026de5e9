#pragma once

// Global alignment of pairwise pointmaps into one model frame.
//
// Unknowns are a camera-to-world rigid transform G_n per view, a positive
// scale per edge (or per source view), and a free world point per pixel of
// every view. The objective is
//
//   sum_e sum_{i in e} sum_px  C^{e,i}_px * || Xhat_i(px) - G_n(sigma_e * X^{e,i}_px) ||_2
//
// minimised by first-order descent. Gauge: G_0 = identity, sigma of the first
// edge = 1.

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <utility>
#include <vector>

#include "jcr/errors.hpp"
#include "jcr/geometry.hpp"

namespace jcr {

/// One foundation-model prediction for the ordered image pair (n, m). Both
/// pointmaps are expressed in the camera frame of image n. Pixel (w, h) lives
/// at index h * width + w.
struct PairwisePrediction {
  int n = 0;
  int m = 0;
  int width = 0;
  int height = 0;
  std::vector<Vec3> pointmap_self;   // pixels of image n
  std::vector<Vec3> pointmap_other;  // pixels of image m
  std::vector<double> confidence_self;
  std::vector<double> confidence_other;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  void validate() const {
    if (width <= 0 || height <= 0) throw Error(ErrorKind::DimensionMismatch, "pair has empty image size");
    const std::size_t count = pixel_count();
    if (pointmap_self.size() != count || pointmap_other.size() != count || confidence_self.size() != count ||
        confidence_other.size() != count) {
      throw Error(ErrorKind::DimensionMismatch,
                  "pair (" + std::to_string(n) + "," + std::to_string(m) + ") arrays do not share W x H");
    }
    auto negative = [](double c) { return !(c >= 0.0); };
    if (std::any_of(confidence_self.begin(), confidence_self.end(), negative) ||
        std::any_of(confidence_other.begin(), confidence_other.end(), negative)) {
      throw Error(ErrorKind::InvalidInput, "confidences must be non-negative");
    }
  }
};

struct PairGraph {
  int num_views = 0;
  std::vector<std::pair<int, int>> edges;

  static PairGraph complete(int num_views) {
    PairGraph g{num_views, {}};
    for (int n = 0; n < num_views; ++n)
      for (int m = 0; m < num_views; ++m)
        if (n != m) g.edges.emplace_back(n, m);
    return g;
  }

  /// Both directions of every pair inside a window of `window` consecutive views.
  static PairGraph sliding_window(int num_views, int window = 5) {
    PairGraph g{num_views, {}};
    for (int n = 0; n < num_views; ++n)
      for (int m = 0; m < num_views; ++m)
        if (n != m && std::abs(n - m) < window) g.edges.emplace_back(n, m);
    return g;
  }

  static PairGraph default_for(int num_views) {
    return num_views <= 12 ? complete(num_views) : sliding_window(num_views, 5);
  }

  bool connected() const {
    if (num_views <= 0) return false;
    std::vector<std::vector<int>> adj(num_views);
    for (auto [n, m] : edges) {
      if (n < 0 || m < 0 || n >= num_views || m >= num_views) return false;
      adj[n].push_back(m);
      adj[m].push_back(n);
    }
    std::vector<bool> seen(num_views, false);
    std::queue<int> todo;
    todo.push(0);
    seen[0] = true;
    int count = 1;
    while (!todo.empty()) {
      const int v = todo.front();
      todo.pop();
      for (int w : adj[v]) {
        if (!seen[w]) {
          seen[w] = true;
          ++count;
          todo.push(w);
        }
      }
    }
    return count == num_views;
  }

  void validate() const {
    if (num_views < 2) throw Error(ErrorKind::InvalidInput, "alignment needs at least 2 views");
    for (auto [n, m] : edges) {
      if (n < 0 || m < 0 || n >= num_views || m >= num_views || n == m) {
        throw Error(ErrorKind::InvalidInput, "edge (" + std::to_string(n) + "," + std::to_string(m) + ") is invalid");
      }
    }
    if (!connected()) throw Error(ErrorKind::DisconnectedGraph, "pair graph does not connect all views");
    std::vector<bool> is_source(num_views, false);
    for (auto [n, m] : edges) is_source[n] = true;
    for (int v = 0; v < num_views; ++v) {
      if (!is_source[v]) {
        throw Error(ErrorKind::DisconnectedGraph,
                    "view " + std::to_string(v) + " is never the reference image of a pair; its pose is unconstrained");
      }
    }
  }
};

enum class ScaleMode { per_edge, per_view };

struct AlignConfig {
  double step = 1e-2;
  int max_iters = 2000;
  double tol = 1e-6;
  ScaleMode scale_mode = ScaleMode::per_edge;
};

struct AlignmentResult {
  int num_views = 0;
  int width = 0;
  int height = 0;
  std::vector<Pose> poses;  // world -> camera, model units
  std::vector<std::pair<int, int>> edges;
  std::vector<double> scales;  // one per edge
  std::vector<std::vector<Vec3>> points;
  std::vector<std::vector<double>> confidence;
  double objective = 0.0;
  std::vector<double> objective_history;  // accepted iterates only
  std::size_t num_terms = 0;
  int iterations = 0;
  bool converged = false;
  std::string warning;
};

struct CloudPoint {
  Vec3 point = Vec3::Zero();
  int view = 0;
  int w = 0;
  int h = 0;
  std::optional<Vec3> color;
  double confidence = 0.0;
};

namespace detail {

struct AlignTerm {
  int edge;
  int view;  // image the pixel belongs to
  bool self;
};

struct AlignProblem {
  int num_views = 0;
  int width = 0;
  int height = 0;
  std::vector<const PairwisePrediction*> data;  // per edge
  std::vector<int> slot;                        // scale slot per edge
  int num_slots = 0;
  int fixed_slot = 0;

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
};

struct AlignState {
  std::vector<Mat3> rot;  // camera -> world
  std::vector<Vec3> trans;
  std::vector<double> log_scale;
  std::vector<std::vector<Vec3>> points;
};

template <typename Fn>
void for_each_term(const AlignProblem& p, Fn&& fn) {
  const std::size_t pixels = p.pixels();
  for (std::size_t e = 0; e < p.data.size(); ++e) {
    const PairwisePrediction& d = *p.data[e];
    for (int side = 0; side < 2; ++side) {
      const bool self = side == 0;
      const int view = self ? d.n : d.m;
      const auto& x = self ? d.pointmap_self : d.pointmap_other;
      const auto& c = self ? d.confidence_self : d.confidence_other;
      for (std::size_t q = 0; q < pixels; ++q) {
        if (c[q] > 0.0) fn(static_cast<int>(e), d.n, view, q, x[q], c[q]);
      }
    }
  }
}

inline double objective(const AlignProblem& p, const AlignState& s) {
  double total = 0.0;
  for_each_term(p, [&](int e, int n, int view, std::size_t q, const Vec3& x, double c) {
    const double sigma = std::exp(s.log_scale[p.slot[e]]);
    const Vec3 r = s.points[view][q] - (sigma * (s.rot[n] * x) + s.trans[n]);
    total += c * r.norm();
  });
  return total;
}

/// Descent direction, preconditioned per parameter block by the total
/// confidence weight of the terms that touch it.
inline AlignState gradient(const AlignProblem& p, const AlignState& s) {
  const int nv = p.num_views;
  AlignState g;
  g.rot.assign(nv, Mat3::Zero());  // column 0 holds the axis-angle gradient
  g.trans.assign(nv, Vec3::Zero());
  g.log_scale.assign(p.num_slots, 0.0);
  g.points.assign(nv, std::vector<Vec3>(p.pixels(), Vec3::Zero()));
  std::vector<double> w_pose(nv, 0.0), w_slot(p.num_slots, 0.0);
  std::vector<std::vector<double>> w_point(nv, std::vector<double>(p.pixels(), 0.0));

  for_each_term(p, [&](int e, int n, int view, std::size_t q, const Vec3& x, double c) {
    const int slot = p.slot[e];
    const double sigma = std::exp(s.log_scale[slot]);
    const Vec3 y = s.rot[n] * x;
    const Vec3 r = s.points[view][q] - (sigma * y + s.trans[n]);
    const double len = r.norm();
    w_pose[n] += c;
    w_slot[slot] += c;
    w_point[view][q] += c;
    if (len < 1e-300) return;
    const Vec3 u = (c / len) * r;
    g.points[view][q] += u;
    g.trans[n] -= u;
    g.log_scale[slot] -= sigma * u.dot(y);
    g.rot[n].col(0) -= sigma * y.cross(u);
  });

  for (int v = 0; v < nv; ++v) {
    if (w_pose[v] > 0.0) {
      g.rot[v] /= w_pose[v];
      g.trans[v] /= w_pose[v];
    }
    for (std::size_t q = 0; q < p.pixels(); ++q)
      if (w_point[v][q] > 0.0) g.points[v][q] /= w_point[v][q];
  }
  for (int k = 0; k < p.num_slots; ++k)
    if (w_slot[k] > 0.0) g.log_scale[k] /= w_slot[k];

  g.rot[0].setZero();
  g.trans[0].setZero();
  g.log_scale[p.fixed_slot] = 0.0;
  return g;
}

inline AlignState step_along(const AlignState& s, const AlignState& g, double step) {
  AlignState out = s;
  for (std::size_t v = 0; v < s.rot.size(); ++v) {
    out.rot[v] = exp_map(-step * Vec3(g.rot[v].col(0))).matrix() * s.rot[v];
    out.trans[v] -= step * g.trans[v];
    for (std::size_t q = 0; q < s.points[v].size(); ++q) out.points[v][q] -= step * g.points[v][q];
  }
  for (std::size_t k = 0; k < s.log_scale.size(); ++k) out.log_scale[k] -= step * g.log_scale[k];
  return out;
}

/// Least-squares scale with the pose held fixed: argmin_s sum c |X - t - s R x|^2.
inline std::optional<double> fit_scale(const std::vector<Vec3>& world, const std::vector<bool>& world_valid,
                                       const Mat3& rot, const Vec3& trans, const std::vector<Vec3>& x,
                                       const std::vector<double>& c) {
  double num = 0.0, den = 0.0;
  for (std::size_t q = 0; q < x.size(); ++q) {
    if (!(c[q] > 0.0) || !world_valid[q]) continue;
    num += c[q] * (world[q] - trans).dot(rot * x[q]);
    den += c[q] * x[q].squaredNorm();
  }
  if (!(den > 0.0) || !(num > 0.0)) return std::nullopt;
  return num / den;
}

struct Similarity {
  Mat3 rot;
  Vec3 trans;
  double scale;
};

/// dst ~ scale * rot * src + trans over pixels valid on both sides.
inline std::optional<Similarity> fit_similarity(const std::vector<Vec3>& src, const std::vector<double>& src_conf,
                                                const std::vector<Vec3>& dst, const std::vector<bool>& dst_valid) {
  std::vector<std::size_t> idx;
  for (std::size_t q = 0; q < src.size(); ++q)
    if (src_conf[q] > 0.0 && dst_valid[q]) idx.push_back(q);
  if (idx.size() < 3) return std::nullopt;
  Eigen::Matrix3Xd a(3, idx.size()), b(3, idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    a.col(k) = src[idx[k]];
    b.col(k) = dst[idx[k]];
  }
  const Eigen::Matrix4d t = Eigen::umeyama(a, b, true);
  const Mat3 sr = t.topLeftCorner<3, 3>();
  const double scale = std::cbrt(sr.determinant());
  if (!(scale > 0.0) || !std::isfinite(scale)) return std::nullopt;
  return Similarity{project_to_so3(sr / scale), t.topRightCorner<3, 1>(), scale};
}

}  // namespace detail

inline AlignmentResult align_global(const std::vector<PairwisePrediction>& pairs, const PairGraph& graph,
                                    const AlignConfig& config = {}) {
  using namespace detail;
  graph.validate();
  if (graph.edges.empty()) throw Error(ErrorKind::DisconnectedGraph, "pair graph has no edges");

  std::map<std::pair<int, int>, const PairwisePrediction*> lookup;
  for (const auto& p : pairs) {
    p.validate();
    lookup[{p.n, p.m}] = &p;
  }

  AlignProblem prob;
  prob.num_views = graph.num_views;
  for (auto edge : graph.edges) {
    auto it = lookup.find(edge);
    if (it == lookup.end()) {
      throw Error(ErrorKind::InvalidInput,
                  "no prediction for edge (" + std::to_string(edge.first) + "," + std::to_string(edge.second) + ")");
    }
    prob.data.push_back(it->second);
  }
  prob.width = prob.data.front()->width;
  prob.height = prob.data.front()->height;
  for (const auto* d : prob.data) {
    if (d->width != prob.width || d->height != prob.height)
      throw Error(ErrorKind::DimensionMismatch, "all pairs must share one image size");
  }
  const std::size_t pixels = prob.pixels();
  const std::size_t num_edges = prob.data.size();

  if (config.scale_mode == ScaleMode::per_edge) {
    prob.num_slots = static_cast<int>(num_edges);
    for (std::size_t e = 0; e < num_edges; ++e) prob.slot.push_back(static_cast<int>(e));
  } else {
    prob.num_slots = graph.num_views;
    for (const auto* d : prob.data) prob.slot.push_back(d->n);
  }
  prob.fixed_slot = prob.slot.front();

  // ---- initialisation: grow placed views over the graph with similarity fits
  const int nv = graph.num_views;
  AlignState state;
  state.rot.assign(nv, Mat3::Identity());
  state.trans.assign(nv, Vec3::Zero());
  state.log_scale.assign(prob.num_slots, 0.0);
  state.points.assign(nv, std::vector<Vec3>(pixels, Vec3::Zero()));
  std::vector<std::vector<bool>> valid(nv, std::vector<bool>(pixels, false));
  std::vector<bool> placed(nv, false);
  std::vector<double> edge_scale(num_edges, 1.0);

  auto usable = [](const std::vector<double>& c) {
    return std::count_if(c.begin(), c.end(), [](double v) { return v > 0.0; }) >= 3;
  };
  auto transform_into = [&](int view, const Mat3& rot, const Vec3& trans, double scale,
                            const std::vector<Vec3>& x, const std::vector<double>& c) {
    for (std::size_t q = 0; q < pixels; ++q) {
      valid[view][q] = c[q] > 0.0;
      state.points[view][q] = valid[view][q] ? Vec3(scale * (rot * x[q]) + trans) : Vec3::Zero();
    }
  };

  {
    bool seeded = false;
    for (std::size_t e = 0; e < num_edges && !seeded; ++e) {
      const auto& d = *prob.data[e];
      if (d.n == 0 && usable(d.confidence_self)) {
        transform_into(0, Mat3::Identity(), Vec3::Zero(), 1.0, d.pointmap_self, d.confidence_self);
        placed[0] = true;
        seeded = true;
      }
    }
    if (!seeded) throw Error(ErrorKind::DisconnectedGraph, "view 0 has no usable pair to anchor the gauge");
  }

  // Pose of a view whose world points are known, from any pair it references.
  auto locate_view = [&](int view) -> bool {
    for (std::size_t f = 0; f < num_edges; ++f) {
      const auto& d = *prob.data[f];
      if (d.n != view) continue;
      auto sim = fit_similarity(d.pointmap_self, d.confidence_self, state.points[view], valid[view]);
      if (!sim) continue;
      state.rot[view] = sim->rot;
      state.trans[view] = sim->trans;
      edge_scale[f] = sim->scale;
      return true;
    }
    return false;
  };

  int remaining = nv - 1;
  bool progress = true;
  while (remaining > 0 && progress) {
    progress = false;
    for (std::size_t e = 0; e < num_edges; ++e) {
      const auto& d = *prob.data[e];
      if (placed[d.n] && !placed[d.m]) {
        auto scale = fit_scale(state.points[d.n], valid[d.n], state.rot[d.n], state.trans[d.n], d.pointmap_self,
                               d.confidence_self);
        if (!scale || !usable(d.confidence_other)) continue;
        edge_scale[e] = *scale;
        transform_into(d.m, state.rot[d.n], state.trans[d.n], *scale, d.pointmap_other, d.confidence_other);
        if (!locate_view(d.m)) {
          std::fill(valid[d.m].begin(), valid[d.m].end(), false);
          continue;
        }
        placed[d.m] = true;
      } else if (placed[d.m] && !placed[d.n]) {
        auto sim = fit_similarity(d.pointmap_other, d.confidence_other, state.points[d.m], valid[d.m]);
        if (!sim || !usable(d.confidence_self)) continue;
        state.rot[d.n] = sim->rot;
        state.trans[d.n] = sim->trans;
        edge_scale[e] = sim->scale;
        transform_into(d.n, sim->rot, sim->trans, sim->scale, d.pointmap_self, d.confidence_self);
        placed[d.n] = true;
      } else {
        continue;
      }
      --remaining;
      progress = true;
    }
  }
  if (remaining > 0) {
    throw Error(ErrorKind::DisconnectedGraph, "pairs with usable confidence do not connect all views");
  }

  // Per-slot closed-form scales, then confidence-weighted world points.
  {
    std::vector<double> num(prob.num_slots, 0.0), den(prob.num_slots, 0.0);
    for_each_term(prob, [&](int e, int n, int view, std::size_t q, const Vec3& x, double c) {
      if (!valid[view][q]) return;
      num[prob.slot[e]] += c * (state.points[view][q] - state.trans[n]).dot(state.rot[n] * x);
      den[prob.slot[e]] += c * x.squaredNorm();
    });
    for (int k = 0; k < prob.num_slots; ++k) {
      state.log_scale[k] = (den[k] > 0.0 && num[k] > 0.0) ? std::log(num[k] / den[k]) : 0.0;
    }
    std::vector<std::vector<Vec3>> acc(nv, std::vector<Vec3>(pixels, Vec3::Zero()));
    std::vector<std::vector<double>> wsum(nv, std::vector<double>(pixels, 0.0));
    for_each_term(prob, [&](int e, int n, int view, std::size_t q, const Vec3& x, double c) {
      acc[view][q] += c * (std::exp(state.log_scale[prob.slot[e]]) * (state.rot[n] * x) + state.trans[n]);
      wsum[view][q] += c;
    });
    for (int v = 0; v < nv; ++v)
      for (std::size_t q = 0; q < pixels; ++q)
        if (wsum[v][q] > 0.0) state.points[v][q] = acc[v][q] / wsum[v][q];
  }

  // Gauge: sigma of the first edge's slot := 1 by rescaling the world.
  {
    const double c = std::exp(-state.log_scale[prob.fixed_slot]);
    for (int v = 0; v < nv; ++v) {
      state.trans[v] *= c;
      for (auto& x : state.points[v]) x *= c;
    }
    const double shift = state.log_scale[prob.fixed_slot];
    for (auto& ls : state.log_scale) ls -= shift;
    state.log_scale[prob.fixed_slot] = 0.0;
  }

  // ---- descent
  AlignmentResult out;
  double f = objective(prob, state);
  out.objective_history.push_back(f);
  double step = config.step;
  double last_rel = std::numeric_limits<double>::infinity();
  int it = 0;
  bool converged = !(f > 0.0);
  for (; it < config.max_iters && !converged; ++it) {
    const AlignState g = gradient(prob, state);
    bool accepted = false;
    AlignState cand;
    double fc = f;
    while (step >= 1e-14) {
      cand = step_along(state, g, step);
      fc = objective(prob, cand);
      if (fc <= f) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No decrease even at machine-precision step lengths.
      converged = true;
      break;
    }
    last_rel = (f - fc) / std::max(f, std::numeric_limits<double>::min());
    state = std::move(cand);
    f = fc;
    out.objective_history.push_back(f);
    if (last_rel < config.tol || !(f > 0.0)) converged = true;
  }
  if (!converged && last_rel <= 100.0 * config.tol) converged = true;

  out.num_views = nv;
  out.width = prob.width;
  out.height = prob.height;
  out.edges = graph.edges;
  out.iterations = it;
  out.converged = converged;
  out.objective = f;
  if (!converged) {
    out.warning = "NonConvergence: max_iters reached with relative change " + std::to_string(last_rel);
  }
  for (int v = 0; v < nv; ++v) {
    out.poses.push_back(Pose(Rotation(state.rot[v]), state.trans[v], Frame::camera_model).inverse());
  }
  for (std::size_t e = 0; e < num_edges; ++e) out.scales.push_back(std::exp(state.log_scale[prob.slot[e]]));
  out.points = state.points;
  out.confidence.assign(nv, std::vector<double>(pixels, 0.0));
  for_each_term(prob, [&](int, int, int view, std::size_t q, const Vec3&, double c) {
    out.confidence[view][q] = std::max(out.confidence[view][q], c);
    ++out.num_terms;
  });
  return out;
}

/// Points whose per-view confidence is strictly above `threshold`, with pixel provenance.
inline std::vector<CloudPoint> extract_point_cloud(const AlignmentResult& result, double threshold) {
  if (!(threshold >= 0.0)) throw Error(ErrorKind::InvalidInput, "confidence threshold must be >= 0");
  std::vector<CloudPoint> cloud;
  for (int v = 0; v < result.num_views; ++v) {
    for (int h = 0; h < result.height; ++h) {
      for (int w = 0; w < result.width; ++w) {
        const std::size_t q = static_cast<std::size_t>(h) * result.width + w;
        const double c = result.confidence[v][q];
        if (c > threshold) cloud.push_back(CloudPoint{result.points[v][q], v, w, h, std::nullopt, c});
      }
    }
  }
  if (cloud.empty()) {
    throw Error(ErrorKind::EmptyCloud, "no point has confidence above " + std::to_string(threshold));
  }
  return cloud;
}

}  // namespace jcr
