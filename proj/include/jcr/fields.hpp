#pragma once

// Implicit scene fields: sinusoidal positional encoding followed by a
// one-hidden-layer ReLU network with an occupancy (sigmoid), segmentation
// (softmax) or colour (linear) head. Backpropagation is written by hand.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jcr/errors.hpp"
#include "jcr/geometry.hpp"
#include "jcr/reconstruction.hpp"

namespace jcr {

struct PositionalEncoding {
  int num_frequencies = 6;
  bool include_raw = true;

  int output_dim() const { return (include_raw ? 3 : 0) + 6 * num_frequencies; }

  /// [x; sin(2^k pi x); cos(2^k pi x)] for k = 0..L-1, three axes per block.
  template <typename Scalar>
  void encode_into(const Vec3& x, Scalar* out) const {
    int j = 0;
    if (include_raw)
      for (int a = 0; a < 3; ++a) out[j++] = static_cast<Scalar>(x(a));
    double freq = std::numbers::pi;
    for (int k = 0; k < num_frequencies; ++k, freq *= 2.0) {
      for (int a = 0; a < 3; ++a) out[j++] = static_cast<Scalar>(std::sin(freq * x(a)));
      for (int a = 0; a < 3; ++a) out[j++] = static_cast<Scalar>(std::cos(freq * x(a)));
    }
  }

  Eigen::VectorXd encode(const Vec3& x) const {
    Eigen::VectorXd out(output_dim());
    encode_into(x, out.data());
    return out;
  }
};

/// Axis-aligned box mapped affinely onto [-1, 1]^3 before encoding.
struct NormalizationBox {
  Vec3 lower = -Vec3::Ones();
  Vec3 upper = Vec3::Ones();

  Vec3 extent() const { return upper - lower; }
  bool degenerate() const { return !((upper - lower).minCoeff() > 0.0); }
  bool contains(const Vec3& p) const {
    return (p.array() >= lower.array()).all() && (p.array() <= upper.array()).all();
  }
  Vec3 normalize(const Vec3& p) const {
    return (2.0 * (p - lower).array() / (upper - lower).array() - 1.0).matrix();
  }
};

enum class HeadKind { occupancy, segmentation, color };

inline std::string_view to_string(HeadKind head) {
  switch (head) {
    case HeadKind::occupancy: return "occupancy";
    case HeadKind::segmentation: return "segmentation";
    case HeadKind::color: return "color";
  }
  return "occupancy";
}

inline HeadKind head_from_string(std::string_view s) {
  if (s == "occupancy") return HeadKind::occupancy;
  if (s == "segmentation") return HeadKind::segmentation;
  if (s == "color") return HeadKind::color;
  throw Error(ErrorKind::ParseError, "unknown head '" + std::string(s) + "'");
}

template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Cache {
    Matrix hidden;  // post-ReLU activations
  };

  struct Gradients {
    Matrix w1, w2;
    Vector b1, b2;
  };

  Mlp() = default;

  /// He-uniform first layer, Glorot-uniform head, zero biases.
  Mlp(int input, int hidden, int output, std::mt19937_64& rng)
      : w1(hidden, input), w2(output, hidden), b1(Vector::Zero(hidden)), b2(Vector::Zero(output)) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double a1 = std::sqrt(6.0 / input);
    const double a2 = std::sqrt(6.0 / (hidden + output));
    for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = static_cast<Scalar>(a1 * u(rng));
    for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = static_cast<Scalar>(a2 * u(rng));
  }

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  int output_dim() const { return static_cast<int>(w2.rows()); }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
  }

  /// Logits for a batch stored column-wise (input_dim x B).
  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    Matrix h = ((w1 * x).colwise() + b1).cwiseMax(Scalar(0));
    Matrix out = (w2 * h).colwise() + b2;
    if (cache) cache->hidden = std::move(h);
    return out;
  }

  Gradients backward(const Matrix& x, const Cache& cache, const Matrix& d_logits) const {
    Gradients g;
    g.w2 = d_logits * cache.hidden.transpose();
    g.b2 = d_logits.rowwise().sum();
    Matrix dh = (w2.transpose() * d_logits).cwiseProduct(
        (cache.hidden.array() > Scalar(0)).template cast<Scalar>().matrix());
    g.w1 = dh * x.transpose();
    g.b1 = dh.rowwise().sum();
    return g;
  }

  /// Flat parameter view in the order w1, b1, w2, b2 (column-major blocks).
  std::vector<Scalar*> parameter_blocks() { return {w1.data(), b1.data(), w2.data(), b2.data()}; }

  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    for (Eigen::Index i = 0; i < w1.size(); ++i) fn(w1.data()[i]);
    for (Eigen::Index i = 0; i < b1.size(); ++i) fn(b1.data()[i]);
    for (Eigen::Index i = 0; i < w2.size(); ++i) fn(w2.data()[i]);
    for (Eigen::Index i = 0; i < b2.size(); ++i) fn(b2.data()[i]);
  }

  Matrix w1, w2;
  Vector b1, b2;
};

/// Mean loss over the batch; writes dLoss/dLogits when `grad` is non-null.
/// Targets share the logits' shape: {0,1} for occupancy, one-hot for
/// segmentation, RGB for colour.
template <typename Scalar>
Scalar head_loss(HeadKind head, const typename Mlp<Scalar>::Matrix& logits,
                 const typename Mlp<Scalar>::Matrix& targets, typename Mlp<Scalar>::Matrix* grad) {
  using Matrix = typename Mlp<Scalar>::Matrix;
  const auto batch = static_cast<Scalar>(logits.cols());
  Scalar loss = 0;
  switch (head) {
    case HeadKind::occupancy: {
      const auto z = logits.array();
      const auto y = targets.array();
      loss = (z.max(Scalar(0)) - z * y + (Scalar(1) + (-z.abs()).exp()).log()).sum() / batch;
      if (grad) *grad = ((Scalar(1) / (Scalar(1) + (-z).exp())) - y).matrix() / batch;
      break;
    }
    case HeadKind::segmentation: {
      Matrix shifted = logits.rowwise() - logits.colwise().maxCoeff();
      Matrix e = shifted.array().exp().matrix();
      const auto sums = e.colwise().sum();
      Matrix log_p = shifted.rowwise() - sums.array().log().matrix();
      loss = -(targets.cwiseProduct(log_p)).sum() / batch;
      if (grad) *grad = (log_p.array().exp().matrix() - targets) / batch;
      break;
    }
    case HeadKind::color: {
      const Matrix diff = logits - targets;
      const auto count = static_cast<Scalar>(logits.size());
      loss = diff.squaredNorm() / count;
      if (grad) *grad = Scalar(2) * diff / count;
      break;
    }
  }
  return loss;
}

/// Applies the head's output activation column-wise.
template <typename Scalar>
typename Mlp<Scalar>::Matrix head_activation(HeadKind head, const typename Mlp<Scalar>::Matrix& logits) {
  using Matrix = typename Mlp<Scalar>::Matrix;
  switch (head) {
    case HeadKind::occupancy:
      return (Scalar(1) / (Scalar(1) + (-logits.array()).exp())).matrix();
    case HeadKind::segmentation: {
      Matrix e = (logits.rowwise() - logits.colwise().maxCoeff()).array().exp().matrix();
      return e.array().rowwise() / e.colwise().sum().array();
    }
    case HeadKind::color:
      return logits;
  }
  return logits;
}

struct TrainConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  int batch_size = 512;
  int epochs = 200;
  std::uint64_t seed = 0;
  int hidden = 256;
  PositionalEncoding encoding;
  std::optional<NormalizationBox> negative_bounds;  // default: inflated cloud bbox
  double bounds_inflation = 0.2;
  double min_padding = 0.01;  // metres per side, for flat or single-point clouds
  double negative_ratio = 1.0;
  bool resample_negatives = true;
};

struct FieldModel {
  HeadKind head = HeadKind::occupancy;
  PositionalEncoding encoding;
  NormalizationBox box;
  Mlp<float> net;
  std::vector<double> loss_history;  // mean loss per epoch
  TrainConfig config;

  int output_dim() const { return net.output_dim(); }
  double final_loss() const { return loss_history.empty() ? 0.0 : loss_history.back(); }
};

namespace detail {

inline NormalizationBox inflated_bounds(std::span<const Vec3> points, double inflation, double min_padding) {
  Vec3 lo = points.front(), hi = points.front();
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 pad = (0.5 * inflation * (hi - lo)).cwiseMax(Vec3::Constant(min_padding));
  return NormalizationBox{lo - pad, hi + pad};
}

inline Mlp<float>::Matrix encode_batch(const PositionalEncoding& enc, const NormalizationBox& box,
                                       std::span<const Vec3> points) {
  Mlp<float>::Matrix x(enc.output_dim(), static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    enc.encode_into(box.normalize(points[i]), x.col(static_cast<Eigen::Index>(i)).data());
  }
  return x;
}

struct Momentum {
  Mlp<float>::Matrix w1, w2;
  Mlp<float>::Vector b1, b2;

  explicit Momentum(const Mlp<float>& net)
      : w1(Mlp<float>::Matrix::Zero(net.w1.rows(), net.w1.cols())),
        w2(Mlp<float>::Matrix::Zero(net.w2.rows(), net.w2.cols())),
        b1(Mlp<float>::Vector::Zero(net.b1.size())),
        b2(Mlp<float>::Vector::Zero(net.b2.size())) {}

  void apply(Mlp<float>& net, const Mlp<float>::Gradients& g, float lr, float mu) {
    w1 = mu * w1 - lr * g.w1;
    b1 = mu * b1 - lr * g.b1;
    w2 = mu * w2 - lr * g.w2;
    b2 = mu * b2 - lr * g.b2;
    net.w1 += w1;
    net.b1 += b1;
    net.w2 += w2;
    net.b2 += b2;
  }
};

/// Shared mini-batch loop. `sample_epoch` fills inputs/targets for one epoch.
template <typename SampleFn>
FieldModel train_field(HeadKind head, int outputs, const NormalizationBox& box, const TrainConfig& cfg,
                       SampleFn&& sample_epoch) {
  if (cfg.epochs <= 0 || cfg.batch_size <= 0 || !(cfg.learning_rate > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "epochs, batch size and learning rate must be positive");
  }
  std::mt19937_64 rng(cfg.seed);
  FieldModel model;
  model.head = head;
  model.encoding = cfg.encoding;
  model.box = box;
  model.config = cfg;
  model.net = Mlp<float>(cfg.encoding.output_dim(), cfg.hidden, outputs, rng);
  Momentum velocity(model.net);

  Mlp<float>::Matrix inputs, targets;
  std::vector<Eigen::Index> order;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    sample_epoch(epoch, rng, inputs, targets);
    const Eigen::Index n = inputs.cols();
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Mlp<float>::Matrix xb(inputs.rows(), count), yb(targets.rows(), count);
      for (Eigen::Index k = 0; k < count; ++k) {
        xb.col(k) = inputs.col(order[static_cast<std::size_t>(start + k)]);
        yb.col(k) = targets.col(order[static_cast<std::size_t>(start + k)]);
      }
      Mlp<float>::Cache cache;
      const Mlp<float>::Matrix logits = model.net.forward(xb, &cache);
      Mlp<float>::Matrix d_logits;
      const float loss = head_loss<float>(head, logits, yb, &d_logits);
      epoch_loss += static_cast<double>(loss) * static_cast<double>(count);
      velocity.apply(model.net, model.net.backward(xb, cache, d_logits), static_cast<float>(cfg.learning_rate),
                     static_cast<float>(cfg.momentum));
    }
    model.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  return model;
}

inline NormalizationBox training_bounds(const LabeledPointCloud& cloud, const TrainConfig& cfg) {
  const NormalizationBox bbox = inflated_bounds(cloud.points, 0.0, 0.0);
  if (cfg.negative_bounds) {
    const NormalizationBox& b = *cfg.negative_bounds;
    if (b.degenerate()) throw Error(ErrorKind::DegenerateBounds, "negative-sample bounds have zero extent");
    if (!b.contains(bbox.lower) || !b.contains(bbox.upper)) {
      throw Error(ErrorKind::DegenerateBounds, "negative-sample bounds do not contain the point cloud");
    }
    return b;
  }
  NormalizationBox b = inflated_bounds(cloud.points, cfg.bounds_inflation, cfg.min_padding);
  if (b.degenerate()) throw Error(ErrorKind::DegenerateBounds, "cloud bounds are degenerate");
  return b;
}

inline void require_metric_cloud(const LabeledPointCloud& cloud) {
  if (cloud.empty()) throw Error(ErrorKind::EmptyCloud, "training cloud is empty");
  if (cloud.frame != Frame::robot_base) {
    throw Error(ErrorKind::InvalidInput, "fields are trained on robot_base clouds");
  }
}

}  // namespace detail

/// Noise-contrastive occupancy: cloud points are positives (target 1), uniform
/// samples from the bounds are negatives (target 0).
inline FieldModel train_occupancy(const LabeledPointCloud& cloud, const TrainConfig& cfg = {}) {
  detail::require_metric_cloud(cloud);
  const NormalizationBox box = detail::training_bounds(cloud, cfg);
  const Mlp<float>::Matrix positives = detail::encode_batch(cfg.encoding, box, cloud.points);
  const auto num_pos = positives.cols();
  const auto num_neg = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(cfg.negative_ratio * num_pos)));

  std::vector<Vec3> negatives(static_cast<std::size_t>(num_neg));
  bool drawn = false;
  auto sample = [&](int, std::mt19937_64& rng, Mlp<float>::Matrix& x, Mlp<float>::Matrix& y) {
    if (!drawn || cfg.resample_negatives) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (auto& p : negatives) {
        for (int a = 0; a < 3; ++a) p(a) = box.lower(a) + u(rng) * (box.upper(a) - box.lower(a));
      }
      drawn = true;
    }
    x.resize(positives.rows(), num_pos + num_neg);
    x.leftCols(num_pos) = positives;
    x.rightCols(num_neg) = detail::encode_batch(cfg.encoding, box, negatives);
    y.resize(1, num_pos + num_neg);
    y.leftCols(num_pos).setOnes();
    y.rightCols(num_neg).setZero();
  };
  return detail::train_field(HeadKind::occupancy, 1, box, cfg, sample);
}

/// Multi-class cross-entropy over per-point segmentation labels.
inline FieldModel train_segmentation(const LabeledPointCloud& cloud, const TrainConfig& cfg = {}) {
  detail::require_metric_cloud(cloud);
  if (!cloud.segmentation) throw Error(ErrorKind::InvalidInput, "cloud has no segmentation labels");
  cloud.validate();
  const auto& labels = *cloud.segmentation;
  if (*std::min_element(labels.begin(), labels.end()) < 0) {
    throw Error(ErrorKind::InvalidInput, "segmentation labels must be non-negative");
  }
  const std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw Error(ErrorKind::SingleClass, "segmentation needs at least 2 classes");
  const int classes = *distinct.rbegin() + 1;

  const NormalizationBox box = detail::training_bounds(cloud, cfg);
  const Mlp<float>::Matrix inputs = detail::encode_batch(cfg.encoding, box, cloud.points);
  Mlp<float>::Matrix onehot = Mlp<float>::Matrix::Zero(classes, inputs.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) onehot(labels[i], static_cast<Eigen::Index>(i)) = 1.0f;

  auto sample = [&](int, std::mt19937_64&, Mlp<float>::Matrix& x, Mlp<float>::Matrix& y) {
    if (x.size() == 0) {
      x = inputs;
      y = onehot;
    }
  };
  return detail::train_field(HeadKind::segmentation, classes, box, cfg, sample);
}

/// Mean squared error regression onto per-point RGB in [0,1].
inline FieldModel train_color(const LabeledPointCloud& cloud, const TrainConfig& cfg = {}) {
  detail::require_metric_cloud(cloud);
  if (!cloud.colors) throw Error(ErrorKind::InvalidInput, "cloud has no colours");
  cloud.validate();
  for (const auto& c : *cloud.colors) {
    if (!(c.minCoeff() >= 0.0) || !(c.maxCoeff() <= 1.0)) {
      throw Error(ErrorKind::InvalidInput, "colours must lie in [0,1]");
    }
  }
  const NormalizationBox box = detail::training_bounds(cloud, cfg);
  const Mlp<float>::Matrix inputs = detail::encode_batch(cfg.encoding, box, cloud.points);
  Mlp<float>::Matrix rgb(3, inputs.cols());
  for (std::size_t i = 0; i < cloud.colors->size(); ++i)
    rgb.col(static_cast<Eigen::Index>(i)) = (*cloud.colors)[i].cast<float>();

  auto sample = [&](int, std::mt19937_64&, Mlp<float>::Matrix& x, Mlp<float>::Matrix& y) {
    if (x.size() == 0) {
      x = inputs;
      y = rgb;
    }
  };
  return detail::train_field(HeadKind::color, 3, box, cfg, sample);
}

/// Batch forward pass; one row per query point (probability, class
/// distribution or RGB depending on the head).
inline Eigen::MatrixXd query(const FieldModel& model, std::span<const Vec3> points) {
  if (points.empty()) return Eigen::MatrixXd(0, model.output_dim());
  const Mlp<float>::Matrix x = detail::encode_batch(model.encoding, model.box, points);
  const Mlp<float>::Matrix out = head_activation<float>(model.head, model.net.forward(x));
  return out.transpose().cast<double>();
}

inline std::vector<int> predict_classes(const FieldModel& model, std::span<const Vec3> points) {
  const Eigen::MatrixXd probs = query(model, points);
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) probs.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
  return out;
}

/// Max relative error between backprop and central finite differences on a
/// small random network in double precision.
inline double gradient_check(HeadKind head, int hidden = 8, int samples = 16, std::uint64_t seed = 1,
                             int classes = 3, double step = 1e-5) {
  std::mt19937_64 rng(seed);
  const PositionalEncoding enc{2, true};
  const int outputs = head == HeadKind::occupancy ? 1 : (head == HeadKind::segmentation ? classes : 3);
  Mlp<double> net(enc.output_dim(), hidden, outputs, rng);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (Eigen::Index i = 0; i < net.b1.size(); ++i) net.b1(i) = normal(rng);
  for (Eigen::Index i = 0; i < net.b2.size(); ++i) net.b2(i) = normal(rng);

  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mlp<double>::Matrix x(enc.output_dim(), samples), y = Mlp<double>::Matrix::Zero(outputs, samples);
  for (int s = 0; s < samples; ++s) {
    enc.encode_into(Vec3(u(rng), u(rng), u(rng)), x.col(s).data());
    switch (head) {
      case HeadKind::occupancy: y(0, s) = s % 2 == 0 ? 1.0 : 0.0; break;
      case HeadKind::segmentation: y(s % classes, s) = 1.0; break;
      case HeadKind::color:
        for (int c = 0; c < 3; ++c) y(c, s) = 0.5 * (u(rng) + 1.0);
        break;
    }
  }

  auto loss_at = [&]() { return head_loss<double>(head, net.forward(x), y, nullptr); };
  Mlp<double>::Cache cache;
  Mlp<double>::Matrix d_logits;
  head_loss<double>(head, net.forward(x, &cache), y, &d_logits);
  const Mlp<double>::Gradients g = net.backward(x, cache, d_logits);

  std::vector<double> analytic;
  analytic.insert(analytic.end(), g.w1.data(), g.w1.data() + g.w1.size());
  analytic.insert(analytic.end(), g.b1.data(), g.b1.data() + g.b1.size());
  analytic.insert(analytic.end(), g.w2.data(), g.w2.data() + g.w2.size());
  analytic.insert(analytic.end(), g.b2.data(), g.b2.data() + g.b2.size());

  double worst = 0.0;
  std::size_t k = 0;
  net.for_each_parameter([&](double& p) {
    const double saved = p;
    p = saved + step;
    const double up = loss_at();
    p = saved - step;
    const double down = loss_at();
    p = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[k++];
    const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  });
  return worst;
}

}  // namespace jcr
