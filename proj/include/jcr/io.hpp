#pragma once

// File formats shared by the pipeline stages.
//
//   poses        JSON array of {"frame": str, "matrix": [16 numbers, row-major 4x4]}
//   JCRPM1       "JCRPM1" | W H n m (int32 LE) | 4 float32 arrays, pixel-major
//                (pointmap_self W*H*3, pointmap_other W*H*3, confidence_self W*H,
//                confidence_other W*H); pixel (w,h) at index h*W + w
//   pairs.json   {"num_views": N, "width": W, "height": H, "pairs": [{"n","m","file"}]}
//   JCRAL1       aligned pointmaps: "JCRAL1" | N W H (int32 LE) | per view
//                points W*H*3 float32 then confidence W*H float32
//   PLY          binary_little_endian: x y z float32, red green blue uint8, [label int32]
//   PPM / PGM    P6 8-bit colour images, P5 16-bit segmentation label images
//   field model  JSON header + sidecar little-endian float32 blob (w1, b1, w2, b2, column-major)

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "jcr/alignment.hpp"
#include "jcr/calibration.hpp"
#include "jcr/errors.hpp"
#include "jcr/fields.hpp"
#include "jcr/geometry.hpp"
#include "jcr/reconstruction.hpp"
#include "jcr/synth.hpp"

namespace jcr::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// ---------------------------------------------------------------- helpers

inline std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const fs::path& path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
  return out;
}

inline json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << std::setprecision(17) << j.dump(2) << '\n';
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorKind::ParseError, path.string() + ": truncated file");
  }
  return value;
}

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::ParseError, "expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline json pose_json(const Pose& p) {
  json m = json::array();
  const Mat4 mat = p.matrix();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(mat(r, c));
  return json{{"frame", std::string(to_string(p.frame()))}, {"matrix", m}};
}

inline Pose pose_from_json(const json& j) {
  try {
    const auto& m = j.at("matrix");
    if (!m.is_array() || m.size() != 16) throw Error(ErrorKind::ParseError, "pose matrix must have 16 numbers");
    Mat4 mat;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) mat(r, c) = m[static_cast<std::size_t>(4 * r + c)].get<double>();
    if ((mat.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
      throw Error(ErrorKind::ParseError, "pose matrix bottom row must be 0 0 0 1");
    }
    // strict: a file holding a non-rigid matrix is an error, not something to project away
    return Pose(Rotation(Mat3(mat.topLeftCorner<3, 3>())), mat.topRightCorner<3, 1>(),
                frame_from_string(j.at("frame").get<std::string>()));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("pose: ") + e.what());
  }
}

// ---------------------------------------------------------------- poses

inline void write_pose_list(const fs::path& path, std::span<const Pose> poses) {
  json arr = json::array();
  for (const auto& p : poses) arr.push_back(pose_json(p));
  write_json(path, arr);
}

inline std::vector<Pose> read_pose_list(const fs::path& path) {
  const json arr = read_json(path);
  if (!arr.is_array()) throw Error(ErrorKind::ParseError, path.string() + ": pose list must be a JSON array");
  std::vector<Pose> out;
  for (const auto& j : arr) out.push_back(pose_from_json(j));
  return out;
}

// ---------------------------------------------------------------- JCRPM1

inline constexpr std::array<char, 6> kPairMagic{'J', 'C', 'R', 'P', 'M', '1'};
inline constexpr std::array<char, 6> kAlignedMagic{'J', 'C', 'R', 'A', 'L', '1'};

inline void write_pairwise(const fs::path& path, const PairwisePrediction& p) {
  p.validate();
  auto out = open_out(path, true);
  out.write(kPairMagic.data(), kPairMagic.size());
  for (int v : {p.width, p.height, p.n, p.m}) put<std::int32_t>(out, v);
  for (const auto* map : {&p.pointmap_self, &p.pointmap_other})
    for (const auto& x : *map)
      for (int a = 0; a < 3; ++a) put<float>(out, static_cast<float>(x(a)));
  for (const auto* conf : {&p.confidence_self, &p.confidence_other})
    for (double c : *conf) put<float>(out, static_cast<float>(c));
}

inline PairwisePrediction read_pairwise(const fs::path& path) {
  auto in = open_in(path, true);
  std::array<char, 6> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kPairMagic) {
    throw Error(ErrorKind::ParseError, path.string() + ": not a JCRPM1 file");
  }
  PairwisePrediction p;
  p.width = get<std::int32_t>(in, path);
  p.height = get<std::int32_t>(in, path);
  p.n = get<std::int32_t>(in, path);
  p.m = get<std::int32_t>(in, path);
  if (p.width <= 0 || p.height <= 0 || p.width > 1 << 15 || p.height > 1 << 15) {
    throw Error(ErrorKind::ParseError, path.string() + ": bad image size");
  }
  const std::size_t count = p.pixel_count();
  for (auto* map : {&p.pointmap_self, &p.pointmap_other}) {
    map->resize(count);
    for (auto& x : *map)
      for (int a = 0; a < 3; ++a) x(a) = get<float>(in, path);
  }
  for (auto* conf : {&p.confidence_self, &p.confidence_other}) {
    conf->resize(count);
    for (auto& c : *conf) c = get<float>(in, path);
  }
  p.validate();
  return p;
}

inline void write_pair_manifest(const fs::path& dir, std::span<const PairwisePrediction> pairs, int num_views) {
  json list = json::array();
  int width = pairs.empty() ? 0 : pairs.front().width, height = pairs.empty() ? 0 : pairs.front().height;
  for (const auto& p : pairs) {
    const std::string file = "pair_" + std::to_string(p.n) + "_" + std::to_string(p.m) + ".jcrpm";
    write_pairwise(dir / file, p);
    list.push_back(json{{"n", p.n}, {"m", p.m}, {"file", file}});
  }
  write_json(dir / "pairs.json", json{{"num_views", num_views}, {"width", width}, {"height", height}, {"pairs", list}});
}

struct PairSet {
  std::vector<PairwisePrediction> pairs;
  PairGraph graph;
};

inline PairSet read_pair_manifest(const fs::path& manifest) {
  const json j = read_json(manifest);
  PairSet out;
  try {
    out.graph.num_views = j.at("num_views").get<int>();
    for (const auto& e : j.at("pairs")) {
      auto p = read_pairwise(manifest.parent_path() / e.at("file").get<std::string>());
      if (p.n != e.at("n").get<int>() || p.m != e.at("m").get<int>()) {
        throw Error(ErrorKind::ParseError, "pair file header disagrees with manifest entry");
      }
      out.graph.edges.emplace_back(p.n, p.m);
      out.pairs.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, manifest.string() + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------- alignment

inline void write_alignment(const fs::path& dir, const AlignmentResult& r, const json& provenance = json::object()) {
  json poses = json::array();
  for (const auto& p : r.poses) poses.push_back(pose_json(p));
  json edges = json::array();
  for (std::size_t e = 0; e < r.edges.size(); ++e)
    edges.push_back(json{{"n", r.edges[e].first}, {"m", r.edges[e].second}, {"scale", r.scales[e]}});
  write_json(dir / "alignment.json", json{{"num_views", r.num_views},
                                          {"width", r.width},
                                          {"height", r.height},
                                          {"poses", poses},
                                          {"edges", edges},
                                          {"objective", r.objective},
                                          {"num_terms", r.num_terms},
                                          {"iterations", r.iterations},
                                          {"converged", r.converged},
                                          {"warning", r.warning},
                                          {"objective_history", r.objective_history},
                                          {"points_file", "aligned.bin"},
                                          {"provenance", provenance}});
  auto out = open_out(dir / "aligned.bin", true);
  out.write(kAlignedMagic.data(), kAlignedMagic.size());
  for (int v : {r.num_views, r.width, r.height}) put<std::int32_t>(out, v);
  for (int v = 0; v < r.num_views; ++v) {
    for (const auto& x : r.points[static_cast<std::size_t>(v)])
      for (int a = 0; a < 3; ++a) put<float>(out, static_cast<float>(x(a)));
    for (double c : r.confidence[static_cast<std::size_t>(v)]) put<float>(out, static_cast<float>(c));
  }
}

inline AlignmentResult read_alignment(const fs::path& dir) {
  const json j = read_json(dir / "alignment.json");
  AlignmentResult r;
  try {
    r.num_views = j.at("num_views").get<int>();
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    for (const auto& p : j.at("poses")) r.poses.push_back(pose_from_json(p));
    for (const auto& e : j.at("edges")) {
      r.edges.emplace_back(e.at("n").get<int>(), e.at("m").get<int>());
      r.scales.push_back(e.at("scale").get<double>());
    }
    r.objective = j.at("objective").get<double>();
    r.num_terms = j.at("num_terms").get<std::size_t>();
    r.iterations = j.at("iterations").get<int>();
    r.converged = j.at("converged").get<bool>();
    r.warning = j.value("warning", "");
    r.objective_history = j.at("objective_history").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("alignment.json: ") + e.what());
  }
  const fs::path bin = dir / j.value("points_file", "aligned.bin");
  auto in = open_in(bin, true);
  std::array<char, 6> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kAlignedMagic) {
    throw Error(ErrorKind::ParseError, bin.string() + ": not a JCRAL1 file");
  }
  const int nv = get<std::int32_t>(in, bin), w = get<std::int32_t>(in, bin), h = get<std::int32_t>(in, bin);
  if (nv != r.num_views || w != r.width || h != r.height) {
    throw Error(ErrorKind::ParseError, bin.string() + ": header disagrees with alignment.json");
  }
  const std::size_t pixels = static_cast<std::size_t>(w) * h;
  r.points.assign(static_cast<std::size_t>(nv), std::vector<Vec3>(pixels));
  r.confidence.assign(static_cast<std::size_t>(nv), std::vector<double>(pixels));
  for (int v = 0; v < nv; ++v) {
    for (auto& x : r.points[static_cast<std::size_t>(v)])
      for (int a = 0; a < 3; ++a) x(a) = get<float>(in, bin);
    for (auto& c : r.confidence[static_cast<std::size_t>(v)]) c = get<float>(in, bin);
  }
  return r;
}

// ---------------------------------------------------------------- calibration

inline json calibration_json(const CalibrationResult& c, const json& provenance = json::object()) {
  json rt = json::array(), rr = json::array();
  for (const auto& r : c.residuals) {
    rt.push_back(r.translation);
    rr.push_back(r.rotation);
  }
  return json{{"transform", pose_json(c.transform())},
              {"translation", vec_json(c.translation)},
              {"rotation_axis_angle", vec_json(log_map(c.rotation))},
              {"scale", c.scale},
              {"residuals", {{"translation", rt}, {"rotation", rr}}},
              {"mean_translation_residual", c.mean_translation_residual()},
              {"mean_rotation_residual", c.mean_rotation_residual()},
              {"max_translation_residual", c.max_translation_residual()},
              {"max_rotation_residual", c.max_rotation_residual()},
              {"converged", c.converged},
              {"num_pairs", c.num_pairs},
              {"provenance", provenance}};
}

inline CalibrationResult calibration_from_json(const json& j) {
  CalibrationResult c;
  try {
    const Pose t = pose_from_json(j.at("transform"));
    c.rotation = t.rotation();
    c.translation = t.translation();
    c.scale = j.at("scale").get<double>();
    const auto rt = j.at("residuals").at("translation").get<std::vector<double>>();
    const auto rr = j.at("residuals").at("rotation").get<std::vector<double>>();
    if (rt.size() != rr.size()) throw Error(ErrorKind::ParseError, "residual arrays differ in length");
    for (std::size_t i = 0; i < rt.size(); ++i) c.residuals.push_back({rt[i], rr[i]});
    c.converged = j.at("converged").get<bool>();
    c.num_pairs = j.at("num_pairs").get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("calibration: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------- ground truth

inline json ground_truth_json(const GroundTruth& g) {
  json objects = json::array();
  for (const auto& o : g.objects) objects.push_back(json{{"name", o.name}, {"class_id", o.class_id}, {"height", o.height}});
  json cams = json::array(), ees = json::array();
  for (const auto& p : g.camera_metric) cams.push_back(pose_json(p));
  for (const auto& p : g.end_effector) ees.push_back(pose_json(p));
  return json{{"hand_eye", pose_json(g.hidden.hand_eye)},
              {"scale", g.hidden.scale},
              {"camera_metric", cams},
              {"end_effector", ees},
              {"objects", objects},
              {"support_class", g.support_class},
              {"noise",
               {{"ee_rotation_sigma", g.noise.ee_rotation_sigma},
                {"ee_translation_sigma", g.noise.ee_translation_sigma},
                {"point_sigma", g.noise.point_sigma},
                {"dropout", g.noise.dropout},
                {"pair_scale_jitter", g.noise.pair_scale_jitter}}},
              {"seed", g.seed}};
}

inline GroundTruth ground_truth_from_json(const json& j) {
  GroundTruth g;
  try {
    g.hidden.hand_eye = pose_from_json(j.at("hand_eye"));
    g.hidden.scale = j.at("scale").get<double>();
    for (const auto& p : j.value("camera_metric", json::array())) g.camera_metric.push_back(pose_from_json(p));
    for (const auto& p : j.value("end_effector", json::array())) g.end_effector.push_back(pose_from_json(p));
    for (const auto& o : j.value("objects", json::array()))
      g.objects.push_back({o.at("name").get<std::string>(), o.at("class_id").get<int>(), o.at("height").get<double>()});
    g.support_class = j.value("support_class", 0);
    g.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("ground truth: ") + e.what());
  }
  return g;
}

// ---------------------------------------------------------------- PLY

/// Vertex layout: x, y, z float; red, green, blue uchar; label int (when segmented);
/// view, px, py int (source pixel, so per-view statistics survive a round trip).
inline void write_ply(const fs::path& path, const LabeledPointCloud& cloud) {
  cloud.validate();
  auto out = open_out(path, true);
  const bool labels = cloud.segmentation.has_value();
  out << "ply\nformat binary_little_endian 1.0\n"
      << "comment frame " << to_string(cloud.frame) << "\n"
      << "comment source_size " << cloud.source_width << " " << cloud.source_height << "\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (labels) out << "property int label\n";
  out << "property int view\nproperty int px\nproperty int py\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) put<float>(out, static_cast<float>(cloud.points[i](a)));
    const Vec3 c = cloud.colors ? (*cloud.colors)[i] : Vec3::Constant(0.5);
    for (int a = 0; a < 3; ++a) put<std::uint8_t>(out, static_cast<std::uint8_t>(std::lround(std::clamp(c(a), 0.0, 1.0) * 255.0)));
    if (labels) put<std::int32_t>(out, (*cloud.segmentation)[i]);
    for (int v : {cloud.sources[i].view, cloud.sources[i].w, cloud.sources[i].h}) put<std::int32_t>(out, v);
  }
}

/// Binary little-endian PLY with float/uchar/int vertex properties; unknown
/// properties are skipped.
inline LabeledPointCloud read_ply(const fs::path& path) {
  auto in = open_in(path, true);
  std::string line;
  std::size_t count = 0;
  bool binary = false;
  std::vector<std::pair<std::string, std::string>> props;  // (type, name)
  LabeledPointCloud cloud;
  std::getline(in, line);
  if (line != "ply") throw Error(ErrorKind::ParseError, path.string() + ": not a PLY file");
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      binary = fmt == "binary_little_endian";
    } else if (word == "element") {
      std::string name;
      ss >> name >> count;
    } else if (word == "comment") {
      std::string key;
      ss >> key;
      if (key == "frame") {
        std::string value;
        ss >> value;
        cloud.frame = frame_from_string(value);
      } else if (key == "source_size") {
        ss >> cloud.source_width >> cloud.source_height;
      }
    } else if (word == "property") {
      std::string type, name;
      ss >> type >> name;
      if (type != "float" && type != "uchar" && type != "int") {
        throw Error(ErrorKind::ParseError, path.string() + ": unsupported property type '" + type + "'");
      }
      props.emplace_back(type, name);
    }
  }
  if (!binary) throw Error(ErrorKind::ParseError, path.string() + ": only binary_little_endian is supported");
  auto has = [&](const char* n) {
    return std::any_of(props.begin(), props.end(), [&](const auto& p) { return p.second == n; });
  };
  if (!has("x") || !has("y") || !has("z")) throw Error(ErrorKind::ParseError, path.string() + ": missing x/y/z");
  if (has("red")) cloud.colors.emplace();
  if (has("label")) cloud.segmentation.emplace();
  for (std::size_t i = 0; i < count; ++i) {
    Vec3 p = Vec3::Zero(), c = Vec3::Constant(0.5);
    PixelRef src;
    int label = 0;
    for (const auto& [type, name] : props) {
      double v = 0.0;
      if (type == "float") v = get<float>(in, path);
      else if (type == "uchar") v = get<std::uint8_t>(in, path);
      else v = get<std::int32_t>(in, path);
      if (name == "x") p.x() = v;
      else if (name == "y") p.y() = v;
      else if (name == "z") p.z() = v;
      else if (name == "red") c(0) = v / 255.0;
      else if (name == "green") c(1) = v / 255.0;
      else if (name == "blue") c(2) = v / 255.0;
      else if (name == "label") label = static_cast<int>(v);
      else if (name == "view") src.view = static_cast<int>(v);
      else if (name == "px") src.w = static_cast<int>(v);
      else if (name == "py") src.h = static_cast<int>(v);
    }
    cloud.points.push_back(p);
    cloud.sources.push_back(src);
    if (cloud.colors) cloud.colors->push_back(c);
    if (cloud.segmentation) cloud.segmentation->push_back(label);
  }
  return cloud;
}

// ---------------------------------------------------------------- netpbm label images

inline void write_ppm(const fs::path& path, const ColorImage& img) {
  auto out = open_out(path, true);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (const auto& c : img.pixels)
    for (int a = 0; a < 3; ++a) put<std::uint8_t>(out, static_cast<std::uint8_t>(std::lround(std::clamp(c(a), 0.0, 1.0) * 255.0)));
}

inline void write_pgm16(const fs::path& path, const LabelImage& img) {
  auto out = open_out(path, true);
  out << "P5\n" << img.width << " " << img.height << "\n65535\n";
  for (int l : img.labels) {
    if (l < 0 || l > 65535) throw Error(ErrorKind::InvalidInput, "label out of 16-bit range");
    put<std::uint8_t>(out, static_cast<std::uint8_t>(l >> 8));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(l & 0xff));
  }
}

namespace detail {

inline void read_netpbm_header(std::istream& in, const fs::path& path, const char* magic, int& w, int& h, int& maxval) {
  std::string m;
  in >> m;
  if (m != magic) throw Error(ErrorKind::ParseError, path.string() + ": expected " + magic);
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    int v = 0;
    if (!(in >> v)) throw Error(ErrorKind::ParseError, path.string() + ": bad netpbm header");
    return v;
  };
  w = next_int();
  h = next_int();
  maxval = next_int();
  in.get();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw Error(ErrorKind::ParseError, path.string() + ": bad netpbm header");
}

}  // namespace detail

inline ColorImage read_ppm(const fs::path& path) {
  auto in = open_in(path, true);
  ColorImage img;
  int maxval = 0;
  detail::read_netpbm_header(in, path, "P6", img.width, img.height, maxval);
  if (maxval > 255) throw Error(ErrorKind::ParseError, path.string() + ": only 8-bit PPM supported");
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (auto& c : img.pixels)
    for (int a = 0; a < 3; ++a) c(a) = get<std::uint8_t>(in, path) / static_cast<double>(maxval);
  return img;
}

inline LabelImage read_pgm16(const fs::path& path) {
  auto in = open_in(path, true);
  LabelImage img;
  int maxval = 0;
  detail::read_netpbm_header(in, path, "P5", img.width, img.height, maxval);
  img.labels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (auto& l : img.labels) {
    if (maxval > 255) {
      const int hi = get<std::uint8_t>(in, path);
      l = (hi << 8) | get<std::uint8_t>(in, path);
    } else {
      l = get<std::uint8_t>(in, path);
    }
  }
  return img;
}

// ---------------------------------------------------------------- field models

inline json train_config_json(const TrainConfig& c) {
  json j{{"learning_rate", c.learning_rate}, {"momentum", c.momentum}, {"batch_size", c.batch_size},
         {"epochs", c.epochs}, {"seed", c.seed}, {"hidden", c.hidden},
         {"num_frequencies", c.encoding.num_frequencies}, {"include_raw", c.encoding.include_raw},
         {"bounds_inflation", c.bounds_inflation}, {"negative_ratio", c.negative_ratio},
         {"resample_negatives", c.resample_negatives}};
  if (c.negative_bounds) {
    j["negative_bounds"] = {{"lower", vec_json(c.negative_bounds->lower)}, {"upper", vec_json(c.negative_bounds->upper)}};
  }
  return j;
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.hidden = j.value("hidden", c.hidden);
  c.encoding.num_frequencies = j.value("num_frequencies", c.encoding.num_frequencies);
  c.encoding.include_raw = j.value("include_raw", c.encoding.include_raw);
  c.bounds_inflation = j.value("bounds_inflation", c.bounds_inflation);
  c.negative_ratio = j.value("negative_ratio", c.negative_ratio);
  c.resample_negatives = j.value("resample_negatives", c.resample_negatives);
  if (j.contains("negative_bounds")) {
    c.negative_bounds = NormalizationBox{vec_from_json(j["negative_bounds"].at("lower")),
                                         vec_from_json(j["negative_bounds"].at("upper"))};
  }
  return c;
}

/// Writes `<path>` (JSON header) and `<path>.bin` (weights).
inline void save_field(const fs::path& path, const FieldModel& model) {
  const fs::path blob = fs::path(path.string() + ".bin");
  json header{{"format", "jcr-field-1"},
              {"head", std::string(to_string(model.head))},
              {"encoding", {{"num_frequencies", model.encoding.num_frequencies}, {"include_raw", model.encoding.include_raw}}},
              {"layers", {model.net.input_dim(), model.net.hidden_dim(), model.net.output_dim()}},
              {"normalization", {{"lower", vec_json(model.box.lower)}, {"upper", vec_json(model.box.upper)}}},
              {"weights_file", blob.filename().string()},
              {"weights_layout", {"w1", "b1", "w2", "b2"}},
              {"loss_history", model.loss_history},
              {"train_config", train_config_json(model.config)}};
  write_json(path, header);
  auto out = open_out(blob, true);
  Mlp<float> net = model.net;
  net.for_each_parameter([&](float& v) { put<float>(out, v); });
}

inline FieldModel load_field(const fs::path& path) {
  const json j = read_json(path);
  FieldModel m;
  try {
    if (j.at("format") != "jcr-field-1") throw Error(ErrorKind::ParseError, "unknown field model format");
    m.head = head_from_string(j.at("head").get<std::string>());
    m.encoding.num_frequencies = j.at("encoding").at("num_frequencies").get<int>();
    m.encoding.include_raw = j.at("encoding").at("include_raw").get<bool>();
    const auto layers = j.at("layers").get<std::vector<int>>();
    if (layers.size() != 3 || layers[0] != m.encoding.output_dim()) {
      throw Error(ErrorKind::ParseError, "layer sizes disagree with the encoding");
    }
    m.box = NormalizationBox{vec_from_json(j.at("normalization").at("lower")),
                             vec_from_json(j.at("normalization").at("upper"))};
    m.loss_history = j.value("loss_history", std::vector<double>{});
    if (j.contains("train_config")) m.config = train_config_from_json(j["train_config"]);
    m.net.w1.resize(layers[1], layers[0]);
    m.net.b1.resize(layers[1]);
    m.net.w2.resize(layers[2], layers[1]);
    m.net.b2.resize(layers[2]);
    const fs::path blob = path.parent_path() / j.at("weights_file").get<std::string>();
    auto in = open_in(blob, true);
    m.net.for_each_parameter([&](float& v) { v = get<float>(in, blob); });
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------- CSV

/// x,y,z per line; a non-numeric first line is treated as a header.
inline std::vector<Vec3> read_points_csv(const fs::path& path) {
  auto in = open_in(path);
  std::vector<Vec3> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    Vec3 p;
    if (!(ss >> p.x() >> p.y() >> p.z())) {
      if (lineno == 1) continue;
      throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(lineno) + ": expected x,y,z");
    }
    out.push_back(p);
  }
  return out;
}

inline void write_query_csv(const fs::path& path, std::span<const Vec3> points, const Eigen::MatrixXd& outputs,
                            HeadKind head) {
  auto out = open_out(path);
  out << std::setprecision(9) << "x,y,z";
  for (Eigen::Index c = 0; c < outputs.cols(); ++c) {
    if (head == HeadKind::occupancy) out << ",occupancy";
    else if (head == HeadKind::color) out << "," << "rgb"[c];
    else out << ",p" << c;
  }
  out << "\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << points[i].x() << "," << points[i].y() << "," << points[i].z();
    for (Eigen::Index c = 0; c < outputs.cols(); ++c) out << "," << outputs(static_cast<Eigen::Index>(i), c);
    out << "\n";
  }
}

}  // namespace jcr::io
