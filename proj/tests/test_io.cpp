#include <gtest/gtest.h>

#include <fstream>

#include "jcr/io.hpp"
#include "support.hpp"

using namespace jcr;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidInput;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(IoPoses, RoundTripKeepsFrameAndValues) {
  const auto dir = test::scratch_dir("io_poses");
  std::mt19937_64 rng(1);
  std::vector<Pose> poses;
  for (int i = 0; i < 5; ++i) poses.push_back(test::random_pose(rng, 0.5, Frame::end_effector));
  io::write_pose_list(dir / "p.json", poses);
  const auto back = io::read_pose_list(dir / "p.json");
  ASSERT_EQ(back.size(), poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    EXPECT_EQ(back[i].frame(), Frame::end_effector);
    EXPECT_LT(test::pose_distance(back[i], poses[i]), 1e-14);
  }
}

TEST(IoPoses, Errors) {
  const auto dir = test::scratch_dir("io_pose_err");
  EXPECT_EQ(kind_of([&] { io::read_pose_list(dir / "missing.json"); }), ErrorKind::IoError);
  write_text(dir / "bad.json", "[{\"frame\": ");
  EXPECT_EQ(kind_of([&] { io::read_pose_list(dir / "bad.json"); }), ErrorKind::ParseError);
  write_text(dir / "short.json", R"([{"frame": "robot_base", "matrix": [1, 0, 0]}])");
  EXPECT_EQ(kind_of([&] { io::read_pose_list(dir / "short.json"); }), ErrorKind::ParseError);
  // a scaled rotation block is not a rigid transform
  write_text(dir / "scaled.json",
             R"([{"frame": "robot_base", "matrix": [2,0,0,0, 0,2,0,0, 0,0,2,0, 0,0,0,1]}])");
  EXPECT_THROW(io::read_pose_list(dir / "scaled.json"), Error);
}

TEST(IoPairwise, RoundTripAtFloatPrecision) {
  const auto dir = test::scratch_dir("io_pairs");
  const Dataset ds = test::small_dataset(2, NoiseProfile::realistic(), 4, 10, 8);
  io::write_pair_manifest(dir, ds.pairs, ds.graph.num_views);
  const io::PairSet set = io::read_pair_manifest(dir / "pairs.json");
  EXPECT_EQ(set.graph.num_views, 4);
  EXPECT_EQ(set.graph.edges, ds.graph.edges);
  ASSERT_EQ(set.pairs.size(), ds.pairs.size());
  for (std::size_t e = 0; e < ds.pairs.size(); ++e) {
    const auto &a = ds.pairs[e], &b = set.pairs[e];
    ASSERT_EQ(b.pixel_count(), a.pixel_count());
    for (std::size_t q = 0; q < a.pixel_count(); ++q) {
      ASSERT_LT((a.pointmap_self[q] - b.pointmap_self[q]).norm(), 1e-6 * (1 + a.pointmap_self[q].norm()));
      ASSERT_LT((a.pointmap_other[q] - b.pointmap_other[q]).norm(), 1e-6 * (1 + a.pointmap_other[q].norm()));
      ASSERT_NEAR(a.confidence_self[q], b.confidence_self[q], 1e-6);
    }
  }
}

TEST(IoPairwise, RejectsCorruptFiles) {
  const auto dir = test::scratch_dir("io_pair_err");
  const Dataset ds = test::small_dataset(3, NoiseProfile::zero(), 4, 6, 4);
  io::write_pairwise(dir / "ok.jcrpm", ds.pairs[0]);
  const auto size = fs::file_size(dir / "ok.jcrpm");
  fs::copy_file(dir / "ok.jcrpm", dir / "cut.jcrpm");
  fs::resize_file(dir / "cut.jcrpm", size - 3);
  EXPECT_EQ(kind_of([&] { io::read_pairwise(dir / "cut.jcrpm"); }), ErrorKind::ParseError);
  write_text(dir / "magic.jcrpm", "JCRPM2 garbage");
  EXPECT_EQ(kind_of([&] { io::read_pairwise(dir / "magic.jcrpm"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([&] { io::read_pairwise(dir / "none.jcrpm"); }), ErrorKind::IoError);
}

TEST(IoAlignment, RoundTrip) {
  const auto dir = test::scratch_dir("io_align");
  const Dataset ds = test::small_dataset(4, NoiseProfile::zero(), 4, 10, 8);
  const AlignmentResult r = align_global(ds.pairs, ds.graph);
  io::write_alignment(dir, r, {{"seed", 4}});
  const AlignmentResult b = io::read_alignment(dir);
  EXPECT_EQ(b.num_views, r.num_views);
  EXPECT_EQ(b.edges, r.edges);
  EXPECT_EQ(b.scales, r.scales);
  EXPECT_EQ(b.objective_history, r.objective_history);
  EXPECT_EQ(b.converged, r.converged);
  for (int v = 0; v < 4; ++v) {
    EXPECT_LT(test::pose_distance(b.poses[v], r.poses[v]), 1e-14);
    for (std::size_t q = 0; q < r.points[v].size(); ++q)
      ASSERT_LT((b.points[v][q] - r.points[v][q]).norm(), 1e-6 * (1 + r.points[v][q].norm()));
  }
  EXPECT_EQ(io::read_json(dir / "alignment.json")["provenance"]["seed"], 4);
}

TEST(IoCalibration, RoundTrip) {
  const Dataset ds = test::small_dataset(5, NoiseProfile::realistic(), 8);
  const CalibrationResult c = calibrate(ds.end_effector, ds.camera);
  const CalibrationResult b = io::calibration_from_json(nlohmann::json::parse(io::calibration_json(c).dump()));
  EXPECT_LT(rotation_distance(b.rotation, c.rotation), 1e-14);
  EXPECT_EQ(b.translation, c.translation);
  EXPECT_EQ(b.scale, c.scale);
  EXPECT_EQ(b.converged, c.converged);
  EXPECT_EQ(b.residuals.size(), c.residuals.size());
  EXPECT_EQ(b.mean_translation_residual(), c.mean_translation_residual());
}

TEST(IoGroundTruth, RoundTrip) {
  const Dataset ds = test::small_dataset(6, NoiseProfile::zero(), 4, 6, 4);
  const GroundTruth g = io::ground_truth_from_json(io::ground_truth_json(ds.truth));
  EXPECT_EQ(g.hidden.scale, ds.truth.hidden.scale);
  EXPECT_LT(test::pose_distance(g.hidden.hand_eye, ds.truth.hidden.hand_eye), 1e-15);
  ASSERT_EQ(g.objects.size(), ds.truth.objects.size());
  for (std::size_t i = 0; i < g.objects.size(); ++i) EXPECT_EQ(g.objects[i].height, ds.truth.objects[i].height);
  EXPECT_EQ(g.support_class, ds.truth.support_class);
  EXPECT_EQ(g.camera_metric.size(), 4u);
}

TEST(IoPly, RoundTripWithLabelsAndSources) {
  const auto dir = test::scratch_dir("io_ply");
  LabeledPointCloud c = sample_surface(tabletop_scene(), 1, 2000);
  c.source_width = 32;
  c.source_height = 24;
  for (std::size_t i = 0; i < c.size(); ++i) c.sources[i] = PixelRef{static_cast<int>(i % 7), static_cast<int>(i % 32), static_cast<int>(i % 24)};
  io::write_ply(dir / "c.ply", c);
  const LabeledPointCloud b = io::read_ply(dir / "c.ply");
  EXPECT_EQ(b.frame, Frame::robot_base);
  EXPECT_EQ(b.source_width, 32);
  ASSERT_EQ(b.size(), c.size());
  EXPECT_EQ(*b.segmentation, *c.segmentation);
  for (std::size_t i = 0; i < c.size(); ++i) {
    ASSERT_LT((b.points[i] - c.points[i]).norm(), 1e-6);
    ASSERT_LT(((*b.colors)[i] - (*c.colors)[i]).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-12);
    ASSERT_EQ(b.sources[i].view, c.sources[i].view);
    ASSERT_EQ(b.sources[i].w, c.sources[i].w);
    ASSERT_EQ(b.sources[i].h, c.sources[i].h);
  }
  // model-unit frame tag survives too
  c.frame = Frame::camera_model;
  c.segmentation.reset();
  io::write_ply(dir / "m.ply", c);
  const auto m = io::read_ply(dir / "m.ply");
  EXPECT_EQ(m.frame, Frame::camera_model);
  EXPECT_FALSE(m.segmentation.has_value());
}

TEST(IoImages, PpmAndPgmRoundTrip) {
  const auto dir = test::scratch_dir("io_img");
  ColorImage c{5, 3, {}};
  LabelImage l{5, 3, {}};
  for (int q = 0; q < 15; ++q) {
    c.pixels.push_back(Vec3(q / 14.0, 1 - q / 14.0, 0.5));
    l.labels.push_back(q * 4000);
  }
  io::write_ppm(dir / "c.ppm", c);
  io::write_pgm16(dir / "l.pgm", l);
  const ColorImage c2 = io::read_ppm(dir / "c.ppm");
  const LabelImage l2 = io::read_pgm16(dir / "l.pgm");
  EXPECT_EQ(c2.width, 5);
  EXPECT_EQ(c2.height, 3);
  for (int q = 0; q < 15; ++q) EXPECT_LT((c2.pixels[q] - c.pixels[q]).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-12);
  EXPECT_EQ(l2.labels, l.labels);
  write_text(dir / "bad.ppm", "P3\n1 1\n255\n0 0 0\n");
  EXPECT_EQ(kind_of([&] { io::read_ppm(dir / "bad.ppm"); }), ErrorKind::ParseError);
}

TEST(IoField, SaveLoadGivesIdenticalQueries) {
  const auto dir = test::scratch_dir("io_field");
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.hidden = 16;
  const FieldModel m = train_segmentation(test::cluster_cloud(1, 100, 3), cfg);
  io::save_field(dir / "seg.json", m);
  EXPECT_TRUE(fs::exists(dir / "seg.json.bin"));
  const FieldModel b = io::load_field(dir / "seg.json");
  EXPECT_EQ(b.head, HeadKind::segmentation);
  EXPECT_EQ(b.config.hidden, 16);
  const auto pts = test::cluster_cloud(2, 50, 3).points;
  EXPECT_EQ(query(b, pts), query(m, pts));
  fs::resize_file(dir / "seg.json.bin", 10);
  EXPECT_EQ(kind_of([&] { io::load_field(dir / "seg.json"); }), ErrorKind::ParseError);
}

TEST(IoCsv, PointsWithHeaderAndErrors) {
  const auto dir = test::scratch_dir("io_csv");
  write_text(dir / "p.csv", "x,y,z\n0.1,0.2,0.3\n\n-1,2,3.5\n");
  const auto pts = io::read_points_csv(dir / "p.csv");
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[1], Vec3(-1, 2, 3.5));
  write_text(dir / "bad.csv", "1,2,3\n4,five,6\n");
  EXPECT_EQ(kind_of([&] { io::read_points_csv(dir / "bad.csv"); }), ErrorKind::ParseError);
  io::write_query_csv(dir / "q.csv", pts, Eigen::MatrixXd::Constant(2, 1, 0.25), HeadKind::occupancy);
  std::ifstream in(dir / "q.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "x,y,z,occupancy");
  EXPECT_EQ(row, "0.1,0.2,0.3,0.25");
}
