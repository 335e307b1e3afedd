#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ahgs/checkpoint.hpp"
#include "ahgs/config.hpp"
#include "ahgs/ply.hpp"
#include "ahgs/scene.hpp"
#include "test_util.hpp"

using namespace ahgs;

namespace {

PointCloud small_cloud() {
  PointCloud c;
  c.points = {{0.05, 0.05, 0.05}, {0.07, 0.02, 0.01}, {0.31, -0.12, 0.44}, {-0.5, 0.25, 0.9}};
  c.colors = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.5, 0.5, 0.5}};
  return c;
}

Camera front_camera() {
  return look_at({0, 0, -3}, {0, 0, 0}, {0, -1, 0}, 40, 40, 32, 32, 0.1, 10.0);
}

}  // namespace

// ---------------------------------------------------------------- PLY

TEST(Ply, AsciiAndBinaryRoundTrip) {
  const PointCloud c = small_cloud();
  for (PlyFormat f : {PlyFormat::kAscii, PlyFormat::kBinary}) {
    const PointCloud r = parse_ply(encode_ply(c, f));
    ASSERT_EQ(r.size(), c.size());
    ASSERT_TRUE(r.has_colors());
    for (std::size_t i = 0; i < c.size(); ++i)
      for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(r.points[i][k], c.points[i][k], 1e-6);
        EXPECT_NEAR(r.colors[i][k], c.colors[i][k], 1.0 / 255.0);
      }
  }
}

TEST(Ply, IgnoresExtraPropertiesAndElements) {
  const std::string text =
      "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float nx\n"
      "property float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
      "1 9 2 3\n4 9 5 6\n3 0 1 1\n";
  const PointCloud c = parse_ply(text);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_FALSE(c.has_colors());
  EXPECT_EQ(c.points[1][0], 4.0);
  EXPECT_EQ(c.points[1][2], 6.0);
}

TEST(Ply, MalformedInputsRaiseParseError) {
  EXPECT_THROW(parse_ply("not a ply"), ParseError);
  EXPECT_THROW(parse_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n"),
               ParseError);
  EXPECT_THROW(parse_ply("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
                         "end_header\n1 2 3\n"),
               ParseError);
  const std::string bin = encode_ply(small_cloud(), PlyFormat::kBinary);
  EXPECT_THROW(parse_ply(bin.substr(0, bin.size() - 5)), ParseError);
}

// ---------------------------------------------------------------- voxelize

TEST(Voxelize, OneAnchorPerOccupiedCell) {
  const AnchorSet s = voxelize(small_cloud(), 0.1, 10, 0);
  // the first two points share cell (0, 0, 0)
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.k, 10u);
  EXPECT_EQ(s.features.shape(), (ad::Shape{3, kFeatureDim}));
  EXPECT_EQ(s.offsets.shape(), (ad::Shape{3, 10, 3}));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Anchor a = s.anchor(i);
    for (int c = 0; c < 3; ++c) {
      const double cell = std::floor(a.position[c] / 0.1);
      EXPECT_NEAR(a.position[c], (cell + 0.5) * 0.1, 1e-12);
      EXPECT_NEAR(a.scaling[c], 0.1, 1e-12);
    }
    for (double f : a.feature) {
      EXPECT_GE(f, -0.1);
      EXPECT_LT(f, 0.1);
    }
    for (const auto& o : a.offsets)
      for (double v : o) {
        EXPECT_GE(v, -0.5);
        EXPECT_LT(v, 0.5);
      }
  }
}

TEST(Voxelize, LexicographicOrderAndPointOrderIndependent) {
  PointCloud a = small_cloud(), b = small_cloud();
  std::reverse(b.points.begin(), b.points.end());
  const AnchorSet sa = voxelize(a, 0.1, 4, 7), sb = voxelize(b, 0.1, 4, 7);
  EXPECT_EQ(testutil::values(sa.positions), testutil::values(sb.positions));
  EXPECT_EQ(testutil::values(sa.features), testutil::values(sb.features));
  EXPECT_EQ(testutil::values(sa.offsets), testutil::values(sb.offsets));
  for (std::size_t i = 1; i < sa.size(); ++i) {
    EXPECT_LT(voxel_of(sa.anchor(i - 1).position, 0.1), voxel_of(sa.anchor(i).position, 0.1));
  }
  EXPECT_NE(testutil::values(voxelize(a, 0.1, 4, 8).features), testutil::values(sa.features));
}

TEST(Voxelize, RejectsBadArguments) {
  EXPECT_THROW(voxelize(PointCloud{}, 0.1, 4, 0), ContractError);
  EXPECT_THROW(voxelize(small_cloud(), 0.0, 4, 0), ContractError);
  EXPECT_THROW(voxelize(small_cloud(), 0.1, 0, 0), ContractError);
}

TEST(Voxelize, NegativeCoordinatesFloor) {
  EXPECT_EQ(voxel_of({-0.01, 0.0, 0.19}, 0.1), (VoxelCell{-1, 0, 1}));
}

// ---------------------------------------------------------------- visibility

TEST(Visibility, FrustumAndDepthRange) {
  std::vector<Anchor> anchors;
  for (const std::array<double, 3> p : {std::array<double, 3>{0, 0, 0}, {0, 0, -4}, {50, 0, 0}, {0.2, -0.3, 8.0}}) {
    Anchor a = initial_anchor({0, 0, 0}, 0.1, 2, 0);
    a.position = p;
    anchors.push_back(a);
  }
  const AnchorSet set = make_anchor_set(anchors, 2, 0.1);
  const Camera cam = front_camera();
  const ViewContext v = visible_anchors(set, cam);
  // behind the camera, far outside the image and beyond `far` are all dropped
  ASSERT_EQ(v.indices, (std::vector<std::size_t>{0}));
  EXPECT_NEAR(v.distances[0], 3.0, 1e-12);
  EXPECT_NEAR(v.directions[0][2], 1.0, 1e-12);
}

TEST(Visibility, DirectionsAreUnit) {
  const AnchorSet set = voxelize(small_cloud(), 0.1, 2, 0);
  const ViewContext v = visible_anchors(set, front_camera());
  ASSERT_EQ(v.size(), set.size());
  for (const auto& d : v.directions) EXPECT_NEAR(d[0] * d[0] + d[1] * d[1] + d[2] * d[2], 1.0, 1e-12);
}

// ---------------------------------------------------------------- cameras

TEST(CameraJson, RoundTrip) {
  Camera c = front_camera();
  c.image = "images/train_000.ppm";
  const auto back = cameras_from_string(cameras_to_string({c, c}));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].image, c.image);
  EXPECT_EQ(back[0].width, 32u);
  EXPECT_DOUBLE_EQ(back[0].fx, c.fx);
  EXPECT_TRUE(back[0].rotation.isApprox(c.rotation, 1e-15));
  EXPECT_TRUE(back[0].translation.isApprox(c.translation, 1e-15));
}

TEST(CameraJson, RejectsMalformedEntries) {
  EXPECT_THROW(cameras_from_string("[{"), ParseError);
  EXPECT_THROW(cameras_from_string("{}"), Error);
  auto j = camera_to_json(front_camera());
  j.erase("near");
  EXPECT_THROW(camera_from_json(j), Error);
  j = camera_to_json(front_camera());
  j["extra"] = 1;
  EXPECT_THROW(camera_from_json(j), Error);
  j = camera_to_json(front_camera());
  j["rotation"] = std::vector<double>{2, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_THROW(camera_from_json(j), ContractError);
}

TEST(Camera, CenterAndValidation) {
  const Camera c = front_camera();
  EXPECT_TRUE(c.center().isApprox(Eigen::Vector3d(0, 0, -3), 1e-12));
  EXPECT_NO_THROW(c.validate());
  Camera bad = c;
  bad.near = 20;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = c;
  bad.rotation(0, 0) = -bad.rotation(0, 0);
  EXPECT_THROW(bad.validate(), ContractError);
}

// ---------------------------------------------------------------- config

TEST(Config, ParseOverridesAndComments) {
  const TrainConfig c = parse_config("voxel_size = 0.05  # fine grid\nk = 6\nuse_ddfe = false\nbackground = 1 1 1\n");
  EXPECT_EQ(c.voxel_size, 0.05);
  EXPECT_EQ(c.k, 6u);
  EXPECT_FALSE(c.use_ddfe);
  EXPECT_EQ(c.background[2], 1.0);
  EXPECT_EQ(c.total_iterations, TrainConfig{}.total_iterations);
}

TEST(Config, RejectsUnknownRepeatedAndInvalid) {
  EXPECT_THROW(parse_config("voxel_size = 0.1\nvoxel_sise = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("voxel_size = 0.1\nvoxel_size = 0.2\n"), ConfigError);
  EXPECT_THROW(parse_config("voxel_size = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("k = 10\n"), ConfigError);  // voxel_size is required
  EXPECT_THROW(parse_config("voxel_size = 0.1\nlambda_ssim = -1\n"), ConfigError);
}

TEST(Config, TextRoundTripAndHash) {
  const TrainConfig a = parse_config("voxel_size = 0.1\nseed = 3\n");
  const TrainConfig b = parse_config(a.to_text());
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), parse_config("voxel_size = 0.1\nseed = 4\n").hash());
}

TEST(Config, SampleFileLoads) {
  const TrainConfig c = load_config(std::filesystem::path(AHGS_SOURCE_DIR) / "configs" / "default.cfg");
  EXPECT_EQ(c.total_iterations, 2000u);
  EXPECT_EQ(c.k, 10u);
}

// ---------------------------------------------------------------- checkpoint

namespace {

SceneModel small_model() {
  const TrainConfig cfg = parse_config("voxel_size = 0.1\nk = 3\nseed = 11\n");
  SceneModel m;
  m.config = cfg.model();
  m.anchors = voxelize(small_cloud(), cfg.voxel_size, cfg.k, cfg.seed);
  m.heads = MlpHeads::make(m.config, cfg.seed);
  m.bounds = SceneBounds::of(m.anchors);
  m.raster = cfg.raster();
  m.opacity_threshold = cfg.opacity_threshold;
  return m;
}

}  // namespace

TEST(Checkpoint, EncodeDecodeIsLossless) {
  const Checkpoint ck{42, parse_config("voxel_size = 0.1\n").hash(), small_model()};
  const std::string bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.iteration, 42u);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  EXPECT_EQ(testutil::values(back.model.anchors.positions), testutil::values(ck.model.anchors.positions));
  EXPECT_EQ(testutil::values(back.model.anchors.offsets), testutil::values(ck.model.anchors.offsets));
  EXPECT_EQ(testutil::values(back.model.heads.color.w1), testutil::values(ck.model.heads.color.w1));
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const std::string bytes = encode_checkpoint({1, {}, small_model()});
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), LoadError);
  bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad), LoadError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 8)), LoadError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), LoadError);
  EXPECT_THROW(decode_checkpoint(""), LoadError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "ahgs_test_scene_ckpt";
  std::filesystem::create_directories(dir);
  const Checkpoint ck{7, {}, small_model()};
  save_checkpoint(dir / "a.ahgs", ck);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(dir / "a.ahgs")), encode_checkpoint(ck));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.ahgs.tmp"));
  EXPECT_THROW(load_checkpoint(dir / "missing.ahgs"), LoadError);
  std::filesystem::remove_all(dir);
}
