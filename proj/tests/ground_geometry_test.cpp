#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <sstream>

#include "csnerf/ground_geometry.hpp"
#include "csnerf/synthetic.hpp"

using namespace csnerf;

namespace {

CameraModel mounted(double height, double pitch_down, double yaw = 0.0) {
  return synth::make_camera(0, {0.0, height, yaw, pitch_down}, 64, 48, 40.0);
}

}  // namespace

TEST(InverseProjectGround, StraightDown) {
  const CameraModel cam = mounted(1.5, std::numbers::pi / 2);
  const auto& k = cam.intrinsics;
  const auto hit = inverse_project_ground(k, cam.extrinsics, Pose::identity(), k.cx, k.cy);
  ASSERT_TRUE(hit);
  EXPECT_NEAR(hit->depth, 1.5, 1e-12);
  EXPECT_NEAR(hit->point_vehicle.norm(), 0.0, 1e-12);
}

TEST(InverseProjectGround, PitchedCameraHeightOverSine) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> h(0.3, 5.0), th(0.02, std::numbers::pi / 2), yaw(-std::numbers::pi, std::numbers::pi);
  for (int i = 0; i < 1000; ++i) {
    const double height = h(rng), theta = th(rng);
    const CameraModel cam = mounted(height, theta, yaw(rng));
    const auto hit = inverse_project_ground(cam.intrinsics, cam.extrinsics, Pose::identity(), cam.intrinsics.cx,
                                            cam.intrinsics.cy, 1e9);
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->depth, height / std::sin(theta), 1e-9 * std::max(1.0, hit->depth));
  }
}

TEST(InverseProjectGround, AboveHorizonHasNoIntersection) {
  const CameraModel cam = mounted(1.5, 0.1);
  EXPECT_FALSE(inverse_project_ground(cam.intrinsics, cam.extrinsics, Pose::identity(), cam.intrinsics.cx, 0.0));
  const CameraModel level = mounted(1.5, 0.0);
  EXPECT_FALSE(inverse_project_ground(level.intrinsics, level.extrinsics, Pose::identity(), level.intrinsics.cx,
                                      level.intrinsics.cy));
}

TEST(InverseProjectGround, WorldPointLiesOnPixelRay) {
  const CameraModel cam = mounted(1.7, 0.3);
  const Pose vehicle{yaw_pitch_roll(1.1, 0.0, 0.0), Vec3(5, -3, 0)};
  const auto hit = inverse_project_ground(cam.intrinsics, cam.extrinsics, vehicle, 20.0, 40.0);
  ASSERT_TRUE(hit);
  const Ray ray = pixel_to_ray(camera_pose(vehicle, cam.extrinsics), cam.intrinsics, 20.0, 40.0);
  EXPECT_LT((ray.at(hit->depth) - hit->point_world).norm(), 1e-9);
  EXPECT_NEAR(hit->point_world.z(), 0.0, 1e-12);
}

TEST(GroundDepthMap, AllSkyImageIsInvalid) {
  ImageRecord img;
  img.id = "sky";
  img.camera = std::make_shared<const CameraModel>(mounted(1.5, 0.2));
  img.mask = SemanticMask(64, 48, Label::kSky);
  img.pixels = ImageRGB(64, 48);
  const auto map = build_ground_depth_map(img);
  EXPECT_EQ(map.count(DepthSource::kInvalid), map.depth.size());
}

TEST(GroundDepthMap, MatchesSyntheticZBuffer) {
  const synth::Scene scene;
  synth::TripSpec ts;
  ts.n_trips = 2;
  ts.images_per_trip = 3;
  const auto set = synth::make_trips(scene, ts);
  std::size_t ground = 0;
  for (const auto& img : set.images) {
    const auto map = build_ground_depth_map(img, 1e9);
    const auto& z = set.depth.at(img.id);
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (!img.mask.table.is_ground(img.mask.labels[i])) continue;
      ASSERT_NE(map.source[i], DepthSource::kInvalid);
      EXPECT_NEAR(map.depth[i], z[i], 1e-6 * z[i]);
      ++ground;
    }
  }
  EXPECT_GT(ground, 1000u);
}

TEST(CompleteOcclusions, NoDynamicPixelsLeavesMapUnchanged) {
  ImageRecord img;
  img.id = "a";
  img.camera = std::make_shared<const CameraModel>(mounted(1.5, 0.2));
  img.mask = SemanticMask(64, 48, Label::kRoad);
  for (int u = 0; u < 64; ++u)
    for (int v = 0; v < 10; ++v) img.mask.at(u, v) = label_id(Label::kBuilding);
  img.pixels = ImageRGB(64, 48);
  const auto map = build_ground_depth_map(img);
  const auto filled = complete_occlusions(map, img.mask, *img.camera);
  EXPECT_EQ(filled.depth, map.depth);
  EXPECT_EQ(filled.source, map.source);
}

TEST(CompleteOcclusions, CarPatchGetsPlaneDepthAboveHorizonStaysInvalid) {
  const CameraModel cam = mounted(1.5, 0.2);
  SemanticMask mask(64, 48, Label::kRoad);
  for (int v = 0; v < 48; ++v)
    for (int u = 20; u < 40; ++u) mask.at(u, v) = label_id(Label::kVehicle);
  ImageRecord img;
  img.id = "a";
  img.camera = std::make_shared<const CameraModel>(cam);
  img.mask = mask;
  img.pixels = ImageRGB(64, 48);
  const auto map = build_ground_depth_map(img, 1e9);
  const auto filled = complete_occlusions(map, mask, cam, 1e9);
  std::size_t patch = 0;
  for (int v = 0; v < 48; ++v)
    for (int u = 20; u < 40; ++u) {
      const Vec3 d = cam.extrinsics.rotation.transpose() *
                     Vec3((u - cam.intrinsics.cx) / cam.intrinsics.fx, (v - cam.intrinsics.cy) / cam.intrinsics.fy, 1.0);
      const Vec3 c = cam.extrinsics.camera_center();
      const Vec3 dir = d.normalized();
      if (dir.z() >= 0.0) {
        EXPECT_FALSE(filled.valid(u, v));
        continue;
      }
      const double t = -c.z() / dir.z();
      ASSERT_EQ(filled.source[filled.index(u, v)], DepthSource::kOcclusionFilled);
      EXPECT_NEAR(filled.at(u, v), t, 1e-9 * t);
      ++patch;
    }
  EXPECT_GT(patch, 100u);
  EXPECT_EQ(filled.count(DepthSource::kObservedGround), map.count(DepthSource::kObservedGround));
}

TEST(GroundDepthIo, RoundTripAtFloatPrecision) {
  GroundDepthMap m(5, 4);
  for (std::size_t i = 0; i < m.depth.size(); ++i) {
    m.depth[i] = 1.0 + 0.37 * static_cast<double>(i);
    m.source[i] = static_cast<DepthSource>(i % 3);
  }
  std::stringstream d, v;
  write_ground_depth(d, v, m);
  const auto r = read_ground_depth(d, v);
  EXPECT_EQ(r.width, 5);
  EXPECT_EQ(r.height, 4);
  EXPECT_EQ(r.source, m.source);
  for (std::size_t i = 0; i < m.depth.size(); ++i)
    if (m.source[i] != DepthSource::kInvalid) EXPECT_FLOAT_EQ(static_cast<float>(r.depth[i]), static_cast<float>(m.depth[i]));
}

TEST(GroundDepthIo, BadMagicIsFormatError) {
  std::stringstream d("XXXX"), v("CSGV");
  EXPECT_THROW(read_ground_depth(d, v), FormatError);
}
