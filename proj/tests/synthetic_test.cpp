#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include "csnerf/synthetic.hpp"
#include "csnerf/synthetic_dataset.hpp"

using namespace csnerf;

namespace {

synth::Scene bare_scene() {
  synth::SceneSpec s;
  s.trees = false;
  return synth::Scene(s);
}

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Monotone-chain convex hull, counter-clockwise.
std::vector<Vec2> hull(std::vector<Vec2> p) {
  std::sort(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  std::vector<Vec2> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i - 1]) <= 0) --k;
    h[k++] = p[i - 1];
  }
  h.resize(k - 1);
  return h;
}

bool inside_convex(const std::vector<Vec2>& h, const Vec2& q) {
  for (std::size_t i = 0; i < h.size(); ++i)
    if (cross(h[i], h[(i + 1) % h.size()], q) < 0) return false;
  return true;
}

}  // namespace

TEST(SceneOracle, GroundRayGetsCheckerColorAndPlaneDepth) {
  const auto scene = bare_scene();
  const auto h = scene.intersect({Vec3(1, 2, 1.5), -Vec3::UnitZ(), 0, synth::kInf});
  EXPECT_NEAR(h.t, 1.5, 1e-12);
  EXPECT_EQ(h.label, Label::kRoad);
  EXPECT_LT((h.color - Vec3::Constant(0.33)).norm(), 1e-12);
  const auto off = scene.intersect({Vec3(5, 2, 1.5), -Vec3::UnitZ(), 0, synth::kInf});
  EXPECT_LT((off.color - Vec3::Constant(0.30)).norm(), 1e-12);
}

TEST(SceneOracle, BoxFaceRayGetsFaceColorAndDepth) {
  const auto scene = bare_scene();
  const auto h = scene.intersect({Vec3(0, 0, 1), Vec3::UnitX(), 0, synth::kInf});
  EXPECT_NEAR(h.t, 36.0, 1e-12);
  EXPECT_EQ(h.label, Label::kBuilding);
  EXPECT_LT((h.color - 0.85 * Vec3(0.6, 0.5, 0.45)).norm(), 1e-12);
  // Facade band darkens the same face lower down.
  const auto band = scene.intersect({Vec3(0, 0, 0.5), Vec3::UnitX(), 0, synth::kInf});
  EXPECT_LT((band.color - 0.6 * 0.85 * Vec3(0.6, 0.5, 0.45)).norm(), 1e-12);
}

TEST(SceneOracle, SkyRayIsInfinite) {
  const auto scene = bare_scene();
  const auto h = scene.intersect({Vec3(0, 0, 1.5), Vec3(0.1, 0.0, 1.0).normalized(), 0, synth::kInf});
  EXPECT_TRUE(std::isinf(h.t));
  EXPECT_EQ(h.label, Label::kSky);
  EXPECT_EQ(h.color, scene.spec().sky);
}

TEST(SceneOracle, SlabIntersectionMatchesBruteForceMarch) {
  const synth::Box b{Vec3(2, -1, 0), Vec3(4, 1, 2), Vec3::Constant(0.5), Label::kBuilding, false};
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  int hits = 0;
  for (int i = 0; i < 300; ++i) {
    const Ray r{Vec3(0, 0, 1), Vec3(1.0, 0.5 * n(rng), 0.5 * n(rng)).normalized(), 0, 20};
    double march = synth::kInf;
    for (double t = 0; t < 20; t += 1e-4)
      if (b.contains(r.at(t))) {
        march = t;
        break;
      }
    const auto h = synth::intersect_box(r, b);
    ASSERT_EQ(h.has_value(), !std::isinf(march)) << i;
    if (h) {
      EXPECT_NEAR(h->first, march, 2e-4);
      ++hits;
    }
  }
  EXPECT_GT(hits, 50);
}

TEST(RenderOracle, MoverMaskMatchesProjectedHull) {
  const auto scene = bare_scene();
  const CameraModel cam = synth::make_camera(0, {}, 80, 60, 50.0);
  const Pose vehicle = synth::vehicle_pose_at({-20.0, -2.0}, 0.0);
  const Pose pose = camera_pose(vehicle, cam.extrinsics);
  for (double ahead : {8.0, 12.0, 20.0}) {
    for (double side : {-2.5, 0.0, 2.0}) {
      const auto box = synth::Scene::vehicle_box(Vec3(-20.0 + ahead, -2.0 + side, 0.0), 0.0, Vec3(0.8, 0.1, 0.1));
      const auto view = synth::render_oracle(scene, pose, cam.intrinsics, {box});
      std::size_t masked = 0;
      for (auto l : view.mask.labels) masked += l == label_id(Label::kVehicle) ? 1 : 0;
      std::vector<Vec2> pts;
      for (int c = 0; c < 8; ++c) {
        const Vec3 pv = vehicle.to_body(box.corner(c));
        const Projection p = project(cam.intrinsics, cam.extrinsics, pv);
        pts.emplace_back(p.u, p.v);
      }
      const auto h = hull(pts);
      std::size_t oracle = 0;
      for (int v = 0; v < 60; ++v)
        for (int u = 0; u < 80; ++u) oracle += inside_convex(h, Vec2(u, v)) ? 1 : 0;
      ASSERT_GT(oracle, 20u);
      EXPECT_NEAR(static_cast<double>(masked), static_cast<double>(oracle), 0.01 * oracle) << ahead << " " << side;
    }
  }
}

TEST(MakeTrips, UntintedImagesEqualOracleRenders) {
  const synth::Scene scene;
  synth::TripSpec ts;
  ts.n_trips = 2;
  ts.images_per_trip = 3;
  const auto set = synth::make_trips(scene, ts);
  ASSERT_EQ(set.images.size(), 2u * 3u * 2u);
  for (const auto& img : set.images) {
    const auto view = synth::render_oracle(scene, img.world_camera_pose(), img.camera->intrinsics,
                                           set.movers.at(img.trip));
    EXPECT_EQ(img.pixels.data, view.color.data) << img.id;
    EXPECT_EQ(img.mask.labels, view.mask.labels) << img.id;
  }
}

TEST(MakeTrips, TintIsPerSequenceAndMultiplicative) {
  const synth::Scene scene;
  synth::TripSpec ts;
  ts.n_trips = 3;
  ts.images_per_trip = 2;
  ts.tint_per_sequence = true;
  const auto set = synth::make_trips(scene, ts);
  EXPECT_EQ(set.tints.size(), 6u);
  std::set<std::vector<double>> distinct;
  for (const auto& [k, t] : set.tints) distinct.insert({t.x(), t.y(), t.z()});
  EXPECT_EQ(distinct.size(), 6u);
  for (const auto& img : set.images) {
    const Vec3 tint = set.tints.at(img.sequence_key());
    const auto plain = synth::render_oracle(scene, img.world_camera_pose(), img.camera->intrinsics,
                                            set.movers.at(img.trip));
    for (std::size_t i = 0; i < img.pixels.pixel_count(); ++i)
      for (int c = 0; c < 3; ++c)
        EXPECT_NEAR(img.pixels.data[3 * i + c], std::min(1.0, plain.color.data[3 * i + c] * tint(c)), 1e-12);
  }
}

TEST(MakeTrips, ZeroTripsIsEmpty) {
  synth::TripSpec ts;
  ts.n_trips = 0;
  const auto set = synth::make_trips(synth::Scene(), ts);
  EXPECT_TRUE(set.images.empty());
  EXPECT_TRUE(set.trajectories.empty());
}

TEST(MakeTrips, DeterministicAndPriorNoiseBounded) {
  synth::TripSpec ts;
  ts.n_trips = 3;
  ts.images_per_trip = 4;
  const auto a = synth::make_trips(synth::Scene(), ts);
  const auto b = synth::make_trips(synth::Scene(), ts);
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].pixels.data, b.images[i].pixels.data);
    EXPECT_EQ(a.images[i].prior_pose.translation, b.images[i].prior_pose.translation);
    const auto& img = a.images[i];
    EXPECT_LE((img.prior_pose.translation - img.refined_pose->translation).norm(), 1.5 + 1e-12);
    const Eigen::AngleAxisd d(img.prior_pose.rotation.transpose() * img.refined_pose->rotation);
    EXPECT_LE(std::abs(d.angle()), std::numbers::pi / 180.0 + 1e-12);
  }
}

TEST(WriteDataset, ManifestLoadsBack) {
  const auto dir = std::filesystem::temp_directory_path() / "csnerf_synth_dataset_test";
  std::filesystem::remove_all(dir);
  synth::DatasetSpec spec;
  spec.trips.n_trips = 2;
  spec.trips.images_per_trip = 3;
  spec.test_frames = 2;
  const auto s = synth::write_dataset(dir, spec);
  EXPECT_EQ(s.train_images, 12u);
  EXPECT_EQ(s.test_images, 4u);
  const auto m = io::read_manifest(s.manifest);
  EXPECT_EQ(io::load_images(m, "train").size(), 12u);
  const auto test = io::load_images(m, "test");
  ASSERT_EQ(test.size(), 4u);
  EXPECT_EQ(test[0].trip, "test000");
  EXPECT_EQ(io::load_trajectories(m).size(), 2u);
  std::filesystem::remove_all(dir);
}
