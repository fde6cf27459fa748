#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "marker_scenes.hpp"

using namespace csnerf;

namespace {

GuidanceTrajectory traj(std::vector<Vec2> pts) {
  GuidanceTrajectory t;
  t.points = std::move(pts);
  return t;
}

}  // namespace

TEST(TrajectoryToMarkers, StraightSegmentIsOneMetreQuad) {
  const auto q = trajectory_to_markers(traj({{0, 0}, {10, 0}}));
  ASSERT_EQ(q.size(), 1u);
  EXPECT_LT((q[0].corners[0] - Vec2(0, 0.5)).norm(), 1e-12);
  EXPECT_LT((q[0].corners[1] - Vec2(10, 0.5)).norm(), 1e-12);
  EXPECT_LT((q[0].corners[2] - Vec2(10, -0.5)).norm(), 1e-12);
  EXPECT_LT((q[0].corners[3] - Vec2(0, -0.5)).norm(), 1e-12);
  EXPECT_EQ(q[0].alpha, 0.3);
  EXPECT_EQ(q[0].color, Vec3(1, 1, 0));
  EXPECT_EQ(q[0].z, 0.0);
}

TEST(TrajectoryToMarkers, RightAngleMiterOnBisector) {
  const auto q = trajectory_to_markers(traj({{0, 0}, {10, 0}, {10, 10}}));
  ASSERT_EQ(q.size(), 2u);
  // Shared join edge.
  EXPECT_EQ(q[0].corners[1], q[1].corners[0]);
  EXPECT_EQ(q[0].corners[2], q[1].corners[3]);
  // Offset-polyline oracle: left lines y = 0.5 and x = 9.5 meet at (9.5, 0.5);
  // right lines y = -0.5 and x = 10.5 meet at (10.5, -0.5).
  EXPECT_LT((q[0].corners[1] - Vec2(9.5, 0.5)).norm(), 1e-12);
  EXPECT_LT((q[0].corners[2] - Vec2(10.5, -0.5)).norm(), 1e-12);
  // Both on the bisector through the turn point.
  const Vec2 bis = Vec2(-1, 1).normalized();
  for (int c : {1, 2}) {
    const Vec2 d = q[0].corners[c] - Vec2(10, 0);
    EXPECT_NEAR(d.x() * bis.y() - d.y() * bis.x(), 0.0, 1e-12);
  }
}

TEST(TrajectoryToMarkers, RandomPolylinesMatchOffsetLineOracle) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ang(-1.2, 1.2), len(2.0, 8.0), w(0.3, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vec2> pts{{0, 0}};
    double heading = 0.0;
    for (int i = 0; i < 4; ++i) {
      heading += ang(rng);
      pts.push_back(pts.back() + len(rng) * Vec2(std::cos(heading), std::sin(heading)));
    }
    MarkerStyle style;
    style.width = w(rng);
    const auto q = trajectory_to_markers(traj(pts), style);
    for (std::size_t j = 0; j < q.size(); ++j) {
      const Vec2 t = (pts[j + 1] - pts[j]).normalized();
      const Vec2 n(-t.y(), t.x());
      // Every corner lies on the segment's offset line at distance w/2.
      for (int c = 0; c < 4; ++c) {
        const double side = c < 2 ? 1.0 : -1.0;
        EXPECT_NEAR((q[j].corners[c] - pts[j]).dot(n), side * 0.5 * style.width, 1e-9);
      }
    }
  }
}

TEST(TrajectoryToMarkers, Errors) {
  EXPECT_THROW(trajectory_to_markers(traj({{0, 0}, {0, 0}})), DegenerateSegment);
  EXPECT_THROW(trajectory_to_markers(traj({{0, 0}})), InvalidArgument);
  MarkerStyle s;
  s.alpha = 1.0;
  EXPECT_THROW(trajectory_to_markers(traj({{0, 0}, {1, 0}}), s), InvalidArgument);
}

TEST(TrajectoryIo, RoundTrip) {
  std::stringstream ss("# t x y\n0 1 2\n\n1 3 4.5\n");
  const auto t = read_trajectory(ss, "trip000");
  ASSERT_EQ(t.points.size(), 2u);
  EXPECT_EQ(t.points[1], Vec2(3, 4.5));
  std::stringstream out;
  write_trajectory(out, t);
  const auto back = read_trajectory(out);
  EXPECT_EQ(back.points, t.points);
  EXPECT_EQ(back.times, t.times);
  std::stringstream bad("0 1\n");
  EXPECT_THROW(read_trajectory(bad), FormatError);
}

TEST(RayMarkerDepth, StraightDownFromTwoMetres) {
  const auto q = trajectory_to_markers(traj({{0, 0}, {10, 0}}));
  EXPECT_NEAR(*ray_marker_depth({Vec3(5, 0, 2), -Vec3::UnitZ(), 0, 10}, q), 2.0, 1e-12);
  EXPECT_FALSE(ray_marker_depth({Vec3(5, 3, 2), -Vec3::UnitZ(), 0, 10}, q));
  EXPECT_FALSE(ray_marker_depth({Vec3(5, 0, 2), Vec3::UnitZ(), 0, 10}, q));
}

TEST(RayMarkerDepth, StackedQuadsGiveNearest) {
  auto q = trajectory_to_markers(traj({{0, 0}, {10, 0}}));
  MarkerStyle raised;
  raised.ground_z = 0.5;
  const auto upper = trajectory_to_markers(traj({{2, -1}, {8, 1}}), raised);
  q.insert(q.begin(), upper.begin(), upper.end());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> x(0.0, 10.0), y(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Ray r{Vec3(x(rng), y(rng), 3.0), Vec3(0.1 * y(rng), 0.1 * y(rng), -1.0).normalized(), 0, 10};
    std::optional<double> oracle;
    for (const auto& m : q) {
      const double t = (m.z - r.origin.z()) / r.direction.z();
      const Vec3 p = r.at(t);
      if (t > 0 && m.contains(Vec2(p.x(), p.y())) && (!oracle || t < *oracle)) oracle = t;
    }
    const auto got = ray_marker_depth(r, q);
    ASSERT_EQ(got.has_value(), oracle.has_value());
    if (got) EXPECT_EQ(*got, *oracle);
  }
}

TEST(ComposeNavigationPixel, Cases) {
  RenderOutput white;
  white.color = Vec3(1, 1, 1);
  white.opacity = 1.0;
  white.depth = 10.0;
  const Vec3 c = compose_navigation_pixel(white, 4.0, kMarkerYellow, 0.3);
  EXPECT_LT((c - Vec3(1.0, 1.0, 0.3)).norm(), 1e-12);

  RenderOutput near_wall = white;
  near_wall.color = Vec3(0.2, 0.4, 0.6);
  near_wall.depth = 3.0;
  EXPECT_EQ(compose_navigation_pixel(near_wall, 5.0, kMarkerYellow, 0.3), near_wall.color);
  EXPECT_EQ(compose_navigation_pixel(near_wall, std::nullopt, kMarkerYellow, 0.3), near_wall.color);
  // alpha = 1 is the identity.
  EXPECT_EQ(compose_navigation_pixel(white, 4.0, kMarkerYellow, 1.0), white.color);
  // An empty ray has infinite surface depth, so any marker shows.
  RenderOutput sky;
  EXPECT_LT((compose_navigation_pixel(sky, 50.0, kMarkerYellow, 0.3) - 0.7 * kMarkerYellow).norm(), 1e-12);
}

TEST(RenderNavigationView, EmptyMarkersEqualPlainRender) {
  const auto f = csnerf::testing::ground_slab();
  const CameraModel cam = csnerf::testing::nav_camera();
  const Pose pose = camera_pose(Pose::identity(), cam.extrinsics);
  RenderOptions o;
  o.n_samples = 64;
  const auto nav = render_navigation_view(f, pose, cam.intrinsics, {}, AppearanceSelector::zero(), o, 0.3, 40.0);
  const auto plain = render_view(f, pose, cam.intrinsics, AppearanceSelector::zero(), o, 0.3, 40.0);
  EXPECT_EQ(nav.image.data, plain.color.data);
  for (auto t : nav.tinted) EXPECT_EQ(t, 0);
}

TEST(RenderNavigationView, WallHidesMarkersBehindIt) {
  const auto c = csnerf::testing::wall_occlusion_check();
  EXPECT_GT(c.behind_wall, 20u);
  EXPECT_GT(c.tinted, 20u);
  EXPECT_EQ(c.tinted_behind_wall, 0u);
  EXPECT_EQ(c.tinted_closer_than_scene_violations, 0u);
}

TEST(RenderNavigationView, OpenGroundMatchesRasterizedQuads) {
  const auto r = csnerf::testing::open_ground_raster_check();
  EXPECT_GT(r.oracle_pixels, 50u);
  EXPECT_EQ(r.mismatches_off_band, 0u);
  EXPECT_LT(r.mismatches, r.oracle_pixels / 4);
}
