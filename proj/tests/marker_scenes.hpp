#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "csnerf/marker_nav.hpp"
#include "csnerf/synthetic.hpp"

namespace csnerf::testing {

// Camera 1.6 m above the origin looking down +x, slightly pitched down.
inline CameraModel nav_camera(int scale = 1) {
  return synth::make_camera(0, {0.0, 1.6, 0.0, 0.15}, 64 * scale, 48 * scale, 40.0 * scale);
}

inline synth::SolidField ground_slab() {
  synth::SolidField f;
  f.add({Vec3(-200, -200, -3), Vec3(200, 200, 0), Vec3(0.35, 0.35, 0.35), Label::kRoad, false}, 200.0);
  return f;
}

inline std::vector<MarkerPolygon> straight_markers() {
  GuidanceTrajectory t;
  t.points = {{3.0, 0.5}, {12.0, 0.0}, {25.0, -2.0}};
  return trajectory_to_markers(t);
}

inline RenderOptions nav_render_options() {
  RenderOptions o;
  o.n_samples = 512;
  return o;
}

inline constexpr double kNavNear = 0.3;
inline constexpr double kNavFar = 40.0;

struct WallCheck {
  std::size_t behind_wall = 0;          // oracle: marker hidden by the wall
  std::size_t tinted_behind_wall = 0;   // must be zero
  std::size_t tinted_closer_than_scene_violations = 0;  // tinted with scene depth < marker depth
  std::size_t tinted = 0;
};

// A wall standing across the marker path between camera and far markers.
inline WallCheck wall_occlusion_check() {
  synth::SolidField f = ground_slab();
  const synth::Box wall{Vec3(8.0, -4.0, 0.0), Vec3(8.6, 4.0, 1.2), Vec3(0.8, 0.2, 0.2), Label::kBuilding, false};
  f.add(wall, 200.0);
  const CameraModel cam = nav_camera(2);
  const Pose pose = camera_pose(Pose::identity(), cam.extrinsics);
  const auto markers = straight_markers();
  const NavigationFrame nf = render_navigation_view(f, pose, cam.intrinsics, markers, AppearanceSelector::zero(),
                                                    nav_render_options(), kNavNear, kNavFar);
  WallCheck c;
  const auto rays = view_rays(pose, cam.intrinsics, kNavNear, kNavFar);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const auto m = ray_marker_depth(rays[i], markers);
    const auto w = synth::intersect_box(rays[i], wall);
    const bool hidden = m && w && w->first < *m;
    c.behind_wall += hidden ? 1 : 0;
    c.tinted += nf.tinted[i] ? 1 : 0;
    if (nf.tinted[i] && hidden) ++c.tinted_behind_wall;
    if (nf.tinted[i] && nf.scene_depth[i] < nf.marker_depth[i]) ++c.tinted_closer_than_scene_violations;
  }
  return c;
}

struct RasterCheck {
  std::size_t oracle_pixels = 0;
  std::size_t tinted = 0;
  std::size_t mismatches = 0;           // anywhere
  std::size_t mismatches_off_band = 0;  // not within one pixel of an oracle edge
};

// Oracle: project each quad's corners into the image and fill the
// projected polygon by pixel-center inclusion.
inline RasterCheck open_ground_raster_check() {
  const synth::SolidField f = ground_slab();
  const CameraModel cam = nav_camera();
  const Pose pose = camera_pose(Pose::identity(), cam.extrinsics);
  const auto markers = straight_markers();
  const auto& k = cam.intrinsics;
  const NavigationFrame nf = render_navigation_view(f, pose, k, markers, AppearanceSelector::zero(),
                                                    nav_render_options(), kNavNear, kNavFar);
  std::vector<char> oracle(static_cast<std::size_t>(k.width * k.height), 0);
  for (const auto& q : markers) {
    MarkerPolygon img = q;
    for (int c = 0; c < 4; ++c) {
      const Projection p = project(k, cam.extrinsics, Vec3(q.corners[c].x(), q.corners[c].y(), q.z));
      img.corners[c] = Vec2(p.u, p.v);
    }
    for (int v = 0; v < k.height; ++v)
      for (int u = 0; u < k.width; ++u)
        if (img.contains(Vec2(u, v))) oracle[static_cast<std::size_t>(v * k.width + u)] = 1;
  }
  RasterCheck r;
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      const auto i = static_cast<std::size_t>(v * k.width + u);
      r.oracle_pixels += oracle[i];
      r.tinted += nf.tinted[i] ? 1 : 0;
      if ((nf.tinted[i] != 0) == (oracle[i] != 0)) continue;
      ++r.mismatches;
      bool band = false;
      for (int dv = -1; dv <= 1 && !band; ++dv)
        for (int du = -1; du <= 1; ++du) {
          const int uu = u + du, vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= k.width || vv >= k.height) continue;
          if (oracle[static_cast<std::size_t>(vv * k.width + uu)] != oracle[i]) band = true;
        }
      if (!band) ++r.mismatches_off_band;
    }
  return r;
}

}  // namespace csnerf::testing
