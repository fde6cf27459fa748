#pragma once

#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "csnerf/core_types.hpp"
#include "csnerf/volume_renderer.hpp"

namespace csnerf {

struct GuidanceTrajectory {
  std::string trip;
  std::vector<double> times;
  std::vector<Vec2> points;  // world xy, on the ground plane

  void validate() const {
    if (points.size() < 2) throw InvalidArgument("trajectory needs at least two points");
    if (!times.empty() && times.size() != points.size()) throw InvalidArgument("trajectory time/point count differ");
    for (std::size_t i = 1; i < points.size(); ++i)
      if ((points[i] - points[i - 1]).norm() < 1e-9)
        throw DegenerateSegment("trajectory points " + std::to_string(i - 1) + " and " + std::to_string(i) +
                                " coincide");
  }
};

// Rows `t x y`; blank lines and `#` comments are skipped.
inline GuidanceTrajectory read_trajectory(std::istream& is, std::string trip = {}) {
  GuidanceTrajectory traj;
  traj.trip = std::move(trip);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double t, x, y;
    if (!(ls >> t >> x >> y)) throw FormatError("trajectory line " + std::to_string(lineno));
    traj.times.push_back(t);
    traj.points.emplace_back(x, y);
  }
  return traj;
}

inline void write_trajectory(std::ostream& os, const GuidanceTrajectory& traj) {
  for (std::size_t i = 0; i < traj.points.size(); ++i)
    os << (traj.times.empty() ? static_cast<double>(i) : traj.times[i]) << ' ' << traj.points[i].x() << ' '
       << traj.points[i].y() << '\n';
}

inline const Vec3 kMarkerYellow{1.0, 1.0, 0.0};
inline constexpr double kDefaultMarkerAlpha = 0.3;
inline constexpr double kDefaultMarkerWidth = 1.0;
inline constexpr double kMiterLimitFactor = 4.0;

// One planar quad per trajectory segment. Corner order: left start, left
// end, right end, right start (left = counter-clockwise normal).
struct MarkerPolygon {
  std::array<Vec2, 4> corners;
  double z = 0.0;
  Vec3 color = kMarkerYellow;
  double alpha = kDefaultMarkerAlpha;

  bool contains(const Vec2& p) const {
    bool inside = false;
    for (std::size_t i = 0, j = 3; i < 4; j = i++) {
      const Vec2& a = corners[i];
      const Vec2& b = corners[j];
      if ((a.y() > p.y()) != (b.y() > p.y())) {
        const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
        if (p.x() < x) inside = !inside;
      }
    }
    return inside;
  }
};

struct MarkerStyle {
  double width = kDefaultMarkerWidth;
  Vec3 color = kMarkerYellow;
  double alpha = kDefaultMarkerAlpha;
  double ground_z = 0.0;
};

// Offsets the polyline by +-width/2. Interior joins are mitered so that
// consecutive quads share their join edge; a miter longer than
// kMiterLimitFactor * width falls back to a bevel (each quad keeps its own
// square end).
inline std::vector<MarkerPolygon> trajectory_to_markers(const GuidanceTrajectory& traj,
                                                        const MarkerStyle& style = {}) {
  traj.validate();
  if (!(style.width > 0.0)) throw InvalidArgument("marker width must be positive");
  if (!(style.alpha > 0.0 && style.alpha < 1.0)) throw InvalidArgument("marker alpha must be in (0,1)");
  const auto& p = traj.points;
  const std::size_t segs = p.size() - 1;
  const double half = 0.5 * style.width;
  std::vector<Vec2> normal(segs);
  for (std::size_t j = 0; j < segs; ++j) {
    const Vec2 t = (p[j + 1] - p[j]).normalized();
    normal[j] = Vec2(-t.y(), t.x());
  }

  std::vector<MarkerPolygon> quads(segs);
  for (std::size_t j = 0; j < segs; ++j) {
    auto& q = quads[j];
    q.z = style.ground_z;
    q.color = style.color;
    q.alpha = style.alpha;
    q.corners = {p[j] + half * normal[j], p[j + 1] + half * normal[j], p[j + 1] - half * normal[j],
                 p[j] - half * normal[j]};
  }
  for (std::size_t i = 1; i < segs; ++i) {
    const Vec2 sum = normal[i - 1] + normal[i];
    if (sum.norm() < 1e-9) continue;  // full reversal
    const Vec2 m = sum.normalized();
    const double len = half / m.dot(normal[i]);
    if (len > kMiterLimitFactor * style.width) continue;
    const Vec2 left = p[i] + len * m;
    const Vec2 right = p[i] - len * m;
    quads[i - 1].corners[1] = left;
    quads[i - 1].corners[2] = right;
    quads[i].corners[0] = left;
    quads[i].corners[3] = right;
  }
  return quads;
}

struct MarkerHit {
  double depth = 0.0;
  std::size_t index = 0;
};

// Nearest intersection (t > 0) of the ray with any marker quad.
inline std::optional<MarkerHit> ray_marker_hit(const Ray& ray, const std::vector<MarkerPolygon>& markers) {
  std::optional<MarkerHit> best;
  for (std::size_t i = 0; i < markers.size(); ++i) {
    const auto& q = markers[i];
    if (std::abs(ray.direction.z()) < 1e-12) continue;
    const double t = (q.z - ray.origin.z()) / ray.direction.z();
    if (!(t > 0.0)) continue;
    const Vec3 x = ray.at(t);
    if (!q.contains(Vec2(x.x(), x.y()))) continue;
    if (!best || t < best->depth) best = MarkerHit{t, i};
  }
  return best;
}

inline std::optional<double> ray_marker_depth(const Ray& ray, const std::vector<MarkerPolygon>& markers) {
  if (auto hit = ray_marker_hit(ray, markers)) return hit->depth;
  return std::nullopt;
}

// C' = alpha * C + (1 - alpha) * c_m when the marker lies in front of the
// scene surface; the scene color otherwise.
inline Vec3 compose_navigation_pixel(const RenderOutput& scene, std::optional<double> marker_depth,
                                     const Vec3& marker_color, double alpha) {
  if (marker_depth && *marker_depth < scene.surface_depth())
    return alpha * scene.color + (1.0 - alpha) * marker_color;
  return scene.color;
}

struct NavigationFrame {
  ImageRGB image;
  std::vector<char> tinted;
  std::vector<double> scene_depth;   // +inf for empty rays
  std::vector<double> marker_depth;  // +inf where no marker is hit
};

template <QueryableField F>
NavigationFrame render_navigation_view(const F& field, const Pose& camera, const CameraIntrinsics& k,
                                       const std::vector<MarkerPolygon>& markers, const AppearanceSelector& key,
                                       const RenderOptions& opts, double near, double far) {
  const std::vector<Ray> rays = view_rays(camera, k, near, far);
  const std::vector<RenderOutput> px = render_rays(field, rays, key, opts);
  NavigationFrame frame;
  frame.image = ImageRGB(k.width, k.height);
  frame.tinted.assign(rays.size(), 0);
  frame.scene_depth.resize(rays.size());
  frame.marker_depth.assign(rays.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const int u = static_cast<int>(i % k.width);
    const int v = static_cast<int>(i / k.width);
    frame.scene_depth[i] = px[i].surface_depth();
    Vec3 c = px[i].color;
    if (auto hit = ray_marker_hit(rays[i], markers)) {
      frame.marker_depth[i] = hit->depth;
      const auto& q = markers[hit->index];
      c = compose_navigation_pixel(px[i], hit->depth, q.color, q.alpha);
      frame.tinted[i] = hit->depth < frame.scene_depth[i] ? 1 : 0;
    }
    frame.image.set_pixel(u, v, c.cwiseMax(0.0).cwiseMin(1.0));
  }
  return frame;
}

}  // namespace csnerf
