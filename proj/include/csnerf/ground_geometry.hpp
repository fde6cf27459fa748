#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

#include "csnerf/binary_io.hpp"
#include "csnerf/core_types.hpp"

namespace csnerf {

inline constexpr double kMinGroundParameter = 1e-6;
inline constexpr double kDefaultMaxGroundDepth = 200.0;

struct GroundHit {
  double depth = 0.0;  // camera center to ground point, meters
  Vec3 point_vehicle = Vec3::Zero();
  Vec3 point_world = Vec3::Zero();
};

// Back-projects pixel (u, v) onto the vehicle ground plane z_v = 0.
// Returns nullopt when the ray is parallel to the plane, points away from
// it, or meets it beyond `max_depth`.
inline std::optional<GroundHit> inverse_project_ground(const CameraIntrinsics& k,
                                                       const ExtrinsicCalibration& extr,
                                                       const Pose& vehicle_pose, double u, double v,
                                                       double max_depth = kDefaultMaxGroundDepth) {
  const Vec3 center = extr.camera_center();
  const Vec3 dir_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
  const Vec3 dir = (extr.rotation.transpose() * dir_cam).normalized();
  if (std::abs(dir.z()) < 1e-15) return std::nullopt;
  const double t = -center.z() / dir.z();
  if (!(t > kMinGroundParameter) || t > max_depth) return std::nullopt;
  GroundHit hit;
  hit.depth = t;
  hit.point_vehicle = center + t * dir;
  hit.point_vehicle.z() = 0.0;
  hit.point_world = vehicle_pose.to_world(hit.point_vehicle);
  return hit;
}

enum class DepthSource : std::uint8_t { kInvalid = 0, kObservedGround = 1, kOcclusionFilled = 2 };

struct GroundDepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<DepthSource> source;

  GroundDepthMap() = default;
  GroundDepthMap(int w, int h)
      : width(w),
        height(h),
        depth(static_cast<std::size_t>(w) * h, 0.0),
        source(static_cast<std::size_t>(w) * h, DepthSource::kInvalid) {}

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  bool valid(int u, int v) const { return source[index(u, v)] != DepthSource::kInvalid; }
  double at(int u, int v) const { return depth[index(u, v)]; }

  std::size_t count(DepthSource s) const {
    std::size_t n = 0;
    for (auto x : source) n += x == s ? 1 : 0;
    return n;
  }
};

// Depth for every ground-labelled pixel whose ray meets the ground plane.
inline GroundDepthMap build_ground_depth_map(const ImageRecord& image,
                                             double max_depth = kDefaultMaxGroundDepth) {
  if (!image.camera) throw InvalidArgument("image " + image.id + " has no camera model");
  if (image.mask.labels.empty()) throw InvalidArgument("image " + image.id + " has no semantic mask");
  const auto& k = image.camera->intrinsics;
  const auto& extr = image.camera->extrinsics;
  GroundDepthMap map(image.mask.width, image.mask.height);
  for (int v = 0; v < map.height; ++v) {
    for (int u = 0; u < map.width; ++u) {
      if (!image.mask.table.is_ground(image.mask.at(u, v))) continue;
      if (auto hit = inverse_project_ground(k, extr, image.best_pose(), u, v, max_depth)) {
        map.depth[map.index(u, v)] = hit->depth;
        map.source[map.index(u, v)] = DepthSource::kObservedGround;
      }
    }
  }
  return map;
}

// Extends the ground plane underneath dynamic objects: every dynamic pixel
// that is not yet valid and whose ray meets the plane receives the plane
// depth. Existing valid pixels are left untouched.
inline GroundDepthMap complete_occlusions(const GroundDepthMap& map, const SemanticMask& mask,
                                          const CameraModel& camera,
                                          double max_depth = kDefaultMaxGroundDepth) {
  if (mask.width != map.width || mask.height != map.height)
    throw InvalidArgument("mask and depth map sizes differ");
  GroundDepthMap out = map;
  for (int v = 0; v < map.height; ++v) {
    for (int u = 0; u < map.width; ++u) {
      if (map.valid(u, v) || !mask.is_dynamic(u, v)) continue;
      if (auto hit = inverse_project_ground(camera.intrinsics, camera.extrinsics, Pose::identity(), u,
                                            v, max_depth)) {
        out.depth[out.index(u, v)] = hit->depth;
        out.source[out.index(u, v)] = DepthSource::kOcclusionFilled;
      }
    }
  }
  return out;
}

// Depth raster: "CSGD" | u32 width | u32 height | float32 depth[w*h].
// Sidecar: "CSGV" | u32 width | u32 height | u8 source[w*h] (0 invalid,
// 1 observed ground, 2 occlusion filled).
inline void write_ground_depth(std::ostream& depth_os, std::ostream& validity_os,
                               const GroundDepthMap& map) {
  depth_os.write("CSGD", 4);
  binary::put_u32(depth_os, static_cast<std::uint32_t>(map.width));
  binary::put_u32(depth_os, static_cast<std::uint32_t>(map.height));
  for (double d : map.depth) binary::put_f32(depth_os, static_cast<float>(d));
  validity_os.write("CSGV", 4);
  binary::put_u32(validity_os, static_cast<std::uint32_t>(map.width));
  binary::put_u32(validity_os, static_cast<std::uint32_t>(map.height));
  for (auto s : map.source) validity_os.put(static_cast<char>(s));
}

inline GroundDepthMap read_ground_depth(std::istream& depth_is, std::istream& validity_is) {
  char magic[4];
  binary::read_exact(depth_is, magic, 4);
  if (std::string(magic, 4) != "CSGD") throw FormatError("bad depth raster magic");
  const auto w = static_cast<int>(binary::get_u32(depth_is));
  const auto h = static_cast<int>(binary::get_u32(depth_is));
  binary::read_exact(validity_is, magic, 4);
  if (std::string(magic, 4) != "CSGV") throw FormatError("bad validity sidecar magic");
  if (static_cast<int>(binary::get_u32(validity_is)) != w ||
      static_cast<int>(binary::get_u32(validity_is)) != h)
    throw FormatError("depth raster and sidecar sizes differ");
  GroundDepthMap map(w, h);
  for (auto& d : map.depth) d = binary::get_f32(depth_is);
  for (auto& s : map.source) {
    char c;
    binary::read_exact(validity_is, &c, 1);
    if (static_cast<unsigned char>(c) > 2) throw FormatError("bad validity code");
    s = static_cast<DepthSource>(c);
  }
  return map;
}

}  // namespace csnerf
