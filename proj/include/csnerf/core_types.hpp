#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "csnerf/errors.hpp"

namespace csnerf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kOrthonormalTol = 1e-9;

inline bool is_rotation(const Mat3& r, double tol = kOrthonormalTol) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

// Pinhole intrinsics. (u, v) address pixel centers: pixel (i, j) covers
// [i - 0.5, i + 0.5) x [j - 0.5, j + 0.5).
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidArgument("image size must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
      throw InvalidArgument("principal point outside the image");
  }

  // Same camera resampled to a different raster size.
  CameraIntrinsics resized(int new_width, int new_height) const {
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    return {fx * sx, fy * sy, (cx + 0.5) * sx - 0.5, (cy + 0.5) * sy - 0.5, new_width, new_height};
  }
};

// Vehicle frame -> camera frame: p_c = rotation * p_v + translation.
struct ExtrinsicCalibration {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  void validate() const {
    if (!is_rotation(rotation)) throw InvalidArgument("extrinsic rotation is not in SO(3)");
  }

  Vec3 to_camera(const Vec3& p_vehicle) const { return rotation * p_vehicle + translation; }

  // Camera center expressed in the vehicle frame.
  Vec3 camera_center() const { return -rotation.transpose() * translation; }
};

enum class Frame : std::uint8_t { kVehicle, kCamera };

// Rigid pose of a body (vehicle or camera) in the world frame:
// p_world = rotation * p_body + translation. The translation is the body
// origin in world coordinates.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Frame frame = Frame::kVehicle;

  static Pose identity(Frame f = Frame::kVehicle) { return {Mat3::Identity(), Vec3::Zero(), f}; }

  Vec3 to_world(const Vec3& p_body) const { return rotation * p_body + translation; }
  Vec3 to_body(const Vec3& p_world) const { return rotation.transpose() * (p_world - translation); }

  // (this * other).to_world(p) == this->to_world(other.to_world(p)).
  Pose compose(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation, other.frame};
  }

  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -rt * translation, frame};
  }

  Vec3 position() const { return translation; }

  void validate() const {
    if (!is_rotation(rotation)) throw InvalidArgument("pose rotation is not in SO(3)");
    if (!translation.allFinite()) throw InvalidArgument("pose translation is not finite");
  }
};

// Geodesic angle between two rotations, in radians.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

// World pose of a camera mounted on a vehicle at `vehicle_pose`.
inline Pose camera_pose(const Pose& vehicle_pose, const ExtrinsicCalibration& extr) {
  const Pose camera_in_vehicle{extr.rotation.transpose(), extr.camera_center(), Frame::kCamera};
  Pose out = vehicle_pose.compose(camera_in_vehicle);
  out.frame = Frame::kCamera;
  return out;
}

// ---------------------------------------------------------------------------
// Semantics

enum class Label : std::uint8_t {
  kRoad = 0,
  kLane = 1,
  kCrosswalk = 2,
  kStopLine = 3,
  kVehicle = 4,
  kPedestrian = 5,
  kBicycle = 6,
  kBuilding = 7,
  kTree = 8,
  kSky = 9,
  kOther = 10,
};

inline constexpr std::uint8_t label_id(Label l) { return static_cast<std::uint8_t>(l); }

struct LabelInfo {
  std::uint8_t id = 0;
  std::string name;
  bool dynamic = false;
  bool ground = false;
};

class LabelTable {
 public:
  LabelTable() = default;
  explicit LabelTable(std::vector<LabelInfo> entries) : entries_(std::move(entries)) {}

  static const LabelTable& standard() {
    static const LabelTable table({
        {label_id(Label::kRoad), "road", false, true},
        {label_id(Label::kLane), "lane", false, true},
        {label_id(Label::kCrosswalk), "crosswalk", false, true},
        {label_id(Label::kStopLine), "stop_line", false, true},
        {label_id(Label::kVehicle), "vehicle", true, false},
        {label_id(Label::kPedestrian), "pedestrian", true, false},
        {label_id(Label::kBicycle), "bicycle", true, false},
        {label_id(Label::kBuilding), "building", false, false},
        {label_id(Label::kTree), "tree", false, false},
        {label_id(Label::kSky), "sky", false, false},
        {label_id(Label::kOther), "other", false, false},
    });
    return table;
  }

  const LabelInfo* find(std::uint8_t id) const {
    for (const auto& e : entries_)
      if (e.id == id) return &e;
    return nullptr;
  }

  const LabelInfo& at(std::uint8_t id) const {
    const LabelInfo* e = find(id);
    if (!e) throw UnknownLabel("label id " + std::to_string(id));
    return *e;
  }

  bool contains(std::uint8_t id) const { return find(id) != nullptr; }
  bool is_dynamic(std::uint8_t id) const { return at(id).dynamic; }
  bool is_ground(std::uint8_t id) const { return at(id).ground; }
  const std::vector<LabelInfo>& entries() const { return entries_; }

 private:
  std::vector<LabelInfo> entries_;
};

struct SemanticMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;  // row-major, v * width + u
  LabelTable table = LabelTable::standard();

  SemanticMask() = default;
  SemanticMask(int w, int h, Label fill = Label::kOther)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * h, label_id(fill)) {}

  std::uint8_t at(int u, int v) const { return labels[static_cast<std::size_t>(v) * width + u]; }
  std::uint8_t& at(int u, int v) { return labels[static_cast<std::size_t>(v) * width + u]; }

  bool is_dynamic(int u, int v) const { return table.is_dynamic(at(u, v)); }

  double dynamic_fraction() const {
    if (labels.empty()) return 0.0;
    std::size_t n = 0;
    for (auto id : labels) n += table.is_dynamic(id) ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(labels.size());
  }

  void validate() const {
    if (labels.size() != static_cast<std::size_t>(width) * height)
      throw InvalidArgument("mask size does not match its dimensions");
    for (auto id : labels)
      if (!table.contains(id)) throw UnknownLabel("mask pixel label " + std::to_string(id));
  }
};

// Linear RGB raster, channels interleaved, values in [0, 1].
struct ImageRGB {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ImageRGB() = default;
  ImageRGB(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t index(int u, int v) const { return (static_cast<std::size_t>(v) * width + u) * 3; }

  Vec3 pixel(int u, int v) const {
    const auto i = index(u, v);
    return {data[i], data[i + 1], data[i + 2]};
  }

  void set_pixel(int u, int v, const Vec3& c) {
    const auto i = index(u, v);
    data[i] = c.x();
    data[i + 1] = c.y();
    data[i + 2] = c.z();
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

struct CameraModel {
  int id = 0;
  CameraIntrinsics intrinsics;
  ExtrinsicCalibration extrinsics;
};

// Images of one camera on one trip form a sequence; all of them share one
// appearance embedding.
struct AppearanceKey {
  std::string trip;
  int camera = 0;

  friend bool operator==(const AppearanceKey&, const AppearanceKey&) = default;
  friend auto operator<=>(const AppearanceKey& a, const AppearanceKey& b) {
    return std::tie(a.trip, a.camera) <=> std::tie(b.trip, b.camera);
  }
};

struct ImageRecord {
  std::string id;
  std::string trip;
  int camera_id = 0;
  double timestamp = 0.0;
  ImageRGB pixels;
  SemanticMask mask;
  Pose prior_pose;                  // vehicle pose, meter-level
  std::optional<Pose> refined_pose;  // vehicle pose, centimeter-level
  std::shared_ptr<const CameraModel> camera;

  AppearanceKey sequence_key() const { return {trip, camera_id}; }

  const Pose& best_pose() const { return refined_pose ? *refined_pose : prior_pose; }

  Pose world_camera_pose() const {
    if (!camera) throw InvalidArgument("image " + id + " has no camera model");
    return camera_pose(best_pose(), camera->extrinsics);
  }

  // Camera optical axis in world coordinates.
  Vec3 view_direction() const { return world_camera_pose().rotation.col(2); }

  void validate() const {
    if (!std::isfinite(timestamp)) throw InvalidArgument("image " + id + ": non-finite timestamp");
    for (double x : pixels.data)
      if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("image " + id + ": pixel outside [0,1]");
    if (mask.width != pixels.width || mask.height != pixels.height)
      throw InvalidArgument("image " + id + ": mask size differs from image size");
    mask.validate();
  }
};

// ---------------------------------------------------------------------------
// Rays and projection

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double near = 0.0;
  double far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

inline constexpr double kDefaultNear = 0.05;
inline constexpr double kDefaultFar = 100.0;

inline Ray pixel_to_ray(const Pose& camera, const CameraIntrinsics& k, double u, double v,
                        double near = kDefaultNear, double far = kDefaultFar) {
  const Vec3 dir_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
  return {camera.translation, (camera.rotation * dir_cam).normalized(), near, far};
}

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double lambda = 0.0;  // scale factor: 1 / camera-frame depth
};

inline constexpr double kMinCameraDepth = 1e-9;

// [u v 1]^T = lambda * K [R_c | t_c] [x_v y_v z_v 1]^T
inline Projection project(const CameraIntrinsics& k, const ExtrinsicCalibration& extr,
                          const Vec3& p_vehicle) {
  const Vec3 pc = extr.to_camera(p_vehicle);
  if (pc.z() <= kMinCameraDepth) throw BehindCamera("camera-frame depth " + std::to_string(pc.z()));
  const double lambda = 1.0 / pc.z();
  return {k.fx * pc.x() * lambda + k.cx, k.fy * pc.y() * lambda + k.cy, lambda};
}

// Projection of a world point through a camera pose.
inline Projection project_world(const CameraIntrinsics& k, const Pose& camera, const Vec3& p_world) {
  const Pose inv = camera.inverse();
  return project(k, ExtrinsicCalibration{inv.rotation, inv.translation}, p_world);
}

// Rotation from yaw (about +z), then pitch about the resulting +y.
inline Mat3 yaw_pitch_roll(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .toRotationMatrix();
}

// Camera-frame axes (x right, y down, z forward) expressed in a frame whose
// x is forward, y left, z up, after pitching the optical axis down by
// `pitch_down` radians and yawing by `yaw`.
inline Mat3 forward_camera_rotation(double yaw, double pitch_down) {
  Mat3 base;
  // columns: camera x, y, z in body coordinates
  base.col(0) = Vec3(0, -1, 0);
  base.col(1) = Vec3(0, 0, -1);
  base.col(2) = Vec3(1, 0, 0);
  return yaw_pitch_roll(yaw, pitch_down, 0.0) * base;
}

}  // namespace csnerf
