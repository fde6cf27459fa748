#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "csnerf/core_types.hpp"
#include "csnerf/marker_nav.hpp"
#include "csnerf/radiance_field.hpp"

// Procedural street-intersection scenes with exact ray-cast ground truth.
namespace csnerf::synth {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
  Vec3 color = Vec3::Constant(0.5);
  Label label = Label::kBuilding;
  bool facade = false;  // darker horizontal band every 3 m

  bool contains(const Vec3& p) const { return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all(); }
  Vec3 corner(int k) const {
    return {(k & 1) ? hi.x() : lo.x(), (k & 2) ? hi.y() : lo.y(), (k & 4) ? hi.z() : lo.z()};
  }
};

struct Hit {
  double t = kInf;
  Vec3 color = Vec3::Zero();
  Label label = Label::kSky;
  Vec3 point = Vec3::Zero();
};

// Slab test; returns the entry parameter (or exit if the origin is inside).
inline std::optional<std::pair<double, int>> intersect_box(const Ray& ray, const Box& b) {
  double t0 = -kInf, t1 = kInf;
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin(a), d = ray.direction(a);
    if (std::abs(d) < 1e-15) {
      if (o < b.lo(a) || o > b.hi(a)) return std::nullopt;
      continue;
    }
    double ta = (b.lo(a) - o) / d, tb = (b.hi(a) - o) / d;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = a;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t1 <= 0.0) return std::nullopt;
  if (t0 > 0.0) return std::make_pair(t0, axis);
  return std::make_pair(t1, axis);
}

struct SceneSpec {
  double road_half_width = 6.0;
  double block_inner = 8.0;   // buildings start this far from the road axes
  double block_outer = 26.0;
  double end_wall = 36.0;     // walls closing the four road ends
  bool trees = true;
  bool parked_mover = false;  // a vehicle present in every trip
  Vec3 parked_mover_center{10.0, -3.0, 0.0};
  Vec3 sky{0.55, 0.70, 0.90};
  std::uint64_t seed = 3;
};

class Scene {
 public:
  Scene() = default;
  explicit Scene(SceneSpec spec) : spec_(std::move(spec)) { build(); }

  const SceneSpec& spec() const { return spec_; }
  const std::vector<Box>& boxes() const { return boxes_; }
  const std::vector<Box>& parked() const { return parked_; }

  // Ground albedo and label at world (x, y).
  std::pair<Vec3, Label> ground(double x, double y) const {
    const double rw = spec_.road_half_width;
    const double ax = std::abs(x), ay = std::abs(y);
    const bool on_x_road = ay <= rw, on_y_road = ax <= rw;
    // Crosswalks: stripes across each road arm just outside the junction.
    if (on_x_road && ax > rw + 1.0 && ax < rw + 4.0 && std::fmod(ay + 100.0, 1.2) < 0.6)
      return {Vec3::Constant(0.85), Label::kCrosswalk};
    if (on_y_road && ay > rw + 1.0 && ay < rw + 4.0 && std::fmod(ax + 100.0, 1.2) < 0.6)
      return {Vec3::Constant(0.85), Label::kCrosswalk};
    // Stop lines.
    if (on_x_road && ax > rw + 4.5 && ax < rw + 5.0) return {Vec3::Constant(0.9), Label::kStopLine};
    if (on_y_road && ay > rw + 4.5 && ay < rw + 5.0) return {Vec3::Constant(0.9), Label::kStopLine};
    // Dashed centre lines and solid edge lines.
    if (on_x_road && !on_y_road && ay < 0.12 && std::fmod(ax, 4.0) < 2.0)
      return {Vec3(0.9, 0.8, 0.3), Label::kLane};
    if (on_y_road && !on_x_road && ax < 0.12 && std::fmod(ay, 4.0) < 2.0)
      return {Vec3(0.9, 0.8, 0.3), Label::kLane};
    if (on_x_road && !on_y_road && std::abs(ay - (rw - 0.3)) < 0.1) return {Vec3::Constant(0.8), Label::kLane};
    if (on_y_road && !on_x_road && std::abs(ax - (rw - 0.3)) < 0.1) return {Vec3::Constant(0.8), Label::kLane};
    // Asphalt (roads) and paving (elsewhere) with a faint large checker.
    const bool checker = (static_cast<long>(std::floor(x / 4.0)) + static_cast<long>(std::floor(y / 4.0))) % 2 == 0;
    const double base = (on_x_road || on_y_road) ? 0.30 : 0.45;
    return {Vec3::Constant(base + (checker ? 0.03 : 0.0)), Label::kRoad};
  }

  Vec3 shade(const Box& b, const Vec3& p, int axis) const {
    static const double face_light[3] = {0.85, 0.7, 1.0};
    Vec3 c = b.color * face_light[std::max(axis, 0)];
    if (b.facade && axis != 2 && std::fmod(p.z(), 3.0) < 0.8) c *= 0.6;
    return c;
  }

  // Nearest surface along the ray among the ground plane, static boxes,
  // parked movers and `extra` (per-trip movers).
  Hit intersect(const Ray& ray, const std::vector<Box>& extra = {}) const {
    Hit best;
    best.color = spec_.sky;
    if (ray.direction.z() < -1e-12) {
      const double t = -ray.origin.z() / ray.direction.z();
      if (t > 0.0) {
        const Vec3 p = ray.at(t);
        auto [c, l] = ground(p.x(), p.y());
        best = {t, c, l, Vec3(p.x(), p.y(), 0.0)};
      }
    }
    auto consider = [&](const Box& b) {
      if (auto h = intersect_box(ray, b); h && h->first < best.t) {
        const Vec3 p = ray.at(h->first);
        best = {h->first, shade(b, p, h->second), b.label, p};
      }
    };
    for (const auto& b : boxes_) consider(b);
    for (const auto& b : parked_) consider(b);
    for (const auto& b : extra) consider(b);
    return best;
  }

 private:
  void build() {
    std::mt19937_64 rng(spec_.seed);
    std::uniform_real_distribution<double> height(7.0, 14.0), tone(0.35, 0.85);
    const double a = spec_.block_inner, b = spec_.block_outer;
    for (int sx : {-1, 1}) {
      for (int sy : {-1, 1}) {
        Box box;
        box.lo = Vec3(sx > 0 ? a : -b, sy > 0 ? a : -b, 0.0);
        box.hi = Vec3(sx > 0 ? b : -a, sy > 0 ? b : -a, height(rng));
        box.color = Vec3(tone(rng), tone(rng), tone(rng));
        box.facade = true;
        boxes_.push_back(box);
      }
    }
    const double w = spec_.end_wall, rw = spec_.road_half_width + 3.0;
    const Vec3 wall_color(0.6, 0.5, 0.45);
    boxes_.push_back({Vec3(w, -rw, 0), Vec3(w + 2, rw, 9), wall_color, Label::kBuilding, true});
    boxes_.push_back({Vec3(-w - 2, -rw, 0), Vec3(-w, rw, 9), wall_color * 0.9, Label::kBuilding, true});
    boxes_.push_back({Vec3(-rw, w, 0), Vec3(rw, w + 2, 9), wall_color * 0.8, Label::kBuilding, true});
    boxes_.push_back({Vec3(-rw, -w - 2, 0), Vec3(rw, -w, 9), wall_color * 1.1, Label::kBuilding, true});
    if (spec_.trees) {
      const Vec3 green(0.2, 0.5, 0.2);
      for (int sx : {-1, 1})
        for (int sy : {-1, 1}) {
          const Vec3 c(sx * (a + 10.0), sy * (a - 1.0), 0.0);
          boxes_.push_back({c + Vec3(-0.6, -0.6, 0.0), c + Vec3(0.6, 0.6, 4.0), green, Label::kTree, false});
        }
    }
    if (spec_.parked_mover) parked_.push_back(vehicle_box(spec_.parked_mover_center, 0.0, Vec3(0.7, 0.1, 0.1)));
  }

 public:
  // Axis-aligned car-sized box; heading 0 is along x, anything else along y.
  static Box vehicle_box(const Vec3& center, double heading, const Vec3& color) {
    const bool along_x = std::abs(std::sin(heading)) < 0.5;
    const Vec3 half = along_x ? Vec3(2.25, 0.9, 0.0) : Vec3(0.9, 2.25, 0.0);
    return {Vec3(center.x() - half.x(), center.y() - half.y(), 0.0),
            Vec3(center.x() + half.x(), center.y() + half.y(), 1.5), color, Label::kVehicle, false};
  }

 private:
  SceneSpec spec_;
  std::vector<Box> boxes_;
  std::vector<Box> parked_;
};

inline Scene make_scene(const SceneSpec& spec = {}) { return Scene(spec); }

// ---------------------------------------------------------------------------
// Rendering the oracle

struct OracleView {
  ImageRGB color;
  SemanticMask mask;
  std::vector<double> depth;  // distance along the pixel ray, +inf for sky
};

inline OracleView render_oracle(const Scene& scene, const Pose& camera, const CameraIntrinsics& k,
                                const std::vector<Box>& extra = {}, const Vec3& tint = Vec3::Ones()) {
  OracleView out;
  out.color = ImageRGB(k.width, k.height);
  out.mask = SemanticMask(k.width, k.height);
  out.depth.resize(static_cast<std::size_t>(k.width) * k.height);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Hit h = scene.intersect(pixel_to_ray(camera, k, u, v, 0.0, kInf), extra);
      out.color.set_pixel(u, v, h.color.cwiseProduct(tint).cwiseMax(0.0).cwiseMin(1.0));
      out.mask.at(u, v) = label_id(h.label);
      out.depth[static_cast<std::size_t>(v) * k.width + u] = h.t;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trips

struct CameraMount {
  double forward = 1.5;
  double height = 1.5;
  double yaw = 0.0;
  double pitch_down = 0.14;
};

inline CameraModel make_camera(int id, const CameraMount& m, int width = 80, int height = 60, double focal = 50.0) {
  CameraModel cam;
  cam.id = id;
  cam.intrinsics = {focal, focal, 0.5 * width - 0.5, 0.5 * height - 0.5, width, height};
  const Mat3 cam_in_vehicle = forward_camera_rotation(m.yaw, m.pitch_down);
  const Vec3 center(m.forward, 0.0, m.height);
  cam.extrinsics.rotation = cam_in_vehicle.transpose();
  cam.extrinsics.translation = -cam_in_vehicle.transpose() * center;
  return cam;
}

inline std::vector<std::shared_ptr<const CameraModel>> default_rig(int width = 80, int height = 60) {
  return {std::make_shared<const CameraModel>(make_camera(0, {1.5, 1.5, 0.0, 0.14}, width, height)),
          std::make_shared<const CameraModel>(make_camera(1, {-0.5, 1.5, 3.14159265358979323846, 0.14}, width, height))};
}

struct TripSpec {
  int n_trips = 4;
  int images_per_trip = 12;
  bool tint_per_sequence = false;
  int movers_per_trip = 1;
  double route_half_length = 26.0;
  double speed = 8.0;       // m/s
  double prior_position_noise = 1.5;
  double prior_rotation_noise = 1.0 * 3.14159265358979323846 / 180.0;
  std::uint64_t seed = 11;
  std::string trip_prefix = "trip";
  std::vector<std::shared_ptr<const CameraModel>> cameras = default_rig();
};

struct TripSet {
  std::vector<ImageRecord> images;
  std::vector<GuidanceTrajectory> trajectories;        // vehicle path per trip
  std::map<std::string, std::vector<Box>> movers;      // per trip
  std::map<AppearanceKey, Vec3> tints;                 // per sequence
  std::map<std::string, std::vector<double>> depth;    // oracle depth per image id (with movers)
};

inline Pose vehicle_pose_at(const Vec2& xy, double heading) {
  return {yaw_pitch_roll(heading, 0.0, 0.0), Vec3(xy.x(), xy.y(), 0.0), Frame::kVehicle};
}

// Straight drives along one of the two roads in one of four directions,
// in the right-hand lane with a random lateral offset.
inline TripSet make_trips(const Scene& scene, const TripSpec& spec) {
  TripSet set;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rw = scene.spec().road_half_width;
  for (int trip = 0; trip < spec.n_trips; ++trip) {
    char name[32];
    std::snprintf(name, sizeof(name), "%s%03d", spec.trip_prefix.c_str(), trip);
    const std::string trip_id = name;
    const int route = static_cast<int>(rng() % 4);
    const double heading = route * 0.5 * 3.14159265358979323846;
    const Vec2 fwd(std::cos(heading), std::sin(heading));
    const Vec2 right(fwd.y(), -fwd.x());
    const double lateral = 1.2 + unit(rng) * (rw - 2.4);
    const double start_time = trip * 86400.0 + 9 * 3600.0 + unit(rng) * 10 * 3600.0;

    // Movers: cars in the oncoming lane, or parked along this lane.
    std::vector<Box> movers;
    for (int m = 0; m < spec.movers_per_trip; ++m) {
      const double along = (unit(rng) * 2.0 - 1.0) * (spec.route_half_length - 4.0);
      const double side = unit(rng) < 0.5 ? -(1.5 + unit(rng) * 3.0) : (1.5 + unit(rng) * 3.0);
      const Vec2 c = along * fwd + side * right;
      movers.push_back(Scene::vehicle_box(Vec3(c.x(), c.y(), 0.0), heading,
                                          Vec3(0.2 + 0.6 * unit(rng), 0.2 + 0.6 * unit(rng), 0.2 + 0.6 * unit(rng))));
    }
    // Keep movers off the ego lane so they do not swallow the camera.
    movers.erase(std::remove_if(movers.begin(), movers.end(),
                                [&](const Box& b) {
                                  const Vec3 c = 0.5 * (b.lo + b.hi);
                                  const double off = Vec2(c.x(), c.y()).dot(right);
                                  return std::abs(off - lateral) < 2.5;
                                }),
                 movers.end());

    std::map<int, Vec3> tint;
    for (const auto& cam : spec.cameras) {
      Vec3 t = Vec3::Ones();
      if (spec.tint_per_sequence) {
        const double gain = 0.7 + 0.6 * unit(rng);
        t = gain * Vec3(0.9 + 0.2 * unit(rng), 0.9 + 0.2 * unit(rng), 0.9 + 0.2 * unit(rng));
      }
      tint[cam->id] = t;
      set.tints[{trip_id, cam->id}] = t;
    }

    GuidanceTrajectory traj;
    traj.trip = trip_id;
    const int n = std::max(spec.images_per_trip, 2);
    for (int f = 0; f < n; ++f) {
      const double s = -spec.route_half_length + 2.0 * spec.route_half_length * f / (n - 1);
      const Vec2 xy = s * fwd + lateral * right;
      const double time = start_time + (s + spec.route_half_length) / spec.speed;
      traj.points.push_back(xy);
      traj.times.push_back(time);
      const Pose truth = vehicle_pose_at(xy, heading);

      // Prior: truth perturbed by at most prior_position_noise (planar) and
      // prior_rotation_noise (about a random axis).
      const double r = spec.prior_position_noise * std::sqrt(unit(rng));
      const double phi = 2.0 * 3.14159265358979323846 * unit(rng);
      Vec3 axis(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
      if (axis.norm() < 1e-6) axis = Vec3::UnitZ();
      const double ang = spec.prior_rotation_noise * unit(rng);
      Pose prior = truth;
      prior.translation += Vec3(r * std::cos(phi), r * std::sin(phi), 0.0);
      prior.rotation = Eigen::AngleAxisd(ang, axis.normalized()).toRotationMatrix() * truth.rotation;

      for (const auto& cam : spec.cameras) {
        ImageRecord img;
        char iid[64];
        std::snprintf(iid, sizeof(iid), "%s_c%d_f%03d", trip_id.c_str(), cam->id, f);
        img.id = iid;
        img.trip = trip_id;
        img.camera_id = cam->id;
        img.timestamp = time;
        img.camera = cam;
        img.prior_pose = prior;
        img.refined_pose = truth;
        const OracleView ov = render_oracle(scene, camera_pose(truth, cam->extrinsics), cam->intrinsics, movers,
                                            tint[cam->id]);
        img.pixels = ov.color;
        img.mask = ov.mask;
        set.depth[img.id] = ov.depth;
        set.images.push_back(std::move(img));
      }
    }
    set.trajectories.push_back(std::move(traj));
    set.movers[trip_id] = std::move(movers);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Analytic density fields for renderer tests: solids of constant density
// with the scene's albedo, empty space elsewhere.

class SolidField {
 public:
  struct Solid {
    Box box;
    double sigma = 50.0;
  };

  SolidField() = default;
  explicit SolidField(std::vector<Solid> solids) : solids_(std::move(solids)) {}

  void add(const Box& b, double sigma) { solids_.push_back({b, sigma}); }
  const std::vector<Solid>& solids() const { return solids_; }

  FieldSamples query_points(const Matrix& x, const Matrix& d, const AppearanceSelector&) const {
    (void)d;
    FieldSamples out;
    out.sigma = Eigen::VectorXd::Zero(x.rows());
    out.color = Matrix::Zero(x.rows(), 3);
    for (ad::Index r = 0; r < x.rows(); ++r) {
      const Vec3 p(x(r, 0), x(r, 1), x(r, 2));
      for (const auto& s : solids_) {
        if (s.box.contains(p)) {
          out.sigma(r) = s.sigma;
          out.color.row(r) = s.box.color.transpose();
          break;
        }
      }
    }
    return out;
  }

 private:
  std::vector<Solid> solids_;
};

}  // namespace csnerf::synth
