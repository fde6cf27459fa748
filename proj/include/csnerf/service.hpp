#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csnerf/data_selection.hpp"
#include "csnerf/dataset_io.hpp"
#include "csnerf/marker_nav.hpp"
#include "csnerf/pipeline.hpp"
#include "csnerf/radiance_field.hpp"
#include "csnerf/training.hpp"
#include "csnerf/volume_renderer.hpp"

// Render requests shared by the command line and the HTTP service, and the
// service itself.
namespace csnerf::service {

namespace fs = std::filesystem;
using nlohmann::json;

// {
//   "pose": {"rotation": [9, row-major], "translation": [3]}   camera -> world
//        or {"position": [3], "yaw": rad, "pitch": rad}         pitch down > 0
//   "intrinsics": {...}          optional, defaults to the service camera
//   "appearance_key": {"trip": s, "camera": i} | "average" | "zero"
//   "camera": i                  camera for "average", default 0
//   "width": w, "height": h      optional, default the intrinsics size
//   "markers_on": bool, "trajectory_id": s, "block": i, "seed": n
// }
struct RenderRequest {
  Pose camera = Pose::identity(Frame::kCamera);
  std::optional<CameraIntrinsics> intrinsics;
  AppearanceSelector appearance = AppearanceSelector::average(0);
  std::optional<int> width;
  std::optional<int> height;
  bool markers_on = false;
  std::optional<std::string> trajectory_id;
  std::optional<int> block;
  std::optional<std::uint64_t> seed;
};

inline Pose camera_from_yaw_pitch(const Vec3& position, double yaw, double pitch_down) {
  return {forward_camera_rotation(yaw, pitch_down), position, Frame::kCamera};
}

inline RenderRequest parse_render_request(const json& j) {
  RenderRequest r;
  try {
    const json& pose = j.at("pose");
    if (pose.contains("rotation")) {
      r.camera = io::pose_from_json(pose, Frame::kCamera);
    } else {
      r.camera = camera_from_yaw_pitch(io::vec_from_json(pose.at("position")), pose.value("yaw", 0.0),
                                       pose.value("pitch", 0.0));
    }
    if (j.contains("intrinsics") && !j.at("intrinsics").is_null())
      r.intrinsics = io::intrinsics_from_json(j.at("intrinsics"));
    const int camera = j.value("camera", 0);
    r.appearance = AppearanceSelector::average(camera);
    if (j.contains("appearance_key")) {
      const json& a = j.at("appearance_key");
      if (a.is_string()) {
        const auto s = a.get<std::string>();
        if (s == "average") {
          r.appearance = AppearanceSelector::average(camera);
        } else if (s == "zero") {
          r.appearance = AppearanceSelector::zero();
        } else {
          throw InvalidArgument("appearance_key must be an object, \"average\" or \"zero\"");
        }
      } else {
        r.appearance = AppearanceSelector::sequence({a.at("trip").get<std::string>(), a.at("camera").get<int>()});
      }
    }
    if (j.contains("width")) r.width = j.at("width").get<int>();
    if (j.contains("height")) r.height = j.at("height").get<int>();
    r.markers_on = j.value("markers_on", false);
    if (j.contains("trajectory_id") && !j.at("trajectory_id").is_null())
      r.trajectory_id = j.at("trajectory_id").get<std::string>();
    if (j.contains("block") && !j.at("block").is_null()) r.block = j.at("block").get<int>();
    if (j.contains("seed") && !j.at("seed").is_null()) r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("render request: ") + e.what());
  }
  if (r.width && *r.width <= 0) throw InvalidArgument("width must be positive");
  if (r.height && *r.height <= 0) throw InvalidArgument("height must be positive");
  return r;
}

struct RenderContext {
  const RadianceField* field = nullptr;
  int block = 0;
  TrainConfig train;
  CameraIntrinsics default_intrinsics;
  const std::vector<GuidanceTrajectory>* trajectories = nullptr;
  MarkerStyle marker_style;
};

struct RenderResult {
  ImageRGB image;
  std::vector<std::uint8_t> png;
  double milliseconds = 0.0;
  std::uint64_t seed = 0;
  int block = 0;
  std::size_t tinted_pixels = 0;
};

inline const GuidanceTrajectory& find_trajectory(const std::vector<GuidanceTrajectory>& trajs,
                                                 const std::optional<std::string>& id) {
  if (trajs.empty()) throw NotFound("no trajectories loaded");
  if (!id) return trajs.front();
  for (const auto& t : trajs)
    if (t.trip == *id) return t;
  throw NotFound("trajectory " + *id);
}

inline RenderResult render_request(const RenderContext& ctx, const RenderRequest& req) {
  if (!ctx.field) throw InvalidArgument("no field loaded");
  const auto start = std::chrono::steady_clock::now();
  CameraIntrinsics k = req.intrinsics.value_or(ctx.default_intrinsics);
  const int w = req.width.value_or(k.width), h = req.height.value_or(k.height);
  if (w != k.width || h != k.height) k = k.resized(w, h);
  k.validate();

  RenderOptions opts = eval_render_options(ctx.train);
  opts.seed = req.seed.value_or(ctx.train.seed);
  RenderResult out;
  out.seed = opts.seed;
  out.block = ctx.block;
  if (req.markers_on) {
    if (!ctx.trajectories) throw NotFound("no trajectories loaded");
    const auto markers = trajectory_to_markers(find_trajectory(*ctx.trajectories, req.trajectory_id), ctx.marker_style);
    NavigationFrame frame =
        render_navigation_view(*ctx.field, req.camera, k, markers, req.appearance, opts, ctx.train.near, ctx.train.far);
    out.image = std::move(frame.image);
    for (char c : frame.tinted) out.tinted_pixels += c ? 1 : 0;
  } else {
    out.image = render_view(*ctx.field, req.camera, k, req.appearance, opts, ctx.train.near, ctx.train.far).color;
  }
  out.png = io::encode_png(io::to_png(out.image));
  out.milliseconds = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------------------
// Service

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

struct ServiceSetup {
  io::Config config;
  std::vector<Block> blocks;
  std::map<int, fs::path> checkpoints;  // trained blocks
  std::vector<GuidanceTrajectory> trajectories;
  CameraIntrinsics default_intrinsics{50.0, 50.0, 39.5, 29.5, 80, 60};
  // Overrides checkpoint loading, e.g. for in-memory fields.
  std::function<RadianceField(int)> loader;
};

// Service over the outputs of a pipeline run.
inline ServiceSetup setup_from_output(const io::Manifest& m, const io::Config& cfg, const fs::path& out) {
  ServiceSetup s;
  s.config = cfg;
  s.blocks = pipeline::read_blocks(out);
  for (const auto& b : s.blocks)
    if (fs::exists(pipeline::checkpoint_path(out, b.id))) s.checkpoints[b.id] = pipeline::checkpoint_path(out, b.id);
  s.trajectories = io::load_trajectories(m);
  if (!m.cameras.empty()) s.default_intrinsics = m.cameras.front()->intrinsics;
  return s;
}

// One field in memory at a time. Renders share the current field; loading
// another block swaps it under an exclusive lock.
class RenderService {
 public:
  explicit RenderService(ServiceSetup setup) : setup_(std::move(setup)) {
    if (setup_.checkpoints.empty() && !setup_.loader) throw NotFound("no trained blocks");
  }

  bool has_block(int id) const {
    if (setup_.loader) {
      for (const auto& b : setup_.blocks)
        if (b.id == id) return true;
      return setup_.checkpoints.count(id) > 0;
    }
    return setup_.checkpoints.count(id) > 0;
  }

  int default_block() const {
    if (!setup_.checkpoints.empty()) return setup_.checkpoints.begin()->first;
    if (!setup_.blocks.empty()) return setup_.blocks.front().id;
    return 0;
  }

  // Loads `id` unless it is already current.
  std::shared_ptr<const RadianceField> acquire(int id) {
    {
      std::shared_lock lock(mutex_);
      if (field_ && current_ == id) return field_;
    }
    if (!has_block(id)) throw NotFound("block " + std::to_string(id));
    std::unique_lock lock(mutex_);
    if (field_ && current_ == id) return field_;
    auto f = std::make_shared<const RadianceField>(setup_.loader ? setup_.loader(id)
                                                                 : io::load_field(setup_.checkpoints.at(id)));
    field_ = std::move(f);
    current_ = id;
    return field_;
  }

  int current_block() const {
    std::shared_lock lock(mutex_);
    return field_ ? current_ : default_block();
  }

  RenderResult render(const RenderRequest& req) {
    const int id = req.block.value_or(current_block());
    const auto field = acquire(id);
    RenderContext ctx;
    ctx.field = field.get();
    ctx.block = id;
    ctx.train = setup_.config.train;
    ctx.default_intrinsics = setup_.default_intrinsics;
    ctx.trajectories = &setup_.trajectories;
    return render_request(ctx, req);
  }

  json info() {
    const int id = current_block();
    const auto field = acquire(id);
    json seqs = json::array();
    for (const auto& s : field->sequences()) seqs.push_back({{"trip", s.trip}, {"camera", s.camera}});
    json blocks = json::array();
    for (const auto& b : setup_.blocks) {
      const Vec2 lo = b.min_corner(), hi = b.max_corner();
      blocks.push_back({{"id", b.id},
                        {"center", {b.center.x(), b.center.y()}},
                        {"side", b.side},
                        {"min", {lo.x(), lo.y()}},
                        {"max", {hi.x(), hi.y()}},
                        {"trained", has_block(b.id)}});
    }
    return {{"block", id},
            {"seed", setup_.config.train.seed},
            {"config", io::to_json(setup_.config)},
            {"field", to_json(field->config())},
            {"sequences", seqs},
            {"blocks", blocks},
            {"intrinsics", io::intrinsics_to_json(setup_.default_intrinsics)}};
  }

  json trajectories() const {
    json list = json::array();
    for (const auto& t : setup_.trajectories) {
      json pts = json::array();
      for (std::size_t i = 0; i < t.points.size(); ++i)
        pts.push_back({t.times.empty() ? static_cast<double>(i) : t.times[i], t.points[i].x(), t.points[i].y()});
      list.push_back({{"id", t.trip}, {"points", pts}});
    }
    return {{"block", current_block()}, {"seed", setup_.config.train.seed}, {"trajectories", list}};
  }

  // ---- HTTP-shaped handlers (no socket involved) ----

  HttpResponse handle_info() {
    return guarded([&] { return json_response(info()); });
  }

  HttpResponse handle_trajectories() {
    return guarded([&] { return json_response(trajectories()); });
  }

  HttpResponse handle_render(const std::string& body) {
    return guarded([&] {
      json j;
      try {
        j = json::parse(body);
      } catch (const json::exception& e) {
        throw InvalidArgument(std::string("render request: ") + e.what());
      }
      const RenderResult r = render(parse_render_request(j));
      HttpResponse resp;
      resp.content_type = "image/png";
      resp.body.assign(r.png.begin(), r.png.end());
      char ms[32];
      std::snprintf(ms, sizeof(ms), "%.3f", r.milliseconds);
      resp.headers["X-Render-Ms"] = ms;
      resp.headers["X-Block-Id"] = std::to_string(r.block);
      resp.headers["X-Seed"] = std::to_string(r.seed);
      resp.headers["X-Tinted-Pixels"] = std::to_string(r.tinted_pixels);
      return resp;
    });
  }

  const ServiceSetup& setup() const { return setup_; }

 private:
  HttpResponse json_response(const json& j) const {
    HttpResponse r;
    r.body = j.dump();
    r.headers["X-Block-Id"] = std::to_string(j.value("block", 0));
    r.headers["X-Seed"] = std::to_string(setup_.config.train.seed);
    return r;
  }

  template <class Fn>
  HttpResponse guarded(Fn&& fn) {
    try {
      return fn();
    } catch (const NotFound& e) {
      return error(404, e);
    } catch (const UnknownSequence& e) {
      return error(404, e);
    } catch (const Error& e) {
      return error(400, e);
    } catch (const std::exception& e) {
      HttpResponse r;
      r.status = 500;
      r.body = json{{"error", "internal"}, {"message", e.what()}}.dump();
      return r;
    }
  }

  HttpResponse error(int status, const Error& e) const {
    HttpResponse r;
    r.status = status;
    r.body = json{{"error", e.kind()}, {"message", e.what()}}.dump();
    r.headers["X-Seed"] = std::to_string(setup_.config.train.seed);
    return r;
  }

  ServiceSetup setup_;
  mutable std::shared_mutex mutex_;
  std::shared_ptr<const RadianceField> field_;
  int current_ = 0;
};

}  // namespace csnerf::service
