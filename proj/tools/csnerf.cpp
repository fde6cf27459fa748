#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "csnerf/dataset_io.hpp"
#include "csnerf/http_server.hpp"
#include "csnerf/pipeline.hpp"
#include "csnerf/runtime.hpp"
#include "csnerf/service.hpp"
#include "csnerf/sfm_adjunct.hpp"
#include "csnerf/synthetic_dataset.hpp"

using namespace csnerf;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string manifest = "manifest.json";
  std::string config;
  std::string work = "out";
};

void add_common(CLI::App* app, Common& c, bool needs_manifest = true) {
  if (needs_manifest) app->add_option("-m,--manifest", c.manifest, "dataset manifest")->capture_default_str();
  app->add_option("-c,--config", c.config, "config file (JSON)");
  app->add_option("-w,--work", c.work, "working directory for stage outputs")->capture_default_str();
}

io::Config load_config(const Common& c) {
  if (c.config.empty()) return {};
  return io::read_config(c.config);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

service::RenderService open_service(const Common& c, const io::Config& cfg) {
  const io::Manifest m = io::read_manifest(c.manifest);
  return service::RenderService(service::setup_from_output(m, cfg, c.work));
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Crowd-sourced street-view radiance fields"};
  app.require_subcommand(1);

  // synth
  std::string synth_out = "synthetic";
  synth::DatasetSpec ds;
  bool synth_tint = false, synth_parked = false;
  std::string synth_config;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("-o,--out", synth_out, "output directory")->capture_default_str();
  synth_cmd->add_option("--trips", ds.trips.n_trips)->capture_default_str();
  synth_cmd->add_option("--images-per-trip", ds.trips.images_per_trip)->capture_default_str();
  synth_cmd->add_option("--test-frames", ds.test_frames)->capture_default_str();
  synth_cmd->add_option("--movers", ds.trips.movers_per_trip)->capture_default_str();
  synth_cmd->add_option("--seed", ds.trips.seed)->capture_default_str();
  synth_cmd->add_flag("--tint", synth_tint, "per-sequence color tints");
  synth_cmd->add_flag("--parked-mover", synth_parked, "vehicle parked on the road in every trip");
  synth_cmd->add_option("--write-config", synth_config, "also write a default config file for this scene");

  Common com;
  auto* select_cmd = app.add_subcommand("select", "filter images; writes the filter report");
  add_common(select_cmd, com);
  auto* partition_cmd = app.add_subcommand("partition", "split kept images into blocks");
  add_common(partition_cmd, com);
  auto* depth_cmd = app.add_subcommand("depth", "ground depth maps for kept images");
  add_common(depth_cmd, com);

  // sfm-filter
  std::string features_in, matches_in, features_out, matches_out, pairs_out;
  double radius = kDefaultNeighborhoodRadius;
  auto* sfm_cmd = app.add_subcommand("sfm-filter", "semantic filtering of features and matches");
  add_common(sfm_cmd, com);
  sfm_cmd->add_option("--features", features_in, "features file: `image u v` per line")->required();
  sfm_cmd->add_option("--matches", matches_in, "matches file: `imageA imageB idxA idxB score` per line");
  sfm_cmd->add_option("--features-out", features_out, "static features");
  sfm_cmd->add_option("--matches-out", matches_out, "label-consistent matches");
  sfm_cmd->add_option("--pairs-out", pairs_out, "candidate image pairs from prior poses");
  sfm_cmd->add_option("--radius", radius, "candidate neighborhood radius (m)")->capture_default_str();

  // train
  int train_block = -1;
  pipeline::TrainOverrides ov;
  int iters = 0;
  double lambda_depth = -1.0;
  bool no_emb = false, no_fill = false;
  std::uint64_t seed = 0;
  auto* train_cmd = app.add_subcommand("train", "train one block (or all blocks)");
  add_common(train_cmd, com);
  train_cmd->add_option("--block", train_block, "block id; all blocks when omitted");
  auto* iters_opt = train_cmd->add_option("--iters", iters);
  auto* lambda_opt = train_cmd->add_option("--lambda-depth", lambda_depth);
  train_cmd->add_flag("--no-embeddings", no_emb);
  train_cmd->add_flag("--no-occlusion-fill", no_fill);
  auto* seed_opt = train_cmd->add_option("--seed", seed);

  // render
  std::string request_file, image_out = "render.png";
  auto* render_cmd = app.add_subcommand("render", "render one view from a request file");
  add_common(render_cmd, com);
  render_cmd->add_option("-r,--request", request_file, "render request (JSON, same as POST /render)")->required();
  render_cmd->add_option("-o,--out", image_out, "output PNG")->capture_default_str();

  // navigate
  std::string nav_traj, nav_out = "navigation";
  int nav_frames = 20, nav_block = -1;
  double nav_height = 1.5, nav_pitch = 0.14, nav_back = 4.0;
  bool nav_no_markers = false;
  auto* nav_cmd = app.add_subcommand("navigate", "render a drive along a trajectory with markers");
  add_common(nav_cmd, com);
  nav_cmd->add_option("--trajectory", nav_traj, "trajectory id (default: first)");
  nav_cmd->add_option("--frames", nav_frames)->capture_default_str();
  nav_cmd->add_option("--block", nav_block, "block id (default: block containing each camera)");
  nav_cmd->add_option("--height", nav_height, "camera height (m)")->capture_default_str();
  nav_cmd->add_option("--pitch", nav_pitch, "downward pitch (rad)")->capture_default_str();
  nav_cmd->add_option("--behind", nav_back, "camera distance behind the path point (m)")->capture_default_str();
  nav_cmd->add_flag("--no-markers", nav_no_markers);
  nav_cmd->add_option("-o,--out", nav_out, "output directory")->capture_default_str();

  auto* eval_cmd = app.add_subcommand("eval", "metrics table over the test split");
  add_common(eval_cmd, com);

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP render service");
  add_common(serve_cmd, com);
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();

  auto* pipe_cmd = app.add_subcommand("pipeline", "select, partition, depth, train every block, eval");
  add_common(pipe_cmd, com);
  pipe_cmd->add_option("--iters", iters);
  pipe_cmd->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      ds.trips.tint_per_sequence = synth_tint;
      ds.scene.parked_mover = synth_parked;
      const auto s = synth::write_dataset(synth_out, ds);
      std::cout << "wrote " << s.train_images << " train and " << s.test_images << " test images to "
                << s.manifest.string() << '\n';
      if (!synth_config.empty()) {
        io::Config cfg;
        cfg.field.scene_center = Vec3(0.0, 0.0, 4.0);
        cfg.field.scene_scale = 40.0;
        io::write_config(synth_config, cfg);
      }
      return 0;
    }

    io::Config cfg = load_config(com);
    const fs::path work = com.work;

    if (select_cmd->parsed()) {
      const auto m = io::read_manifest(com.manifest);
      const FilterReport r = pipeline::stage_select(m, cfg, work);
      std::cout << "kept " << r.kept_count() << " of " << r.records.size() << " images\n";
    } else if (partition_cmd->parsed()) {
      const auto m = io::read_manifest(com.manifest);
      for (const auto& b : pipeline::stage_partition(m, cfg, work))
        std::cout << "block " << b.id << " center (" << b.center.x() << ", " << b.center.y() << ") "
                  << b.members.size() << " images\n";
    } else if (depth_cmd->parsed()) {
      const auto m = io::read_manifest(com.manifest);
      std::cout << "wrote " << pipeline::stage_depth(m, cfg, work) << " depth maps\n";
    } else if (sfm_cmd->parsed()) {
      const auto m = io::read_manifest(com.manifest);
      std::map<std::string, SemanticMask> masks;
      std::ifstream fin(features_in);
      if (!fin) throw IngestionError("cannot open " + features_in);
      FeatureIndex index;
      std::vector<Feature> all;
      for (const auto& rf : read_features(fin)) {
        if (!masks.count(rf.image_id)) {
          const io::ManifestImage* entry = nullptr;
          for (const auto& e : m.images)
            if (e.id == rf.image_id) entry = &e;
          if (!entry) throw NotFound("image " + rf.image_id);
          masks.emplace(rf.image_id, io::load_image(m, *entry).mask);
        }
        const Feature f = make_feature(rf.image_id, masks.at(rf.image_id), rf.u, rf.v);
        index[f.image_id].push_back(f);
        all.push_back(f);
      }
      const auto kept = drop_dynamic_features(all);
      std::cout << "features: " << all.size() << " in, " << kept.size() << " static\n";
      if (!features_out.empty()) {
        std::ofstream os(features_out);
        write_features(os, kept);
      }
      if (!matches_in.empty()) {
        std::ifstream min(matches_in);
        if (!min) throw IngestionError("cannot open " + matches_in);
        const auto matches = read_matches(min);
        const auto gated = gate_matches_by_semantics(matches, index);
        std::cout << "matches: " << matches.size() << " in, " << gated.size() << " label-consistent\n";
        if (!matches_out.empty()) {
          std::ofstream os(matches_out);
          write_matches(os, gated);
        }
      }
      if (!pairs_out.empty()) {
        std::vector<ImageRecord> priors;
        for (const auto& e : m.images) {
          ImageRecord r;
          r.id = e.id;
          r.prior_pose = e.prior_pose;
          priors.push_back(std::move(r));
        }
        std::ofstream os(pairs_out);
        const auto pairs = candidate_pairs_by_prior(priors, radius);
        for (const auto& [a, b] : pairs) os << a << ' ' << b << '\n';
        std::cout << "candidate pairs: " << pairs.size() << '\n';
      }
    } else if (train_cmd->parsed()) {
      if (*iters_opt) ov.iterations = iters;
      if (*lambda_opt) ov.lambda_depth = lambda_depth;
      if (no_emb) ov.use_embeddings = false;
      if (no_fill) ov.occlusion_fill = false;
      if (*seed_opt) ov.seed = seed;
      pipeline::apply(cfg, ov);
      const auto m = io::read_manifest(com.manifest);
      std::vector<int> ids;
      if (train_block >= 0) {
        ids.push_back(train_block);
      } else {
        ids = pipeline::trainable_blocks(work);
      }
      for (int id : ids) {
        const auto bt = pipeline::train_block(m, cfg, work, id);
        std::cout << "block " << id << ": " << bt.views << " views, final loss "
                  << (bt.result.losses.empty() ? 0.0 : bt.result.losses.back()) << '\n';
      }
    } else if (render_cmd->parsed()) {
      auto svc = open_service(com, cfg);
      const auto r = svc.render(service::parse_render_request(nlohmann::json::parse(slurp(request_file))));
      write_bytes(image_out, r.png);
      std::cout << "block " << r.block << " seed " << r.seed << " " << r.milliseconds << " ms -> " << image_out
                << '\n';
    } else if (nav_cmd->parsed()) {
      const auto m = io::read_manifest(com.manifest);
      auto setup = service::setup_from_output(m, cfg, work);
      const auto traj = service::find_trajectory(
          setup.trajectories, nav_traj.empty() ? std::optional<std::string>{} : std::optional<std::string>{nav_traj});
      const auto blocks = setup.blocks;
      std::vector<int> trained;
      for (const auto& [id, path] : setup.checkpoints) trained.push_back(id);
      service::RenderService svc(std::move(setup));
      fs::create_directories(nav_out);
      // Arc-length parametrized camera path along the trajectory.
      std::vector<double> s{0.0};
      for (std::size_t i = 1; i < traj.points.size(); ++i)
        s.push_back(s.back() + (traj.points[i] - traj.points[i - 1]).norm());
      for (int f = 0; f < nav_frames; ++f) {
        const double at = nav_frames > 1 ? s.back() * f / (nav_frames - 1) : 0.0;
        std::size_t seg = 1;
        while (seg + 1 < s.size() && s[seg] < at) ++seg;
        const Vec2 a = traj.points[seg - 1], b = traj.points[seg];
        const double len = std::max(s[seg] - s[seg - 1], 1e-12);
        const Vec2 p = a + (b - a) * std::clamp((at - s[seg - 1]) / len, 0.0, 1.0);
        const Vec2 dir = (b - a) / len;
        const Vec2 cam = p - nav_back * dir;
        service::RenderRequest req;
        req.camera = service::camera_from_yaw_pitch(Vec3(cam.x(), cam.y(), nav_height), std::atan2(dir.y(), dir.x()),
                                                    nav_pitch);
        req.markers_on = !nav_no_markers;
        req.trajectory_id = traj.trip;
        req.block = nav_block >= 0 ? nav_block : pipeline::block_for_position(blocks, trained, cam);
        const auto r = svc.render(req);
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04d.png", f);
        write_bytes(fs::path(nav_out) / name, r.png);
      }
      std::cout << "wrote " << nav_frames << " frames to " << nav_out << '\n';
    } else if (eval_cmd->parsed()) {
      const auto m = io::read_manifest(com.manifest);
      const auto rows = pipeline::stage_eval(m, cfg, work);
      write_metrics_table(std::cout, rows);
    } else if (serve_cmd->parsed()) {
      auto svc = open_service(com, cfg);
      httplib::Server server;
      service::bind_routes(server, svc);
      std::cout << "serving block " << svc.default_block() << " on http://" << host << ':' << port << '\n';
      if (!server.listen(host, port)) throw Error("Io", "cannot listen on " + host + ":" + std::to_string(port));
    } else if (pipe_cmd->parsed()) {
      if (iters > 0) cfg.train.iterations = iters;
      if (seed > 0) cfg.train.seed = seed;
      const auto r = pipeline::run_pipeline(com.manifest, cfg, work);
      std::cout << r.blocks.size() << " blocks, " << r.trained.size() << " trained\n";
      write_metrics_table(std::cout, r.metrics);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
