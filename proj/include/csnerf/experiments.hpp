#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "csnerf/ground_geometry.hpp"
#include "csnerf/synthetic.hpp"
#include "csnerf/training.hpp"

// Paired training runs on synthetic scenes. Each study trains the same
// field twice (or more) with one switch flipped and reports test metrics.
namespace csnerf::experiments {

// Test view of the static scene (no movers) rendered by the oracle.
inline EvalView make_eval_view(const synth::Scene& scene, const Pose& camera, const CameraIntrinsics& k,
                               const AppearanceSelector& key, const Vec3& tint, double far) {
  const synth::OracleView ov = synth::render_oracle(scene, camera, k, {}, tint);
  EvalView e;
  e.camera = camera;
  e.intrinsics = k;
  e.color = ov.color;
  e.depth = ov.depth;
  e.depth_valid.resize(ov.depth.size());
  for (std::size_t i = 0; i < ov.depth.size(); ++i) {
    e.depth_valid[i] = std::isfinite(ov.depth[i]) && ov.depth[i] < far ? 1 : 0;
    if (!std::isfinite(e.depth[i])) e.depth[i] = 0.0;
  }
  e.key = key;
  return e;
}

inline FieldConfig scene_field_config(std::uint64_t seed = 7) {
  FieldConfig f;
  f.scene_center = Vec3(0.0, 0.0, 4.0);
  f.scene_scale = 40.0;
  f.seed = seed;
  return f;
}

struct RunResult {
  ViewMetrics metrics;
  double seconds = 0.0;
  double final_loss = 0.0;
};

struct RunSpec {
  TrainConfig train;
  FieldConfig field = scene_field_config();
  ViewOptions views;
};

// Trains a fresh field on `images` and evaluates it on `tests`. `field_out`
// receives the trained field when given.
inline RunResult train_and_evaluate(const std::vector<ImageRecord>& images, const std::vector<EvalView>& tests,
                                    const RunSpec& spec, RadianceField* field_out = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  RadianceField field(spec.field, sequences_of(images));
  const auto views = make_train_views(images, spec.views);
  const TrainResult tr = train(views, field, spec.train);
  RunResult r;
  r.metrics = evaluate_views(field, tests, spec.train);
  r.final_loss = tr.losses.empty() ? 0.0 : tr.losses.back();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (field_out) *field_out = std::move(field);
  return r;
}

// ---------------------------------------------------------------------------
// Studies

struct StudyConfig {
  TrainConfig train;
  synth::SceneSpec scene;
  int n_trips = 4;
  int images_per_trip = 10;
  int test_views = 6;
  std::uint64_t trip_seed = 11;
};

inline StudyConfig default_study() {
  StudyConfig s;
  s.train.iterations = 500;
  s.train.batch_rays = 512;
  s.train.n_samples = 64;
  return s;
}

// Camera poses of a separate drive used only for testing.
inline std::vector<ImageRecord> test_trip(const synth::Scene& scene, const StudyConfig& cfg, bool tint,
                                          int frames) {
  synth::TripSpec ts;
  ts.n_trips = 1;
  ts.images_per_trip = frames;
  ts.tint_per_sequence = tint;
  ts.movers_per_trip = 0;
  ts.seed = cfg.trip_seed + 7919;
  ts.trip_prefix = "test";
  return synth::make_trips(scene, ts).images;
}

struct PairedResult {
  RunResult baseline;
  RunResult variant;
};

// Depth supervision on/off with everything else fixed.
inline PairedResult depth_ablation(const StudyConfig& cfg, double lambda_depth) {
  const synth::Scene scene(cfg.scene);
  synth::TripSpec ts;
  ts.n_trips = cfg.n_trips;
  ts.images_per_trip = cfg.images_per_trip;
  ts.seed = cfg.trip_seed;
  const auto set = synth::make_trips(scene, ts);
  std::vector<EvalView> tests;
  for (const auto& img : test_trip(scene, cfg, false, cfg.test_views))
    tests.push_back(make_eval_view(scene, img.world_camera_pose(), img.camera->intrinsics,
                                   AppearanceSelector::average(img.camera_id), Vec3::Ones(), cfg.train.far));
  RunSpec base;
  base.train = cfg.train;
  base.train.lambda_depth = 0.0;
  RunSpec with = base;
  with.train.lambda_depth = lambda_depth;
  return {train_and_evaluate(set.images, tests, base), train_and_evaluate(set.images, tests, with)};
}

// Sequence embeddings on/off under per-sequence tints. Every other frame
// of each training sequence is held out and evaluated with its own tint
// and sequence key.
inline PairedResult embedding_ablation(const StudyConfig& cfg) {
  const synth::Scene scene(cfg.scene);
  synth::TripSpec ts;
  ts.n_trips = cfg.n_trips;
  ts.images_per_trip = cfg.images_per_trip;
  ts.tint_per_sequence = true;
  ts.seed = cfg.trip_seed;
  const auto set = synth::make_trips(scene, ts);
  std::vector<ImageRecord> train_images;
  std::vector<EvalView> tests;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const auto& img = set.images[i];
    const int frame = std::stoi(img.id.substr(img.id.size() - 3));
    if (frame % 4 == 2) {
      tests.push_back(make_eval_view(scene, img.world_camera_pose(), img.camera->intrinsics,
                                     AppearanceSelector::sequence(img.sequence_key()),
                                     set.tints.at(img.sequence_key()), cfg.train.far));
    } else {
      train_images.push_back(img);
    }
  }
  RunSpec with;
  with.train = cfg.train;
  with.train.use_embeddings = true;
  RunSpec without = with;
  without.train.use_embeddings = false;
  return {train_and_evaluate(train_images, tests, without), train_and_evaluate(train_images, tests, with)};
}

// Depth error over the masked-ground region: pixels hidden by a parked
// vehicle in a training view whose true surface, with the vehicle removed,
// is road. The vehicle sits in every trip, so part of that road is never
// observed.
struct OcclusionResult {
  double rmse_without = 0.0;
  double rmse_with = 0.0;
  std::size_t pixels = 0;
  RunResult without;
  RunResult with;
};

inline OcclusionResult occlusion_ablation(const StudyConfig& cfg) {
  synth::SceneSpec spec = cfg.scene;
  spec.parked_mover = true;
  const synth::Scene scene(spec);
  synth::TripSpec ts;
  ts.n_trips = cfg.n_trips;
  ts.images_per_trip = cfg.images_per_trip;
  ts.movers_per_trip = 0;
  ts.seed = cfg.trip_seed;
  const auto set = synth::make_trips(scene, ts);

  // Test cameras: every training pose that sees the vehicle, rendered
  // without it.
  synth::SceneSpec empty_spec = spec;
  empty_spec.parked_mover = false;
  const synth::Scene empty(empty_spec);
  std::vector<EvalView> tests;
  for (const auto& img : set.images) {
    const synth::OracleView ov = synth::render_oracle(empty, img.world_camera_pose(), img.camera->intrinsics, {});
    EvalView e = make_eval_view(empty, img.world_camera_pose(), img.camera->intrinsics,
                                AppearanceSelector::average(img.camera_id), Vec3::Ones(), cfg.train.far);
    std::size_t n = 0;
    for (std::size_t i = 0; i < e.depth_valid.size(); ++i) {
      const bool masked_ground = img.mask.table.is_dynamic(img.mask.labels[i]) &&
                                 ov.mask.table.is_ground(ov.mask.labels[i]) && e.depth_valid[i];
      e.depth_valid[i] = masked_ground ? 1 : 0;
      n += masked_ground ? 1 : 0;
    }
    if (n > 0) tests.push_back(std::move(e));
  }

  RunSpec with;
  with.train = cfg.train;
  with.views.occlusion_fill = true;
  RunSpec without = with;
  without.views.occlusion_fill = false;
  OcclusionResult r;
  r.without = train_and_evaluate(set.images, tests, without);
  r.with = train_and_evaluate(set.images, tests, with);
  r.rmse_without = r.without.metrics.depth.rmse;
  r.rmse_with = r.with.metrics.depth.rmse;
  r.pixels = r.with.metrics.depth.count;
  return r;
}

struct TripsPoint {
  int trips = 0;
  RunResult run;
};

// Test PSNR on a fixed held-out drive as the number of training trips
// grows. Smaller sets are prefixes of larger ones.
inline std::vector<TripsPoint> trips_scaling(const StudyConfig& cfg, const std::vector<int>& counts) {
  const synth::Scene scene(cfg.scene);
  int most = 0;
  for (int n : counts) most = std::max(most, n);
  synth::TripSpec ts;
  ts.n_trips = most;
  ts.images_per_trip = cfg.images_per_trip;
  ts.seed = cfg.trip_seed;
  const auto set = synth::make_trips(scene, ts);
  std::vector<EvalView> tests;
  for (const auto& img : test_trip(scene, cfg, false, cfg.test_views))
    tests.push_back(make_eval_view(scene, img.world_camera_pose(), img.camera->intrinsics,
                                   AppearanceSelector::average(img.camera_id), Vec3::Ones(), cfg.train.far));
  std::vector<TripsPoint> out;
  for (int n : counts) {
    std::vector<ImageRecord> subset;
    for (const auto& img : set.images) {
      const int trip = std::stoi(img.trip.substr(img.trip.size() - 3));
      if (trip < n) subset.push_back(img);
    }
    RunSpec spec;
    spec.train = cfg.train;
    out.push_back({n, train_and_evaluate(subset, tests, spec)});
  }
  return out;
}

}  // namespace csnerf::experiments
