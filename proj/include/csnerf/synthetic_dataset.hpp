#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "csnerf/dataset_io.hpp"
#include "csnerf/synthetic.hpp"

namespace csnerf::synth {

struct DatasetSpec {
  SceneSpec scene;
  TripSpec trips;
  int test_frames = 4;  // frames of a held-out drive written with split "test"
};

struct DatasetSummary {
  std::size_t train_images = 0;
  std::size_t test_images = 0;
  std::filesystem::path manifest;
};

namespace detail {

inline void add_images(io::Manifest& m, const TripSet& set, const std::filesystem::path& dir,
                       const std::string& split) {
  namespace fs = std::filesystem;
  for (const auto& img : set.images) {
    io::ManifestImage e;
    e.id = img.id;
    e.trip = img.trip;
    e.camera = img.camera_id;
    e.timestamp = img.timestamp;
    e.image = "images/" + img.id + ".png";
    e.mask = "masks/" + img.id + ".png";
    e.gt_depth = "gt_depth/" + img.id + ".depth";
    e.prior_pose = img.prior_pose;
    e.refined_pose = img.refined_pose;
    e.split = split;
    io::write_png(dir / e.image, io::to_png(img.pixels));
    io::write_png(dir / e.mask, io::to_png(img.mask));
    io::write_depth_raster(dir / e.gt_depth, img.pixels.width, img.pixels.height, set.depth.at(img.id));
    m.images.push_back(std::move(e));
  }
}

}  // namespace detail

// Renders trips of a synthetic scene and writes them as an on-disk dataset:
// manifest.json, images/, masks/, gt_depth/ and trajectories/.
inline DatasetSummary write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "gt_depth");
  fs::create_directories(dir / "trajectories");

  const Scene scene(spec.scene);
  const TripSet train = make_trips(scene, spec.trips);
  io::Manifest m;
  m.root = dir;
  m.cameras = spec.trips.cameras;
  detail::add_images(m, train, dir, "train");

  DatasetSummary s;
  s.train_images = train.images.size();
  if (spec.test_frames > 0) {
    TripSpec ts = spec.trips;
    ts.n_trips = 1;
    ts.images_per_trip = spec.test_frames;
    ts.movers_per_trip = 0;
    ts.seed = spec.trips.seed + 7919;
    ts.trip_prefix = "test";
    const TripSet test = make_trips(scene, ts);
    detail::add_images(m, test, dir, "test");
    s.test_images = test.images.size();
  }

  for (const auto& t : train.trajectories) {
    const std::string file = "trajectories/" + t.trip + ".txt";
    std::ofstream os(dir / file);
    if (!os) throw IngestionError("cannot write " + (dir / file).string());
    write_trajectory(os, t);
    m.trajectories.push_back({t.trip, file});
  }
  s.manifest = dir / "manifest.json";
  io::write_manifest(s.manifest, m);
  return s;
}

}  // namespace csnerf::synth
