#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csnerf/data_selection.hpp"
#include "csnerf/dataset_io.hpp"
#include "csnerf/ground_geometry.hpp"
#include "csnerf/metrics.hpp"
#include "csnerf/training.hpp"

// Disk-backed stages: select -> partition -> depth -> train (per block) ->
// eval. Every stage reads its inputs from the manifest or earlier stage
// outputs under one output directory, so stages can be rerun one by one.
//
//   <out>/select/filter_report.tsv
//   <out>/select/kept.txt
//   <out>/partition/blocks.json
//   <out>/depth/<image>.depth, <image>.valid
//   <out>/blocks/<id>/field.ckpt, trace.tsv, config.json
//   <out>/eval/metrics.tsv
namespace csnerf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// Runs `fn`, rethrowing any failure as a StageError tagged with `stage`.
template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

inline fs::path select_dir(const fs::path& out) { return out / "select"; }
inline fs::path partition_file(const fs::path& out) { return out / "partition" / "blocks.json"; }
inline fs::path depth_dir(const fs::path& out) { return out / "depth"; }
inline fs::path block_dir(const fs::path& out, int id) { return out / "blocks" / std::to_string(id); }
inline fs::path checkpoint_path(const fs::path& out, int id) { return block_dir(out, id) / "field.ckpt"; }
inline fs::path metrics_file(const fs::path& out) { return out / "eval" / "metrics.tsv"; }

// ---------------------------------------------------------------------------
// select

inline FilterReport stage_select(const io::Manifest& m, const io::Config& cfg, const fs::path& out) {
  return run_stage("select", [&] {
    const auto images = io::load_images(m, "train");
    const SelectionResult sel = run_selection(images, cfg.selection);
    fs::create_directories(select_dir(out));
    std::ofstream report(select_dir(out) / "filter_report.tsv");
    write_filter_report(report, sel.report);
    std::ofstream kept(select_dir(out) / "kept.txt");
    for (const auto& id : sel.report.kept_ids()) kept << id << '\n';
    return sel.report;
  });
}

inline std::vector<std::string> read_kept(const fs::path& out) {
  std::ifstream is(select_dir(out) / "kept.txt");
  if (!is) throw NotFound("selection output " + (select_dir(out) / "kept.txt").string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) ids.push_back(line);
  return ids;
}

// Kept training images, in manifest order.
inline std::vector<ImageRecord> load_kept(const io::Manifest& m, const fs::path& out) {
  const auto kept = read_kept(out);
  const std::set<std::string> keep(kept.begin(), kept.end());
  std::vector<ImageRecord> images;
  for (const auto& e : m.images)
    if (e.split == "train" && keep.count(e.id)) images.push_back(io::load_image(m, e));
  return images;
}

// ---------------------------------------------------------------------------
// partition

inline json blocks_to_json(const std::vector<Block>& blocks) {
  json a = json::array();
  for (const auto& b : blocks)
    a.push_back({{"id", b.id}, {"center", {b.center.x(), b.center.y()}}, {"side", b.side}, {"members", b.members}});
  return a;
}

inline std::vector<Block> blocks_from_json(const json& j) {
  std::vector<Block> blocks;
  for (const auto& e : j) {
    Block b;
    e.at("id").get_to(b.id);
    const auto c = e.at("center").get<std::vector<double>>();
    b.center = Vec2(c.at(0), c.at(1));
    e.at("side").get_to(b.side);
    e.at("members").get_to(b.members);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

inline std::vector<Block> stage_partition(const io::Manifest& m, const io::Config& cfg, const fs::path& out) {
  return run_stage("partition", [&] {
    const auto images = load_kept(m, out);
    auto blocks = partition_blocks(images, cfg.pipeline.block_side, cfg.pipeline.block_overlap);
    fs::create_directories(partition_file(out).parent_path());
    std::ofstream os(partition_file(out));
    os << blocks_to_json(blocks).dump(2) << '\n';
    return blocks;
  });
}

inline std::vector<Block> read_blocks(const fs::path& out) {
  std::ifstream is(partition_file(out));
  if (!is) throw NotFound("partition output " + partition_file(out).string());
  json j;
  is >> j;
  return blocks_from_json(j);
}

inline const Block& find_block(const std::vector<Block>& blocks, int id) {
  for (const auto& b : blocks)
    if (b.id == id) return b;
  throw NotFound("block " + std::to_string(id));
}

// ---------------------------------------------------------------------------
// depth

inline fs::path depth_file(const fs::path& out, const std::string& id) { return depth_dir(out) / (id + ".depth"); }
inline fs::path validity_file(const fs::path& out, const std::string& id) {
  return depth_dir(out) / (id + ".valid");
}

inline GroundDepthMap make_depth_map(const ImageRecord& img, const io::PipelineOptions& p) {
  GroundDepthMap map = build_ground_depth_map(img, p.max_ground_depth);
  if (p.occlusion_fill) map = complete_occlusions(map, img.mask, *img.camera, p.max_ground_depth);
  return map;
}

inline std::size_t stage_depth(const io::Manifest& m, const io::Config& cfg, const fs::path& out) {
  return run_stage("depth", [&] {
    fs::create_directories(depth_dir(out));
    const auto images = load_kept(m, out);
    for (const auto& img : images) {
      const GroundDepthMap map = make_depth_map(img, cfg.pipeline);
      std::ofstream d(depth_file(out, img.id), std::ios::binary);
      std::ofstream v(validity_file(out, img.id), std::ios::binary);
      write_ground_depth(d, v, map);
    }
    return images.size();
  });
}

inline GroundDepthMap read_depth_map(const fs::path& out, const std::string& id) {
  std::ifstream d(depth_file(out, id), std::ios::binary);
  std::ifstream v(validity_file(out, id), std::ios::binary);
  if (!d || !v) throw NotFound("depth map for image " + id);
  return read_ground_depth(d, v);
}

// ---------------------------------------------------------------------------
// train

// The block's field is centred over the block; the height of the centre
// and the scale come from the configuration.
inline FieldConfig block_field_config(const FieldConfig& base, const Block& b) {
  FieldConfig f = base;
  f.scene_center = Vec3(b.center.x(), b.center.y(), base.scene_center.z());
  return f;
}

struct TrainOverrides {
  std::optional<int> iterations;
  std::optional<double> lambda_depth;
  std::optional<bool> use_embeddings;
  std::optional<bool> occlusion_fill;
  std::optional<std::uint64_t> seed;
};

inline void apply(io::Config& cfg, const TrainOverrides& o) {
  if (o.iterations) cfg.train.iterations = *o.iterations;
  if (o.lambda_depth) cfg.train.lambda_depth = *o.lambda_depth;
  if (o.use_embeddings) cfg.train.use_embeddings = *o.use_embeddings;
  if (o.occlusion_fill) cfg.pipeline.occlusion_fill = *o.occlusion_fill;
  if (o.seed) cfg.train.seed = *o.seed;
}

// Training views for a block. Depth comes from the depth stage when
// present; otherwise it is recomputed.
inline std::vector<TrainView> block_views(const io::Manifest& m, const io::Config& cfg, const fs::path& out,
                                          const Block& block) {
  const std::set<std::string> members(block.members.begin(), block.members.end());
  std::vector<TrainView> views;
  for (const auto& e : m.images) {
    if (e.split != "train" || !members.count(e.id)) continue;
    const ImageRecord img = io::load_image(m, e);
    ViewOptions vo;
    vo.ground_depth = false;
    TrainView v = make_train_view(img, vo);
    if (fs::exists(depth_file(out, img.id))) {
      v.depth = read_depth_map(out, img.id);
      if (!cfg.pipeline.occlusion_fill)
        for (auto& s : v.depth.source)
          if (s == DepthSource::kOcclusionFilled) s = DepthSource::kInvalid;
    } else {
      v.depth = make_depth_map(img, cfg.pipeline);
    }
    views.push_back(std::move(v));
  }
  return views;
}

struct BlockTraining {
  int block = 0;
  std::size_t views = 0;
  TrainResult result;
};

inline BlockTraining train_block(const io::Manifest& m, const io::Config& cfg, const fs::path& out, int block_id) {
  return run_stage("train", [&] {
    const auto blocks = read_blocks(out);
    const Block& block = find_block(blocks, block_id);
    const auto views = block_views(m, cfg, out, block);
    if (views.empty()) throw EmptyDataset("block " + std::to_string(block_id) + " has no training images");
    std::vector<AppearanceKey> keys;
    for (const auto& v : views) keys.push_back(v.key);
    RadianceField field(block_field_config(cfg.field, block), keys);
    fs::create_directories(block_dir(out, block_id));
    std::ofstream trace(block_dir(out, block_id) / "trace.tsv");
    trace << "iteration\tloss\tpsnr\tdepth_rmse\n";
    BlockTraining bt;
    bt.block = block_id;
    bt.views = views.size();
    bt.result = train(views, field, cfg.train, {}, [&](const TraceRow& row) { write_trace_row(trace, row); });
    io::save_field(checkpoint_path(out, block_id), field);
    io::write_config(block_dir(out, block_id) / "config.json", cfg);
    return bt;
  });
}

// Blocks that have at least one member, in id order.
inline std::vector<int> trainable_blocks(const fs::path& out) {
  std::vector<int> ids;
  for (const auto& b : read_blocks(out))
    if (!b.members.empty()) ids.push_back(b.id);
  return ids;
}

// ---------------------------------------------------------------------------
// eval

// Block whose centre is nearest to the camera, among trained blocks.
inline int block_for_position(const std::vector<Block>& blocks, const std::vector<int>& trained, const Vec2& p) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& b : blocks) {
    if (std::find(trained.begin(), trained.end(), b.id) == trained.end()) continue;
    const double d = (b.center - p).norm();
    if (d < best_d) {
      best_d = d;
      best = b.id;
    }
  }
  if (best < 0) throw NotFound("no trained block");
  return best;
}

// Test-split images rendered with the average appearance of their camera;
// one metrics row per block plus an "all" row.
inline std::vector<MetricsRow> stage_eval(const io::Manifest& m, const io::Config& cfg, const fs::path& out) {
  return run_stage("eval", [&] {
    const auto blocks = read_blocks(out);
    std::vector<int> trained;
    for (int id : trainable_blocks(out))
      if (fs::exists(checkpoint_path(out, id))) trained.push_back(id);
    std::map<int, std::vector<EvalView>> per_block;
    for (const auto& e : m.images) {
      if (e.split != "test") continue;
      const ImageRecord img = io::load_image(m, e);
      EvalView v;
      v.camera = img.world_camera_pose();
      v.intrinsics = img.camera->intrinsics;
      v.color = img.pixels;
      v.key = AppearanceSelector::average(img.camera_id);
      if (!e.gt_depth.empty()) {
        v.depth = io::read_depth_raster(m.root / e.gt_depth);
        v.depth_valid.resize(v.depth.size());
        for (std::size_t i = 0; i < v.depth.size(); ++i) {
          v.depth_valid[i] = std::isfinite(v.depth[i]) && v.depth[i] < cfg.train.far ? 1 : 0;
          if (!v.depth_valid[i]) v.depth[i] = 0.0;
        }
      }
      per_block[block_for_position(blocks, trained, planar_position(img))].push_back(std::move(v));
    }
    if (per_block.empty()) throw EmptyDataset("no test images");
    std::vector<MetricsRow> rows;
    std::vector<EvalView> all;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    std::vector<double> pred, gt;
    std::vector<char> valid;
    for (const auto& [id, views] : per_block) {
      const RadianceField field = io::load_field(checkpoint_path(out, id));
      MetricsRow row;
      row.name = "block" + std::to_string(id);
      for (const auto& v : views) {
        const RenderedView r = render_view(field, v.camera, v.intrinsics, eval_selector(v.key, cfg.train.use_embeddings),
                                           eval_render_options(cfg.train), cfg.train.near, cfg.train.far);
        const double p = psnr(r.color, v.color);
        const double s = ssim(r.color, v.color);
        row.psnr += p;
        row.ssim += s;
        psnr_sum += p;
        ssim_sum += s;
        if (!v.depth.empty()) {
          pred.insert(pred.end(), r.depth.begin(), r.depth.end());
          gt.insert(gt.end(), v.depth.begin(), v.depth.end());
          valid.insert(valid.end(), v.depth_valid.begin(), v.depth_valid.end());
        }
      }
      row.psnr /= static_cast<double>(views.size());
      row.ssim /= static_cast<double>(views.size());
      rows.push_back(row);
      all.insert(all.end(), views.begin(), views.end());
    }
    // Per-block depth errors are folded into the pooled row only.
    MetricsRow total;
    total.name = "all";
    total.psnr = psnr_sum / static_cast<double>(all.size());
    total.ssim = ssim_sum / static_cast<double>(all.size());
    if (!pred.empty()) total.depth = depth_errors(pred, gt, valid);
    rows.push_back(total);
    fs::create_directories(metrics_file(out).parent_path());
    std::ofstream os(metrics_file(out));
    write_metrics_table(os, rows);
    return rows;
  });
}

// ---------------------------------------------------------------------------

struct PipelineResult {
  FilterReport report;
  std::vector<Block> blocks;
  std::vector<BlockTraining> trained;
  std::vector<MetricsRow> metrics;
};

inline PipelineResult run_pipeline(const fs::path& manifest_path, const io::Config& cfg, const fs::path& out) {
  const io::Manifest m = run_stage("ingest", [&] { return io::read_manifest(manifest_path); });
  PipelineResult r;
  r.report = stage_select(m, cfg, out);
  r.blocks = stage_partition(m, cfg, out);
  stage_depth(m, cfg, out);
  for (int id : run_stage("train", [&] { return trainable_blocks(out); }))
    r.trained.push_back(train_block(m, cfg, out, id));
  r.metrics = stage_eval(m, cfg, out);
  return r;
}

}  // namespace csnerf::pipeline
