#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "csnerf/core_types.hpp"

namespace csnerf {

inline constexpr double kPi = 3.14159265358979323846;

inline Vec2 planar_position(const ImageRecord& img) {
  const Vec3 p = img.best_pose().position();
  return {p.x(), p.y()};
}

// ---------------------------------------------------------------------------
// Blocks

struct Block {
  int id = 0;
  Vec2 center = Vec2::Zero();
  double side = 0.0;
  std::vector<std::string> members;

  bool contains(const Vec2& p) const {
    const double h = 0.5 * side;
    return std::abs(p.x() - center.x()) <= h && std::abs(p.y() - center.y()) <= h;
  }

  Vec2 min_corner() const { return center - Vec2::Constant(0.5 * side); }
  Vec2 max_corner() const { return center + Vec2::Constant(0.5 * side); }
};

inline constexpr double kDefaultBlockOverlap = 0.2;

// Regular grid of square tiles with stride side * (1 - overlap), centered
// on the bounding box of image positions. Every tile is returned, ids
// row-major (y outer, x inner); members are every image inside the tile.
inline std::vector<Block> partition_blocks(const std::vector<ImageRecord>& images, double block_side,
                                           double overlap_fraction = kDefaultBlockOverlap) {
  if (images.empty()) throw EmptyDataset("no images to partition");
  if (!(block_side > 0.0)) throw InvalidArgument("block side must be positive");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
    throw InvalidArgument("overlap fraction must be in [0, 1)");

  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
  Vec2 hi = -lo;
  for (const auto& img : images) {
    const Vec2 p = planar_position(img);
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }

  const double stride = block_side * (1.0 - overlap_fraction);
  auto tiles_along = [&](double extent) {
    if (extent <= block_side) return 1;
    return 1 + static_cast<int>(std::ceil((extent - block_side) / stride - 1e-12));
  };
  const Vec2 extent = hi - lo;
  const int nx = tiles_along(extent.x());
  const int ny = tiles_along(extent.y());
  const Vec2 mid = 0.5 * (lo + hi);
  const Vec2 span((nx - 1) * stride, (ny - 1) * stride);
  const Vec2 first = mid - 0.5 * span;

  std::vector<Block> blocks;
  blocks.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      Block b;
      b.id = j * nx + i;
      b.center = first + Vec2(i * stride, j * stride);
      b.side = block_side;
      for (const auto& img : images)
        if (b.contains(planar_position(img))) b.members.push_back(img.id);
      blocks.push_back(std::move(b));
    }
  }
  return blocks;
}

// ---------------------------------------------------------------------------
// Filtering

enum class Decision { kKept, kRejected };

enum class RejectReason { kNone, kDynamicProportion, kPoseInstability, kRedundancy };

inline const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::kNone: return "none";
    case RejectReason::kDynamicProportion: return "dynamic_proportion";
    case RejectReason::kPoseInstability: return "pose_instability";
    case RejectReason::kRedundancy: return "redundancy";
  }
  return "none";
}

struct FilterRecord {
  std::string image_id;
  Decision decision = Decision::kKept;
  RejectReason reason = RejectReason::kNone;
  bool missing_refined_pose = false;  // passed through the stability filter unjudged
};

struct FilterReport {
  std::vector<FilterRecord> records;

  std::size_t kept_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) {
      return r.decision == Decision::kKept;
    }));
  }
  std::size_t rejected_count() const { return records.size() - kept_count(); }
  std::size_t count(RejectReason reason) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const auto& r) {
      return r.decision == Decision::kRejected && r.reason == reason;
    }));
  }

  std::vector<std::string> kept_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : records)
      if (r.decision == Decision::kKept) ids.push_back(r.image_id);
    return ids;
  }

  const FilterRecord* find(const std::string& id) const {
    for (const auto& r : records)
      if (r.image_id == id) return &r;
    return nullptr;
  }
};

// One line per image: `id<TAB>kept|rejected<TAB>reason[<TAB>unjudged_pose]`.
inline void write_filter_report(std::ostream& os, const FilterReport& report) {
  for (const auto& r : report.records) {
    os << r.image_id << '\t' << (r.decision == Decision::kKept ? "kept" : "rejected") << '\t'
       << to_string(r.reason);
    if (r.missing_refined_pose) os << "\tunjudged_pose";
    os << '\n';
  }
}

inline constexpr double kDefaultDynamicThreshold = 0.40;

inline Decision filter_dynamic_proportion(const ImageRecord& img,
                                          double threshold = kDefaultDynamicThreshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InvalidArgument("threshold must be in (0, 1]");
  if (img.mask.labels.empty()) throw InvalidArgument("image " + img.id + " has no semantic mask");
  return img.mask.dynamic_fraction() > threshold ? Decision::kRejected : Decision::kKept;
}

struct PoseStabilityResult {
  Decision decision = Decision::kKept;
  bool missing_refined_pose = false;
};

inline PoseStabilityResult filter_pose_stability(const ImageRecord& img, double max_translation,
                                                 double max_rotation) {
  if (!img.refined_pose) return {Decision::kKept, true};
  const double dt = (img.refined_pose->translation - img.prior_pose.translation).norm();
  const double dr = rotation_angle_between(img.prior_pose.rotation, img.refined_pose->rotation);
  const bool unstable = dt > max_translation || dr > max_rotation;
  return {unstable ? Decision::kRejected : Decision::kKept, false};
}

struct DiversityParams {
  double pos_radius = 2.0;
  double time_window = 2.0;
  double view_angle = 10.0 * kPi / 180.0;
  int keep_per_cluster = 1;
};

namespace detail {

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

// Links images that are close in position, time and viewing direction, then
// keeps `keep_per_cluster` images per connected component (earliest
// timestamp first, then lowest dynamic fraction, then id).
inline FilterReport filter_diversity(const std::vector<ImageRecord>& images,
                                     const DiversityParams& params = {}) {
  if (params.keep_per_cluster < 1) throw InvalidArgument("keep_per_cluster must be >= 1");
  const std::size_t n = images.size();
  std::vector<Vec3> pos(n), dir(n);
  std::vector<double> dyn(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = images[i].best_pose().position();
    dir[i] = images[i].view_direction();
    dyn[i] = images[i].mask.dynamic_fraction();
  }

  const double cos_limit = std::cos(params.view_angle);
  detail::DisjointSet sets(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if ((pos[i] - pos[j]).norm() > params.pos_radius) continue;
      if (std::abs(images[i].timestamp - images[j].timestamp) > params.time_window) continue;
      if (dir[i].dot(dir[j]) < cos_limit) continue;
      sets.unite(i, j);
    }
  }

  std::map<std::size_t, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < n; ++i) clusters[sets.find(i)].push_back(i);

  FilterReport report;
  report.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) report.records[i].image_id = images[i].id;
  for (auto& [root, members] : clusters) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(images[a].timestamp, dyn[a], images[a].id) <
             std::tie(images[b].timestamp, dyn[b], images[b].id);
    });
    for (std::size_t k = static_cast<std::size_t>(params.keep_per_cluster); k < members.size(); ++k) {
      report.records[members[k]].decision = Decision::kRejected;
      report.records[members[k]].reason = RejectReason::kRedundancy;
    }
  }
  return report;
}

struct SelectionConfig {
  double dynamic_threshold = kDefaultDynamicThreshold;
  double max_translation = 5.0;
  double max_rotation = 5.0 * kPi / 180.0;
  DiversityParams diversity;
};

struct SelectionResult {
  FilterReport report;  // one record per input image, input order
  std::vector<ImageRecord> kept;
};

// Dynamic-proportion, then pose-stability, then diversity over the survivors.
inline SelectionResult run_selection(const std::vector<ImageRecord>& images,
                                     const SelectionConfig& config = {}) {
  SelectionResult result;
  result.report.records.resize(images.size());
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& rec = result.report.records[i];
    rec.image_id = images[i].id;
    if (filter_dynamic_proportion(images[i], config.dynamic_threshold) == Decision::kRejected) {
      rec.decision = Decision::kRejected;
      rec.reason = RejectReason::kDynamicProportion;
      continue;
    }
    const auto stability =
        filter_pose_stability(images[i], config.max_translation, config.max_rotation);
    rec.missing_refined_pose = stability.missing_refined_pose;
    if (stability.decision == Decision::kRejected) {
      rec.decision = Decision::kRejected;
      rec.reason = RejectReason::kPoseInstability;
      continue;
    }
    survivors.push_back(i);
  }

  std::vector<ImageRecord> candidates;
  candidates.reserve(survivors.size());
  for (auto i : survivors) candidates.push_back(images[i]);
  const FilterReport diversity = filter_diversity(candidates, config.diversity);
  for (std::size_t k = 0; k < survivors.size(); ++k) {
    auto& rec = result.report.records[survivors[k]];
    rec.decision = diversity.records[k].decision;
    rec.reason = diversity.records[k].reason;
    if (rec.decision == Decision::kKept) result.kept.push_back(std::move(candidates[k]));
  }
  return result;
}

}  // namespace csnerf
