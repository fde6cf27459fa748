#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "csnerf/core_types.hpp"

namespace csnerf {

struct Feature {
  std::string image_id;
  double u = 0.0;
  double v = 0.0;
  std::uint8_t label = 0;
};

struct MatchPair {
  std::string image_a;
  std::size_t index_a = 0;
  std::string image_b;
  std::size_t index_b = 0;
  double score = 0.0;

  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

// Features grouped per image; a match's index refers to a position in its
// image's list.
using FeatureIndex = std::map<std::string, std::vector<Feature>>;

// Label of the mask pixel nearest to (u, v).
inline std::uint8_t sample_label(const SemanticMask& mask, double u, double v) {
  const int iu = static_cast<int>(std::lround(u));
  const int iv = static_cast<int>(std::lround(v));
  if (iu < 0 || iv < 0 || iu >= mask.width || iv >= mask.height)
    throw InvalidArgument("feature pixel outside image bounds");
  return mask.at(iu, iv);
}

inline Feature make_feature(const std::string& image_id, const SemanticMask& mask, double u, double v) {
  return {image_id, u, v, sample_label(mask, u, v)};
}

inline std::vector<Feature> drop_dynamic_features(const std::vector<Feature>& features,
                                                  const LabelTable& table = LabelTable::standard()) {
  std::vector<Feature> out;
  out.reserve(features.size());
  for (const auto& f : features)
    if (!table.is_dynamic(f.label)) out.push_back(f);
  return out;
}

// Optional coarse grouping of labels before comparing them (for example
// lane -> road). Labels absent from the map compare by their own id.
using LabelMerge = std::map<std::uint8_t, std::uint8_t>;

inline std::uint8_t merged_label(std::uint8_t id, const LabelMerge& merge) {
  auto it = merge.find(id);
  return it == merge.end() ? id : it->second;
}

inline const Feature& resolve_feature(const FeatureIndex& features, const std::string& image,
                                      std::size_t index) {
  auto it = features.find(image);
  if (it == features.end() || index >= it->second.size())
    throw InvalidArgument("match references unknown feature " + image + "#" + std::to_string(index));
  return it->second[index];
}

inline std::vector<MatchPair> gate_matches_by_semantics(const std::vector<MatchPair>& matches,
                                                        const FeatureIndex& features,
                                                        const LabelMerge& merge = {}) {
  std::vector<MatchPair> out;
  for (const auto& m : matches) {
    const auto la = merged_label(resolve_feature(features, m.image_a, m.index_a).label, merge);
    const auto lb = merged_label(resolve_feature(features, m.image_b, m.index_b).label, merge);
    if (la == lb) out.push_back(m);
  }
  return out;
}

inline constexpr double kDefaultNeighborhoodRadius = 50.0;

// Unordered pairs (i < j in input order) of images whose prior positions
// lie within `radius`. Uses a uniform hash grid with cell size `radius`.
inline std::vector<std::pair<std::string, std::string>> candidate_pairs_by_prior(
    const std::vector<ImageRecord>& images, double radius = kDefaultNeighborhoodRadius) {
  if (!(radius > 0.0)) throw InvalidArgument("radius must be positive");
  struct CellHash {
    std::size_t operator()(const std::pair<long long, long long>& c) const {
      return std::hash<long long>()(c.first * 73856093LL ^ c.second * 19349663LL);
    }
  };
  std::unordered_map<std::pair<long long, long long>, std::vector<std::size_t>, CellHash> grid;
  auto cell_of = [&](const Vec3& p) {
    return std::make_pair(static_cast<long long>(std::floor(p.x() / radius)),
                          static_cast<long long>(std::floor(p.y() / radius)));
  };
  for (std::size_t i = 0; i < images.size(); ++i)
    grid[cell_of(images[i].prior_pose.position())].push_back(i);

  std::vector<std::pair<std::size_t, std::size_t>> index_pairs;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Vec3 pi = images[i].prior_pose.position();
    const auto c = cell_of(pi);
    for (long long dx = -1; dx <= 1; ++dx) {
      for (long long dy = -1; dy <= 1; ++dy) {
        auto it = grid.find({c.first + dx, c.second + dy});
        if (it == grid.end()) continue;
        for (auto j : it->second)
          if (j > i && (images[j].prior_pose.position() - pi).norm() <= radius)
            index_pairs.emplace_back(i, j);
      }
    }
  }
  std::sort(index_pairs.begin(), index_pairs.end());
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(index_pairs.size());
  for (auto [i, j] : index_pairs) out.emplace_back(images[i].id, images[j].id);
  return out;
}

// ---------------------------------------------------------------------------
// Plain-text exchange formats.
//   matches:  `imageA imageB idxA idxB score` per line
//   features: `image u v` per line; index = ordinal within the image

inline std::vector<MatchPair> read_matches(std::istream& is) {
  std::vector<MatchPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    MatchPair m;
    if (!(ls >> m.image_a >> m.image_b >> m.index_a >> m.index_b >> m.score))
      throw FormatError("match line " + std::to_string(lineno));
    if (m.image_a == m.image_b) throw FormatError("self match on line " + std::to_string(lineno));
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_matches(std::ostream& os, const std::vector<MatchPair>& matches) {
  for (const auto& m : matches)
    os << m.image_a << ' ' << m.image_b << ' ' << m.index_a << ' ' << m.index_b << ' ' << m.score << '\n';
}

struct RawFeature {
  std::string image_id;
  double u = 0.0;
  double v = 0.0;
};

inline std::vector<RawFeature> read_features(std::istream& is) {
  std::vector<RawFeature> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    RawFeature f;
    if (!(ls >> f.image_id >> f.u >> f.v)) throw FormatError("feature line " + std::to_string(lineno));
    out.push_back(std::move(f));
  }
  return out;
}

inline void write_features(std::ostream& os, const std::vector<Feature>& features) {
  for (const auto& f : features) os << f.image_id << ' ' << f.u << ' ' << f.v << '\n';
}

}  // namespace csnerf
