#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csnerf/autodiff.hpp"
#include "csnerf/binary_io.hpp"
#include "csnerf/core_types.hpp"

namespace csnerf {

using ad::Matrix;

struct FieldConfig {
  std::vector<int> grid_resolutions{16, 32, 64, 128};
  int grid_features = 2;
  int position_frequencies = 2;
  int direction_frequencies = 2;
  int appearance_dim = 8;
  int hidden_width = 32;
  int hidden_layers = 2;
  int geo_feature_dim = 15;
  bool contraction = true;
  double density_bias = -1.0;
  // World points are mapped to (x - scene_center) / scene_scale before
  // contraction.
  Vec3 scene_center = Vec3::Zero();
  double scene_scale = 1.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (grid_resolutions.empty()) throw InvalidArgument("at least one grid level required");
    for (std::size_t i = 0; i < grid_resolutions.size(); ++i) {
      if (grid_resolutions[i] < 1) throw InvalidArgument("grid resolution must be >= 1");
      if (i > 0 && grid_resolutions[i] <= grid_resolutions[i - 1])
        throw InvalidArgument("grid resolutions must be strictly increasing");
    }
    if (grid_features < 1 || position_frequencies < 1 || direction_frequencies < 1 ||
        appearance_dim < 1 || hidden_width < 1 || hidden_layers < 1 || geo_feature_dim < 1)
      throw InvalidArgument("field counts must be >= 1");
    if (!(scene_scale > 0.0)) throw InvalidArgument("scene scale must be positive");
  }

  int density_input_dim() const {
    return static_cast<int>(grid_resolutions.size()) * grid_features + 6 * position_frequencies;
  }
  int color_input_dim() const { return geo_feature_dim + 6 * direction_frequencies + appearance_dim; }
};

inline nlohmann::json to_json(const FieldConfig& c) {
  return {{"grid_resolutions", c.grid_resolutions},
          {"grid_features", c.grid_features},
          {"position_frequencies", c.position_frequencies},
          {"direction_frequencies", c.direction_frequencies},
          {"appearance_dim", c.appearance_dim},
          {"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers},
          {"geo_feature_dim", c.geo_feature_dim},
          {"contraction", c.contraction},
          {"density_bias", c.density_bias},
          {"scene_center", {c.scene_center.x(), c.scene_center.y(), c.scene_center.z()}},
          {"scene_scale", c.scene_scale},
          {"seed", c.seed}};
}

// Missing keys keep the values already in `c`.
inline void update_from_json(FieldConfig& c, const nlohmann::json& j) {
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  get("grid_resolutions", c.grid_resolutions);
  get("grid_features", c.grid_features);
  get("position_frequencies", c.position_frequencies);
  get("direction_frequencies", c.direction_frequencies);
  get("appearance_dim", c.appearance_dim);
  get("hidden_width", c.hidden_width);
  get("hidden_layers", c.hidden_layers);
  get("geo_feature_dim", c.geo_feature_dim);
  get("contraction", c.contraction);
  get("density_bias", c.density_bias);
  if (j.contains("scene_center")) {
    auto v = j.at("scene_center").get<std::vector<double>>();
    if (v.size() != 3) throw FormatError("scene_center must have 3 entries");
    c.scene_center = Vec3(v[0], v[1], v[2]);
  }
  get("scene_scale", c.scene_scale);
  get("seed", c.seed);
}

// gamma(x) = [sin(x), cos(x), sin(2x), cos(2x), ..., sin(2^{L-1}x), cos(2^{L-1}x)]
// where each sin/cos block covers the three coordinates.
inline Eigen::VectorXd positional_encode(const Vec3& x, int frequencies) {
  Eigen::VectorXd out(6 * frequencies);
  double scale = 1.0;
  for (int k = 0; k < frequencies; ++k, scale *= 2.0) {
    for (int a = 0; a < 3; ++a) {
      out(6 * k + a) = std::sin(scale * x(a));
      out(6 * k + 3 + a) = std::cos(scale * x(a));
    }
  }
  return out;
}

inline Matrix positional_encode_rows(const Matrix& xs, int frequencies) {
  Matrix out(xs.rows(), 6 * frequencies);
  for (ad::Index r = 0; r < xs.rows(); ++r)
    out.row(r) = positional_encode(Vec3(xs(r, 0), xs(r, 1), xs(r, 2)), frequencies).transpose();
  return out;
}

// Identity inside the unit ball, (2 - 1/|x|) x/|x| outside; image lies in
// the open ball of radius 2.
inline Vec3 contract(const Vec3& x) {
  const double n = x.norm();
  if (n <= 1.0) return x;
  return (2.0 - 1.0 / n) * (x / n);
}

// Which appearance embedding a query uses.
struct AppearanceSelector {
  enum class Kind { kSequence, kAverage, kZero };
  Kind kind = Kind::kZero;
  AppearanceKey key;  // kSequence: the sequence; kAverage: key.camera picks the camera

  static AppearanceSelector sequence(AppearanceKey k) { return {Kind::kSequence, std::move(k)}; }
  static AppearanceSelector average(int camera) { return {Kind::kAverage, {"", camera}}; }
  static AppearanceSelector zero() { return {}; }
};

struct FieldSamples {
  Eigen::VectorXd sigma;
  Matrix color;  // N x 3
};

struct FieldForward {
  ad::Var sigma;  // N x 1
  ad::Var color;  // N x 3
};

class RadianceField {
 public:
  enum class Group { kGrid, kHead, kEmbedding };

  RadianceField() = default;

  RadianceField(FieldConfig config, std::vector<AppearanceKey> sequences)
      : config_(std::move(config)), sequences_(std::move(sequences)) {
    config_.validate();
    std::sort(sequences_.begin(), sequences_.end());
    sequences_.erase(std::unique(sequences_.begin(), sequences_.end()), sequences_.end());
    allocate();
    initialize();
  }

  // All parameters zero: density is softplus(density_bias) everywhere and
  // color is 0.5 everywhere.
  static RadianceField zeros(FieldConfig config, std::vector<AppearanceKey> sequences) {
    RadianceField f(std::move(config), std::move(sequences));
    for (auto& p : f.params_) p.setZero();
    return f;
  }

  const FieldConfig& config() const { return config_; }
  const std::vector<AppearanceKey>& sequences() const { return sequences_; }
  std::vector<Matrix>& parameters() { return params_; }
  const std::vector<Matrix>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  const std::vector<Group>& parameter_groups() const { return groups_; }
  std::size_t embedding_parameter() const { return params_.size() - 1; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
    return n;
  }

  int sequence_index(const AppearanceKey& key) const {
    auto it = std::lower_bound(sequences_.begin(), sequences_.end(), key);
    if (it == sequences_.end() || !(*it == key))
      throw UnknownSequence("trip " + key.trip + " camera " + std::to_string(key.camera));
    return static_cast<int>(it - sequences_.begin());
  }

  // Embedding rows averaged for each of `n` samples.
  ad::RowMix embedding_mix(const AppearanceSelector& sel, ad::Index n) const {
    std::vector<ad::Index> cols;
    switch (sel.kind) {
      case AppearanceSelector::Kind::kSequence:
        cols.push_back(sequence_index(sel.key));
        break;
      case AppearanceSelector::Kind::kAverage:
        for (std::size_t i = 0; i < sequences_.size(); ++i)
          if (sequences_[i].camera == sel.key.camera) cols.push_back(static_cast<ad::Index>(i));
        if (cols.empty())
          for (std::size_t i = 0; i < sequences_.size(); ++i) cols.push_back(static_cast<ad::Index>(i));
        break;
      case AppearanceSelector::Kind::kZero:
        break;
    }
    ad::RowMix mix;
    mix.offset.reserve(static_cast<std::size_t>(n) + 1);
    for (ad::Index r = 0; r < n; ++r) mix.push_mean(cols);
    return mix;
  }

  // Mean of the embedding rows the selector resolves to.
  Eigen::VectorXd embedding_vector(const AppearanceSelector& sel) const {
    const ad::RowMix mix = embedding_mix(sel, 1);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(config_.appearance_dim);
    for (ad::Index k = mix.offset[0]; k < mix.offset[1]; ++k)
      e += mix.weight[k] * params_.back().row(mix.column[k]).transpose();
    return e;
  }

  // Maps world points into the unit cube the grids live in.
  Matrix to_unit_cube(const Matrix& world_points) const {
    Matrix out(world_points.rows(), 3);
    for (ad::Index r = 0; r < world_points.rows(); ++r) {
      Vec3 x = (Vec3(world_points(r, 0), world_points(r, 1), world_points(r, 2)) - config_.scene_center) /
               config_.scene_scale;
      Vec3 c = config_.contraction ? contract(x) : x.cwiseMax(-2.0).cwiseMin(2.0);
      out.row(r) = ((c.array() + 2.0) / 4.0).matrix().transpose();
    }
    return out;
  }

  // Records the field evaluation on `tape`. `grads`, when non-null, must
  // match parameters() in shape and receives parameter gradients on
  // backward; `train_embeddings` false keeps the embedding table out of it.
  FieldForward forward(ad::Tape& tape, const Matrix& world_points, const Matrix& directions,
                       const ad::RowMix& embedding, std::vector<Matrix>* grads = nullptr,
                       bool train_embeddings = true) const {
    auto ref = [&](std::size_t i) {
      return ad::ParamRef{&params_[i], grads ? &(*grads)[i] : nullptr};
    };
    const Matrix unit = to_unit_cube(world_points);

    std::vector<ad::Var> inputs;
    const std::size_t levels = config_.grid_resolutions.size();
    for (std::size_t l = 0; l < levels; ++l)
      inputs.push_back(tape.grid_lookup(unit, ref(l), config_.grid_resolutions[l]));
    Matrix centered = unit.array() * 4.0 - 2.0;
    inputs.push_back(tape.constant(positional_encode_rows(centered, config_.position_frequencies)));
    ad::Var h = tape.concat_cols(inputs);

    std::size_t p = levels;
    h = mlp(tape, h, ref, p);
    ad::Var raw_density = tape.slice_cols(h, 0, 1);
    ad::Var sigma = tape.softplus(tape.add_scalar(raw_density, config_.density_bias));
    ad::Var geo = tape.slice_cols(h, 1, config_.geo_feature_dim);

    ad::Var dir_enc = tape.constant(positional_encode_rows(directions, config_.direction_frequencies));
    ad::ParamRef emb_ref = ref(embedding_parameter());
    if (!train_embeddings) emb_ref.grad = nullptr;
    ad::Var emb = tape.mix_rows(emb_ref, embedding);
    ad::Var c = tape.concat_cols({geo, dir_enc, emb});
    c = mlp(tape, c, ref, p);
    return {sigma, tape.sigmoid(c)};
  }

  FieldSamples query_points(const Matrix& world_points, const Matrix& directions,
                            const AppearanceSelector& sel) const {
    ad::Tape tape(false);
    const FieldForward out = forward(tape, world_points, directions, embedding_mix(sel, world_points.rows()));
    return {tape.value(out.sigma).col(0), tape.value(out.color)};
  }

  std::pair<double, Vec3> query(const Vec3& x, const Vec3& d, const AppearanceSelector& sel) const {
    Matrix xs(1, 3), ds(1, 3);
    xs.row(0) = x.transpose();
    ds.row(0) = d.transpose();
    const FieldSamples s = query_points(xs, ds, sel);
    return {s.sigma(0), s.color.row(0).transpose()};
  }

  // -------------------------------------------------------------------------
  // Checkpoint: "CSNF" | u32 version | string config-json |
  //             u32 n_sequences | (string trip, u32 camera)* |
  //             u32 n_params | (string name, u32 rows, u32 cols, f32 data[])*
  void save(std::ostream& os) const {
    os.write("CSNF", 4);
    binary::put_u32(os, kCheckpointVersion);
    binary::put_string(os, to_json(config_).dump());
    binary::put_u32(os, static_cast<std::uint32_t>(sequences_.size()));
    for (const auto& s : sequences_) {
      binary::put_string(os, s.trip);
      binary::put_u32(os, static_cast<std::uint32_t>(s.camera));
    }
    binary::put_u32(os, static_cast<std::uint32_t>(params_.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      binary::put_string(os, names_[i]);
      binary::put_u32(os, static_cast<std::uint32_t>(params_[i].rows()));
      binary::put_u32(os, static_cast<std::uint32_t>(params_[i].cols()));
      const double* data = params_[i].data();
      for (ad::Index k = 0; k < params_[i].size(); ++k) binary::put_f32(os, static_cast<float>(data[k]));
    }
  }

  static RadianceField load(std::istream& is) {
    char magic[4];
    binary::read_exact(is, magic, 4);
    if (std::string(magic, 4) != "CSNF") throw FormatError("not a field checkpoint");
    const auto version = binary::get_u32(is);
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    FieldConfig config;
    update_from_json(config, nlohmann::json::parse(binary::get_string(is)));
    std::vector<AppearanceKey> seqs(binary::get_u32(is));
    for (auto& s : seqs) {
      s.trip = binary::get_string(is);
      s.camera = static_cast<int>(binary::get_u32(is));
    }
    RadianceField f = zeros(config, seqs);
    if (binary::get_u32(is) != f.params_.size()) throw FormatError("parameter count mismatch");
    for (std::size_t i = 0; i < f.params_.size(); ++i) {
      if (binary::get_string(is) != f.names_[i]) throw FormatError("parameter name mismatch");
      const auto rows = binary::get_u32(is);
      const auto cols = binary::get_u32(is);
      if (rows != f.params_[i].rows() || cols != f.params_[i].cols())
        throw FormatError("parameter shape mismatch for " + f.names_[i]);
      double* data = f.params_[i].data();
      for (ad::Index k = 0; k < f.params_[i].size(); ++k) data[k] = binary::get_f32(is);
    }
    return f;
  }

  static constexpr std::uint32_t kCheckpointVersion = 1;

 private:
  template <class Ref>
  ad::Var mlp(ad::Tape& tape, ad::Var h, const Ref& ref, std::size_t& p) const {
    for (int layer = 0; layer <= config_.hidden_layers; ++layer) {
      h = tape.add_row(tape.matmul(h, tape.parameter(ref(p))), tape.parameter(ref(p + 1)));
      p += 2;
      if (layer < config_.hidden_layers) h = tape.softplus(h);
    }
    return h;
  }

  void add_param(std::string name, ad::Index rows, ad::Index cols, Group g) {
    params_.push_back(Matrix::Zero(rows, cols));
    names_.push_back(std::move(name));
    groups_.push_back(g);
  }

  void add_mlp(const std::string& prefix, int in, int out) {
    int fan_in = in;
    for (int layer = 0; layer <= config_.hidden_layers; ++layer) {
      const int width = layer < config_.hidden_layers ? config_.hidden_width : out;
      add_param(prefix + "." + std::to_string(layer) + ".weight", fan_in, width, Group::kHead);
      add_param(prefix + "." + std::to_string(layer) + ".bias", 1, width, Group::kHead);
      fan_in = width;
    }
  }

  void allocate() {
    params_.clear();
    names_.clear();
    groups_.clear();
    for (std::size_t l = 0; l < config_.grid_resolutions.size(); ++l) {
      const ad::Index side = config_.grid_resolutions[l] + 1;
      add_param("grid." + std::to_string(l), side * side * side, config_.grid_features, Group::kGrid);
    }
    add_mlp("density", config_.density_input_dim(), 1 + config_.geo_feature_dim);
    add_mlp("color", config_.color_input_dim(), 3);
    add_param("appearance", static_cast<ad::Index>(sequences_.size()), config_.appearance_dim,
              Group::kEmbedding);
  }

  // Grid features ~ U(-1e-4, 1e-4); weights ~ U(-b, b) with b = sqrt(6 /
  // fan_in); biases and embeddings zero.
  void initialize() {
    std::mt19937_64 rng(config_.seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Matrix& p = params_[i];
      double bound = 0.0;
      if (groups_[i] == Group::kGrid) {
        bound = 1e-4;
      } else if (groups_[i] == Group::kHead && names_[i].ends_with(".weight")) {
        bound = std::sqrt(6.0 / static_cast<double>(p.rows()));
      }
      if (bound == 0.0) {
        p.setZero();
        continue;
      }
      std::uniform_real_distribution<double> dist(-bound, bound);
      double* data = p.data();
      for (ad::Index k = 0; k < p.size(); ++k) data[k] = dist(rng);
    }
  }

  FieldConfig config_;
  std::vector<AppearanceKey> sequences_;
  std::vector<Matrix> params_;
  std::vector<std::string> names_;
  std::vector<Group> groups_;
};

}  // namespace csnerf
