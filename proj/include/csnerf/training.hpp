#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "csnerf/autodiff.hpp"
#include "csnerf/ground_geometry.hpp"
#include "csnerf/metrics.hpp"
#include "csnerf/radiance_field.hpp"
#include "csnerf/volume_renderer.hpp"

namespace csnerf {

// ---------------------------------------------------------------------------
// Losses on plain values

inline double loss_rgb(const Vec3& c, const Vec3& c_gt) { return (c - c_gt).squaredNorm(); }

enum class DepthTarget { kDirac, kGaussian };

// Desired weight density per bin for a surface at depth `d`. Bins are laid
// end to end from `near` with widths `dt`.
inline std::vector<double> depth_target_density(const std::vector<double>& dt, double near, double d,
                                                DepthTarget kind = DepthTarget::kDirac) {
  std::vector<double> target(dt.size(), 0.0);
  double far = near;
  for (double x : dt) far += x;
  if (!(d > near && d < far)) throw DepthOutOfRange("depth " + std::to_string(d) + " outside ray bounds");
  double edge = near;
  std::size_t k = dt.size() - 1;
  for (std::size_t i = 0; i < dt.size(); ++i) {
    if (d < edge + dt[i]) {
      k = i;
      break;
    }
    edge += dt[i];
  }
  if (kind == DepthTarget::kDirac) {
    target[k] = 1.0 / dt[k];
    return target;
  }
  // Gaussian over bin centers with a standard deviation of one bin width,
  // normalised to unit mass.
  const double sd = dt[k];
  double mass = 0.0;
  edge = near;
  for (std::size_t i = 0; i < dt.size(); ++i) {
    const double center = edge + 0.5 * dt[i];
    const double z = (center - d) / sd;
    target[i] = std::exp(-0.5 * z * z);
    mass += target[i] * dt[i];
    edge += dt[i];
  }
  for (auto& x : target) x /= mass;
  return target;
}

// Discrete form of the integral of (w(t) - delta(t - d))^2: sum over bins of
// dt_i * (w_i / dt_i - target_i)^2.
inline double loss_depth(const std::vector<RaySample>& samples, double near, double d,
                         DepthTarget kind = DepthTarget::kDirac) {
  std::vector<double> dt(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) dt[i] = samples[i].dt;
  const auto target = depth_target_density(dt, near, d, kind);
  double loss = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double e = samples[i].weight / dt[i] - target[i];
    loss += dt[i] * e * e;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Batches

struct TrainBatch {
  std::vector<Ray> rays;
  std::vector<Vec3> colors;           // ground truth, meaningful where has_color
  std::vector<char> has_color;        // photometric supervision on/off
  std::vector<double> depth;          // NaN where not depth supervised
  std::vector<AppearanceSelector> keys;

  std::size_t size() const { return rays.size(); }
  bool depth_supervised(std::size_t i) const { return !std::isnan(depth[i]); }

  void push(const Ray& r, const Vec3& c, bool color, double d, AppearanceSelector key) {
    rays.push_back(r);
    colors.push_back(c);
    has_color.push_back(color ? 1 : 0);
    depth.push_back(d);
    keys.push_back(std::move(key));
  }

  void validate() const {
    for (std::size_t i = 0; i < size(); ++i)
      if (depth_supervised(i) && !(depth[i] > rays[i].near && depth[i] < rays[i].far))
        throw DepthOutOfRange("batch ray " + std::to_string(i));
  }
};

// Sum of photometric losses over color-supervised rays plus lambda_d times
// the depth losses over depth-supervised rays. `renders` must carry samples.
inline double loss_total(const TrainBatch& batch, const std::vector<RenderOutput>& renders,
                         double lambda_depth, DepthTarget kind = DepthTarget::kDirac) {
  double rgb = 0.0;
  double depth = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.has_color[i]) rgb += loss_rgb(renders[i].color, batch.colors[i]);
    if (lambda_depth != 0.0 && batch.depth_supervised(i))
      depth += loss_depth(renders[i].samples, batch.rays[i].near, batch.depth[i], kind);
  }
  return rgb + lambda_depth * depth;
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  int iterations = 500;
  int batch_rays = 512;
  int n_samples = 64;
  double near = 0.3;
  double far = 80.0;
  double lr_grid = 3e-2;
  double lr_head = 5e-3;
  double lr_embedding = 5e-3;
  double final_lr_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-10;
  double lambda_depth = 0.05;
  double depth_fraction = 0.25;
  DepthTarget depth_target = DepthTarget::kDirac;
  bool use_embeddings = true;
  bool stratified = true;
  std::uint64_t seed = 1;
  int eval_every = 0;  // 0: evaluate only after the last iteration

  void validate() const {
    if (iterations < 1 || batch_rays < 1 || n_samples < 2) throw InvalidArgument("train counts must be positive");
    if (!(lr_grid > 0 && lr_head > 0 && lr_embedding > 0)) throw InvalidArgument("learning rates must be positive");
    if (!(lambda_depth >= 0.0)) throw InvalidArgument("lambda_depth must be >= 0");
    if (!(near >= 0.0 && near < far)) throw InvalidArgument("near/far out of order");
    if (!(depth_fraction >= 0.0 && depth_fraction <= 1.0)) throw InvalidArgument("depth_fraction must be in [0,1]");
  }
};

// One training image: camera, target pixels, which pixels carry photometric
// supervision (static ones), and the ground depth map (observed and, when
// occlusion completion ran, filled pixels).
struct TrainView {
  Pose camera;
  CameraIntrinsics intrinsics;
  ImageRGB pixels;
  std::vector<char> color_mask;
  GroundDepthMap depth;  // may be empty (width 0)
  AppearanceKey key;
};

// A held-out view with ground truth for evaluation.
struct EvalView {
  Pose camera;
  CameraIntrinsics intrinsics;
  ImageRGB color;
  std::vector<double> depth;       // may be empty
  std::vector<char> depth_valid;   // may be empty
  AppearanceSelector key;
};

// ---------------------------------------------------------------------------
// Views from image records

struct ViewOptions {
  bool ground_depth = true;
  bool occlusion_fill = true;
  double max_depth = kDefaultMaxGroundDepth;
};

// Photometric supervision on static pixels; ground depth on ground pixels
// and, with occlusion_fill, on dynamic pixels over the plane.
inline TrainView make_train_view(const ImageRecord& img, const ViewOptions& opt = {}) {
  TrainView v;
  v.camera = img.world_camera_pose();
  v.intrinsics = img.camera->intrinsics;
  v.pixels = img.pixels;
  v.key = img.sequence_key();
  v.color_mask.resize(img.mask.labels.size());
  for (std::size_t i = 0; i < v.color_mask.size(); ++i)
    v.color_mask[i] = img.mask.table.is_dynamic(img.mask.labels[i]) ? 0 : 1;
  if (opt.ground_depth) {
    v.depth = build_ground_depth_map(img, opt.max_depth);
    if (opt.occlusion_fill) v.depth = complete_occlusions(v.depth, img.mask, *img.camera, opt.max_depth);
  }
  return v;
}

inline std::vector<TrainView> make_train_views(const std::vector<ImageRecord>& images, const ViewOptions& opt = {}) {
  std::vector<TrainView> views;
  views.reserve(images.size());
  for (const auto& img : images) views.push_back(make_train_view(img, opt));
  return views;
}

inline std::vector<AppearanceKey> sequences_of(const std::vector<ImageRecord>& images) {
  std::set<AppearanceKey> keys;
  for (const auto& img : images) keys.insert(img.sequence_key());
  return {keys.begin(), keys.end()};
}

// ---------------------------------------------------------------------------
// Loss + gradient through the tape

struct LossBreakdown {
  double objective = 0.0;  // loss_total / batch size, the optimised value
  double rgb = 0.0;        // sum over rays
  double depth = 0.0;      // sum over rays, unweighted
  std::vector<RenderOutput> renders;  // per ray color/depth/opacity (no samples)
};

inline std::vector<Matrix> zero_gradients(const RadianceField& field) {
  std::vector<Matrix> g;
  g.reserve(field.parameters().size());
  for (const auto& p : field.parameters()) g.push_back(Matrix::Zero(p.rows(), p.cols()));
  return g;
}

// Forward pass over the batch; when `grads` is given, d(objective)/d(param)
// is accumulated into it.
inline LossBreakdown evaluate_batch(const RadianceField& field, const TrainBatch& batch,
                                    const TrainConfig& cfg, std::uint64_t sample_seed,
                                    std::vector<Matrix>* grads) {
  const auto rays = static_cast<ad::Index>(batch.size());
  const int s = cfg.n_samples;
  Matrix pts(rays * s, 3), dirs(rays * s, 3), deltas(rays, s), target = Matrix::Zero(rays, s);
  Matrix gt(rays, 3);
  std::vector<char> depth_mask(static_cast<std::size_t>(rays), 0);
  ad::RowMix mix;
  mix.offset.reserve(static_cast<std::size_t>(rays * s) + 1);
  for (ad::Index r = 0; r < rays; ++r) {
    const Ray& ray = batch.rays[r];
    const SampleSet set = sample_ray(ray, s, cfg.stratified, mix_seed(sample_seed, r));
    const ad::RowMix ray_mix = field.embedding_mix(cfg.use_embeddings ? batch.keys[r] : AppearanceSelector::zero(), 1);
    std::vector<ad::Index> cols(ray_mix.column.begin(), ray_mix.column.end());
    for (int i = 0; i < s; ++i) {
      pts.row(r * s + i) = ray.at(set.t[i]).transpose();
      dirs.row(r * s + i) = ray.direction.transpose();
      deltas(r, i) = set.dt[i];
      mix.push_mean(cols);
    }
    gt.row(r) = batch.colors[r].transpose();
    if (cfg.lambda_depth != 0.0 && batch.depth_supervised(r)) {
      depth_mask[r] = 1;
      const auto t = depth_target_density(set.dt, ray.near, batch.depth[r], cfg.depth_target);
      for (int i = 0; i < s; ++i) target(r, i) = t[i];
    }
  }

  ad::Tape tape(grads != nullptr);
  const FieldForward f = field.forward(tape, pts, dirs, mix, grads, cfg.use_embeddings);
  const ad::Var w = tape.composite_weights(f.sigma, deltas);
  const ad::Var color = tape.weighted_rows(w, f.color);
  const ad::Var rgb = tape.masked_squared_error(color, gt, batch.has_color);
  ad::Var total = rgb;
  ad::Var depth;
  const bool any_depth = std::any_of(depth_mask.begin(), depth_mask.end(), [](char c) { return c != 0; });
  if (any_depth) {
    depth = tape.density_matching_loss(w, deltas, target, depth_mask);
    total = tape.add(total, tape.scale(depth, cfg.lambda_depth));
  }
  const ad::Var objective = tape.scale(total, 1.0 / static_cast<double>(std::max<ad::Index>(rays, 1)));

  LossBreakdown out;
  out.objective = tape.value(objective)(0, 0);
  out.rgb = tape.value(rgb)(0, 0);
  out.depth = any_depth ? tape.value(depth)(0, 0) : 0.0;
  const Matrix& wv = tape.value(w);
  const Matrix& cv = tape.value(color);
  out.renders.resize(static_cast<std::size_t>(rays));
  for (ad::Index r = 0; r < rays; ++r) {
    auto& ro = out.renders[r];
    ro.color = cv.row(r).transpose();
    ro.opacity = wv.row(r).sum();
    const SampleSet set = sample_ray(batch.rays[r], s, cfg.stratified, mix_seed(sample_seed, r));
    double wt = 0.0;
    for (int i = 0; i < s; ++i) wt += wv(r, i) * set.t[i];
    ro.depth = wt / std::max(ro.opacity, kDepthEpsilon);
  }
  if (grads) tape.backward(objective);
  return out;
}

// ---------------------------------------------------------------------------
// Optimiser

class Adam {
 public:
  Adam(const RadianceField& field, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& p : field.parameters()) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }

  // lr_scale multiplies every group's base rate (schedule).
  void step(RadianceField& field, const std::vector<Matrix>& grads, double lr_scale, bool update_embeddings) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    auto& params = field.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      double lr = cfg_.lr_head;
      switch (field.parameter_groups()[i]) {
        case RadianceField::Group::kGrid: lr = cfg_.lr_grid; break;
        case RadianceField::Group::kHead: lr = cfg_.lr_head; break;
        case RadianceField::Group::kEmbedding:
          if (!update_embeddings) continue;
          lr = cfg_.lr_embedding;
          break;
      }
      lr *= lr_scale;
      auto m = m_[i].array();
      auto v = v_[i].array();
      const auto g = grads[i].array();
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
      params[i].array() -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg_.adam_epsilon);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Matrix> m_, v_;
  int t_ = 0;
};

inline double cosine_lr_scale(int iteration, int total, double final_fraction) {
  const double progress = total <= 1 ? 1.0 : static_cast<double>(iteration) / (total - 1);
  return final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// ---------------------------------------------------------------------------
// Ray sampling over the training views

class RaySampler {
 public:
  RaySampler(const std::vector<TrainView>& views, const TrainConfig& cfg) : views_(views), cfg_(cfg) {
    color_pool_.resize(views.size());
    depth_pool_.resize(views.size());
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
      const auto& view = views[vi];
      const auto n = static_cast<std::uint32_t>(view.intrinsics.width * view.intrinsics.height);
      for (std::uint32_t p = 0; p < n; ++p) {
        if (view.color_mask.empty() || view.color_mask[p]) color_pool_[vi].push_back(p);
        if (cfg.lambda_depth > 0.0 && view.depth.width > 0 &&
            view.depth.source[p] != DepthSource::kInvalid && view.depth.depth[p] > cfg.near &&
            view.depth.depth[p] < cfg.far)
          depth_pool_[vi].push_back(p);
      }
      if (!color_pool_[vi].empty()) color_views_.push_back(vi);
      if (!depth_pool_[vi].empty()) depth_views_.push_back(vi);
    }
    if (color_views_.empty() && depth_views_.empty()) throw EmptyDataset("no supervised pixels");
  }

  TrainBatch sample(std::mt19937_64& rng) const {
    TrainBatch batch;
    const int n_depth = depth_views_.empty()
                            ? 0
                            : static_cast<int>(std::lround(cfg_.depth_fraction * cfg_.batch_rays));
    const int n_color = color_views_.empty() ? 0 : cfg_.batch_rays - n_depth;
    for (int i = 0; i < n_color; ++i) push(batch, rng, color_views_, color_pool_);
    for (int i = 0; i < n_depth; ++i) push(batch, rng, depth_views_, depth_pool_);
    return batch;
  }

 private:
  void push(TrainBatch& batch, std::mt19937_64& rng, const std::vector<std::size_t>& views,
            const std::vector<std::vector<std::uint32_t>>& pools) const {
    const std::size_t vi = views[uniform_index(rng, views.size())];
    const auto& pool = pools[vi];
    const std::uint32_t p = pool[uniform_index(rng, pool.size())];
    const auto& view = views_[vi];
    const int u = static_cast<int>(p % view.intrinsics.width);
    const int v = static_cast<int>(p / view.intrinsics.width);
    const bool color = view.color_mask.empty() || view.color_mask[p];
    double d = std::numeric_limits<double>::quiet_NaN();
    if (cfg_.lambda_depth > 0.0 && view.depth.width > 0 && view.depth.source[p] != DepthSource::kInvalid &&
        view.depth.depth[p] > cfg_.near && view.depth.depth[p] < cfg_.far)
      d = view.depth.depth[p];
    batch.push(pixel_to_ray(view.camera, view.intrinsics, u, v, cfg_.near, cfg_.far), view.pixels.pixel(u, v),
               color, d, AppearanceSelector::sequence(view.key));
  }

  static std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
  }

  const std::vector<TrainView>& views_;
  TrainConfig cfg_;
  std::vector<std::vector<std::uint32_t>> color_pool_, depth_pool_;
  std::vector<std::size_t> color_views_, depth_views_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct ViewMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  DepthErrors depth;
};

inline RenderOptions eval_render_options(const TrainConfig& cfg) {
  RenderOptions o;
  o.n_samples = cfg.n_samples;
  o.stratified = false;
  o.seed = cfg.seed;
  return o;
}

inline AppearanceSelector eval_selector(const AppearanceSelector& key, bool use_embeddings) {
  return use_embeddings ? key : AppearanceSelector::zero();
}

// Mean PSNR/SSIM over views and depth errors pooled over every valid pixel.
inline ViewMetrics evaluate_views(const RadianceField& field, const std::vector<EvalView>& views,
                                  const TrainConfig& cfg, bool with_ssim = true) {
  ViewMetrics m;
  if (views.empty()) return m;
  std::vector<double> pred_depth, gt_depth;
  std::vector<char> valid;
  for (const auto& view : views) {
    const RenderedView r = render_view(field, view.camera, view.intrinsics,
                                       eval_selector(view.key, cfg.use_embeddings),
                                       eval_render_options(cfg), cfg.near, cfg.far);
    m.psnr += psnr(r.color, view.color);
    if (with_ssim) m.ssim += ssim(r.color, view.color);
    if (!view.depth.empty()) {
      pred_depth.insert(pred_depth.end(), r.depth.begin(), r.depth.end());
      gt_depth.insert(gt_depth.end(), view.depth.begin(), view.depth.end());
      valid.insert(valid.end(), view.depth_valid.begin(), view.depth_valid.end());
    }
  }
  m.psnr /= static_cast<double>(views.size());
  m.ssim /= static_cast<double>(views.size());
  if (!pred_depth.empty()) m.depth = depth_errors(pred_depth, gt_depth, valid);
  return m;
}

// ---------------------------------------------------------------------------
// Training loop

struct TraceRow {
  int iteration = 0;
  double loss = 0.0;
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double depth_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<double> losses;  // objective per iteration
  std::vector<TraceRow> trace;
};

using TraceCallback = std::function<void(const TraceRow&)>;

inline TrainResult train(const std::vector<TrainView>& views, RadianceField& field, const TrainConfig& cfg,
                         const std::vector<EvalView>& eval_views = {}, const TraceCallback& on_trace = {}) {
  cfg.validate();
  if (views.empty()) throw EmptyDataset("no training views");
  const RaySampler sampler(views, cfg);
  Adam adam(field, cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<Matrix> grads = zero_gradients(field);
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(cfg.iterations));

  for (int it = 0; it < cfg.iterations; ++it) {
    const TrainBatch batch = sampler.sample(rng);
    for (auto& g : grads) g.setZero();
    const LossBreakdown loss = evaluate_batch(field, batch, cfg, mix_seed(cfg.seed, 1000003ULL + it), &grads);
    if (!std::isfinite(loss.objective)) throw Diverged("non-finite loss at iteration " + std::to_string(it));
    adam.step(field, grads, cosine_lr_scale(it, cfg.iterations, cfg.final_lr_fraction), cfg.use_embeddings);
    result.losses.push_back(loss.objective);

    const bool last = it + 1 == cfg.iterations;
    const bool eval_now = last || (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0);
    if (eval_now) {
      TraceRow row;
      row.iteration = it + 1;
      row.loss = loss.objective;
      if (!eval_views.empty()) {
        const ViewMetrics m = evaluate_views(field, eval_views, cfg, false);
        row.psnr = m.psnr;
        row.depth_rmse = m.depth.count > 0 ? m.depth.rmse : std::numeric_limits<double>::quiet_NaN();
      }
      result.trace.push_back(row);
      if (on_trace) on_trace(row);
    }
  }
  return result;
}

// `iteration loss psnr depth_rmse`, tab separated.
inline void write_trace_row(std::ostream& os, const TraceRow& row) {
  os << row.iteration << '\t' << row.loss << '\t' << row.psnr << '\t' << row.depth_rmse << '\n';
}

}  // namespace csnerf
