#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "csnerf/core_types.hpp"
#include "csnerf/radiance_field.hpp"

namespace csnerf {

inline constexpr double kDepthEpsilon = 1e-6;
inline constexpr int kDefaultSamples = 96;

// Anything that maps batches of points and directions to (sigma, color).
template <class F>
concept QueryableField = requires(const F& f, const Matrix& x, const Matrix& d, const AppearanceSelector& s) {
  { f.query_points(x, d, s) } -> std::convertible_to<FieldSamples>;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct RaySample {
  double t = 0.0;
  double dt = 0.0;
  double sigma = 0.0;
  Vec3 color = Vec3::Zero();
  double weight = 0.0;
};

struct RenderOutput {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double opacity = 0.0;
  std::vector<RaySample> samples;

  // Expected depth, or +inf for rays that hit (almost) nothing.
  double surface_depth() const {
    return opacity > kDepthEpsilon ? depth : std::numeric_limits<double>::infinity();
  }
};

struct SampleSet {
  std::vector<double> t;
  std::vector<double> dt;
};

// Splits [near, far] into n equal bins; one sample per bin at the bin
// center, or uniformly jittered inside the bin when stratified.
inline SampleSet sample_ray(const Ray& ray, int n_samples, bool stratified, std::uint64_t seed) {
  if (n_samples < 2) throw InvalidArgument("need at least two samples per ray");
  if (!(ray.near >= 0.0 && ray.near < ray.far)) throw InvalidArgument("ray bounds must satisfy 0 <= near < far");
  SampleSet s;
  s.t.resize(n_samples);
  s.dt.assign(n_samples, (ray.far - ray.near) / n_samples);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  for (int i = 0; i < n_samples; ++i) {
    const double lo = ray.near + (ray.far - ray.near) * i / n_samples;
    const double u = stratified ? jitter(rng) : 0.5;
    s.t[i] = lo + u * s.dt[i];
  }
  return s;
}

// Discrete volume rendering: w_i = T_i (1 - exp(-sigma_i dt_i)),
// T_i = exp(-sum_{j<i} sigma_j dt_j). Weights are written back into
// `samples`.
inline RenderOutput composite(std::vector<RaySample> samples, bool keep_samples = true) {
  RenderOutput out;
  double acc = 0.0;
  double weighted_t = 0.0;
  for (auto& s : samples) {
    const double a = s.sigma * s.dt;
    s.weight = std::exp(-acc) * -std::expm1(-a);
    acc += a;
    out.color += s.weight * s.color;
    out.opacity += s.weight;
    weighted_t += s.weight * s.t;
  }
  out.depth = weighted_t / std::max(out.opacity, kDepthEpsilon);
  if (keep_samples) out.samples = std::move(samples);
  return out;
}

struct RenderOptions {
  int n_samples = kDefaultSamples;
  bool stratified = false;
  std::uint64_t seed = 0;
  bool keep_samples = false;
  int rays_per_chunk = 64;
};

template <QueryableField F>
std::vector<RenderOutput> render_rays(const F& field, const std::vector<Ray>& rays,
                                      const AppearanceSelector& key, const RenderOptions& opts) {
  std::vector<RenderOutput> out(rays.size());
  const int s = opts.n_samples;
  for (std::size_t begin = 0; begin < rays.size(); begin += opts.rays_per_chunk) {
    const std::size_t end = std::min(rays.size(), begin + static_cast<std::size_t>(opts.rays_per_chunk));
    const auto n = static_cast<ad::Index>((end - begin) * s);
    Matrix pts(n, 3), dirs(n, 3);
    std::vector<SampleSet> sets;
    sets.reserve(end - begin);
    for (std::size_t r = begin; r < end; ++r) {
      sets.push_back(sample_ray(rays[r], s, opts.stratified, mix_seed(opts.seed, r)));
      for (int i = 0; i < s; ++i) {
        const auto row = static_cast<ad::Index>((r - begin) * s + i);
        pts.row(row) = rays[r].at(sets.back().t[i]).transpose();
        dirs.row(row) = rays[r].direction.transpose();
      }
    }
    const FieldSamples q = field.query_points(pts, dirs, key);
    for (std::size_t r = begin; r < end; ++r) {
      std::vector<RaySample> samples(s);
      const auto& set = sets[r - begin];
      for (int i = 0; i < s; ++i) {
        const auto row = static_cast<ad::Index>((r - begin) * s + i);
        samples[i] = {set.t[i], set.dt[i], q.sigma(row), q.color.row(row).transpose(), 0.0};
      }
      out[r] = composite(std::move(samples), opts.keep_samples);
    }
  }
  return out;
}

template <QueryableField F>
RenderOutput render_pixel(const F& field, const Ray& ray, const AppearanceSelector& key,
                          const RenderOptions& opts = {}) {
  RenderOptions o = opts;
  o.keep_samples = true;
  return render_rays(field, std::vector<Ray>{ray}, key, o).front();
}

struct RenderedView {
  ImageRGB color;
  std::vector<double> depth;    // expected depth per pixel
  std::vector<double> opacity;  // accumulated weight per pixel
  std::vector<RenderOutput> pixels;  // filled only when keep_pixels is set
};

inline std::vector<Ray> view_rays(const Pose& camera, const CameraIntrinsics& k, double near, double far) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(k.width) * k.height);
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) rays.push_back(pixel_to_ray(camera, k, u, v, near, far));
  return rays;
}

template <QueryableField F>
RenderedView render_view(const F& field, const Pose& camera, const CameraIntrinsics& k,
                         const AppearanceSelector& key, const RenderOptions& opts, double near,
                         double far, bool keep_pixels = false) {
  const std::vector<Ray> rays = view_rays(camera, k, near, far);
  std::vector<RenderOutput> px = render_rays(field, rays, key, opts);
  RenderedView view;
  view.color = ImageRGB(k.width, k.height);
  view.depth.resize(rays.size());
  view.opacity.resize(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const int u = static_cast<int>(i % k.width);
    const int v = static_cast<int>(i / k.width);
    view.color.set_pixel(u, v, px[i].color.cwiseMax(0.0).cwiseMin(1.0));
    view.depth[i] = px[i].depth;
    view.opacity[i] = px[i].opacity;
  }
  if (keep_pixels) view.pixels = std::move(px);
  return view;
}

}  // namespace csnerf
