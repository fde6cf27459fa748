#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "csnerf/synthetic.hpp"
#include "csnerf/volume_renderer.hpp"

using namespace csnerf;

namespace {

std::vector<RaySample> uniform_samples(int n, double len, double sigma, const Vec3& color) {
  std::vector<RaySample> s(n);
  for (int i = 0; i < n; ++i) s[i] = {(i + 0.5) * len / n, len / n, sigma, color, 0.0};
  return s;
}

}  // namespace

TEST(SampleRay, MidpointsAndBinWidths) {
  const Ray r{Vec3::Zero(), Vec3::UnitZ(), 1.0, 5.0};
  const auto s = sample_ray(r, 4, false, 0);
  EXPECT_EQ(s.t, (std::vector<double>{1.5, 2.5, 3.5, 4.5}));
  EXPECT_EQ(s.dt, (std::vector<double>(4, 1.0)));
}

TEST(SampleRay, StratifiedStaysInBinsAndIsSeeded) {
  const Ray r{Vec3::Zero(), Vec3::UnitZ(), 0.3, 80.0};
  const auto a = sample_ray(r, 64, true, 9);
  const auto b = sample_ray(r, 64, true, 9);
  const auto c = sample_ray(r, 64, true, 10);
  EXPECT_EQ(a.t, b.t);
  EXPECT_NE(a.t, c.t);
  const double w = (80.0 - 0.3) / 64;
  for (int i = 0; i < 64; ++i) {
    EXPECT_GE(a.t[i], 0.3 + i * w - 1e-12);
    EXPECT_LE(a.t[i], 0.3 + (i + 1) * w + 1e-12);
  }
}

TEST(SampleRay, RejectsBadInput) {
  EXPECT_THROW(sample_ray({Vec3::Zero(), Vec3::UnitZ(), 1.0, 1.0}, 8, false, 0), InvalidArgument);
  EXPECT_THROW(sample_ray({Vec3::Zero(), Vec3::UnitZ(), 0.0, 1.0}, 1, false, 0), InvalidArgument);
}

TEST(Composite, EmptyMediumIsTransparent) {
  const auto out = composite(uniform_samples(32, 10.0, 0.0, Vec3(1, 0, 0)));
  EXPECT_EQ(out.opacity, 0.0);
  EXPECT_EQ(out.color, Vec3::Zero());
  EXPECT_TRUE(std::isinf(out.surface_depth()));
}

TEST(Composite, HomogeneousMediumClosedForm) {
  for (double sigma : {0.01, 0.1, 1.0, 5.0})
    for (double len : {0.5, 2.0, 10.0}) {
      const Vec3 c(0.2, 0.7, 0.9);
      const auto out = composite(uniform_samples(64, len, sigma, c));
      const double alpha = 1.0 - std::exp(-sigma * len);
      EXPECT_LT((out.color - alpha * c).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Composite, TelescopingWeightSum) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> sig(0.0, 3.0), dt(0.001, 0.5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<RaySample> s(1 + trial % 100);
    double t = 0.0, acc = 0.0;
    for (auto& x : s) {
      x.dt = dt(rng);
      x.sigma = trial % 7 == 0 ? 0.0 : sig(rng);
      x.t = t + 0.5 * x.dt;
      t += x.dt;
      acc += x.sigma * x.dt;
    }
    const auto out = composite(s);
    const double sum = std::accumulate(out.samples.begin(), out.samples.end(), 0.0,
                                       [](double a, const RaySample& r) { return a + r.weight; });
    EXPECT_NEAR(sum, 1.0 - std::exp(-acc), 1e-9);
    EXPECT_NEAR(out.opacity, sum, 1e-12);
    for (const auto& r : out.samples) EXPECT_GE(r.weight, 0.0);
  }
}

TEST(Composite, OpaqueFirstSampleTakesAllWeight) {
  auto s = uniform_samples(10, 10.0, 0.0, Vec3(0, 0, 1));
  s[3].sigma = 1e4;
  s[3].color = Vec3(1, 0, 0);
  s[7].sigma = 1e4;
  const auto out = composite(s);
  EXPECT_NEAR(out.opacity, 1.0, 1e-12);
  EXPECT_NEAR(out.depth, s[3].t, 1e-9);
  EXPECT_LT((out.color - Vec3(1, 0, 0)).norm(), 1e-9);
}

TEST(Composite, SampleOrderMatters) {
  auto s = uniform_samples(2, 2.0, 1.0, Vec3(1, 0, 0));
  s[1].color = Vec3(0, 1, 0);
  const Vec3 front = composite(s).color;
  std::swap(s[0].color, s[1].color);
  const Vec3 back = composite(s).color;
  EXPECT_GT(front.x(), front.y());
  EXPECT_GT(back.y(), back.x());
}

TEST(RenderPixel, ZeroInitialisedFieldHasNearZeroOpacity) {
  FieldConfig c;
  c.grid_resolutions = {4, 8};
  c.hidden_layers = 1;
  c.hidden_width = 8;
  c.density_bias = -8.0;
  const auto f = RadianceField::zeros(c, {{"t", 0}});
  RenderOptions o;
  o.n_samples = 64;
  const auto out = render_pixel(f, {Vec3::Zero(), Vec3::UnitX(), 0.3, 80.0}, AppearanceSelector::zero(), o);
  EXPECT_LT(out.opacity, 0.03);
  EXPECT_EQ(out.samples.size(), 64u);
}

TEST(RenderPixel, SolidBoxMatchesChordBounds) {
  synth::Box box{Vec3(4, -1, -1), Vec3(6, 1, 1), Vec3(0.9, 0.3, 0.1), Label::kBuilding, false};
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> yz(-0.6, 0.6), sg(0.1, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double sigma = sg(rng);
    synth::SolidField f;
    f.add(box, sigma);
    const Vec3 target(5.0, yz(rng), yz(rng));
    const Ray ray{Vec3::Zero(), target.normalized(), 0.5, 10.0};
    RenderOptions o;
    o.n_samples = 200;
    const auto out = render_pixel(f, ray, AppearanceSelector::zero(), o);
    const auto hit = synth::intersect_box(ray, box);
    ASSERT_TRUE(hit);
    // Chord length through the box along the ray.
    const double t_in = hit->first;
    const double t_out = 6.0 / ray.direction.x();
    const double chord = t_out - t_in;
    const double dt = (ray.far - ray.near) / o.n_samples;
    EXPECT_GE(out.opacity, 1.0 - std::exp(-sigma * (chord - dt)) - 1e-12);
    EXPECT_LE(out.opacity, 1.0 - std::exp(-sigma * (chord + dt)) + 1e-12);
    EXPECT_LT((out.color - out.opacity * box.color).norm(), 1e-12);
  }
}

TEST(RenderPixel, GroundSlabDepthWithinTwoPercent) {
  synth::SolidField f;
  f.add({Vec3(-100, -100, -5), Vec3(100, 100, 0), Vec3(0.4, 0.4, 0.4), Label::kRoad, false}, 500.0);
  RenderOptions o;
  o.n_samples = 1024;
  for (double pitch : {0.15, 0.3, 0.6, 1.2}) {
    const double h = 1.6;
    const Vec3 dir(std::cos(pitch), 0.0, -std::sin(pitch));
    const auto out = render_pixel(f, {Vec3(0, 0, h), dir, 0.3, 15.0}, AppearanceSelector::zero(), o);
    const double d = h / std::sin(pitch);
    EXPECT_NEAR(out.opacity, 1.0, 1e-6);
    EXPECT_NEAR(out.surface_depth(), d, 0.02 * d) << pitch;
  }
}

TEST(RenderView, MatchesPerPixelRendering) {
  synth::SolidField f;
  f.add({Vec3(-2, -2, 6), Vec3(2, 2, 8), Vec3(0.1, 0.8, 0.2), Label::kBuilding, false}, 2.0);
  CameraIntrinsics k{10.0, 10.0, 4.0, 3.0, 8, 6};
  const Pose cam = Pose::identity();
  RenderOptions o;
  o.n_samples = 48;
  o.rays_per_chunk = 5;
  const auto view = render_view(f, cam, k, AppearanceSelector::zero(), o, 0.3, 20.0, true);
  ASSERT_EQ(view.pixels.size(), 48u);
  for (int v = 0; v < 6; ++v)
    for (int u = 0; u < 8; ++u) {
      const auto px = render_pixel(f, pixel_to_ray(cam, k, u, v, 0.3, 20.0), AppearanceSelector::zero(), o);
      const std::size_t i = static_cast<std::size_t>(v * 8 + u);
      EXPECT_NEAR(view.opacity[i], px.opacity, 1e-12);
      EXPECT_NEAR(view.depth[i], px.depth, 1e-12);
    }
}
