#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "csnerf/training.hpp"

namespace csnerf::testing {

struct GradCheck {
  int checked[3] = {0, 0, 0};  // grid, head, embedding
  double worst = 0.0;
  int total() const { return checked[0] + checked[1] + checked[2]; }
};

// A default-sized field with non-trivial embeddings and a mixed batch:
// photometric rays, depth rays and rays from two sequences.
struct GradProblem {
  RadianceField field;
  TrainBatch batch;
  TrainConfig cfg;
};

inline GradProblem make_grad_problem(std::uint64_t seed = 3) {
  FieldConfig fc;
  fc.scene_scale = 10.0;
  const std::vector<AppearanceKey> seqs{{"a", 0}, {"b", 0}, {"a", 1}};
  GradProblem p{RadianceField(fc, seqs), {}, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto& emb = p.field.parameters()[p.field.embedding_parameter()];
  for (ad::Index i = 0; i < emb.size(); ++i) emb.data()[i] = 0.5 * n(rng);
  p.cfg.n_samples = 24;
  p.cfg.near = 0.3;
  p.cfg.far = 30.0;
  p.cfg.stratified = false;
  p.cfg.lambda_depth = 0.5;
  for (int r = 0; r < 12; ++r) {
    const Vec3 o(n(rng), n(rng), 1.5 + 0.2 * n(rng));
    const Vec3 d = Vec3(1.0, 0.3 * n(rng), -0.2 + 0.1 * n(rng)).normalized();
    const double depth = r % 3 == 0 ? std::numeric_limits<double>::quiet_NaN() : 2.0 + 20.0 * u(rng);
    p.batch.push({o, d, p.cfg.near, p.cfg.far}, Vec3(u(rng), u(rng), u(rng)), r % 4 != 1, depth,
                 AppearanceSelector::sequence(seqs[static_cast<std::size_t>(r) % seqs.size()]));
  }
  return p;
}

// Central differences on randomly chosen parameters, `per_group` from each
// of grid, heads and embeddings. Entries whose analytic gradient is below
// `min_grad` are skipped: there finite differences are all roundoff.
inline GradCheck gradient_check(GradProblem p, int per_group, double h = 1e-4, std::uint64_t seed = 11,
                                double min_grad = 1e-6) {
  std::vector<Matrix> grads = zero_gradients(p.field);
  evaluate_batch(p.field, p.batch, p.cfg, 5, &grads);
  auto objective = [&] { return evaluate_batch(p.field, p.batch, p.cfg, 5, nullptr).objective; };

  std::vector<std::pair<std::size_t, ad::Index>> pool[3];
  auto& params = p.field.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const int g = static_cast<int>(p.field.parameter_groups()[i]);
    for (ad::Index k = 0; k < params[i].size(); ++k)
      if (std::abs(grads[i].data()[k]) >= min_grad) pool[g].push_back({i, k});
  }
  GradCheck out;
  std::mt19937_64 rng(seed);
  for (int g = 0; g < 3; ++g) {
    std::shuffle(pool[g].begin(), pool[g].end(), rng);
    for (int c = 0; c < per_group && c < static_cast<int>(pool[g].size()); ++c) {
      const auto [i, k] = pool[g][static_cast<std::size_t>(c)];
      double& x = params[i].data()[k];
      const double x0 = x;
      x = x0 + h;
      const double fp = objective();
      x = x0 - h;
      const double fm = objective();
      x = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = grads[i].data()[k];
      const double rel = std::abs(numeric - analytic) / std::max(std::abs(numeric), std::abs(analytic));
      out.worst = std::max(out.worst, rel);
      ++out.checked[g];
    }
  }
  return out;
}

}  // namespace csnerf::testing
