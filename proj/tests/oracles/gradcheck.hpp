// Compares backward() against central differences of the oracle loss.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "segmil/training.hpp"

namespace oracle {

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t entries = 0;
  std::string worst;  // tensor name and flat index of the worst entry
};

inline GradCheck gradient_check(const segmil::ModelParams& params, const std::vector<const segmil::Bag*>& batch,
                                double lambda, double h = 1e-5) {
  const auto analytic = segmil::backward(params, batch, lambda);
  segmil::ModelParams probe = params;
  auto probe_refs = probe.tensors.refs();
  const auto grad_refs = analytic.grads.refs();
  GradCheck out;
  for (std::size_t t = 0; t < probe_refs.size(); ++t) {
    auto data = probe_refs[t].data;
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + h;
      const Real up = total_loss(probe, batch, lambda);
      data[k] = saved - h;
      const Real down = total_loss(probe, batch, lambda);
      data[k] = saved;
      const double fd = double((up - down) / (2 * Real(h)));
      const double a = grad_refs[t].data[k];
      const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      if (err > out.max_rel_err) {
        out.max_rel_err = err;
        out.worst = std::string(probe_refs[t].name) + "[" + std::to_string(k) + "]";
      }
      ++out.entries;
    }
  }
  return out;
}

// A random small problem: D <= 8, C <= 5, K <= 3, N_s <= 4, a few bags.
struct Problem {
  segmil::ModelParams params;
  std::vector<segmil::Bag> bags;
  double lambda = 0.1;
};

inline Problem random_problem(std::uint64_t seed, segmil::AttentionForm form, bool normalized) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return lo + int(rng() % std::uint64_t(hi - lo + 1)); };
  const int D = pick(2, 8), C = pick(2, 5), K = pick(2, 3), A = pick(1, 6);
  segmil::ModelConfig cfg;
  cfg.attention = form;
  cfg.attention_hidden = A;
  cfg.aggregate_normalized = normalized;
  cfg.temperature = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  Problem p;
  p.params = segmil::init_params(D, C, K, cfg, rng());
  std::normal_distribution<double> g;
  // Larger-than-init values so every path carries signal.
  for (auto& ref : p.params.tensors.refs())
    for (double& x : ref.data) x = g(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n_bags = pick(1, 3);
  for (int b = 0; b < n_bags; ++b) {
    segmil::Bag bag;
    bag.image_id = "b" + std::to_string(b);
    bag.label = pick(0, K - 1);
    const int n = pick(1, 4);
    for (int i = 0; i < n; ++i) {
      segmil::Instance inst;
      for (int d = 0; d < D; ++d) inst.embedding.push_back(g(rng));
      for (int c = 0; c < C; ++c) inst.clip_scores.push_back(u(rng));
      inst.concept_ids = {0};
      bag.instances.push_back(inst);
    }
    p.bags.push_back(bag);
  }
  p.lambda = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
  return p;
}

}  // namespace oracle
