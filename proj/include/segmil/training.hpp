#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "segmil/bagio.hpp"
#include "segmil/milmodel.hpp"

namespace segmil {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct EasyHardConfig {
  bool enabled = false;
  int warmup_epochs = 5;
  double easy_quantile = 0.5;
};

struct TrainConfig {
  AdamConfig adam;
  double lambda_concept = 0.1;
  int epochs = 50;
  int batch_bags = 32;
  std::uint64_t seed = 0;
  EasyHardConfig easy_hard;
  ModelConfig model;
  int workers = 1;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

/// Mean cross-entropy over rows of `logits` (one row per bag), log-sum-exp stable.
double loss_cls(const Matrix& logits, std::span<const int> labels);

struct ConceptLoss {
  double value = 0.0;
  bool empty = false;  // no segments: value is 0 by convention
};

/// -(1/B) sum_i <z_hat_i, clip_hat_i> over the B rows. Zero rows contribute 0.
ConceptLoss loss_concept(const Matrix& z_hat, const Matrix& clip_hat);

double loss_total(double cls, double concept_loss, double lambda_concept);

struct BackwardResult {
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_concept = 0.0;  // 0 when lambda_concept == 0 (not evaluated)
  std::size_t correct = 0;
  std::vector<double> confidence;  // max softmax probability per bag
  std::vector<bool> is_correct;
  GradientSet grads;
};

/// Loss of the batch and its exact gradient with respect to every tensor.
/// With lambda_concept == 0 the clip_scores are never read. Per-bag
/// gradients are reduced in bag order, so `workers` does not change results.
BackwardResult backward(const ModelParams& params, std::span<const Bag* const> batch, double lambda_concept,
                        int workers = 1);

/// Loss only (no gradients), same definition as backward().
double batch_loss(const ModelParams& params, std::span<const Bag* const> batch, double lambda_concept);

struct AdamState {
  Tensors m;
  Tensors v;
  std::int64_t step = 0;
};

AdamState adam_init(const Tensors& like);

/// One bias-corrected Adam update; increments state.step first.
void adam_step(Tensors& params, const GradientSet& grads, AdamState& state, const AdamConfig& cfg);

struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;
  bool alternating = false;
  std::string note;
};

/// Shuffled consecutive batches.
BatchPlan plain_batches(std::size_t n_bags, int batch_bags, std::mt19937_64& rng);

/// After warm-up, alternates batches drawn from an "easy" pool (the
/// easy_quantile most confident, correctly classified bags) and a "hard"
/// pool (the remaining bags, including every misclassified one). Epochs are
/// 1-based; at or before warmup_epochs, or when a pool is empty, falls back
/// to plain shuffled batches.
BatchPlan schedule_easy_hard(std::span<const double> confidence, const std::vector<bool>& correct, int epoch,
                             const TrainConfig& cfg, std::mt19937_64& rng);

struct EpochLog {
  int epoch = 0;
  double loss_cls = 0.0;
  double loss_concept = 0.0;
  double loss_total = 0.0;
  double train_acc = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Seeded training: initialization, shuffling and batch order all derive
/// from cfg.seed. Set `record_time` to fill EpochLog::wall_ms.
TrainResult train(const DatasetManifest& manifest, std::span<const Bag> bags, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {}, bool record_time = false);

/// CSV with header "epoch,loss_cls,loss_concept,loss_total,train_acc,wall_ms".
std::string format_train_log(std::span<const EpochLog> log);

}  // namespace segmil
