#include "segmil/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "segmil/error.hpp"
#include "segmil/parallel.hpp"

namespace segmil {

void TrainConfig::validate() const {
  if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("eps_adam must be > 0");
  if (!(lambda_concept >= 0.0) || !std::isfinite(lambda_concept)) throw ConfigError("lambda_concept must be >= 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_bags < 1) throw ConfigError("batch_bags must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (easy_hard.warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (!(easy_hard.easy_quantile > 0.0 && easy_hard.easy_quantile < 1.0))
    throw ConfigError("easy_quantile must lie in (0, 1)");
  if (model.attention == AttentionForm::Mlp && model.attention_hidden < 1)
    throw ConfigError("attention_hidden must be >= 1");
  if (!(model.temperature > 0.0) || !std::isfinite(model.temperature)) throw ConfigError("temperature must be > 0");
}

namespace {

double log_sum_exp(const Vector& x) {
  const double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

void check_label(int y, Eigen::Index num_classes) {
  if (y < 0 || y >= num_classes)
    throw SchemaError("label " + std::to_string(y) + " out of range [0, " + std::to_string(num_classes) + ")");
}

}  // namespace

double loss_cls(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw SchemaError("loss_cls: logits rows != number of labels");
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.rows(); ++j) {
    check_label(labels[static_cast<std::size_t>(j)], logits.cols());
    const Vector row = logits.row(j).transpose();
    total += log_sum_exp(row) - row[labels[static_cast<std::size_t>(j)]];
  }
  return total / double(labels.size());
}

ConceptLoss loss_concept(const Matrix& z_hat, const Matrix& clip_hat) {
  if (z_hat.rows() != clip_hat.rows() || z_hat.cols() != clip_hat.cols())
    throw SchemaError("loss_concept: shape mismatch");
  if (z_hat.rows() == 0) return {0.0, true};
  const double dots = (z_hat.array() * clip_hat.array()).sum();
  return {-dots / double(z_hat.rows()), false};
}

double loss_total(double cls, double concept_loss, double lambda_concept) { return cls + lambda_concept * concept_loss; }

namespace {

struct BagResult {
  double ce = 0.0;
  double concept_dot = 0.0;  // sum_i <z_hat_i, clip_hat_i>
  double confidence = 0.0;
  bool correct = false;
  GradientSet grads;
};

/// `w_cls` scales the cross-entropy gradient, `w_concept` the per-segment
/// dot products (i.e. -lambda / B); w_concept == 0 skips the concept path.
BagResult bag_backward(const ModelParams& params, const Bag& bag, double w_cls, double w_concept, bool want_grads) {
  const auto& t = params.tensors;
  const Matrix H = bag.embeddings();
  const ForwardTrace tr = forward(params, H);
  if (!tr.z.allFinite()) throw NumericalError("non-finite concept activations z in bag '" + bag.image_id + "'");
  if (!tr.alpha.allFinite()) throw NumericalError("non-finite attention weights in bag '" + bag.image_id + "'");
  if (!tr.logits.allFinite()) throw NumericalError("non-finite logits in bag '" + bag.image_id + "'");
  check_label(bag.label, tr.logits.size());

  BagResult r;
  const double lse = log_sum_exp(tr.logits);
  r.ce = lse - tr.logits[bag.label];
  const Vector prob = (tr.logits.array() - lse).exp().matrix();
  r.confidence = prob.maxCoeff();
  r.correct = argmax(tr.logits) == bag.label;

  Matrix clip_hat;
  if (w_concept != 0.0) {
    clip_hat = normalize_rows(bag.clip_matrix());
    r.concept_dot = (tr.z_hat.array() * clip_hat.array()).sum();
  }
  if (!want_grads) return r;

  GradientSet g = t.zeros_like();
  Vector g_logits = prob;
  g_logits[bag.label] -= 1.0;
  g_logits *= w_cls;
  g.cls_weight = g_logits * tr.c_agg.transpose();
  g.cls_bias = g_logits;
  const Vector g_c = t.cls_weight.transpose() * g_logits;

  const bool normalized = params.config.aggregate_normalized;
  const Matrix& pooled = normalized ? tr.z_hat : tr.z;
  const Vector g_alpha = pooled * g_c;
  const Matrix g_pooled = tr.alpha * g_c.transpose();

  Matrix g_zhat = Matrix::Zero(tr.z.rows(), tr.z.cols());
  if (normalized) g_zhat += g_pooled;
  if (w_concept != 0.0) g_zhat += w_concept * clip_hat;

  Matrix g_z = normalized ? Matrix::Zero(tr.z.rows(), tr.z.cols()) : g_pooled;
  for (Eigen::Index i = 0; i < tr.z.rows(); ++i) {
    const double n = tr.z_norm[i];
    if (n < kNormEpsilon) continue;
    const double proj = tr.z_hat.row(i).dot(g_zhat.row(i));
    g_z.row(i) += (g_zhat.row(i) - proj * tr.z_hat.row(i)) / n;
  }
  g.concept_head = g_z.transpose() * H;

  if (params.config.attention != AttentionForm::Uniform) {
    const double mean = tr.alpha.dot(g_alpha);
    const Vector g_e = (tr.alpha.array() * (g_alpha.array() - mean)).matrix() / params.config.temperature;
    if (params.config.attention == AttentionForm::Mlp) {
      g.attn_out = tr.hidden.transpose() * g_e;
      const Matrix g_pre =
          ((g_e * t.attn_out.transpose()).array() * (1.0 - tr.hidden.array().square())).matrix();
      g.attn_hidden = g_pre.transpose() * H;
    } else {
      g.attn_linear = H.transpose() * g_e;
    }
  }
  r.grads = std::move(g);
  return r;
}

std::size_t count_segments(std::span<const Bag* const> batch) {
  std::size_t n = 0;
  for (const Bag* b : batch) n += b->instances.size();
  return n;
}

BackwardResult run_batch(const ModelParams& params, std::span<const Bag* const> batch, double lambda_concept,
                         int workers, bool want_grads) {
  if (batch.empty()) throw SchemaError("backward: empty batch");
  const std::size_t segments = count_segments(batch);
  const double w_cls = 1.0 / double(batch.size());
  const double w_concept = lambda_concept == 0.0 ? 0.0 : -lambda_concept / double(segments);

  std::vector<BagResult> per_bag(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t j) {
    per_bag[j] = bag_backward(params, *batch[j], w_cls, w_concept, want_grads);
  });

  BackwardResult out;
  if (want_grads) out.grads = params.tensors.zeros_like();
  double ce = 0.0, dots = 0.0;
  for (auto& r : per_bag) {
    ce += r.ce;
    dots += r.concept_dot;
    out.correct += r.correct;
    out.confidence.push_back(r.confidence);
    out.is_correct.push_back(r.correct);
    if (want_grads) out.grads += r.grads;
  }
  out.loss_cls = ce / double(batch.size());
  out.loss_concept = w_concept == 0.0 ? 0.0 : -dots / double(segments);
  out.loss_total = loss_total(out.loss_cls, out.loss_concept, lambda_concept);
  if (want_grads) {
    for (const auto& ref : out.grads.refs())
      for (double x : ref.data)
        if (!std::isfinite(x)) throw NumericalError(std::string("non-finite gradient for tensor ") + ref.name);
  }
  return out;
}

}  // namespace

BackwardResult backward(const ModelParams& params, std::span<const Bag* const> batch, double lambda_concept,
                        int workers) {
  return run_batch(params, batch, lambda_concept, workers, true);
}

double batch_loss(const ModelParams& params, std::span<const Bag* const> batch, double lambda_concept) {
  return run_batch(params, batch, lambda_concept, 1, false).loss_total;
}

AdamState adam_init(const Tensors& like) { return {like.zeros_like(), like.zeros_like(), 0}; }

void adam_step(Tensors& params, const GradientSet& grads, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  auto p = params.refs();
  const auto g = grads.refs();
  auto m = state.m.refs();
  auto v = state.v.refs();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw SchemaError("adam_step: tensor layout mismatch");
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k].data.size() != g[k].data.size()) throw SchemaError(std::string("adam_step: shape mismatch for ") + p[k].name);
    for (std::size_t i = 0; i < p[k].data.size(); ++i) {
      const double gi = g[k].data[i];
      double& mi = m[k].data[i];
      double& vi = v[k].data[i];
      mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * gi;
      vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      p[k].data[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

namespace {

void chunk_into(BatchPlan& plan, const std::vector<std::size_t>& order, int batch_bags) {
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_bags)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_bags));
    plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
  }
}

}  // namespace

BatchPlan plain_batches(std::size_t n_bags, int batch_bags, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n_bags);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  BatchPlan plan;
  chunk_into(plan, order, batch_bags);
  return plan;
}

BatchPlan schedule_easy_hard(std::span<const double> confidence, const std::vector<bool>& correct, int epoch,
                             const TrainConfig& cfg, std::mt19937_64& rng) {
  const std::size_t n = confidence.size();
  if (!cfg.easy_hard.enabled || epoch <= cfg.easy_hard.warmup_epochs) return plain_batches(n, cfg.batch_bags, rng);
  if (correct.size() != n) throw SchemaError("schedule_easy_hard: confidence/correct length mismatch");

  std::vector<std::size_t> ranked(n);
  std::iota(ranked.begin(), ranked.end(), 0);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
  const auto n_easy = static_cast<std::size_t>(std::floor(cfg.easy_hard.easy_quantile * double(n)));
  std::vector<std::size_t> easy, hard;
  for (std::size_t r = 0; r < n; ++r) {
    const auto i = ranked[r];
    (r < n_easy && correct[i] ? easy : hard).push_back(i);
  }
  if (easy.empty() || hard.empty()) {
    BatchPlan plan = plain_batches(n, cfg.batch_bags, rng);
    plan.note = easy.empty() ? "easy pool empty; plain shuffling" : "hard pool empty; plain shuffling";
    return plan;
  }
  std::shuffle(easy.begin(), easy.end(), rng);
  std::shuffle(hard.begin(), hard.end(), rng);

  BatchPlan plan;
  plan.alternating = true;
  const auto bs = static_cast<std::size_t>(cfg.batch_bags);
  std::size_t ei = 0, hi = 0;
  bool take_easy = true;
  while (ei < easy.size() || hi < hard.size()) {
    const bool use_easy = (take_easy && ei < easy.size()) || hi >= hard.size();
    auto& pool = use_easy ? easy : hard;
    auto& pos = use_easy ? ei : hi;
    const auto end = std::min(pool.size(), pos + bs);
    plan.batches.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(pos),
                              pool.begin() + static_cast<std::ptrdiff_t>(end));
    pos = end;
    take_easy = !use_easy;
  }
  return plan;
}

TrainResult train(const DatasetManifest& manifest, std::span<const Bag> bags, const TrainConfig& cfg,
                  const EpochCallback& on_epoch, bool record_time) {
  cfg.validate();
  validate_manifest(manifest);
  if (bags.empty()) throw SchemaError("train: no training bags");

  TrainResult result;
  result.params = init_params(manifest.D, manifest.C, manifest.num_classes, cfg.model, cfg.seed);
  AdamState state = adam_init(result.params.tensors);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x5u};
  std::mt19937_64 rng(seq);

  std::vector<double> confidence;
  std::vector<bool> correct;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const BatchPlan plan = confidence.empty() ? plain_batches(bags.size(), cfg.batch_bags, rng)
                                              : schedule_easy_hard(confidence, correct, epoch, cfg, rng);
    std::vector<double> next_conf(bags.size(), 0.0);
    std::vector<bool> next_correct(bags.size(), false);
    double ce_sum = 0.0, concept_sum = 0.0;
    std::size_t n_correct = 0, segments = 0;

    std::vector<const Bag*> batch;
    for (const auto& idx : plan.batches) {
      batch.clear();
      for (auto i : idx) batch.push_back(&bags[i]);
      BackwardResult br = backward(result.params, batch, cfg.lambda_concept, cfg.workers);
      const std::size_t seg = count_segments(batch);
      ce_sum += br.loss_cls * double(batch.size());
      concept_sum += br.loss_concept * double(seg);
      segments += seg;
      n_correct += br.correct;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        next_conf[idx[k]] = br.confidence[k];
        next_correct[idx[k]] = br.is_correct[k];
      }
      adam_step(result.params.tensors, br.grads, state, cfg.adam);
    }
    confidence = std::move(next_conf);
    correct = std::move(next_correct);

    EpochLog log;
    log.epoch = epoch;
    log.loss_cls = ce_sum / double(bags.size());
    log.loss_concept = segments ? concept_sum / double(segments) : 0.0;
    log.loss_total = loss_total(log.loss_cls, log.loss_concept, cfg.lambda_concept);
    log.train_acc = double(n_correct) / double(bags.size());
    if (record_time)
      log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

std::string format_train_log(std::span<const EpochLog> log) {
  std::string out = "epoch,loss_cls,loss_concept,loss_total,train_acc,wall_ms\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.3f\n", e.epoch, e.loss_cls, e.loss_concept,
                  e.loss_total, e.train_acc, e.wall_ms);
    out += buf;
  }
  return out;
}

}  // namespace segmil
