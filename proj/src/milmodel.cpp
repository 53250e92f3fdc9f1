#include "segmil/milmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "segmil/error.hpp"

namespace segmil {

std::string to_string(AttentionForm form) {
  switch (form) {
    case AttentionForm::Mlp: return "mlp";
    case AttentionForm::Linear: return "linear";
    case AttentionForm::Uniform: return "uniform";
  }
  return "mlp";
}

AttentionForm attention_from_string(const std::string& name) {
  if (name == "mlp") return AttentionForm::Mlp;
  if (name == "linear") return AttentionForm::Linear;
  if (name == "uniform") return AttentionForm::Uniform;
  throw ConfigError("unknown attention form '" + name + "' (expected mlp, linear or uniform)");
}

namespace {

std::span<double> span_of(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> span_of(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

std::vector<TensorRef> Tensors::refs() {
  std::vector<TensorRef> out;
  auto add_m = [&](const char* name, Matrix& m) {
    if (m.size()) out.push_back({name, span_of(m), {m.rows(), m.cols()}});
  };
  auto add_v = [&](const char* name, Vector& v) {
    if (v.size()) out.push_back({name, span_of(v), {v.size()}});
  };
  add_m("W_c", concept_head);
  add_m("V", attn_hidden);
  add_v("v", attn_out);
  add_v("w", attn_linear);
  add_m("W_cls", cls_weight);
  add_v("b_cls", cls_bias);
  return out;
}

std::vector<ConstTensorRef> Tensors::refs() const {
  std::vector<ConstTensorRef> out;
  for (auto& r : const_cast<Tensors*>(this)->refs()) out.push_back({r.name, r.data, std::move(r.shape)});
  return out;
}

Tensors Tensors::zeros_like() const {
  Tensors t;
  t.concept_head = Matrix::Zero(concept_head.rows(), concept_head.cols());
  t.attn_hidden = Matrix::Zero(attn_hidden.rows(), attn_hidden.cols());
  t.attn_out = Vector::Zero(attn_out.size());
  t.attn_linear = Vector::Zero(attn_linear.size());
  t.cls_weight = Matrix::Zero(cls_weight.rows(), cls_weight.cols());
  t.cls_bias = Vector::Zero(cls_bias.size());
  return t;
}

Tensors& Tensors::operator+=(const Tensors& o) {
  concept_head += o.concept_head;
  attn_hidden += o.attn_hidden;
  attn_out += o.attn_out;
  attn_linear += o.attn_linear;
  cls_weight += o.cls_weight;
  cls_bias += o.cls_bias;
  return *this;
}

Tensors& Tensors::operator*=(double s) {
  concept_head *= s;
  attn_hidden *= s;
  attn_out *= s;
  attn_linear *= s;
  cls_weight *= s;
  cls_bias *= s;
  return *this;
}

bool Tensors::all_finite() const {
  return concept_head.allFinite() && attn_hidden.allFinite() && attn_out.allFinite() &&
         attn_linear.allFinite() && cls_weight.allFinite() && cls_bias.allFinite();
}

bool Tensors::operator==(const Tensors& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
  };
  return same(concept_head, o.concept_head) && same(attn_hidden, o.attn_hidden) &&
         same(attn_out, o.attn_out) && same(attn_linear, o.attn_linear) &&
         same(cls_weight, o.cls_weight) && same(cls_bias, o.cls_bias);
}

void ModelParams::validate() const {
  const auto& t = tensors;
  const auto D = t.concept_head.cols();
  const auto C = t.concept_head.rows();
  const auto K = t.cls_weight.rows();
  if (D < 1 || C < 1) throw SchemaError("params: empty concept head");
  if (K < 2 || t.cls_weight.cols() != C || t.cls_bias.size() != K)
    throw SchemaError("params: classifier shape inconsistent with concept head");
  switch (config.attention) {
    case AttentionForm::Mlp:
      if (t.attn_hidden.rows() < 1 || t.attn_hidden.cols() != D || t.attn_out.size() != t.attn_hidden.rows())
        throw SchemaError("params: attention MLP shape mismatch");
      break;
    case AttentionForm::Linear:
      if (t.attn_linear.size() != D) throw SchemaError("params: linear attention vector must have length D");
      break;
    case AttentionForm::Uniform:
      break;
  }
  if (!(config.temperature > 0.0) || !std::isfinite(config.temperature))
    throw SchemaError("params: temperature must be finite and > 0");
  if (!t.all_finite()) throw SchemaError("params: non-finite entries");
}

ModelParams init_params(int D, int C, int num_classes, const ModelConfig& config, std::uint64_t seed) {
  if (D < 1 || C < 1 || num_classes < 2) throw ConfigError("init_params: invalid dimensions");
  if (config.attention == AttentionForm::Mlp && config.attention_hidden < 1)
    throw ConfigError("attention_hidden must be >= 1");
  if (!(config.temperature > 0.0)) throw ConfigError("temperature must be > 0");

  auto glorot = [seed](auto& tensor, int fan_in, int fan_out, std::uint32_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
    std::mt19937_64 rng(seq);
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < tensor.size(); ++i) tensor.data()[i] = dist(rng);
  };

  ModelParams p;
  p.config = config;
  auto& t = p.tensors;
  t.concept_head.resize(C, D);
  glorot(t.concept_head, D, C, 1);
  if (config.attention == AttentionForm::Mlp) {
    const int A = config.attention_hidden;
    t.attn_hidden.resize(A, D);
    glorot(t.attn_hidden, D, A, 2);
    t.attn_out.resize(A);
    glorot(t.attn_out, A, 1, 3);
  } else if (config.attention == AttentionForm::Linear) {
    t.attn_linear.resize(D);
    glorot(t.attn_linear, D, 1, 4);
  }
  t.cls_weight.resize(num_classes, C);
  glorot(t.cls_weight, C, num_classes, 5);
  t.cls_bias = Vector::Zero(num_classes);
  return p;
}

Matrix concept_project(const ModelParams& params, const Matrix& H) {
  if (H.cols() != params.tensors.concept_head.cols())
    throw SchemaError("concept_project: embedding width " + std::to_string(H.cols()) + " != D " +
                      std::to_string(params.tensors.concept_head.cols()));
  return H * params.tensors.concept_head.transpose();
}

Matrix normalize_rows(const Matrix& Z) {
  Matrix out = Matrix::Zero(Z.rows(), Z.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double n = Z.row(i).norm();
    if (n >= kNormEpsilon) out.row(i) = Z.row(i) / n;
  }
  return out;
}

Vector attention_scores(const ModelParams& params, const Matrix& H, Matrix* hidden) {
  const auto& t = params.tensors;
  switch (params.config.attention) {
    case AttentionForm::Mlp: {
      Matrix act = (H * t.attn_hidden.transpose()).array().tanh().matrix();
      Vector e = act * t.attn_out;
      if (hidden) *hidden = std::move(act);
      return e;
    }
    case AttentionForm::Linear:
      return H * t.attn_linear;
    case AttentionForm::Uniform:
      break;
  }
  return Vector::Zero(H.rows());
}

Vector attention_softmax(const Vector& scores, double temperature) {
  Vector s = scores / temperature;
  s.array() -= s.maxCoeff();
  s = s.array().exp().matrix();
  return s / s.sum();
}

Vector attention_weights(const ModelParams& params, const Matrix& H) {
  if (H.rows() < 1) throw SchemaError("attention_weights: empty bag");
  return attention_softmax(attention_scores(params, H), params.config.temperature);
}

ForwardTrace forward(const ModelParams& params, const Matrix& H) {
  if (H.rows() < 1) throw SchemaError("forward: empty bag");
  ForwardTrace tr;
  tr.z = concept_project(params, H);
  tr.z_norm = tr.z.rowwise().norm();
  tr.z_hat = normalize_rows(tr.z);
  tr.scores = attention_scores(params, H, &tr.hidden);
  tr.alpha = attention_softmax(tr.scores, params.config.temperature);
  const Matrix& pooled = params.config.aggregate_normalized ? tr.z_hat : tr.z;
  tr.c_agg = pooled.transpose() * tr.alpha;
  tr.logits = params.tensors.cls_weight * tr.c_agg + params.tensors.cls_bias;
  return tr;
}

int argmax(const Vector& logits) {
  int best = 0;
  for (Eigen::Index k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = static_cast<int>(k);
  return best;
}

namespace {

std::vector<ConceptScore> top_concepts(const Eigen::Ref<const Eigen::RowVectorXd>& acts,
                                       std::span<const std::string> names, int top_m) {
  std::vector<int> order(static_cast<std::size_t>(acts.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return acts[a] > acts[b]; });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(top_m)));
  std::vector<ConceptScore> out;
  for (int c : order) out.push_back({c, names[static_cast<std::size_t>(c)], acts[c]});
  return out;
}

}  // namespace

Explanation explain(const ForwardTrace& trace, std::span<const std::string> concept_names, int top_m) {
  const auto C = trace.z_hat.cols();
  if (top_m < 0 || top_m > C) throw ConfigError("explain: top_m must lie in [0, C]");
  if (concept_names.size() != static_cast<std::size_t>(C)) throw SchemaError("explain: concept_names length != C");

  Explanation ex;
  std::vector<std::size_t> order(static_cast<std::size_t>(trace.alpha.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return trace.alpha[a] > trace.alpha[b]; });
  for (auto i : order) {
    InstanceExplanation ie{i, trace.alpha[i], {}};
    if (trace.z_hat.row(i).squaredNorm() > 0.0)
      ie.top_concepts = top_concepts(trace.z_hat.row(i), concept_names, top_m);
    ex.instances.push_back(std::move(ie));
  }
  ex.bag_concepts = top_concepts(trace.c_agg.transpose(), concept_names, top_m);
  return ex;
}

}  // namespace segmil
