#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segmil/types.hpp"

namespace segmil {

/// How per-instance attention scores are produced.
///   Mlp:     e_i = v . tanh(V h_i)
///   Linear:  e_i = w . h_i
///   Uniform: e_i = 0 (mean pooling; used as an ablation)
enum class AttentionForm { Mlp, Linear, Uniform };

std::string to_string(AttentionForm form);
AttentionForm attention_from_string(const std::string& name);

struct ModelConfig {
  AttentionForm attention = AttentionForm::Mlp;
  int attention_hidden = 128;
  bool aggregate_normalized = true;  // aggregate z_hat rather than raw z
  double temperature = 1.0;
};

/// View of one parameter tensor: name, row-major storage and shape.
struct TensorRef {
  const char* name;
  std::span<double> data;
  std::vector<std::int64_t> shape;
};

struct ConstTensorRef {
  const char* name;
  std::span<const double> data;
  std::vector<std::int64_t> shape;
};

/// All trainable tensors. Tensors unused by the attention form are empty.
/// GradientSet and the Adam moments share this layout.
struct Tensors {
  Matrix concept_head;  // C x D, no bias
  Matrix attn_hidden;   // A x D       (Mlp)
  Vector attn_out;      // A           (Mlp)
  Vector attn_linear;   // D           (Linear)
  Matrix cls_weight;    // K x C
  Vector cls_bias;      // K

  /// Non-empty tensors in a fixed order.
  std::vector<TensorRef> refs();
  std::vector<ConstTensorRef> refs() const;
  Tensors zeros_like() const;
  Tensors& operator+=(const Tensors& other);
  Tensors& operator*=(double s);
  bool all_finite() const;
  bool operator==(const Tensors& other) const;
};

using GradientSet = Tensors;

struct ModelParams {
  ModelConfig config;
  Tensors tensors;

  int dim() const { return static_cast<int>(tensors.concept_head.cols()); }
  int num_concepts() const { return static_cast<int>(tensors.concept_head.rows()); }
  int num_classes() const { return static_cast<int>(tensors.cls_weight.rows()); }

  /// Throws SchemaError on inconsistent shapes, non-finite values or T <= 0.
  void validate() const;
};

/// Glorot-uniform matrices and attention vectors, zero classifier bias.
/// Each tensor draws from its own stream derived from `seed`.
ModelParams init_params(int D, int C, int num_classes, const ModelConfig& config, std::uint64_t seed);

/// Everything the forward pass computes for one bag; backward reuses it.
struct ForwardTrace {
  Matrix z;          // N x C raw concept activations
  Matrix z_hat;      // N x C row-normalized (zero rows stay zero)
  Vector z_norm;     // N, row norms of z
  Matrix hidden;     // N x A tanh activations (Mlp only)
  Vector scores;     // N attention scores e_i
  Vector alpha;      // N attention weights
  Vector c_agg;      // C aggregate fed to the classifier
  Vector logits;     // K
};

inline constexpr double kNormEpsilon = 1e-12;

Matrix concept_project(const ModelParams& params, const Matrix& H);

/// Divides each row by its L2 norm; rows with norm below kNormEpsilon become zero.
Matrix normalize_rows(const Matrix& Z);

Vector attention_scores(const ModelParams& params, const Matrix& H, Matrix* hidden = nullptr);

/// softmax(scores / T), max-subtracted.
Vector attention_softmax(const Vector& scores, double temperature);

Vector attention_weights(const ModelParams& params, const Matrix& H);

ForwardTrace forward(const ModelParams& params, const Matrix& H);

/// Argmax of the logits, lowest index on ties.
int argmax(const Vector& logits);

struct ConceptScore {
  int concept_id;
  std::string name;
  double activation;
};

struct InstanceExplanation {
  std::size_t index;
  double alpha;
  std::vector<ConceptScore> top_concepts;
};

struct Explanation {
  std::vector<InstanceExplanation> instances;  // by descending alpha, ties by index
  std::vector<ConceptScore> bag_concepts;
};

/// Per-instance attention and strongest concepts, plus the bag-level
/// concept ranking of c_agg. Ties in activation go to the lower concept id.
Explanation explain(const ForwardTrace& trace, std::span<const std::string> concept_names, int top_m);

}  // namespace segmil
