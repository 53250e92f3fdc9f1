#include "segmil/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "segmil/bagbuild.hpp"
#include "segmil/error.hpp"

namespace segmil {

void SynthSpec::validate() const {
  if (num_classes != 2) throw ConfigError("synthbench supports num_classes = 2 only");
  if (D < 4) throw ConfigError("synthbench needs D >= 4");
  if (C < 4) throw ConfigError("synthbench needs C >= 4");
  if (n_core < 1) throw ConfigError("n_core must be >= 1");
  if (n_spur < 0) throw ConfigError("n_spur must be >= 0");
  if (!(spurious_corr >= 0.0 && spurious_corr <= 1.0)) throw ConfigError("spurious_corr must lie in [0, 1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (n_train < 1) throw ConfigError("n_train must be >= 1");
  if (n_test < 4 || n_test % 4 != 0) throw ConfigError("n_test must be a positive multiple of 4");
}

nlohmann::json to_json(const SynthSpec& s) {
  return {{"n_train", s.n_train}, {"n_test", s.n_test}, {"D", s.D}, {"C", s.C},
          {"num_classes", s.num_classes}, {"spurious_corr", s.spurious_corr}, {"n_core", s.n_core},
          {"n_spur", s.n_spur}, {"noise_sigma", s.noise_sigma}, {"seed", s.seed}};
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kTagMeans = 1, kTagTrain = 2, kTagTest = 3, kTagCorrupt = 4;

/// Four orthonormal directions: mu_0, mu_1, nu_0, nu_1.
Matrix planted_means(const SynthSpec& spec) {
  auto rng = stream(spec.seed, kTagMeans, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(spec.D, spec.D);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
  return q.leftCols(4).transpose();
}

std::vector<double> planted_clip(int C, int concept_id) {
  std::vector<double> logits(static_cast<std::size_t>(C), 0.0);
  logits[static_cast<std::size_t>(concept_id)] = 4.0;
  return softmax(logits);
}

Instance planted_instance(const Matrix& means, int which, int concept_id, double sigma, int C, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Instance inst;
  inst.embedding.resize(static_cast<std::size_t>(means.cols()));
  for (Eigen::Index k = 0; k < means.cols(); ++k) inst.embedding[std::size_t(k)] = means(which, k) + sigma * normal(rng);
  inst.clip_scores = planted_clip(C, concept_id);
  inst.concept_ids = {concept_id};
  return inst;
}

Bag make_bag(const SynthSpec& spec, const Matrix& means, int label, int background, const std::string& id,
             std::mt19937_64& rng) {
  Bag bag;
  bag.image_id = id;
  bag.label = label;
  bag.group_id = 2 * label + background;
  for (int i = 0; i < spec.n_core; ++i)
    bag.instances.push_back(planted_instance(means, label, kCoreConcept0 + label, spec.noise_sigma, spec.C, rng));
  for (int i = 0; i < spec.n_spur; ++i)
    bag.instances.push_back(
        planted_instance(means, 2 + background, kBackgroundConcept0 + background, spec.noise_sigma, spec.C, rng));
  std::shuffle(bag.instances.begin(), bag.instances.end(), rng);
  return bag;
}

std::vector<std::string> concept_names(int C) {
  std::vector<std::string> names{"core_class0", "core_class1", "background0", "background1"};
  for (int c = 4; c < C; ++c) names.push_back("distractor" + std::to_string(c - 4));
  return names;
}

}  // namespace

SynthData generate(const SynthSpec& spec) {
  spec.validate();
  const Matrix means = planted_means(spec);
  DatasetManifest m{spec.num_classes, spec.D, spec.C, concept_names(spec.C), Split::Train};

  SynthData out;
  out.train.manifest = m;
  out.test.manifest = m;
  out.test.manifest.split = Split::Test;

  for (int i = 0; i < spec.n_train; ++i) {
    auto rng = stream(spec.seed, kTagTrain, std::uint64_t(i));
    const int label = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
    const bool matches = std::bernoulli_distribution(spec.spurious_corr)(rng);
    const int background = matches ? label : 1 - label;
    out.train.bags.push_back(make_bag(spec, means, label, background, "train_" + std::to_string(i), rng));
  }
  for (int i = 0; i < spec.n_test; ++i) {
    auto rng = stream(spec.seed, kTagTest, std::uint64_t(i));
    const int group = i % 4;
    out.test.bags.push_back(make_bag(spec, means, group / 2, group % 2, "test_" + std::to_string(i), rng));
  }
  return out;
}

bool is_core_instance(const Instance& inst) {
  return std::any_of(inst.concept_ids.begin(), inst.concept_ids.end(),
                     [](int c) { return c == kCoreConcept0 || c == kCoreConcept0 + 1; });
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::GaussNoise: return "gauss_noise";
    case CorruptionKind::ShotNoise: return "shot_noise";
    case CorruptionKind::BlurMix: return "blur_mix";
  }
  return "gauss_noise";
}

CorruptionKind corruption_from_string(const std::string& name) {
  if (name == "gauss_noise") return CorruptionKind::GaussNoise;
  if (name == "shot_noise") return CorruptionKind::ShotNoise;
  if (name == "blur_mix") return CorruptionKind::BlurMix;
  throw ConfigError("unknown corruption kind '" + name + "' (expected gauss_noise, shot_noise or blur_mix)");
}

std::vector<Bag> corrupt(std::span<const Bag> bags, CorruptionKind kind, int severity, std::uint64_t seed) {
  if (severity < 1 || severity > kNumSeverities) throw ConfigError("severity must lie in 1..5");
  const double s = severity;
  std::vector<Bag> out(bags.begin(), bags.end());
  for (std::size_t b = 0; b < out.size(); ++b) {
    auto& bag = out[b];
    if (kind == CorruptionKind::BlurMix) {
      const Matrix H = bag.embeddings();
      const Eigen::RowVectorXd mean = H.colwise().mean();
      const double w = 0.15 * s;
      for (std::size_t i = 0; i < bag.instances.size(); ++i)
        for (std::size_t k = 0; k < bag.instances[i].embedding.size(); ++k)
          bag.instances[i].embedding[k] = (1.0 - w) * H(Eigen::Index(i), Eigen::Index(k)) + w * mean[Eigen::Index(k)];
      continue;
    }
    auto rng = stream(seed, kTagCorrupt, b);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& inst : bag.instances) {
      auto& h = inst.embedding;
      double ss = 0.0;
      for (double x : h) ss += x * x;
      const double rms = h.empty() ? 0.0 : std::sqrt(ss / double(h.size()));
      for (double& x : h) {
        const double eps = normal(rng);
        if (kind == CorruptionKind::GaussNoise)
          x += 0.1 * s * rms * eps;
        else
          x += 0.1 * s * std::sqrt(std::abs(x) * rms) * eps;
      }
    }
  }
  return out;
}

CorruptionSuite make_corruption_suite(std::span<const Bag> bags, std::span<const CorruptionKind> kinds,
                                      std::uint64_t seed) {
  CorruptionSuite suite;
  for (auto kind : kinds)
    for (int s = 1; s <= kNumSeverities; ++s) suite[to_string(kind)][s] = corrupt(bags, kind, s, seed);
  return suite;
}

}  // namespace segmil
