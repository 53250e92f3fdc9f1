#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segmil/bagio.hpp"
#include "segmil/metrics.hpp"

namespace segmil {

/// Synthetic two-class benchmark with a planted spurious "background".
///
/// Concept layout: 0..1 are the class ("core") concepts, 2..3 the background
/// concepts, the rest are distractors. Class and background means are
/// orthonormal directions in R^D. Core instances of class y sit at mu_y plus
/// isotropic noise; background instances of background b sit at nu_b plus
/// noise. In the train split the background equals the class with
/// probability spurious_corr; the test split is balanced over the four
/// (class, background) groups with group_id = 2 * class + background.
struct SynthSpec {
  int n_train = 200;
  int n_test = 400;
  int D = 16;
  int C = 12;
  int num_classes = 2;
  double spurious_corr = 0.95;
  int n_core = 2;
  int n_spur = 3;
  double noise_sigma = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SynthSpec& spec);

struct SynthData {
  Dataset train;
  Dataset test;
};

inline constexpr int kCoreConcept0 = 0;
inline constexpr int kBackgroundConcept0 = 2;

SynthData generate(const SynthSpec& spec);

/// True for instances planted on a class concept.
bool is_core_instance(const Instance& inst);

enum class CorruptionKind { GaussNoise, ShotNoise, BlurMix };

std::string to_string(CorruptionKind kind);
CorruptionKind corruption_from_string(const std::string& name);

/// Embedding-space corruptions; clip_scores are untouched. Per-bag noise
/// streams depend on (seed, bag index) only, so severities share their
/// noise draws and the perturbation grows linearly with severity.
///   gauss_noise: h + 0.1 s RMS(h) eps
///   shot_noise:  h_k + 0.1 s sqrt(|h_k| RMS(h)) eps_k   (signal-dependent)
///   blur_mix:    (1 - 0.15 s) h + 0.15 s mean_bag(h)
std::vector<Bag> corrupt(std::span<const Bag> bags, CorruptionKind kind, int severity, std::uint64_t seed);

/// Every kind at severities 1..5.
CorruptionSuite make_corruption_suite(std::span<const Bag> bags, std::span<const CorruptionKind> kinds,
                                      std::uint64_t seed);

}  // namespace segmil
