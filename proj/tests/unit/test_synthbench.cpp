#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "segmil/error.hpp"
#include "segmil/synthbench.hpp"

using namespace segmil;

namespace {

int background_of(const Bag& bag) {
  for (const auto& inst : bag.instances)
    if (!is_core_instance(inst)) return inst.concept_ids.at(0) - kBackgroundConcept0;
  return -1;
}

}  // namespace

TEST_CASE("generated data validates and is deterministic") {
  SynthSpec spec;
  spec.seed = 4;
  const auto a = generate(spec), b = generate(spec);
  CHECK(a.train.bags == b.train.bags);
  CHECK(a.test.bags == b.test.bags);
  CHECK(a.train.bags.size() == 200);
  CHECK(a.test.bags.size() == 400);
  for (std::size_t i = 0; i < a.train.bags.size(); ++i) CHECK_NOTHROW(validate_bag(a.train.manifest, a.train.bags[i], i));
  for (std::size_t i = 0; i < a.test.bags.size(); ++i) CHECK_NOTHROW(validate_bag(a.test.manifest, a.test.bags[i], i));
  spec.seed = 5;
  CHECK_FALSE(generate(spec).train.bags == a.train.bags);
}

TEST_CASE("bags hold core and background instances with peaked clip scores") {
  const auto data = generate(SynthSpec{});
  for (const auto& bag : data.train.bags) {
    int core = 0;
    for (const auto& inst : bag.instances) {
      core += is_core_instance(inst);
      const int planted = inst.concept_ids.at(0);
      const auto top = std::max_element(inst.clip_scores.begin(), inst.clip_scores.end()) - inst.clip_scores.begin();
      CHECK(top == planted);
      if (is_core_instance(inst)) CHECK(planted == kCoreConcept0 + bag.label);
    }
    CHECK(core == 2);
    CHECK(bag.instances.size() == 5);
    CHECK(*bag.group_id == 2 * bag.label + background_of(bag));
  }
}

TEST_CASE("full spurious correlation ties background to class") {
  SynthSpec spec;
  spec.spurious_corr = 1.0;
  for (const auto& bag : generate(spec).train.bags) CHECK(background_of(bag) == bag.label);
}

TEST_CASE("half spurious correlation is independent") {
  SynthSpec spec;
  spec.spurious_corr = 0.5;
  spec.n_train = 4000;
  double counts[2][2] = {};
  for (const auto& bag : generate(spec).train.bags) counts[bag.label][background_of(bag)] += 1;
  const double n = spec.n_train;
  double chi2 = 0;
  for (int y = 0; y < 2; ++y)
    for (int b = 0; b < 2; ++b) {
      const double expected = (counts[y][0] + counts[y][1]) * (counts[0][b] + counts[1][b]) / n;
      chi2 += (counts[y][b] - expected) * (counts[y][b] - expected) / expected;
    }
  // 1 degree of freedom, 99.9% quantile.
  CHECK(chi2 < 10.83);
}

TEST_CASE("test split is balanced over groups") {
  const auto data = generate(SynthSpec{});
  std::map<int, int> sizes;
  for (const auto& bag : data.test.bags) ++sizes[*bag.group_id];
  REQUIRE(sizes.size() == 4);
  for (auto [g, n] : sizes) CHECK(n == 100);
}

TEST_CASE("synthetic generator rejects invalid settings") {
  SynthSpec spec;
  spec.n_core = 0;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = {};
  spec.spurious_corr = 1.5;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = {};
  spec.n_test = 10;
  CHECK_THROWS_AS(generate(spec), ConfigError);
}

TEST_CASE("corrupt rejects bad severity and kind") {
  const auto data = generate(SynthSpec{});
  CHECK_THROWS_AS(corrupt(data.test.bags, CorruptionKind::GaussNoise, 0, 1), ConfigError);
  CHECK_THROWS_AS(corrupt(data.test.bags, CorruptionKind::GaussNoise, 6, 1), ConfigError);
  CHECK_THROWS_AS(corruption_from_string("fog"), ConfigError);
  for (auto k : {CorruptionKind::GaussNoise, CorruptionKind::ShotNoise, CorruptionKind::BlurMix})
    CHECK(corruption_from_string(to_string(k)) == k);
}

TEST_CASE("corruption magnitude grows linearly with severity") {
  const auto data = generate(SynthSpec{});
  const std::span<const Bag> bags(data.test.bags.data(), 20);
  for (auto kind : {CorruptionKind::GaussNoise, CorruptionKind::ShotNoise, CorruptionKind::BlurMix}) {
    const auto s2 = corrupt(bags, kind, 2, 3), s4 = corrupt(bags, kind, 4, 3);
    for (std::size_t b = 0; b < bags.size(); ++b)
      for (std::size_t i = 0; i < bags[b].instances.size(); ++i) {
        const auto& h = bags[b].instances[i].embedding;
        double d2 = 0, d4 = 0;
        for (std::size_t k = 0; k < h.size(); ++k) {
          d2 += std::pow(s2[b].instances[i].embedding[k] - h[k], 2);
          d4 += std::pow(s4[b].instances[i].embedding[k] - h[k], 2);
        }
        if (d2 > 0) CHECK(std::sqrt(d4) == doctest::Approx(2 * std::sqrt(d2)).epsilon(1e-9));
        CHECK(s2[b].instances[i].clip_scores == bags[b].instances[i].clip_scores);
      }
  }
}

TEST_CASE("gauss noise scale matches its definition") {
  const auto data = generate(SynthSpec{});
  const std::span<const Bag> bags(data.test.bags.data(), 200);
  const auto c = corrupt(bags, CorruptionKind::GaussNoise, 3, 9);
  double ratio_sum = 0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < bags.size(); ++b)
    for (std::size_t i = 0; i < bags[b].instances.size(); ++i) {
      const auto& h = bags[b].instances[i].embedding;
      double rms = 0, d = 0;
      for (std::size_t k = 0; k < h.size(); ++k) {
        rms += h[k] * h[k];
        d += std::pow(c[b].instances[i].embedding[k] - h[k], 2);
      }
      rms = std::sqrt(rms / double(h.size()));
      ratio_sum += d / double(h.size()) / (rms * rms);
      ++n;
    }
  // E[(0.1 s rms eps)^2] / rms^2 = (0.3)^2
  CHECK(ratio_sum / double(n) == doctest::Approx(0.09).epsilon(0.05));
}

TEST_CASE("corruption is deterministic per seed") {
  const auto data = generate(SynthSpec{});
  const auto a = corrupt(data.test.bags, CorruptionKind::ShotNoise, 3, 11);
  const auto b = corrupt(data.test.bags, CorruptionKind::ShotNoise, 3, 11);
  const auto c = corrupt(data.test.bags, CorruptionKind::ShotNoise, 3, 12);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  const std::vector<CorruptionKind> kinds{CorruptionKind::BlurMix};
  const auto suite = make_corruption_suite(data.test.bags, kinds, 11);
  CHECK(suite.at("blur_mix").size() == 5);
  CHECK(suite.at("blur_mix").at(2) == corrupt(data.test.bags, CorruptionKind::BlurMix, 2, 11));
}
