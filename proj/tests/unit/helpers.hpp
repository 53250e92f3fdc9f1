#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "segmil/bagio.hpp"
#include "segmil/milmodel.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("segmil_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline segmil::DatasetManifest manifest(int D, int C, int K = 2) {
  segmil::DatasetManifest m;
  m.D = D;
  m.C = C;
  m.num_classes = K;
  for (int c = 0; c < C; ++c) m.concept_names.push_back("concept" + std::to_string(c));
  return m;
}

inline segmil::Bag random_bag(std::mt19937_64& rng, int D, int C, int K, int n_instances,
                              std::optional<int> group = std::nullopt) {
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  segmil::Bag bag;
  bag.image_id = "img" + std::to_string(rng() % 100000);
  bag.label = static_cast<int>(rng() % K);
  bag.group_id = group;
  for (int i = 0; i < n_instances; ++i) {
    segmil::Instance inst;
    for (int d = 0; d < D; ++d) inst.embedding.push_back(gauss(rng));
    for (int c = 0; c < C; ++c) inst.clip_scores.push_back(unit(rng));
    inst.concept_ids.push_back(static_cast<int>(rng() % C));
    bag.instances.push_back(std::move(inst));
  }
  return bag;
}

inline std::vector<const segmil::Bag*> pointers(const std::vector<segmil::Bag>& bags) {
  std::vector<const segmil::Bag*> out;
  for (const auto& b : bags) out.push_back(&b);
  return out;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace testutil
