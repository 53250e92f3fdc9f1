#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segmil/bagbuild.hpp"
#include "segmil/synthbench.hpp"
#include "segmil/training.hpp"

namespace segmil {

/// Every tunable of the workflow in one flat, declarative document. A single
/// `seed` drives synthetic generation, initialization, shuffling and
/// corruption noise.
struct RunConfig {
  BuildConfig build;
  TrainConfig train;
  SynthSpec synth;
  std::uint64_t seed = 0;
  int seeds = 3;  // runs per experiment when aggregating
  int top_m = 3;  // concepts listed per instance in explanations
  int workers = 1;

  /// Copies `seed` and `workers` into the sub-configs that consume them.
  void sync();
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  nlohmann::json default_value;
};

/// All recognised keys with their defaults, in documentation order.
std::vector<ConfigKey> config_keys();

nlohmann::json to_json(const RunConfig& cfg);

/// Applies the keys present in `doc`; unknown keys or wrong types throw ConfigError.
void apply_config(RunConfig& cfg, const nlohmann::json& doc);

/// Sets one key from its textual form ("0.1", "true", "mlp").
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace segmil
