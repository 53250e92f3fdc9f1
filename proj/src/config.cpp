#include "segmil/config.hpp"

#include <fstream>
#include <functional>

#include "segmil/error.hpp"

namespace segmil {

using nlohmann::json;

void RunConfig::sync() {
  train.seed = seed;
  synth.seed = seed;
  train.workers = workers;
}

void RunConfig::validate() const {
  build.validate();
  train.validate();
  synth.validate();
  if (seeds < 1) throw ConfigError("seeds must be >= 1");
  if (top_m < 0) throw ConfigError("top_m must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

namespace {

struct Entry {
  const char* name;
  const char* help;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class T>
T as(const json& v, const char* name) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError(std::string("config key '") + name + "' has the wrong type");
  }
}

#define SEGMIL_KEY(key, help, field)                                                       \
  Entry {                                                                                  \
    key, help, [](const RunConfig& c) { return json(c.field); },                          \
        [](RunConfig& c, const json& v) { c.field = as<decltype(c.field)>(v, key); }       \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      SEGMIL_KEY("seed", "master seed for every random stream", seed),
      SEGMIL_KEY("seeds", "independent runs per experiment", seeds),
      SEGMIL_KEY("workers", "worker threads (results do not depend on it)", workers),
      SEGMIL_KEY("k_top", "concepts kept per image by similarity rank", build.k_top),
      SEGMIL_KEY("tau_iou", "merge masks whose IoU exceeds this", build.tau_iou),
      SEGMIL_KEY("tau_minpix", "smallest mask area kept, in pixels", build.tau_minpix),
      SEGMIL_KEY("rho_max", "largest mask kept, as a fraction of the image", build.rho_max),
      SEGMIL_KEY("bag_size", "N_s: instances kept per bag (largest segments first)", build.bag_size),
      SEGMIL_KEY("lr", "Adam learning rate", train.adam.lr),
      SEGMIL_KEY("beta1", "Adam first-moment decay", train.adam.beta1),
      SEGMIL_KEY("beta2", "Adam second-moment decay", train.adam.beta2),
      SEGMIL_KEY("eps_adam", "Adam denominator epsilon", train.adam.eps),
      SEGMIL_KEY("lambda_concept", "weight of the concept alignment loss", train.lambda_concept),
      SEGMIL_KEY("epochs", "training epochs", train.epochs),
      SEGMIL_KEY("batch_bags", "bags per mini-batch", train.batch_bags),
      SEGMIL_KEY("easy_hard", "alternate easy/hard batches after warm-up", train.easy_hard.enabled),
      SEGMIL_KEY("warmup_epochs", "epochs of plain shuffling before easy/hard alternation", train.easy_hard.warmup_epochs),
      SEGMIL_KEY("easy_quantile", "fraction of most confident bags forming the easy pool", train.easy_hard.easy_quantile),
      Entry{"attention", "attention scorer: mlp | linear | uniform",
            [](const RunConfig& c) { return json(to_string(c.train.model.attention)); },
            [](RunConfig& c, const json& v) {
              c.train.model.attention = attention_from_string(as<std::string>(v, "attention"));
            }},
      SEGMIL_KEY("attention_hidden", "hidden width of the attention MLP", train.model.attention_hidden),
      SEGMIL_KEY("aggregate_normalized", "pool row-normalized concept activations", train.model.aggregate_normalized),
      SEGMIL_KEY("temperature", "attention softmax temperature T", train.model.temperature),
      SEGMIL_KEY("top_m", "concepts listed per instance in explanations", top_m),
      SEGMIL_KEY("n_train", "synthetic train bags", synth.n_train),
      SEGMIL_KEY("n_test", "synthetic test bags (multiple of 4)", synth.n_test),
      SEGMIL_KEY("D", "synthetic embedding dimension", synth.D),
      SEGMIL_KEY("C", "synthetic concept count", synth.C),
      SEGMIL_KEY("spurious_corr", "train-time P(background matches class)", synth.spurious_corr),
      SEGMIL_KEY("n_core", "core instances per synthetic bag", synth.n_core),
      SEGMIL_KEY("n_spur", "background instances per synthetic bag", synth.n_spur),
      SEGMIL_KEY("noise_sigma", "isotropic embedding noise of synthetic instances", synth.noise_sigma),
  };
  return table;
}

#undef SEGMIL_KEY

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries())
    if (key == e.name) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<ConfigKey> config_keys() {
  const RunConfig defaults;
  std::vector<ConfigKey> out;
  for (const auto& e : entries()) out.push_back({e.name, e.help, e.get(defaults)});
  return out;
}

json to_json(const RunConfig& cfg) {
  json j = json::object();
  for (const auto& e : entries()) j[e.name] = e.get(cfg);
  return j;
}

void apply_config(RunConfig& cfg, const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) find_entry(key).set(cfg, value);
  cfg.sync();
}

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& e = find_entry(key);
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  e.set(cfg, v);
  cfg.sync();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config '" + path.string() + "' is not valid JSON");
  RunConfig cfg;
  apply_config(cfg, doc);
  return cfg;
}

}  // namespace segmil
