// segmil: command-line front end for bag construction, synthetic data,
// training, evaluation, corruption sweeps and multi-seed reports.
//
// Exit codes: 0 ok, 1 numerical failure, 2 schema, 3 io, 4 config.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "segmil/bagbuild.hpp"
#include "segmil/bagio.hpp"
#include "segmil/checkpoint.hpp"
#include "segmil/config.hpp"
#include "segmil/error.hpp"
#include "segmil/metrics.hpp"
#include "segmil/rawdet.hpp"
#include "segmil/synthbench.hpp"
#include "segmil/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace segmil;

namespace {

enum ExitCode { kOk = 0, kNumerical = 1, kSchema = 2, kIo = 3, kConfig = 4 };

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file (see `segmil --help` for keys)");
  cmd->add_option("--set", opts.overrides, "override a config key, KEY=VALUE (repeatable)");
  cmd->add_option("--seed", opts.seed, "master seed (overrides the config)");
  cmd->add_option("--workers", opts.workers, "worker threads (default: $SEGMILCBM_WORKERS or 1)");
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw IoError("input file '" + path + "' does not exist");
}

RunConfig resolve_config(const CommonOptions& opts) {
  RunConfig cfg;
  if (const char* env = std::getenv("SEGMILCBM_WORKERS")) {
    try {
      cfg.workers = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError("SEGMILCBM_WORKERS must be an integer");
    }
  }
  if (!opts.config_path.empty()) {
    require_file(opts.config_path);
    const int env_workers = cfg.workers;
    cfg = load_run_config(opts.config_path);
    std::ifstream in(opts.config_path);
    if (!json::parse(in, nullptr, false).contains("workers")) cfg.workers = env_workers;
  }
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.workers) cfg.workers = *opts.workers;
  cfg.sync();
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

json read_json(const std::string& path) {
  require_file(path);
  std::ifstream in(path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw SchemaError("'" + path + "' is not valid JSON");
  return j;
}

std::string keys_footer() {
  std::ostringstream os;
  os << "\nConfig keys (JSON config file or --set KEY=VALUE), with defaults:\n";
  for (const auto& k : config_keys())
    os << "  " << k.name << std::string(k.name.size() < 22 ? 22 - k.name.size() : 1, ' ') << k.default_value.dump()
       << "  " << k.help << "\n";
  os << "\nEmbeddings are consumed precomputed; any backbone warm-up or fine-tuning\n"
        "happens before export and is outside this tool.\n"
        "Exit codes: 0 ok, 1 numerical failure, 2 schema, 3 io, 4 config.\n";
  return os.str();
}

int cmd_build_bags(const CommonOptions& common, const std::string& rawdet, const std::string& out) {
  require_file(rawdet);
  const RunConfig cfg = resolve_config(common);
  RawdetReader reader(rawdet);
  std::vector<Bag> bags;
  std::size_t index = 0;
  while (auto img = reader.next()) {
    const auto result = build_bag(img->context, img->similarities, img->detections, cfg.build);
    validate_bag(reader.manifest(), result.bag, index++);
    const auto& c = result.counts;
    std::cout << img->context.image_id << " detections=" << c.detections << " top_k=" << c.after_top_k
              << " filtered_out=" << (c.after_top_k - c.after_filter) << " merged=" << c.merged
              << " kept=" << c.kept << (c.fallback ? " fallback=whole_image" : "") << "\n";
    bags.push_back(result.bag);
  }
  write_bagpack(reader.manifest(), bags, out);
  std::cout << "wrote " << bags.size() << " bags to " << out << "\n";
  return kOk;
}

int cmd_gen_synth(const CommonOptions& common, const std::string& out_dir) {
  const RunConfig cfg = resolve_config(common);
  const SynthData data = generate(cfg.synth);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  write_bagpack(data.train.manifest, data.train.bags, fs::path(out_dir) / "train.bagpack");
  write_bagpack(data.test.manifest, data.test.bags, fs::path(out_dir) / "test.bagpack");
  write_text(fs::path(out_dir) / "synth_spec.json", to_json(cfg.synth).dump(2) + "\n");
  std::cout << "wrote " << data.train.bags.size() << " train and " << data.test.bags.size() << " test bags to "
            << out_dir << "\n";
  return kOk;
}

int cmd_train(const CommonOptions& common, const std::string& data_path, const std::string& out,
              const std::string& log_path, bool log_timing) {
  require_file(data_path);
  const RunConfig cfg = resolve_config(common);
  const Dataset ds = read_bagpack(data_path);
  auto on_epoch = [](const EpochLog& e) {
    std::cout << "epoch " << e.epoch << " loss_cls=" << e.loss_cls << " loss_concept=" << e.loss_concept
              << " train_acc=" << e.train_acc << "\n";
  };
  const TrainResult result = train(ds.manifest, ds.bags, cfg.train, on_epoch, log_timing);
  save_checkpoint({result.params, ds.manifest.concept_names}, out);
  if (!log_path.empty()) write_text(log_path, format_train_log(result.log));
  return kOk;
}

json explanation_record(const Bag& bag, const ModelParams& params, const std::vector<std::string>& names, int top_m) {
  const ForwardTrace tr = forward(params, bag.embeddings());
  const Explanation ex = explain(tr, names, std::min(top_m, params.num_concepts()));
  auto concepts = [](const std::vector<ConceptScore>& cs) {
    json arr = json::array();
    for (const auto& c : cs) arr.push_back({c.name, c.activation});
    return arr;
  };
  json instances = json::array();
  for (const auto& ie : ex.instances)
    instances.push_back({{"index", ie.index}, {"alpha", ie.alpha}, {"top_concepts", concepts(ie.top_concepts)}});
  return {{"image_id", bag.image_id}, {"predicted", argmax(tr.logits)}, {"label", bag.label},
          {"instances", instances}, {"bag_concepts", concepts(ex.bag_concepts)}};
}

int cmd_eval(const CommonOptions& common, const std::string& ckpt_path, const std::string& data_path,
             const std::string& out, const std::string& groups_csv_path, const std::string& explain_path,
             bool worst_group) {
  require_file(ckpt_path);
  require_file(data_path);
  const RunConfig cfg = resolve_config(common);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset ds = read_bagpack(data_path);
  if (ds.manifest.D != ckpt.params.dim() || ds.manifest.C != ckpt.params.num_concepts() ||
      ds.manifest.num_classes != ckpt.params.num_classes())
    throw SchemaError("dataset dimensions do not match the checkpoint");
  if (worst_group && !has_groups(ds.bags))
    throw SchemaError("worst-group accuracy requested but the bags carry no group_id");
  const EvalReport report = evaluate(ckpt.params, ds.bags, cfg.workers);
  write_text(out, to_json(report).dump(2) + "\n");
  if (!groups_csv_path.empty()) write_text(groups_csv_path, groups_csv(report));
  if (!explain_path.empty()) {
    std::string lines;
    for (const auto& bag : ds.bags) lines += explanation_record(bag, ckpt.params, ckpt.concept_names, cfg.top_m).dump() + "\n";
    write_text(explain_path, lines);
  }
  std::cout << "avg_acc=" << report.avg_acc;
  if (report.worst_group_acc) std::cout << " worst_group_acc=" << *report.worst_group_acc;
  std::cout << "\n";
  return kOk;
}

int cmd_corrupt(const CommonOptions& common, const std::string& data_path, const std::string& kind, int severity,
                const std::string& out) {
  require_file(data_path);
  const RunConfig cfg = resolve_config(common);
  const Dataset ds = read_bagpack(data_path);
  const auto corrupted = corrupt(ds.bags, corruption_from_string(kind), severity, cfg.seed);
  write_bagpack(ds.manifest, corrupted, out);
  return kOk;
}

int cmd_eval_corruption(const CommonOptions& common, const std::string& ckpt_path, const std::string& data_path,
                        const std::vector<std::string>& kind_names, const std::string& out,
                        const std::string& csv_path) {
  require_file(ckpt_path);
  require_file(data_path);
  const RunConfig cfg = resolve_config(common);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset ds = read_bagpack(data_path);
  std::vector<CorruptionKind> kinds;
  for (const auto& k : kind_names) kinds.push_back(corruption_from_string(k));
  const auto suite = make_corruption_suite(ds.bags, kinds, cfg.seed);
  const CorruptionReport report = corruption_eval(ckpt.params, ds.bags, suite, cfg.workers);
  write_text(out, to_json(report).dump(2) + "\n");
  if (!csv_path.empty()) write_text(csv_path, severity_csv(report));
  std::cout << "mean_ce=" << report.mean_ce << "\n";
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out, const std::string& curves_path) {
  if (inputs.empty()) throw ConfigError("report needs at least one input");
  std::vector<EvalReport> evals;
  std::vector<CorruptionReport> corruptions;
  for (const auto& path : inputs) {
    const json j = read_json(path);
    const auto kind = j.value("kind", std::string{});
    if (kind == "eval") evals.push_back(eval_report_from_json(j));
    else if (kind == "corruption") corruptions.push_back(corruption_report_from_json(j));
    else throw SchemaError("'" + path + "' is neither an eval nor a corruption report");
  }
  if (!evals.empty() && !corruptions.empty()) throw SchemaError("report inputs mix eval and corruption reports");

  if (!evals.empty()) {
    write_text(out, aggregate_csv(seed_aggregate(evals)));
  } else {
    const auto stats = seed_aggregate(corruptions);
    write_text(out, aggregate_csv(stats));
    if (!curves_path.empty()) {
      std::string csv = "corruption,severity,n,mean_acc,std,ci95\n";
      char buf[64];
      auto fmt = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
      };
      for (const auto& [kind, _] : corruptions.front().accuracy)
        for (int s = 1; s <= kNumSeverities; ++s) {
          const auto& f = stats.at("acc/" + kind + "/" + std::to_string(s));
          csv += kind + "," + std::to_string(s) + "," + std::to_string(f.n) + "," + fmt(f.mean) + "," +
                 (f.stddev ? fmt(*f.stddev) : "") + "," + (f.ci95 ? fmt(*f.ci95) : "") + "\n";
        }
      write_text(curves_path, csv);
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segmil: concept-guided multiple-instance concept bottleneck engine"};
  app.require_subcommand(1);
  app.footer(keys_footer());
  CommonOptions common;

  std::string rawdet, out, data, log_path, ckpt, groups_csv_path, explain_path, kind, curves_path;
  std::vector<std::string> inputs, kinds{"gauss_noise", "shot_noise", "blur_mix"};
  bool log_timing = false, worst_group = false;
  int severity = 1;

  auto* build = app.add_subcommand("build-bags", "build a bagpack from rawdet detections");
  build->add_option("--rawdet", rawdet, "rawdet JSONL input")->required();
  build->add_option("--out", out, "bagpack output")->required();
  add_common(build, common);

  auto* gen = app.add_subcommand("gen-synth", "generate the synthetic spurious-correlation benchmark");
  gen->add_option("--out-dir", out, "directory for train.bagpack, test.bagpack, synth_spec.json")->required();
  add_common(gen, common);

  auto* tr = app.add_subcommand("train", "train a model on a bagpack");
  tr->add_option("--data", data, "training bagpack")->required();
  tr->add_option("--out", out, "checkpoint output")->required();
  tr->add_option("--log", log_path, "per-epoch CSV log");
  tr->add_flag("--log-timing", log_timing, "record wall_ms in the log (otherwise 0, keeping logs reproducible)");
  add_common(tr, common);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint: average and per-group accuracy");
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--data", data, "bagpack to evaluate")->required();
  ev->add_option("--out", out, "report JSON")->required();
  ev->add_option("--groups-csv", groups_csv_path, "per-group CSV");
  ev->add_option("--explain", explain_path, "explanation JSONL (attention and top concepts per bag)");
  ev->add_flag("--worst-group", worst_group, "fail with exit 2 unless every bag has a group_id");
  add_common(ev, common);

  auto* cor = app.add_subcommand("corrupt", "apply an embedding-space corruption to a bagpack");
  cor->add_option("--data", data, "input bagpack")->required();
  cor->add_option("--kind", kind, "gauss_noise | shot_noise | blur_mix")->required();
  cor->add_option("--severity", severity, "1..5")->required();
  cor->add_option("--out", out, "output bagpack")->required();
  add_common(cor, common);

  auto* evc = app.add_subcommand("eval-corruption", "accuracy per corruption and severity, CE and mean CE");
  evc->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  evc->add_option("--data", data, "clean bagpack")->required();
  evc->add_option("--kinds", kinds, "corruption kinds")->delimiter(',');
  evc->add_option("--out", out, "corruption report JSON")->required();
  evc->add_option("--csv", groups_csv_path, "per-cell accuracy CSV");
  add_common(evc, common);

  auto* rep = app.add_subcommand("report", "merge per-seed report JSONs into mean/std/CI CSVs");
  rep->add_option("--inputs", inputs, "eval or corruption report JSONs")->required();
  rep->add_option("--out", out, "aggregate CSV")->required();
  rep->add_option("--curves", curves_path, "severity-curve CSV (corruption reports only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*build) return cmd_build_bags(common, rawdet, out);
    if (*gen) return cmd_gen_synth(common, out);
    if (*tr) return cmd_train(common, data, out, log_path, log_timing);
    if (*ev) return cmd_eval(common, ckpt, data, out, groups_csv_path, explain_path, worst_group);
    if (*cor) return cmd_corrupt(common, data, kind, severity, out);
    if (*evc) return cmd_eval_corruption(common, ckpt, data, kinds, out, groups_csv_path);
    if (*rep) return cmd_report(inputs, out, curves_path);
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kSchema;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  }
  return kOk;
}
