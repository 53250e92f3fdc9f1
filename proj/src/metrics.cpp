#include "segmil/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "segmil/error.hpp"
#include "segmil/parallel.hpp"

namespace segmil {

using nlohmann::json;

int predict(const ModelParams& params, const Bag& bag) { return argmax(forward(params, bag.embeddings()).logits); }

EvalReport evaluate_predictions(std::span<const int> predicted, std::span<const int> labels,
                                std::span<const std::optional<int>> groups) {
  if (predicted.size() != labels.size() || groups.size() != labels.size())
    throw SchemaError("evaluate: predictions, labels and groups differ in length");
  std::size_t with_group = 0;
  for (const auto& g : groups) with_group += g.has_value();
  if (with_group != 0 && with_group != groups.size())
    throw SchemaError("evaluate: mixed group_id coverage (" + std::to_string(with_group) + " of " +
                      std::to_string(groups.size()) + ")");

  EvalReport r;
  r.n_total = labels.size();
  std::map<int, std::size_t> correct_per_group;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool ok = predicted[i] == labels[i];
    r.n_correct += ok;
    if (groups[i]) {
      ++r.n_per_group[*groups[i]];
      correct_per_group[*groups[i]] += ok;
    }
  }
  r.avg_acc = r.n_total ? double(r.n_correct) / double(r.n_total) : 0.0;
  for (const auto& [g, n] : r.n_per_group) r.per_group_acc[g] = double(correct_per_group[g]) / double(n);
  if (!r.per_group_acc.empty()) {
    double worst = 1.0;
    for (const auto& [g, acc] : r.per_group_acc) worst = std::min(worst, acc);
    r.worst_group_acc = worst;
  }
  return r;
}

EvalReport evaluate(const ModelParams& params, std::span<const Bag> bags, int workers) {
  validate_group_coverage(bags);
  std::vector<int> predicted(bags.size()), labels(bags.size());
  std::vector<std::optional<int>> groups(bags.size());
  parallel_for(bags.size(), workers, [&](std::size_t i) { predicted[i] = predict(params, bags[i]); });
  for (std::size_t i = 0; i < bags.size(); ++i) {
    labels[i] = bags[i].label;
    groups[i] = bags[i].group_id;
  }
  return evaluate_predictions(predicted, labels, groups);
}

CorruptionReport corruption_report(const std::map<std::string, std::map<int, double>>& accuracy) {
  if (accuracy.empty()) throw ProtocolError("corruption suite is empty");
  CorruptionReport r;
  for (const auto& [kind, cells] : accuracy) {
    std::array<double, kNumSeverities> acc{};
    for (int s = 1; s <= kNumSeverities; ++s) {
      auto it = cells.find(s);
      if (it == cells.end())
        throw ProtocolError("corruption '" + kind + "' is missing severity " + std::to_string(s));
      if (!(it->second >= 0.0 && it->second <= 1.0))
        throw SchemaError("corruption '" + kind + "': accuracy outside [0, 1]");
      acc[static_cast<std::size_t>(s - 1)] = it->second;
    }
    if (cells.size() != kNumSeverities)
      throw ProtocolError("corruption '" + kind + "' has severities outside 1..5");
    double err = 0.0;
    for (double a : acc) err += 1.0 - a;
    r.accuracy[kind] = acc;
    r.ce[kind] = err / kNumSeverities;
  }
  double total = 0.0;
  for (const auto& [kind, ce] : r.ce) total += ce;
  r.mean_ce = total / double(r.ce.size());
  return r;
}

CorruptionReport corruption_eval(const ModelParams& params, std::span<const Bag> clean_bags,
                                 const CorruptionSuite& suite, int workers) {
  std::map<std::string, std::map<int, double>> acc;
  for (const auto& [kind, cells] : suite)
    for (const auto& [severity, bags] : cells) {
      if (bags.empty()) throw ProtocolError("corruption '" + kind + "' severity " + std::to_string(severity) + " has no bags");
      acc[kind][severity] = evaluate(params, bags, workers).avg_acc;
    }
  CorruptionReport r = corruption_report(acc);
  if (!clean_bags.empty()) r.clean_acc = evaluate(params, clean_bags, workers).avg_acc;
  return r;
}

NormalizedCE normalized_ce(const CorruptionReport& report, const CorruptionReport& baseline) {
  NormalizedCE out;
  for (const auto& [kind, ce] : report.ce) {
    auto it = baseline.ce.find(kind);
    if (it == baseline.ce.end()) throw ProtocolError("baseline lacks corruption '" + kind + "'");
    if (it->second <= 0.0) throw ProtocolError("baseline CE for '" + kind + "' is zero");
    out.ratio[kind] = ce / it->second;
    out.mean += out.ratio[kind];
  }
  if (!out.ratio.empty()) out.mean /= double(out.ratio.size());
  return out;
}

FieldStats seed_aggregate(std::span<const double> values) {
  if (values.empty()) throw SchemaError("seed_aggregate: no runs");
  FieldStats s;
  s.n = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(s.n);
  if (s.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / double(s.n - 1));
    s.ci95 = 1.96 * *s.stddev / std::sqrt(double(s.n));
  }
  return s;
}

namespace {

std::map<std::string, FieldStats> aggregate_fields(const std::vector<std::map<std::string, double>>& runs) {
  std::map<std::string, FieldStats> out;
  if (runs.empty()) throw SchemaError("seed_aggregate: no runs");
  for (const auto& [name, _] : runs.front()) {
    std::vector<double> values;
    for (const auto& run : runs) {
      auto it = run.find(name);
      if (it == run.end()) break;
      values.push_back(it->second);
    }
    if (values.size() == runs.size()) out[name] = seed_aggregate(values);
  }
  return out;
}

}  // namespace

std::map<std::string, FieldStats> seed_aggregate(std::span<const EvalReport> runs) {
  std::vector<std::map<std::string, double>> fields;
  for (const auto& r : runs) {
    std::map<std::string, double> f{{"avg_acc", r.avg_acc}};
    if (r.worst_group_acc) f["worst_group_acc"] = *r.worst_group_acc;
    for (const auto& [g, acc] : r.per_group_acc) f["group_" + std::to_string(g) + "_acc"] = acc;
    fields.push_back(std::move(f));
  }
  return aggregate_fields(fields);
}

std::map<std::string, FieldStats> seed_aggregate(std::span<const CorruptionReport> runs) {
  std::vector<std::map<std::string, double>> fields;
  for (const auto& r : runs) {
    std::map<std::string, double> f{{"mean_ce", r.mean_ce}};
    for (const auto& [kind, acc] : r.accuracy)
      for (int s = 1; s <= kNumSeverities; ++s) f["acc/" + kind + "/" + std::to_string(s)] = acc[std::size_t(s - 1)];
    for (const auto& [kind, ce] : r.ce) f["ce/" + kind] = ce;
    if (r.clean_acc) f["clean_acc"] = *r.clean_acc;
    fields.push_back(std::move(f));
  }
  return aggregate_fields(fields);
}

json to_json(const EvalReport& r) {
  json groups = json::array();
  for (const auto& [g, acc] : r.per_group_acc) groups.push_back({{"group_id", g}, {"n", r.n_per_group.at(g)}, {"accuracy", acc}});
  json j{{"kind", "eval"}, {"n_total", r.n_total}, {"n_correct", r.n_correct}, {"avg_acc", r.avg_acc}, {"groups", groups}};
  j["worst_group_acc"] = r.worst_group_acc ? json(*r.worst_group_acc) : json(nullptr);
  return j;
}

EvalReport eval_report_from_json(const json& j) {
  try {
    if (j.value("kind", std::string{}) != "eval") throw SchemaError("not an eval report");
    EvalReport r;
    r.n_total = j.at("n_total").get<std::size_t>();
    r.n_correct = j.at("n_correct").get<std::size_t>();
    r.avg_acc = j.at("avg_acc").get<double>();
    for (const auto& g : j.at("groups")) {
      const int id = g.at("group_id").get<int>();
      r.per_group_acc[id] = g.at("accuracy").get<double>();
      r.n_per_group[id] = g.at("n").get<std::size_t>();
    }
    if (!j.at("worst_group_acc").is_null()) r.worst_group_acc = j.at("worst_group_acc").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("eval report: ") + e.what());
  }
}

json to_json(const CorruptionReport& r) {
  json cells = json::array();
  for (const auto& [kind, acc] : r.accuracy)
    for (int s = 1; s <= kNumSeverities; ++s)
      cells.push_back({{"corruption", kind}, {"severity", s}, {"accuracy", acc[std::size_t(s - 1)]}});
  json j{{"kind", "corruption"}, {"cells", cells}, {"ce", r.ce}, {"mean_ce", r.mean_ce}};
  j["clean_acc"] = r.clean_acc ? json(*r.clean_acc) : json(nullptr);
  return j;
}

CorruptionReport corruption_report_from_json(const json& j) {
  try {
    if (j.value("kind", std::string{}) != "corruption") throw SchemaError("not a corruption report");
    std::map<std::string, std::map<int, double>> acc;
    for (const auto& c : j.at("cells"))
      acc[c.at("corruption").get<std::string>()][c.at("severity").get<int>()] = c.at("accuracy").get<double>();
    CorruptionReport r = corruption_report(acc);
    if (j.contains("clean_acc") && !j.at("clean_acc").is_null()) r.clean_acc = j.at("clean_acc").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("corruption report: ") + e.what());
  }
}

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string groups_csv(const EvalReport& r) {
  std::string out = "group_id,n,accuracy\n";
  for (const auto& [g, acc] : r.per_group_acc)
    out += std::to_string(g) + "," + std::to_string(r.n_per_group.at(g)) + "," + fmt(acc) + "\n";
  out += "all," + std::to_string(r.n_total) + "," + fmt(r.avg_acc) + "\n";
  return out;
}

std::string severity_csv(const CorruptionReport& r) {
  std::string out = "corruption,severity,accuracy\n";
  for (const auto& [kind, acc] : r.accuracy)
    for (int s = 1; s <= kNumSeverities; ++s) out += kind + "," + std::to_string(s) + "," + fmt(acc[std::size_t(s - 1)]) + "\n";
  return out;
}

std::string aggregate_csv(const std::map<std::string, FieldStats>& stats) {
  std::string out = "metric,n,mean,std,ci95\n";
  for (const auto& [name, s] : stats)
    out += name + "," + std::to_string(s.n) + "," + fmt(s.mean) + "," + (s.stddev ? fmt(*s.stddev) : "") + "," +
           (s.ci95 ? fmt(*s.ci95) : "") + "\n";
  return out;
}

}  // namespace segmil
