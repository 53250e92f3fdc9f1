#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segmil/bagio.hpp"
#include "segmil/milmodel.hpp"

namespace segmil {

struct EvalReport {
  std::size_t n_total = 0;
  std::size_t n_correct = 0;
  double avg_acc = 0.0;
  std::map<int, double> per_group_acc;
  std::map<int, std::size_t> n_per_group;
  std::optional<double> worst_group_acc;  // present iff every sample has a group
};

int predict(const ModelParams& params, const Bag& bag);

/// Exact counting. Groups must be given for all samples or for none.
EvalReport evaluate_predictions(std::span<const int> predicted, std::span<const int> labels,
                                std::span<const std::optional<int>> groups);

EvalReport evaluate(const ModelParams& params, std::span<const Bag> bags, int workers = 1);

inline constexpr int kNumSeverities = 5;

struct CorruptionReport {
  std::map<std::string, std::array<double, kNumSeverities>> accuracy;  // [severity - 1]
  std::map<std::string, double> ce;  // mean over severities of (1 - accuracy)
  double mean_ce = 0.0;
  std::optional<double> clean_acc;
};

/// Builds CE values from per-cell accuracies; every corruption must have
/// severities 1..5 exactly (ProtocolError otherwise).
CorruptionReport corruption_report(const std::map<std::string, std::map<int, double>>& accuracy);

/// Bags per corruption kind and severity.
using CorruptionSuite = std::map<std::string, std::map<int, std::vector<Bag>>>;

CorruptionReport corruption_eval(const ModelParams& params, std::span<const Bag> clean_bags,
                                 const CorruptionSuite& suite, int workers = 1);

/// CE of each corruption divided by a baseline model's CE, and their mean.
struct NormalizedCE {
  std::map<std::string, double> ratio;
  double mean = 0.0;
};
NormalizedCE normalized_ce(const CorruptionReport& report, const CorruptionReport& baseline);

struct FieldStats {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> stddev;  // sample std (n - 1); absent for a single run
  std::optional<double> ci95;  // 1.96 * std / sqrt(n)
};

FieldStats seed_aggregate(std::span<const double> values);

/// Aggregates avg_acc, worst_group_acc and group_<g>_acc over runs. A field
/// is reported only when every run has it.
std::map<std::string, FieldStats> seed_aggregate(std::span<const EvalReport> runs);

/// Aggregates "acc/<kind>/<severity>", "ce/<kind>" and "mean_ce".
std::map<std::string, FieldStats> seed_aggregate(std::span<const CorruptionReport> runs);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CorruptionReport& r);
CorruptionReport corruption_report_from_json(const nlohmann::json& j);

/// "group_id,n,accuracy" rows plus an "all" row.
std::string groups_csv(const EvalReport& r);
/// "corruption,severity,accuracy" rows.
std::string severity_csv(const CorruptionReport& r);
/// "metric,n,mean,std,ci95" rows.
std::string aggregate_csv(const std::map<std::string, FieldStats>& stats);

}  // namespace segmil
