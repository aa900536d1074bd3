#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mahakit/metrics.hpp"
#include "mahakit/scorers.hpp"

namespace mahakit {

constexpr int kReportSchemaVersion = 1;
constexpr const char* kToolkitVersion = "0.1.0";

struct SetResult {
  std::string method;
  std::string set;
  bool unit_test = false;
  EvalResult result;
  ScoreProvenance provenance;
  std::vector<std::string> warnings;
};

struct MethodAverage {
  std::string method;
  Index n_sets = 0;
  double fpr_at_tpr = 0.0;
  double auroc = 0.0;
};

struct UnitTestSummary {
  std::string method;
  Index n_tests = 0;
  Index failures = 0;  // sets with FPR >= 10%
};

struct CoverageEntry {
  std::string method;
  double threshold = 0.0;
  Index rejected_classes = 0;
  Index n_classes = 0;
};

struct FitSummary {
  bool normalized = false;
  Index n_classes = 0;
  Index dim = 0;
  std::int64_t n_samples = 0;
  double shrinkage_eps = 0.0;
  double global_shrinkage_eps = 0.0;
};

/// Table-shaped evaluation output. Averages cover the OOD sets only, not the
/// unit-test noise sets. Timings are reported separately from results so that
/// determinism checks can drop them.
struct RunReport {
  int schema_version = kReportSchemaVersion;
  std::string toolkit_version = kToolkitVersion;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<FitSummary> fits;
  std::vector<SetResult> results;
  std::vector<MethodAverage> averages;
  std::vector<UnitTestSummary> unit_tests;
  std::vector<CoverageEntry> coverage;
  nlohmann::ordered_json diagnostics = nlohmann::ordered_json::object();
  nlohmann::ordered_json timings = nlohmann::ordered_json::object();
};

nlohmann::ordered_json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::ordered_json& j);

/// Fraction rendered as a percentage with one decimal ("26.7").
std::string format_percent(double fraction);

/// One row per method and metric, one column per OOD set plus the average.
std::string report_csv(const RunReport& report);

nlohmann::ordered_json scorer_config_to_json(const ScorerConfig& config);

}  // namespace mahakit
