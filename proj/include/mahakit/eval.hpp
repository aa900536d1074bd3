#pragma once

#include <filesystem>
#include <vector>

#include "mahakit/bundle.hpp"
#include "mahakit/report.hpp"
#include "mahakit/scorers.hpp"

namespace mahakit {

struct EvalConfig {
  std::vector<Method> methods;
  ScorerConfig scorer;  // method field is ignored
  Shrinkage shrinkage = Shrinkage::automatic();
  double tpr_target = 0.95;
  bool diagnostics = true;  // variance-deviation means for every fit that was built
};

/// Fits each required Gaussian model once, scores the ID test set and every
/// OOD and unit-test set per method, and assembles the report. Errors carry
/// the method and set name.
RunReport run_eval(const Bundle& bundle, const EvalConfig& config);
RunReport run_eval(const std::filesystem::path& manifest, const EvalConfig& config);

/// Report JSON with the timings block removed, used for determinism checks.
nlohmann::ordered_json without_timings(const nlohmann::ordered_json& report);

}  // namespace mahakit
