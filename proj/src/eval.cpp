#include "mahakit/eval.hpp"

#include <chrono>
#include <numeric>

#include "mahakit/diagnostics.hpp"

namespace mahakit {
namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

[[noreturn]] void rethrow_annotated(const Error& e, Method m, const std::string& set) {
  throw Error(e.code(), "method '" + std::string(method_name(m)) + "'" +
                            (set.empty() ? std::string() : ", set '" + set + "'") + ": " + e.what());
}

FitSummary summarize(const GaussianFit& f) {
  return {f.normalized(), f.n_classes(), f.dim(), f.n_samples(), f.shrinkage_eps(),
          f.global_shrinkage_eps()};
}

json shrinkage_json(const Shrinkage& s) {
  return s.is_automatic() ? json("auto") : json(s.value());
}

}  // namespace

RunReport run_eval(const Bundle& bundle, const EvalConfig& config) {
  const auto start = Clock::now();
  if (config.methods.empty()) throw Error(ErrorCode::NoMethods, "no methods requested");
  config.scorer.validate();

  RunReport report;
  json methods = json::array();
  for (Method m : config.methods) methods.push_back(std::string(method_name(m)));
  report.config["methods"] = methods;
  report.config["shrinkage"] = shrinkage_json(config.shrinkage);
  report.config["tpr_target"] = config.tpr_target;
  report.config["unit_test_threshold"] = 0.10;
  report.config["scorer"] = scorer_config_to_json(config.scorer);

  const bool need_plain = std::any_of(config.methods.begin(), config.methods.end(), uses_plain_fit);
  const bool need_normalized =
      std::any_of(config.methods.begin(), config.methods.end(), uses_normalized_fit);
  const bool need_per_class =
      std::find(config.methods.begin(), config.methods.end(), Method::GMM) != config.methods.end();

  const auto fit_start = Clock::now();
  std::optional<GaussianFit> plain;
  std::optional<GaussianFit> normalized;
  std::optional<PerClassCovariances> per_class;
  if (need_plain) {
    plain = fit(bundle.train, bundle.train_labels, {false, config.shrinkage});
    report.fits.push_back(summarize(*plain));
  }
  if (need_normalized) {
    normalized = fit(bundle.train, bundle.train_labels, {true, config.shrinkage});
    report.fits.push_back(summarize(*normalized));
  }
  if (need_per_class || (config.diagnostics && plain)) {
    per_class = estimate_per_class_covariances(bundle.train, bundle.train_labels, plain ? plain->means()
                                               : estimate_class_means(bundle.train, bundle.train_labels));
  }
  const double fit_seconds = seconds_since(fit_start);

  ScorerInputs inputs;
  inputs.train = &bundle.train;
  inputs.train_labels = &bundle.train_labels;
  inputs.head = bundle.head ? &*bundle.head : nullptr;
  inputs.train_logits = bundle.train_logits ? &*bundle.train_logits : nullptr;
  inputs.fit = plain ? &*plain : nullptr;
  inputs.normalized_fit = normalized ? &*normalized : nullptr;
  inputs.per_class = per_class ? &*per_class : nullptr;
  inputs.shrinkage = config.shrinkage;

  const auto score_start = Clock::now();
  for (Method m : config.methods) {
    std::unique_ptr<Scorer> scorer;
    ScorerConfig sc = config.scorer;
    sc.method = m;
    try {
      scorer = make_scorer(sc, inputs);
    } catch (const Error& e) {
      rethrow_annotated(e, m, "");
    }
    ScoreVector id_scores;
    try {
      id_scores = scorer->score(bundle.id_test, bundle.id_test_logits ? &*bundle.id_test_logits : nullptr);
    } catch (const Error& e) {
      rethrow_annotated(e, m, "id_test");
    }

    double fpr_sum = 0.0;
    double auroc_sum = 0.0;
    Index n_sets = 0;
    UnitTestSummary unit{std::string(method_name(m)), 0, 0};
    auto run_set = [&](const NamedFeatures& set, bool is_unit_test) {
      try {
        ScoreVector ood = scorer->score(set.features, set.logits ? &*set.logits : nullptr);
        SetResult r;
        r.method = std::string(method_name(m));
        r.set = set.name;
        r.unit_test = is_unit_test;
        r.result = fpr_at_tpr(id_scores.values, ood.values, config.tpr_target);
        r.provenance = ood.provenance;
        r.warnings = id_scores.warnings;
        for (const auto& w : ood.warnings) {
          if (std::find(r.warnings.begin(), r.warnings.end(), w) == r.warnings.end()) r.warnings.push_back(w);
        }
        if (is_unit_test) {
          ++unit.n_tests;
          if (r.result.fpr_at_tpr >= 0.10) ++unit.failures;
        } else {
          fpr_sum += r.result.fpr_at_tpr;
          auroc_sum += r.result.auroc;
          ++n_sets;
        }
        report.results.push_back(std::move(r));
      } catch (const Error& e) {
        rethrow_annotated(e, m, set.name);
      }
    };
    for (const auto& set : bundle.ood_sets) run_set(set, false);
    for (const auto& set : bundle.unit_tests) run_set(set, true);

    if (n_sets > 0) {
      report.averages.push_back({std::string(method_name(m)), n_sets,
                                 fpr_sum / static_cast<double>(n_sets),
                                 auroc_sum / static_cast<double>(n_sets)});
    }
    if (unit.n_tests > 0) report.unit_tests.push_back(unit);
    if (bundle.id_test_labels) {
      const double t = tpr_threshold(id_scores.values, config.tpr_target);
      report.coverage.push_back({std::string(method_name(m)), t,
                                 rejected_class_coverage(id_scores.values, *bundle.id_test_labels, t),
                                 bundle.id_test_labels->n_classes()});
    }
  }
  const double score_seconds = seconds_since(score_start);

  if (config.diagnostics) {
    const auto diag_start = Clock::now();
    if (plain && per_class) {
      const DeviationReport dev = variance_deviation(*plain, *per_class);
      report.diagnostics["variance_deviation"] = {{"mean", dev.mean},
                                                  {"shrinkage_eps", dev.shrinkage_eps}};
    }
    if (normalized) {
      const FeatureMatrix unit_train = l2_normalize(bundle.train);
      const DeviationReport dev = variance_deviation(
          *normalized,
          estimate_per_class_covariances(unit_train, bundle.train_labels, normalized->means()));
      report.diagnostics["variance_deviation_normalized"] = {{"mean", dev.mean},
                                                             {"shrinkage_eps", dev.shrinkage_eps}};
    }
    report.timings["diagnostics_seconds"] = seconds_since(diag_start);
  }
  report.timings["fit_seconds"] = fit_seconds;
  report.timings["score_seconds"] = score_seconds;
  report.timings["total_seconds"] = seconds_since(start);
  return report;
}

RunReport run_eval(const std::filesystem::path& manifest, const EvalConfig& config) {
  if (config.methods.empty()) throw Error(ErrorCode::NoMethods, "no methods requested");
  const auto start = Clock::now();
  const Bundle bundle = load_bundle(manifest);
  const double load_seconds = seconds_since(start);
  RunReport report = run_eval(bundle, config);
  report.timings["load_seconds"] = load_seconds;
  return report;
}

json without_timings(const json& report) {
  json out = report;
  out.erase("timings");
  return out;
}

}  // namespace mahakit
