#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mahakit/bundle.hpp"
#include "mahakit/diagnostics.hpp"
#include "mahakit/eval.hpp"
#include "mahakit/npy.hpp"
#include "mahakit/synth_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mahakit;

namespace {

struct ScorerFlags {
  ScorerConfig config;
  Index vim_dim = 0;

  void attach(CLI::App* app) {
    app->add_option("--knn-k", config.knn_k, "KNN neighbour rank")->capture_default_str();
    app->add_option("--react-quantile", config.react_clip_quantile, "ReAct clip quantile")
        ->capture_default_str();
    app->add_option("--nnguide-fraction", config.nnguide_subset_fraction, "NNGuide train subset fraction")
        ->capture_default_str();
    app->add_option("--nnguide-k", config.nnguide_k, "NNGuide neighbour rank")->capture_default_str();
    app->add_option("--ash-percentile", config.ash_prune_percentile, "Ash-s pruning percentile")
        ->capture_default_str();
    app->add_option("--neco-variance", config.neco_explained_variance, "NeCo explained variance")
        ->capture_default_str();
    app->add_option("--vim-dim", vim_dim, "ViM principal dimension (0 = by feature width)")
        ->capture_default_str();
    app->add_option("--ssc-scale", config.ssc_scale, "SSC softmax scale")->capture_default_str();
  }

  ScorerConfig resolved(std::uint64_t seed) const {
    ScorerConfig c = config;
    c.seed = seed;
    if (vim_dim > 0) c.vim_dim = vim_dim;
    c.validate();
    return c;
  }
};

Shrinkage parse_shrinkage(const std::string& text) {
  if (text == "auto") return Shrinkage::automatic();
  try {
    std::size_t used = 0;
    const double eps = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return Shrinkage::fixed(eps);
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::InvalidConfig, "--shrinkage must be 'auto' or a number, got '" + text + "'");
  }
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

ScorerInputs inputs_for(const Bundle& b) {
  ScorerInputs in;
  in.train = &b.train;
  in.train_labels = &b.train_labels;
  in.head = b.head ? &*b.head : nullptr;
  in.train_logits = b.train_logits ? &*b.train_logits : nullptr;
  return in;
}

json fit_json(const GaussianFit& f) {
  return {{"normalized", f.normalized()},   {"n_classes", f.n_classes()},
          {"dim", f.dim()},                 {"n_samples", f.n_samples()},
          {"shrinkage_eps", f.shrinkage_eps()}, {"global_shrinkage_eps", f.global_shrinkage_eps()}};
}

// ---- subcommands ----------------------------------------------------------------

int run_fit(const fs::path& bundle_path, const std::string& normalize, const std::string& shrinkage,
            const fs::path& out) {
  const Shrinkage s = parse_shrinkage(shrinkage);
  const BundleManifest manifest = read_manifest(bundle_path);
  NpyRowReader rows(manifest.train_features);
  const Bundle bundle = load_bundle(bundle_path);
  std::vector<GaussianFit> fits;
  if (normalize == "off" || normalize == "both") fits.push_back(fit(rows, bundle.train_labels, {false, s}));
  if (normalize == "on" || normalize == "both") fits.push_back(fit(rows, bundle.train_labels, {true, s}));
  std::vector<const GaussianFit*> ptrs;
  json summary = json::array();
  for (const auto& f : fits) {
    ptrs.push_back(&f);
    summary.push_back(fit_json(f));
  }
  write_fits(out, ptrs);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int run_score(const fs::path& bundle_path, const fs::path& fit_path, const std::string& method_text,
              const std::string& set_name, const fs::path& out, const ScorerConfig& base) {
  ScorerConfig config = base;
  config.method = parse_method(method_text);
  const Bundle bundle = load_bundle(bundle_path);
  ScorerInputs in = inputs_for(bundle);
  std::vector<GaussianFit> fits;
  if (!fit_path.empty()) fits = read_fits(fit_path);
  for (const auto& f : fits) {
    if (f.dim() != bundle.dim()) {
      throw Error(ErrorCode::FitMismatch, "fit dimension does not match the bundle");
    }
    (f.normalized() ? in.normalized_fit : in.fit) = &f;
  }
  if ((uses_normalized_fit(config.method) && in.normalized_fit == nullptr && !fits.empty()) ||
      (uses_plain_fit(config.method) && config.method != Method::Cosine && in.fit == nullptr &&
       !fits.empty())) {
    throw Error(ErrorCode::FitMismatch, "fit file lacks the " +
                                            std::string(uses_normalized_fit(config.method) ? "normalized"
                                                                                           : "unnormalized") +
                                            " model required by " + method_text);
  }
  const auto scorer = make_scorer(config, in);
  ScoreVector scores;
  if (set_name.empty()) {
    scores = scorer->score(bundle.id_test, bundle.id_test_logits ? &*bundle.id_test_logits : nullptr);
  } else {
    const NamedFeatures& set = bundle.ood_set(set_name);
    scores = scorer->score(set.features, set.logits ? &*set.logits : nullptr);
  }
  for (const auto& w : scores.warnings) std::cerr << "warning: " << w << "\n";
  write_vector(out, scores.values);
  return 0;
}

int run_eval_command(const fs::path& bundle_path, const std::vector<std::string>& method_names,
                     const fs::path& out, const std::string& csv, const ScorerConfig& scorer,
                     const std::string& shrinkage, double tpr) {
  EvalConfig config;
  for (const auto& name : method_names) config.methods.push_back(parse_method(name));
  config.scorer = scorer;
  config.shrinkage = parse_shrinkage(shrinkage);
  config.tpr_target = tpr;
  const RunReport report = run_eval(bundle_path, config);
  write_json(out, report_to_json(report));
  if (!csv.empty()) write_file_atomic(csv, report_csv(report));
  for (const auto& r : report.results) {
    for (const auto& w : r.warnings) std::cerr << "warning [" << r.method << "/" << r.set << "]: " << w << "\n";
  }
  return 0;
}

json norm_stats_json(const NormStats& s) {
  json classes = json::array();
  for (const auto& c : s.per_class) {
    classes.push_back({{"label", c.label}, {"count", c.count}, {"mean", c.mean},
                       {"std", c.std},     {"min", c.min},     {"max", c.max}});
  }
  return {{"per_class", classes}, {"histogram", {{"edges", s.edges}, {"counts", s.counts}}}};
}

int run_diagnose(const fs::path& bundle_path, bool want_norms, Index qq, bool want_deviation,
                 const std::string& correlation_method, const fs::path& out, Index bins,
                 std::uint64_t seed, const std::string& shrinkage_text, const ScorerConfig& scorer) {
  if (!want_norms && qq <= 0 && !want_deviation && correlation_method.empty()) {
    throw Error(ErrorCode::InvalidConfig,
                "choose at least one of --norm-stats, --qq, --deviation, --correlation");
  }
  const Shrinkage shrinkage = parse_shrinkage(shrinkage_text);
  const Bundle bundle = load_bundle(bundle_path);
  json result;
  result["config"] = {{"shrinkage", shrinkage.is_automatic() ? json("auto") : json(shrinkage.value())},
                      {"seed", seed},
                      {"bins", bins}};
  if (want_norms) {
    result["norm_stats"]["train"] = norm_stats_json(norm_stats(bundle.train, bundle.train_labels, bins));
    if (bundle.id_test_labels) {
      result["norm_stats"]["id_test"] =
          norm_stats_json(norm_stats(bundle.id_test, *bundle.id_test_labels, bins));
    }
  }
  std::optional<GaussianFit> plain;
  auto plain_fit = [&]() -> const GaussianFit& {
    if (!plain) plain = fit(bundle.train, bundle.train_labels, {false, shrinkage});
    return *plain;
  };
  if (qq > 0) {
    const Matrix directions = default_qq_directions(bundle.dim(), 3, seed, &plain_fit().shared_cov());
    json pairs = json::array();
    for (const auto& p : qq_quantiles(bundle.train, bundle.train_labels, directions, qq)) {
      const Vector dir = directions.row(p.direction).transpose();
      pairs.push_back({{"direction", p.direction},
                       {"kind", p.direction < 3 ? "random" : (p.direction == 3 ? "top_eigenvector"
                                                                                : "bottom_eigenvector")},
                       {"vector", std::vector<double>(dir.data(), dir.data() + dir.size())},
                       {"sample_quantiles", std::vector<double>(p.sample_quantiles.data(),
                                                                p.sample_quantiles.data() + p.sample_quantiles.size())},
                       {"theoretical_quantiles",
                        std::vector<double>(p.theoretical_quantiles.data(),
                                            p.theoretical_quantiles.data() + p.theoretical_quantiles.size())}});
    }
    result["qq"] = pairs;
  }
  if (want_deviation) {
    const GaussianFit& f = plain_fit();
    const DeviationReport plain_dev = variance_deviation(
        f, estimate_per_class_covariances(bundle.train, bundle.train_labels, f.means()));
    const FeatureMatrix unit = l2_normalize(bundle.train);
    const GaussianFit nf = fit(bundle.train, bundle.train_labels, {true, shrinkage});
    const DeviationReport norm_dev =
        variance_deviation(nf, estimate_per_class_covariances(unit, bundle.train_labels, nf.means()));
    result["deviation"] = {
        {"unnormalized", {{"mean", plain_dev.mean}, {"per_class", plain_dev.per_class},
                          {"shrinkage_eps", plain_dev.shrinkage_eps}}},
        {"normalized", {{"mean", norm_dev.mean}, {"per_class", norm_dev.per_class},
                        {"shrinkage_eps", norm_dev.shrinkage_eps}}}};
  }
  if (!correlation_method.empty()) {
    ScorerConfig config = scorer;
    config.method = parse_method(correlation_method);
    const auto s = make_scorer(config, inputs_for(bundle));
    json corr;
    auto add = [&](const std::string& name, const FeatureMatrix& x, const Matrix* logits) {
      const Correlation c = norm_score_correlation(x, s->score(x, logits).values);
      corr[name] = {{"pearson", c.pearson}, {"spearman", c.spearman}};
    };
    add("id_test", bundle.id_test, bundle.id_test_logits ? &*bundle.id_test_logits : nullptr);
    for (const auto& set : bundle.ood_sets) add(set.name, set.features, set.logits ? &*set.logits : nullptr);
    result["correlation"] = {{"method", correlation_method}, {"sets", corr}};
  }
  write_json(out, result);
  return 0;
}

int run_sweep(const fs::path& bundle_path, const std::string& set_name, const std::vector<double>& alphas,
              const std::string& method_text, const fs::path& out, const std::string& shrinkage_text) {
  const Method method = parse_method(method_text);
  if (method != Method::Maha && method != Method::MahaPP) {
    throw Error(ErrorCode::InvalidConfig, "--method must be maha or maha++");
  }
  if (alphas.empty()) throw Error(ErrorCode::InvalidConfig, "--alphas is empty");
  const Bundle bundle = load_bundle(bundle_path);
  const GaussianFit f =
      fit(bundle.train, bundle.train_labels, {method == Method::MahaPP, parse_shrinkage(shrinkage_text)});
  const auto points = alpha_sweep(f, bundle.id_test, bundle.ood_set(set_name).features, alphas, method);
  std::ostringstream csv;
  csv << "alpha,fpr_at_95_tpr,method,set,shrinkage_eps\n";
  char eps[32];
  std::snprintf(eps, sizeof(eps), "%.17g", f.shrinkage_eps());
  for (const auto& p : points) {
    char line[128];
    std::snprintf(line, sizeof(line), "%.17g,%.17g,", p.alpha, p.fpr);
    csv << line << method_text << ',' << set_name << ',' << eps << "\n";
  }
  write_file_atomic(out, csv.str());
  return 0;
}

int run_synth(const fs::path& spec_path, const fs::path& out_dir) {
  std::ifstream in(spec_path);
  if (!in) throw Error(ErrorCode::IoError, spec_path.string() + ": cannot open spec");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, spec_path.string() + ": invalid JSON: " + e.what());
  }
  SynthOutput output;
  const SynthSpec spec = synth_spec_from_json(j, &output);
  const fs::path manifest = write_synth_bundle(generate(spec), spec, out_dir, output);
  std::cout << manifest.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mahakit: Mahalanobis-family OOD detection on pre-extracted features"};
  app.require_subcommand(1);

  std::string bundle;
  std::string out;
  std::string shrinkage = "auto";
  std::uint64_t seed = 0;
  ScorerFlags scorer_flags;

  auto* fit_cmd = app.add_subcommand("fit", "Fit class-conditional Gaussians and save them");
  std::string normalize = "both";
  fit_cmd->add_option("--bundle", bundle, "Bundle manifest")->required();
  fit_cmd->add_option("--normalize", normalize, "Fit on l2-normalized features")
      ->check(CLI::IsMember({"on", "off", "both"}))
      ->capture_default_str();
  fit_cmd->add_option("--shrinkage", shrinkage, "auto or a fixed eps")->capture_default_str();
  fit_cmd->add_option("--out", out, "Output fit file")->required();

  auto* score_cmd = app.add_subcommand("score", "Score the ID test set or one OOD set");
  std::string fit_path;
  std::string method;
  std::string set_name;
  score_cmd->add_option("--bundle", bundle, "Bundle manifest")->required();
  score_cmd->add_option("--fit", fit_path, "Fit file from `fit`");
  score_cmd->add_option("--method", method, "Scoring method")->required();
  score_cmd->add_option("--set", set_name, "OOD set name (default: ID test)");
  score_cmd->add_option("--out", out, "Output scores (.npy)")->required();
  score_cmd->add_option("--seed", seed, "Seed for randomized calibration")->capture_default_str();
  scorer_flags.attach(score_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate methods on every OOD set");
  std::vector<std::string> methods;
  std::string csv;
  double tpr = 0.95;
  eval_cmd->add_option("--bundle", bundle, "Bundle manifest")->required();
  eval_cmd->add_option("--methods", methods, "Comma-separated methods")->delimiter(',')->required();
  eval_cmd->add_option("--out", out, "Report JSON")->required();
  eval_cmd->add_option("--csv", csv, "Optional CSV grid");
  eval_cmd->add_option("--seed", seed, "Seed for randomized calibration")->capture_default_str();
  eval_cmd->add_option("--shrinkage", shrinkage, "auto or a fixed eps")->capture_default_str();
  eval_cmd->add_option("--tpr", tpr, "TPR target")->capture_default_str();
  scorer_flags.attach(eval_cmd);

  auto* diag_cmd = app.add_subcommand("diagnose", "Distribution diagnostics");
  bool want_norms = false;
  bool want_deviation = false;
  Index qq = 0;
  Index bins = 100;
  std::string correlation;
  diag_cmd->add_option("--bundle", bundle, "Bundle manifest")->required();
  diag_cmd->add_flag("--norm-stats", want_norms, "Per-class feature-norm statistics");
  diag_cmd->add_option("--qq", qq, "QQ quantile pairs with Q plotting positions");
  diag_cmd->add_flag("--deviation", want_deviation, "Variance-deviation score per class");
  diag_cmd->add_option("--correlation", correlation, "Norm-score correlation for a method");
  diag_cmd->add_option("--bins", bins, "Histogram bins")->capture_default_str();
  diag_cmd->add_option("--seed", seed, "Seed for QQ directions")->capture_default_str();
  diag_cmd->add_option("--shrinkage", shrinkage, "auto or a fixed eps")->capture_default_str();
  diag_cmd->add_option("--out", out, "Output JSON")->required();
  scorer_flags.attach(diag_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep-alpha", "FPR as OOD features are rescaled");
  std::vector<double> alphas;
  sweep_cmd->add_option("--bundle", bundle, "Bundle manifest")->required();
  sweep_cmd->add_option("--set", set_name, "OOD set name")->required();
  sweep_cmd->add_option("--alphas", alphas, "Comma-separated scale factors")->delimiter(',')->required();
  sweep_cmd->add_option("--method", method, "maha or maha++")->required();
  sweep_cmd->add_option("--shrinkage", shrinkage, "auto or a fixed eps")->capture_default_str();
  sweep_cmd->add_option("--out", out, "Output CSV")->required();

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic bundle");
  std::string spec;
  std::string out_dir;
  synth_cmd->add_option("--spec", spec, "Generator spec (JSON)")->required();
  synth_cmd->add_option("--out-dir", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 4;
  }

  try {
    if (*fit_cmd) return run_fit(bundle, normalize, shrinkage, out);
    if (*score_cmd) {
      return run_score(bundle, fit_path, method, set_name, out, scorer_flags.resolved(seed));
    }
    if (*eval_cmd) {
      return run_eval_command(bundle, methods, out, csv, scorer_flags.resolved(seed), shrinkage, tpr);
    }
    if (*diag_cmd) {
      return run_diagnose(bundle, want_norms, qq, want_deviation, correlation, out, bins, seed, shrinkage,
                          scorer_flags.resolved(seed));
    }
    if (*sweep_cmd) return run_sweep(bundle, set_name, alphas, method, out, shrinkage);
    if (*synth_cmd) return run_synth(spec, out_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 4;
}
