#include "mahakit/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace mahakit {
namespace {

using json = nlohmann::ordered_json;

json eval_to_json(const EvalResult& r) {
  return json{{"fpr_at_tpr", r.fpr_at_tpr}, {"auroc", r.auroc},   {"threshold", r.threshold},
              {"tpr_target", r.tpr_target}, {"n_id", r.n_id},     {"n_ood", r.n_ood}};
}

EvalResult eval_from_json(const json& j) {
  EvalResult r;
  r.fpr_at_tpr = j.at("fpr_at_tpr").get<double>();
  r.auroc = j.at("auroc").get<double>();
  r.threshold = j.at("threshold").get<double>();
  r.tpr_target = j.at("tpr_target").get<double>();
  r.n_id = j.at("n_id").get<Index>();
  r.n_ood = j.at("n_ood").get<Index>();
  return r;
}

}  // namespace

json scorer_config_to_json(const ScorerConfig& c) {
  json j;
  j["knn_k"] = c.knn_k;
  j["react_clip_quantile"] = c.react_clip_quantile;
  j["nnguide_subset_fraction"] = c.nnguide_subset_fraction;
  j["nnguide_k"] = c.nnguide_k;
  j["ash_prune_percentile"] = c.ash_prune_percentile;
  j["neco_explained_variance"] = c.neco_explained_variance;
  j["vim_dim"] = c.vim_dim ? json(*c.vim_dim) : json("auto");
  j["ssc_scale"] = c.ssc_scale;
  j["seed"] = c.seed;
  return j;
}

json report_to_json(const RunReport& report) {
  json j;
  j["schema_version"] = report.schema_version;
  j["toolkit_version"] = report.toolkit_version;
  j["config"] = report.config;
  json fits = json::array();
  for (const auto& f : report.fits) {
    fits.push_back({{"normalized", f.normalized},
                    {"n_classes", f.n_classes},
                    {"dim", f.dim},
                    {"n_samples", f.n_samples},
                    {"shrinkage_eps", f.shrinkage_eps},
                    {"global_shrinkage_eps", f.global_shrinkage_eps}});
  }
  j["fits"] = fits;
  json results = json::array();
  for (const auto& r : report.results) {
    json item{{"method", r.method}, {"set", r.set}, {"unit_test", r.unit_test}};
    item.update(eval_to_json(r.result));
    item["shrinkage_eps"] = r.provenance.shrinkage_eps ? json(*r.provenance.shrinkage_eps) : json(nullptr);
    item["normalized"] = r.provenance.normalized;
    item["warnings"] = r.warnings;
    results.push_back(item);
  }
  j["results"] = results;
  json averages = json::array();
  for (const auto& a : report.averages) {
    averages.push_back({{"method", a.method},
                        {"n_sets", a.n_sets},
                        {"fpr_at_tpr", a.fpr_at_tpr},
                        {"auroc", a.auroc}});
  }
  j["averages"] = averages;
  json unit = json::array();
  for (const auto& u : report.unit_tests) {
    unit.push_back({{"method", u.method}, {"n_tests", u.n_tests}, {"failures", u.failures}});
  }
  j["unit_tests"] = unit;
  json coverage = json::array();
  for (const auto& c : report.coverage) {
    coverage.push_back({{"method", c.method},
                        {"threshold", c.threshold},
                        {"rejected_classes", c.rejected_classes},
                        {"n_classes", c.n_classes}});
  }
  j["rejected_class_coverage"] = coverage;
  j["diagnostics"] = report.diagnostics;
  j["timings"] = report.timings;
  return j;
}

RunReport report_from_json(const json& j) {
  RunReport report;
  try {
    report.schema_version = j.at("schema_version").get<int>();
    if (report.schema_version != kReportSchemaVersion) {
      throw Error(ErrorCode::UnsupportedVersion,
                  "report schema " + std::to_string(report.schema_version) + " is not supported");
    }
    report.toolkit_version = j.at("toolkit_version").get<std::string>();
    report.config = j.at("config");
    for (const auto& f : j.at("fits")) {
      report.fits.push_back({f.at("normalized").get<bool>(), f.at("n_classes").get<Index>(),
                             f.at("dim").get<Index>(), f.at("n_samples").get<std::int64_t>(),
                             f.at("shrinkage_eps").get<double>(),
                             f.at("global_shrinkage_eps").get<double>()});
    }
    for (const auto& r : j.at("results")) {
      SetResult s;
      s.method = r.at("method").get<std::string>();
      s.set = r.at("set").get<std::string>();
      s.unit_test = r.at("unit_test").get<bool>();
      s.result = eval_from_json(r);
      if (!r.at("shrinkage_eps").is_null()) s.provenance.shrinkage_eps = r.at("shrinkage_eps").get<double>();
      s.provenance.normalized = r.at("normalized").get<bool>();
      s.warnings = r.at("warnings").get<std::vector<std::string>>();
      report.results.push_back(std::move(s));
    }
    for (const auto& a : j.at("averages")) {
      report.averages.push_back({a.at("method").get<std::string>(), a.at("n_sets").get<Index>(),
                                 a.at("fpr_at_tpr").get<double>(), a.at("auroc").get<double>()});
    }
    for (const auto& u : j.at("unit_tests")) {
      report.unit_tests.push_back({u.at("method").get<std::string>(), u.at("n_tests").get<Index>(),
                                   u.at("failures").get<Index>()});
    }
    for (const auto& c : j.at("rejected_class_coverage")) {
      report.coverage.push_back({c.at("method").get<std::string>(), c.at("threshold").get<double>(),
                                 c.at("rejected_classes").get<Index>(), c.at("n_classes").get<Index>()});
    }
    report.diagnostics = j.at("diagnostics");
    report.timings = j.at("timings");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadHeader, std::string("malformed report: ") + e.what());
  }
  return report;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * fraction);
  return buf;
}

std::string report_csv(const RunReport& report) {
  std::vector<std::string> sets;
  std::vector<std::string> methods;
  for (const auto& r : report.results) {
    if (r.unit_test) continue;
    if (std::find(sets.begin(), sets.end(), r.set) == sets.end()) sets.push_back(r.set);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  std::ostringstream out;
  out << "method,metric";
  for (const auto& s : sets) out << ',' << s;
  out << ",average\n";
  for (const char* metric : {"fpr95", "auroc"}) {
    const bool fpr = std::string(metric) == "fpr95";
    for (const auto& m : methods) {
      out << m << ',' << metric;
      for (const auto& s : sets) {
        out << ',';
        for (const auto& r : report.results) {
          if (!r.unit_test && r.method == m && r.set == s) {
            out << format_percent(fpr ? r.result.fpr_at_tpr : r.result.auroc);
          }
        }
      }
      out << ',';
      for (const auto& a : report.averages) {
        if (a.method == m) out << format_percent(fpr ? a.fpr_at_tpr : a.auroc);
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace mahakit
