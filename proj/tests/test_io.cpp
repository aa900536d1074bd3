#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mahakit/bundle.hpp"
#include "mahakit/eval.hpp"
#include "mahakit/report.hpp"
#include "mahakit/synth.hpp"
#include "mahakit/synth_io.hpp"
#include "test_util.hpp"

using namespace mahakit;
using namespace mahakit::testing;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::NumericalFailure;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

class BundleDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mahakit_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    spec_.n_classes = 5;
    spec_.dim = 8;
    spec_.train_per_class = 40;
    spec_.test_per_class = 20;
    spec_.ood_classes = 4;
    spec_.ood_per_class = 20;
    spec_.seed = 3;
    manifest_ = write_synth_bundle(generate(spec_), spec_, dir_, SynthOutput{2, Dtype::F8});
  }
  void TearDown() override { fs::remove_all(dir_); }

  json manifest_json() const {
    std::ifstream in(manifest_);
    return json::parse(in);
  }
  void rewrite(const json& j) const {
    std::ofstream out(manifest_);
    out << j.dump(2);
  }

  fs::path dir_;
  fs::path manifest_;
  SynthSpec spec_;
};

}  // namespace

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(ErrorCode::BadMagic), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::IoError), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::SingularCovariance), 3);
  EXPECT_EQ(exit_code_for(ErrorCode::ZeroNormRow), 2);
  EXPECT_EQ(exit_code_for(ErrorCode::UnknownMethod), 4);
  EXPECT_EQ(exit_code_for(ErrorCode::NoMethods), 4);
}

TEST_F(BundleDir, ManifestRoundTrip) {
  const BundleManifest m = read_manifest(manifest_);
  EXPECT_EQ(m.format_version, kManifestVersion);
  EXPECT_EQ(m.train_features, dir_ / "train_features.npy");
  ASSERT_EQ(m.ood_sets.size(), 2u);
  ASSERT_TRUE(m.head_w.has_value());
  const fs::path copy = dir_ / "copy.json";
  write_manifest(copy, m);
  const BundleManifest again = read_manifest(copy);
  EXPECT_EQ(again.train_features, m.train_features);
  EXPECT_EQ(again.ood_sets, m.ood_sets);
  EXPECT_EQ(manifest_to_json(again, dir_), manifest_to_json(m, dir_));
}

TEST_F(BundleDir, ManifestRejectsUnknownKeysAndMissingFields) {
  json j = manifest_json();
  j["surprise"] = 1;
  rewrite(j);
  EXPECT_EQ(code_of([&] { read_manifest(manifest_); }), ErrorCode::ManifestError);
  j = manifest_json();
  j.erase("surprise");
  j.erase("train_features");
  rewrite(j);
  EXPECT_EQ(code_of([&] { read_manifest(manifest_); }), ErrorCode::ManifestError);
}

TEST_F(BundleDir, ManifestRejectsBadJson) {
  std::ofstream(manifest_) << "{ not json";
  EXPECT_EQ(code_of([&] { read_manifest(manifest_); }), ErrorCode::ManifestError);
}

TEST_F(BundleDir, LoadCrossChecksWidths) {
  write_array(dir_ / "ood0.npy", Matrix::Zero(3, 5));
  const std::string msg = message_of([&] { load_bundle(manifest_); });
  EXPECT_NE(msg.find("ood0.npy"), std::string::npos) << msg;
  EXPECT_EQ(code_of([&] { load_bundle(manifest_); }), ErrorCode::DimensionMismatch);
}

TEST_F(BundleDir, LoadCrossChecksLabelCount) {
  write_labels(dir_ / "train_labels.npy", {0, 1, 2});
  EXPECT_EQ(code_of([&] { load_bundle(manifest_); }), ErrorCode::DimensionMismatch);
}

TEST_F(BundleDir, UnknownOodSet) {
  const Bundle b = load_bundle(manifest_);
  EXPECT_EQ(code_of([&] { b.ood_set("missing_set"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(b.ood_set("ood1").name, "ood1");
}

TEST_F(BundleDir, FitFileRoundTrip) {
  const Bundle b = load_bundle(manifest_);
  const GaussianFit plain = fit(b.train, b.train_labels, {});
  const GaussianFit unit = fit(b.train, b.train_labels, {true, Shrinkage::fixed(1e-4)});
  const fs::path p = dir_ / "fit.bin";
  write_fits(p, {&plain, &unit});
  const auto back = read_fits(p);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_FALSE(back[0].normalized());
  EXPECT_TRUE(back[1].normalized());
  EXPECT_EQ(back[0].means(), plain.means());
  EXPECT_EQ(back[0].shared_factor(), plain.shared_factor());
  EXPECT_EQ(back[1].shrinkage_eps(), 1e-4);
  EXPECT_EQ(back[1].shared_ridge(), unit.shared_ridge());
  EXPECT_EQ(back[1].global_factor(), unit.global_factor());
  EXPECT_EQ(back[0].class_counts(), plain.class_counts());
  EXPECT_EQ(score_maha(back[1], b.id_test, true).values, score_maha(unit, b.id_test, true).values);
}

TEST_F(BundleDir, FitFileRejectsGarbage) {
  std::ofstream(dir_ / "bad.bin", std::ios::binary) << "NOTAFIT!";
  EXPECT_EQ(code_of([&] { read_fits(dir_ / "bad.bin"); }), ErrorCode::BadMagic);
  const Bundle b = load_bundle(manifest_);
  const GaussianFit g = fit(b.train, b.train_labels, {});
  write_fits(dir_ / "fit.bin", {&g});
  const auto size = fs::file_size(dir_ / "fit.bin");
  fs::resize_file(dir_ / "fit.bin", size - 9);
  EXPECT_EQ(code_of([&] { read_fits(dir_ / "fit.bin"); }), ErrorCode::TruncatedPayload);
}

TEST_F(BundleDir, EvalGridAndAverages) {
  EvalConfig config;
  config.methods = {Method::Maha, Method::MahaPP};
  const RunReport r = run_eval(manifest_, config);
  ASSERT_EQ(r.results.size(), 4u);
  ASSERT_EQ(r.averages.size(), 2u);
  for (const auto& avg : r.averages) {
    double fpr = 0, au = 0;
    Index n = 0;
    for (const auto& s : r.results) {
      if (s.method != avg.method || s.unit_test) continue;
      fpr += s.result.fpr_at_tpr;
      au += s.result.auroc;
      ++n;
    }
    EXPECT_EQ(avg.n_sets, n);
    EXPECT_NEAR(avg.fpr_at_tpr, fpr / n, 1e-12);
    EXPECT_NEAR(avg.auroc, au / n, 1e-12);
  }
  ASSERT_EQ(r.fits.size(), 2u);
  EXPECT_TRUE(r.diagnostics.contains("variance_deviation"));
  EXPECT_TRUE(r.diagnostics.contains("variance_deviation_normalized"));
  EXPECT_EQ(r.coverage.size(), 2u);

  const Bundle b = load_bundle(manifest_);
  const GaussianFit g = fit(b.train, b.train_labels, {true, Shrinkage::automatic()});
  const EvalResult direct = fpr_at_tpr(score_maha(g, b.id_test, true).values,
                                       score_maha(g, b.ood_set("ood1").features, true).values);
  for (const auto& s : r.results) {
    if (s.method == "maha++" && s.set == "ood1") {
      EXPECT_EQ(s.result.fpr_at_tpr, direct.fpr_at_tpr);
      EXPECT_EQ(s.result.auroc, direct.auroc);
    }
  }
}

TEST_F(BundleDir, EvalErrors) {
  EvalConfig config;
  EXPECT_EQ(code_of([&] { run_eval(manifest_, config); }), ErrorCode::NoMethods);
  json j = manifest_json();
  j.erase("head_w");
  j.erase("head_b");
  rewrite(j);
  config.methods = {Method::Maha, Method::ViM};
  const std::string msg = message_of([&] { run_eval(manifest_, config); });
  EXPECT_NE(msg.find("vim"), std::string::npos) << msg;
}

TEST_F(BundleDir, EvalDeterministic) {
  EvalConfig config;
  config.methods = {Method::Maha, Method::MahaPP, Method::KNN, Method::NNGuide, Method::GMM};
  config.scorer.knn_k = 5;
  config.scorer.nnguide_subset_fraction = 0.5;
  config.scorer.seed = 7;
  const json a = without_timings(report_to_json(run_eval(manifest_, config)));
  const json b = without_timings(report_to_json(run_eval(manifest_, config)));
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_FALSE(a.contains("timings"));
}

TEST_F(BundleDir, ReportRoundTripAndCsv) {
  EvalConfig config;
  config.methods = {Method::Maha, Method::MahaPP, Method::Energy};
  const RunReport r = run_eval(manifest_, config);
  const json j = report_to_json(r);
  EXPECT_EQ(j["schema_version"], kReportSchemaVersion);
  EXPECT_EQ(j.back(), j["timings"]);
  EXPECT_EQ(report_to_json(report_from_json(j)).dump(), j.dump());
  EXPECT_TRUE(j["config"].contains("shrinkage"));
  EXPECT_TRUE(j["config"].contains("scorer"));

  const std::string csv = report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,metric,ood0,ood1,average");
  EXPECT_NE(csv.find("maha++,fpr95,"), std::string::npos);
  EXPECT_NE(csv.find("energy,auroc,"), std::string::npos);

  json bad = j;
  bad["schema_version"] = 99;
  EXPECT_EQ(code_of([&] { report_from_json(bad); }), ErrorCode::UnsupportedVersion);
}

TEST(ReportFormat, Percent) {
  EXPECT_EQ(format_percent(0.267), "26.7");
  EXPECT_EQ(format_percent(0.0), "0.0");
  EXPECT_EQ(format_percent(1.0), "100.0");
  EXPECT_EQ(format_percent(0.41649), "41.6");
}

TEST_F(BundleDir, UnitTestSetsExcludedFromAverages) {
  Rng rng(4);
  write_array(dir_ / "noise.npy", random_matrix(rng, 30, 8, 10.0));
  json j = manifest_json();
  j["unit_tests"] = {{"noise", "noise.npy"}};
  rewrite(j);
  EvalConfig config;
  config.methods = {Method::Maha};
  const RunReport r = run_eval(manifest_, config);
  ASSERT_EQ(r.unit_tests.size(), 1u);
  EXPECT_EQ(r.unit_tests[0].n_tests, 1);
  EXPECT_EQ(r.averages[0].n_sets, 2);
  Index unit_rows = 0;
  for (const auto& s : r.results) unit_rows += s.unit_test ? 1 : 0;
  EXPECT_EQ(unit_rows, 1);
}
