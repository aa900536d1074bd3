#include <gtest/gtest.h>

#include <cmath>

#include "mahakit/metrics.hpp"
#include "mahakit/oracle.hpp"
#include "test_util.hpp"

using namespace mahakit;
using namespace mahakit::testing;

namespace {

Vector vec(std::initializer_list<double> v) { return from_std(std::vector<double>(v)); }

Vector integers(Rng& rng, Index n, int levels) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels)));
  return v;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::NumericalFailure;
}

}  // namespace

TEST(FprAtTpr, PerfectSeparation) {
  const EvalResult r = fpr_at_tpr(vec({10, 9, 8, 7}), vec({1, 2, 3}));
  EXPECT_EQ(r.fpr_at_tpr, 0.0);
  EXPECT_EQ(r.auroc, 1.0);
}

TEST(FprAtTpr, HandEnumeration) {
  Vector id(20);
  for (Index i = 0; i < 20; ++i) id(i) = static_cast<double>(i + 1);
  const EvalResult r = fpr_at_tpr(id, vec({0.5, 10.5}), 0.95);
  EXPECT_EQ(r.threshold, 2.0);
  EXPECT_EQ(r.fpr_at_tpr, 0.5);
  EXPECT_EQ(r.n_id, 20);
  EXPECT_EQ(r.n_ood, 2);
  EXPECT_EQ(r.tpr_target, 0.95);
}

TEST(FprAtTpr, IdenticalDistributions) {
  Vector v(1000);
  for (Index i = 0; i < 1000; ++i) v(i) = std::sin(static_cast<double>(i)) * 100.0 + i * 1e-3;
  const EvalResult r = fpr_at_tpr(v, v);
  EXPECT_NEAR(r.fpr_at_tpr, 0.95, 1.0 / 1000.0);
  EXPECT_EQ(r.auroc, 0.5);
}

TEST(FprAtTpr, TiesAcceptedOnBothSides) {
  const EvalResult r = fpr_at_tpr(vec({1, 1, 1, 1}), vec({1, 0}), 0.5);
  EXPECT_EQ(r.threshold, 1.0);
  EXPECT_EQ(r.fpr_at_tpr, 0.5);
}

TEST(FprAtTpr, AchievedTprMeetsTarget) {
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const Vector id = integers(rng, 1 + static_cast<Index>(rng.below(60)), 12);
    const double t = rng.uniform(0.05, 1.0);
    const double thr = tpr_threshold(id, t);
    const double achieved = (id.array() >= thr).cast<double>().mean();
    EXPECT_GE(achieved, t - 1e-12);
  }
}

TEST(FprAtTpr, NonIncreasingAsTargetDrops) {
  Rng rng(5);
  const Vector id = random_vector(rng, 200);
  const Vector ood = random_vector(rng, 150, 1.5);
  double previous = 1.0;
  for (double t = 1.0; t > 0.0; t -= 0.05) {
    const double fpr = fpr_at_tpr(id, ood, t).fpr_at_tpr;
    EXPECT_LE(fpr, previous);
    EXPECT_GE(fpr, 0.0);
    previous = fpr;
  }
}

TEST(FprAtTpr, Errors) {
  EXPECT_EQ(code_of([] { fpr_at_tpr(Vector(), vec({1})); }), ErrorCode::EmptyScores);
  EXPECT_EQ(code_of([] { fpr_at_tpr(vec({1}), Vector()); }), ErrorCode::EmptyScores);
  EXPECT_EQ(code_of([] { fpr_at_tpr(vec({1, NAN}), vec({1})); }), ErrorCode::NonFinite);
}

TEST(Auroc, HandCases) {
  EXPECT_EQ(auroc(vec({5, 6}), vec({1, 2})), 1.0);
  EXPECT_EQ(auroc(vec({1, 2, 3}), vec({3, 1, 2})), 0.5);
  EXPECT_EQ(auroc(vec({3, 1}), vec({2})), 0.5);
  EXPECT_EQ(code_of([] { auroc(Vector(), vec({1})); }), ErrorCode::EmptyScores);
}

TEST(Auroc, EqualsPairCountingExactly) {
  Rng rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = 1 + static_cast<Index>(rng.below(500));
    const Index m = 1 + static_cast<Index>(rng.below(500));
    const int levels = 2 + static_cast<int>(rng.below(40));
    const Vector id = integers(rng, n, levels).array() + 1.0;
    const Vector ood = integers(rng, m, levels);
    EXPECT_EQ(auroc(id, ood), oracle::pair_count_auroc(to_std(id), to_std(ood)));
  }
}

TEST(Auroc, SwapAntisymmetry) {
  Rng rng(7);
  for (int rep = 0; rep < 30; ++rep) {
    const Vector a = integers(rng, 37, 9);
    const Vector b = integers(rng, 23, 9);
    EXPECT_EQ(auroc(a, b) + auroc(b, a), 1.0);
  }
}

TEST(Metrics, MonotoneTransformInvariance) {
  Rng rng(8);
  const Vector id = random_vector(rng, 300);
  const Vector ood = random_vector(rng, 200, 2.0);
  const EvalResult a = fpr_at_tpr(id, ood);
  const EvalResult b = fpr_at_tpr(id.array().exp().matrix(), ood.array().exp().matrix());
  const EvalResult c = fpr_at_tpr((id.array() * 3.0 - 7.0).matrix(), (ood.array() * 3.0 - 7.0).matrix());
  EXPECT_EQ(a.fpr_at_tpr, b.fpr_at_tpr);
  EXPECT_EQ(a.auroc, b.auroc);
  EXPECT_EQ(a.fpr_at_tpr, c.fpr_at_tpr);
  EXPECT_EQ(a.auroc, c.auroc);
}

TEST(UnitTests, Counting) {
  const std::vector<double> clean(17, 0.0);
  EXPECT_EQ(unit_test_failures(clean), 0);
  const std::vector<double> boundary{0.10};
  EXPECT_EQ(unit_test_failures(boundary), 1);
  const std::vector<double> mixed{0.05, 0.2, 0.11};
  EXPECT_EQ(unit_test_failures(mixed), 2);
}

TEST(Coverage, Cases) {
  const Labels labels({0, 1, 2, 2}, 3);
  EXPECT_EQ(rejected_class_coverage(vec({5, 6, 7, 8}), labels, 5.0), 0);
  EXPECT_EQ(rejected_class_coverage(vec({5, 6, 4, 8}), labels, 5.0), 1);
}

TEST(Coverage, UniformRejection) {
  std::vector<std::int64_t> lab;
  Vector scores(200);
  for (Index i = 0; i < 200; ++i) {
    lab.push_back(i % 10);
    scores(i) = (i / 10 == 0) ? -1.0 : 1.0;
  }
  EXPECT_EQ(rejected_class_coverage(scores, Labels(lab, 10), 0.0), 10);
}
