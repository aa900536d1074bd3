#include <gtest/gtest.h>

#include <cmath>

#include "mahakit/gaussian_model.hpp"
#include "mahakit/oracle.hpp"
#include "mahakit/parallel.hpp"
#include "test_util.hpp"

using namespace mahakit;
using namespace mahakit::testing;

namespace {

FeatureMatrix four_points() {
  Matrix m(4, 2);
  m << 1, 0, 3, 0, 0, 2, 0, 4;
  return FeatureMatrix(m);
}
Labels four_labels() { return Labels({0, 0, 1, 1}, 2); }

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

TEST(L2Normalize, ThreeFourFive) {
  Matrix m(2, 2);
  m << 3, 4, 0.6, 0.8;
  const FeatureMatrix n = l2_normalize(FeatureMatrix(m));
  EXPECT_DOUBLE_EQ(n.values()(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(n.values()(0, 1), 0.8);
}

TEST(L2Normalize, UnitRowUnchanged) {
  Matrix m(1, 3);
  m << 1, 0, 0;
  EXPECT_EQ(l2_normalize(FeatureMatrix(m)).values(), m);
}

TEST(L2Normalize, ZeroRowRejected) {
  Matrix m(2, 2);
  m << 1, 1, 0, 0;
  EXPECT_EQ(code_of([&] { l2_normalize(FeatureMatrix(m)); }), ErrorCode::ZeroNormRow);
}

TEST(L2Normalize, Idempotent) {
  Rng rng(5);
  const FeatureMatrix once = l2_normalize(FeatureMatrix(random_matrix(rng, 50, 7, 3.0)));
  const FeatureMatrix twice = l2_normalize(once);
  EXPECT_LE(max_abs_diff(once.values(), twice.values()), 1e-15);
}

TEST(ClassMeans, HandExample) {
  Matrix expected(2, 2);
  expected << 2, 0, 0, 3;
  EXPECT_EQ(estimate_class_means(four_points(), four_labels()), expected);
}

TEST(ClassMeans, ConstantRows) {
  Matrix m = Matrix::Constant(5, 3, 0.0);
  m.rowwise() = Eigen::RowVector3d(0.1, -2.0, 7.5);
  const Matrix means = estimate_class_means(FeatureMatrix(m), Labels({0, 0, 0, 0, 0}, 1));
  EXPECT_LE(max_abs_diff(means, m.topRows(1)), 1e-15);
}

TEST(ClassMeans, EmptyClassRejected) {
  Matrix m(2, 1);
  m << 1, 2;
  EXPECT_EQ(code_of([&] { estimate_class_means(FeatureMatrix(m), Labels({0, 2}, 3)); }),
            ErrorCode::EmptyClass);
}

TEST(SharedCovariance, HandExample) {
  const Matrix means = estimate_class_means(four_points(), four_labels());
  Matrix expected(2, 2);
  expected << 0.5, 0, 0, 0.5;
  EXPECT_LE(max_abs_diff(estimate_shared_covariance(four_points(), four_labels(), means), expected), 1e-15);
}

TEST(SharedCovariance, CenteredDataIsZero) {
  Matrix m(4, 2);
  m << 1, 1, 1, 1, -2, 5, -2, 5;
  const Labels labels({0, 0, 1, 1}, 2);
  const FeatureMatrix f(m);
  EXPECT_EQ(estimate_shared_covariance(f, labels, estimate_class_means(f, labels)), Matrix::Zero(2, 2));
}

TEST(SharedCovariance, PlusMinusOne) {
  Matrix m(2, 1);
  m << -1, 1;
  const FeatureMatrix f(m);
  const Labels labels({0, 0}, 1);
  EXPECT_DOUBLE_EQ(estimate_shared_covariance(f, labels, estimate_class_means(f, labels))(0, 0), 1.0);
}

TEST(SharedCovariance, ShapeMismatch) {
  EXPECT_EQ(code_of([&] { estimate_shared_covariance(four_points(), four_labels(), Matrix::Zero(2, 3)); }),
            ErrorCode::DimensionMismatch);
}

TEST(PerClassCovariance, HandExample) {
  const Matrix means = estimate_class_means(four_points(), four_labels());
  const PerClassCovariances pc = estimate_per_class_covariances(four_points(), four_labels(), means);
  Matrix c0(2, 2), c1(2, 2);
  c0 << 1, 0, 0, 0;
  c1 << 0, 0, 0, 1;
  EXPECT_EQ(pc.covs[0], c0);
  EXPECT_EQ(pc.covs[1], c1);
  EXPECT_EQ(pc.counts, (std::vector<std::int64_t>{2, 2}));
}

TEST(PerClassCovariance, SingletonIsZero) {
  Matrix m(3, 2);
  m << 1, 2, 3, 4, 9, 9;
  const FeatureMatrix f(m);
  const Labels labels({0, 0, 1}, 2);
  const auto pc = estimate_per_class_covariances(f, labels, estimate_class_means(f, labels));
  EXPECT_EQ(pc.covs[1], Matrix::Zero(2, 2));
}

TEST(PerClassCovariance, WeightedAverageIsShared) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Instance inst = random_instance(seed, 5, 8, 200);
    const FeatureMatrix f(inst.train);
    const Labels labels = labels_of(inst);
    const Matrix means = estimate_class_means(f, labels);
    const auto pc = estimate_per_class_covariances(f, labels, means);
    Matrix mix = Matrix::Zero(f.dim(), f.dim());
    for (std::size_t c = 0; c < pc.covs.size(); ++c) {
      mix += pc.covs[c] * static_cast<double>(pc.counts[c]) / static_cast<double>(f.rows());
    }
    const Matrix shared = estimate_shared_covariance(f, labels, means);
    EXPECT_LE((mix - shared).norm() / shared.norm(), 1e-8) << "seed " << seed;
  }
}

TEST(Estimation, MatchesNaiveOracle) {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const Instance inst = random_instance(seed);
    const FeatureMatrix f(inst.train);
    const Labels labels = labels_of(inst);
    const auto rows = oracle::to_rows(inst.train);
    const auto o_means = oracle::class_means(rows, inst.labels, static_cast<int>(inst.n_classes));
    const Matrix means = estimate_class_means(f, labels);
    EXPECT_LE(max_abs_diff(means, oracle::from_rows(o_means)), 1e-10);
    EXPECT_LE(max_abs_diff(estimate_shared_covariance(f, labels, means),
                           oracle::from_rows(oracle::shared_covariance(rows, inst.labels, o_means))),
              1e-10);
    const auto pc = estimate_per_class_covariances(f, labels, means);
    const auto o_pc = oracle::per_class_covariances(rows, inst.labels, o_means);
    for (std::size_t c = 0; c < pc.covs.size(); ++c) {
      EXPECT_LE(max_abs_diff(pc.covs[c], oracle::from_rows(o_pc[c])), 1e-10);
    }
  }
}

TEST(Fit, IdentityCovarianceRecovered) {
  const Index d = 8;
  Matrix x(4000, d);
  std::vector<std::int64_t> labels;
  Rng rng(11);
  for (Index i = 0; i < x.rows(); ++i) {
    const std::int64_t c = i % 4;
    labels.push_back(c);
    for (Index j = 0; j < d; ++j) x(i, j) = 3.0 * static_cast<double>(c == j) + rng.normal();
  }
  const GaussianFit g = fit(FeatureMatrix(x), Labels(labels, 4), {});
  EXPECT_LT((g.shared_cov() - Matrix::Identity(d, d)).norm(), 0.15);
  EXPECT_EQ(g.n_samples(), 4000);
}

TEST(Fit, RankDeficientNeedsShrinkage) {
  Matrix x(4, 6);
  x.setZero();
  x.row(0) << 1, 2, 3, 4, 5, 6;
  x.row(1) = x.row(0);
  x.row(2) << 0, 1, 0, 1, 0, 1;
  x.row(3) = x.row(2) * 2.0;
  const GaussianFit g = fit(FeatureMatrix(x), Labels({0, 0, 1, 1}, 2), {});
  EXPECT_GT(g.shrinkage_eps(), 0.0);
  EXPECT_TRUE(g.shared_factor().allFinite());
}

TEST(Fit, AutoStartsAtSmallestEps) {
  const Instance inst = random_instance(3);
  const GaussianFit g = fit(FeatureMatrix(inst.train), labels_of(inst), {});
  EXPECT_DOUBLE_EQ(g.shrinkage_eps(), 1e-10);
}

TEST(Fit, FixedShrinkageRecorded) {
  const Instance inst = random_instance(4);
  const GaussianFit g = fit(FeatureMatrix(inst.train), labels_of(inst), {false, Shrinkage::fixed(1e-3)});
  EXPECT_DOUBLE_EQ(g.shrinkage_eps(), 1e-3);
  const double scale = g.shared_cov().trace() / static_cast<double>(g.dim());
  const Matrix expected = g.shared_cov() + 1e-3 * scale * Matrix::Identity(g.dim(), g.dim());
  EXPECT_LE(max_abs_diff(g.shrunk_shared_cov(), expected), 1e-14);
  const Matrix l = g.shared_factor();
  EXPECT_LE(max_abs_diff(l * l.transpose(), expected), 1e-12);
}

TEST(Fit, NegativeShrinkageRejected) {
  EXPECT_EQ(code_of([] { Shrinkage::fixed(-1.0); }), ErrorCode::InvalidConfig);
}

TEST(Fit, SingularAtCapFails) {
  Matrix x = Matrix::Zero(4, 3);
  EXPECT_EQ(code_of([&] { fit(FeatureMatrix(x), Labels({0, 0, 1, 1}, 2), {}); }),
            ErrorCode::SingularCovariance);
}

TEST(Fit, NormalizeOnUnitRowsIsIdentical) {
  Rng rng(8);
  const FeatureMatrix unit = l2_normalize(FeatureMatrix(random_matrix(rng, 60, 5)));
  std::vector<std::int64_t> lab;
  for (Index i = 0; i < 60; ++i) lab.push_back(i % 3);
  const GaussianFit a = fit(unit, Labels(lab, 3), {false, Shrinkage::automatic()});
  const GaussianFit b = fit(unit, Labels(lab, 3), {true, Shrinkage::automatic()});
  EXPECT_LE(max_abs_diff(a.means(), b.means()), 1e-15);
  EXPECT_LE(max_abs_diff(a.shared_cov(), b.shared_cov()), 1e-15);
  EXPECT_TRUE(b.normalized());
}

TEST(Fit, NormalizeRejectsZeroRows) {
  Matrix x(3, 2);
  x << 1, 0, 0, 0, 0, 1;
  EXPECT_EQ(code_of([&] { fit(FeatureMatrix(x), Labels({0, 1, 1}, 2), {true, Shrinkage::automatic()}); }),
            ErrorCode::ZeroNormRow);
}

TEST(Fit, LabelCountMismatch) {
  EXPECT_EQ(code_of([] { fit(four_points(), Labels({0, 1, 1}, 2), {}); }), ErrorCode::DimensionMismatch);
}

TEST(Fit, GlobalGaussianMatchesOracle) {
  const Instance inst = random_instance(21);
  const GaussianFit g = fit(FeatureMatrix(inst.train), labels_of(inst), {});
  const auto rows = oracle::to_rows(inst.train);
  EXPECT_LE((g.global_mean() - from_std(oracle::global_mean(rows))).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(max_abs_diff(g.global_cov(), oracle::from_rows(oracle::global_covariance(rows))), 1e-10);
}

TEST(Fit, StreamingEqualsInMemory) {
  const Instance inst = random_instance(9, 5, 8, 200);
  const FeatureMatrix f(inst.train);
  const GaussianFit a = fit(f, labels_of(inst), {true, Shrinkage::automatic()});
  const GaussianFit b = fit(InMemoryRows(f), labels_of(inst), {true, Shrinkage::automatic()});
  EXPECT_EQ(a.means(), b.means());
  EXPECT_EQ(a.shared_cov(), b.shared_cov());
}

TEST(Fit, ThreadCountDoesNotChangeResult) {
  Rng rng(12);
  const Index n = 9000;
  const Matrix x = random_matrix(rng, n, 6);
  std::vector<std::int64_t> lab;
  for (Index i = 0; i < n; ++i) lab.push_back(i % 7);
  ::setenv("MAHAKIT_THREADS", "1", 1);
  const GaussianFit a = fit(FeatureMatrix(x), Labels(lab, 7), {});
  ::setenv("MAHAKIT_THREADS", "4", 1);
  const GaussianFit b = fit(FeatureMatrix(x), Labels(lab, 7), {});
  ::unsetenv("MAHAKIT_THREADS");
  EXPECT_EQ(a.means(), b.means());
  EXPECT_EQ(a.shared_cov(), b.shared_cov());
  EXPECT_EQ(a.global_cov(), b.global_cov());
}

TEST(Whiten, ClassMeanGoesToZero) {
  const Instance inst = random_instance(13);
  const GaussianFit g = fit(FeatureMatrix(inst.train), labels_of(inst), {});
  const Vector mu = g.means().row(0).transpose();
  EXPECT_LE(whiten(g, mu, ClassCenter{0}).norm(), 1e-12);
  EXPECT_LE(whiten(g, g.global_mean(), GlobalCenter{}).norm(), 1e-12);
}

TEST(Whiten, IdentityFit) {
  const GaussianFit g = GaussianFit::from_parts(Matrix::Zero(1, 2), Matrix::Identity(2, 2), {10},
                                                Vector::Zero(2), Matrix::Identity(2, 2), false,
                                                Shrinkage::fixed(0.0));
  const Vector w = whiten(g, Vector::LinSpaced(2, 1, 2), ClassCenter{0});
  EXPECT_DOUBLE_EQ(w(0), 1.0);
  EXPECT_DOUBLE_EQ(w(1), 2.0);
}

TEST(Whiten, MatchesDenseInverse) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Index d = 3 + static_cast<Index>(rng.below(30));
    const Matrix cov = random_spd(rng, d);
    const Matrix means = random_matrix(rng, 2, d);
    const GaussianFit g = GaussianFit::from_parts(means, cov, {5, 5}, Vector::Zero(d), cov, false,
                                                  Shrinkage::fixed(1e-6));
    const Vector x = random_vector(rng, d, 2.0);
    const Vector diff = x - means.row(1).transpose();
    const auto inv = oracle::inverse(oracle::shrink(oracle::to_rows(cov), 1e-6));
    const double expected = oracle::quadratic_form(to_std(diff), inv);
    EXPECT_NEAR(whiten(g, x, ClassCenter{1}).squaredNorm(), expected, 1e-9 * expected);
  }
}

TEST(Sampling, EmptyDraw) {
  const GaussianFit g = GaussianFit::from_parts(Matrix::Zero(1, 3), Matrix::Identity(3, 3), {1},
                                                Vector::Zero(3), Matrix::Identity(3, 3), false,
                                                Shrinkage::fixed(0.0));
  const FeatureMatrix s = sample_from_fit(g, 0, 0, 1);
  EXPECT_EQ(s.rows(), 0);
  EXPECT_EQ(s.dim(), 3);
}

TEST(Sampling, ChiSquareMean) {
  const Index d = 64;
  const Index n = 200000;
  const GaussianFit g = GaussianFit::from_parts(Matrix::Zero(1, d), Matrix::Identity(d, d), {1},
                                                Vector::Zero(d), Matrix::Identity(d, d), false,
                                                Shrinkage::fixed(0.0));
  const FeatureMatrix s = sample_from_fit(g, 0, n, 2024);
  const Vector sq = s.values().rowwise().squaredNorm();
  const double mean = sq.mean();
  const double se = std::sqrt(2.0 * d / static_cast<double>(n));
  EXPECT_LE(std::abs(mean - d), 3.0 * se);
}

TEST(Sampling, Deterministic) {
  const Instance inst = random_instance(31);
  const GaussianFit g = fit(FeatureMatrix(inst.train), labels_of(inst), {});
  EXPECT_EQ(sample_from_fit(g, 0, 100, 77).values(), sample_from_fit(g, 0, 100, 77).values());
  EXPECT_NE(sample_from_fit(g, 0, 100, 77).values(), sample_from_fit(g, 0, 100, 78).values());
}

TEST(Sampling, MomentsConverge) {
  Rng rng(3);
  const Index d = 6;
  const Index n = 200000;
  const Matrix cov = random_spd(rng, d);
  const Matrix means = random_matrix(rng, 1, d);
  const GaussianFit g = GaussianFit::from_parts(means, cov, {1}, Vector::Zero(d), cov, false,
                                                Shrinkage::fixed(1e-2));
  const Matrix x = sample_from_fit(g, 0, n, 5).values();
  const Eigen::RowVectorXd m = x.colwise().mean();
  const Matrix centered = x.rowwise() - m;
  const Matrix emp = centered.transpose() * centered / static_cast<double>(n);
  const Matrix target = g.shrunk_shared_cov();
  for (Index j = 0; j < d; ++j) {
    EXPECT_LE(std::abs(m(j) - means(0, j)), 3.0 * std::sqrt(target(j, j) / n) + 1e-12);
    for (Index k = 0; k < d; ++k) {
      const double se = std::sqrt((target(j, j) * target(k, k) + target(j, k) * target(j, k)) / n);
      EXPECT_LE(std::abs(emp(j, k) - target(j, k)), 3.0 * se) << j << "," << k;
    }
  }
}
