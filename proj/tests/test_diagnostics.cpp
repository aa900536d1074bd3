#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>

#include "mahakit/diagnostics.hpp"
#include "mahakit/metrics.hpp"
#include "mahakit/oracle.hpp"
#include "mahakit/synth.hpp"
#include "test_util.hpp"

using namespace mahakit;
using namespace mahakit::testing;

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

Matrix random_psd(Rng& rng, Index d, Index rank) {
  const Matrix a = random_matrix(rng, d, rank);
  return a * a.transpose() / static_cast<double>(rank);
}

GaussianFit shared_fit(const Matrix& shared) {
  const Index d = shared.rows();
  return GaussianFit::from_parts(Matrix::Zero(1, d), shared, {10}, Vector::Zero(d), shared, false,
                                 Shrinkage::fixed(0.0));
}

}  // namespace

// ---- Norm moments ------------------------------------------------------------

TEST(NormMomentsTest, ChiSquare) {
  for (Index d : {1, 2, 16, 64}) {
    const NormMoments m = gaussian_norm_moments(Vector::Zero(d), Matrix::Identity(d, d));
    EXPECT_EQ(m.mean_sq_norm, static_cast<double>(d));
    EXPECT_EQ(m.var_sq_norm, 2.0 * static_cast<double>(d));
  }
}

TEST(NormMomentsTest, HandInstance) {
  Vector mu(2);
  mu << 1, 0;
  Matrix sigma = Matrix::Zero(2, 2);
  sigma.diagonal() << 2, 3;
  const NormMoments m = gaussian_norm_moments(mu, sigma);
  EXPECT_DOUBLE_EQ(m.mean_sq_norm, 6.0);
  EXPECT_DOUBLE_EQ(m.var_sq_norm, 34.0);
  const auto mc = oracle::mc_norm_moments(mu, sigma, 1000000, 77);
  EXPECT_LE(std::abs(mc.mean.mean - 6.0), 3.0 * mc.mean.standard_error);
  EXPECT_LE(std::abs(mc.variance.mean - 34.0), 3.0 * mc.variance.standard_error);
}

TEST(NormMomentsTest, DegeneratePoint) {
  Vector mu(3);
  mu << 1, -2, 2;
  const NormMoments m = gaussian_norm_moments(mu, Matrix::Zero(3, 3));
  EXPECT_EQ(m.mean_sq_norm, 9.0);
  EXPECT_EQ(m.var_sq_norm, 0.0);
}

TEST(NormMomentsTest, NotPsdRejected) {
  Matrix s = Matrix::Identity(2, 2);
  s(1, 1) = -1.0;
  EXPECT_EQ(code_of([&] { gaussian_norm_moments(Vector::Zero(2), s); }), ErrorCode::NotPSD);
}

TEST(NormMomentsTest, BasisFreeEqualsEigenbasis) {
  Rng rng(1);
  for (Index d : {1, 2, 5, 16, 64}) {
    for (int rep = 0; rep < 5; ++rep) {
      const Matrix sigma = random_psd(rng, d, 1 + static_cast<Index>(rng.below(d)));
      const Vector mu = random_vector(rng, d, 2.0);
      const double basis_free = gaussian_norm_moments(mu, sigma).var_sq_norm;
      EXPECT_NEAR(basis_free, eigenbasis_norm_variance(mu, sigma), 1e-10 * basis_free);
    }
  }
}

TEST(NormMomentsTest, ChebyshevHolds) {
  Rng rng(2);
  const Index d = 8;
  const Matrix sigma = random_spd(rng, d);
  const Vector mu = random_vector(rng, d);
  const NormMoments m = gaussian_norm_moments(mu, sigma);
  const GaussianFit g = GaussianFit::from_parts(Matrix(mu.transpose()), sigma, {1}, mu, sigma, false,
                                                Shrinkage::fixed(0.0));
  const Index n = 100000;
  const Vector sq = sample_from_fit(g, 0, n, 3).values().rowwise().squaredNorm();
  const double sd = std::sqrt(m.var_sq_norm);
  for (double k : {1.0, 2.0, 4.0}) {
    const double eps = k * sd;
    const double p = ((sq.array() - m.mean_sq_norm).abs() >= eps).cast<double>().mean();
    const double se = std::sqrt(std::max(p * (1 - p), 1.0 / n) / n);
    EXPECT_LE(p, m.concentration_bound(eps) + 3.0 * se);
  }
}

// ---- Variance deviation --------------------------------------------------------

TEST(VarianceDeviation, EqualCovariancesGiveZero) {
  Rng rng(3);
  const Matrix shared = random_spd(rng, 5);
  const GaussianFit g = shared_fit(shared);
  EXPECT_EQ(variance_deviation_value(g.shared_factor(), shared, shared), 0.0);
}

TEST(VarianceDeviation, DoubledCovarianceGivesOne) {
  Rng rng(4);
  for (Index d : {1, 3, 8}) {
    const Matrix shared = random_spd(rng, d);
    const GaussianFit g = shared_fit(shared);
    EXPECT_NEAR(variance_deviation_value(g.shared_factor(), shared, 2.0 * shared), 1.0, 1e-12);
  }
}

TEST(VarianceDeviation, MatchesSphereAverage) {
  Rng rng(5);
  const Index d = 6;
  const Matrix shared = random_spd(rng, d);
  const Matrix other = random_spd(rng, d);
  const GaussianFit g = shared_fit(shared);
  const double closed = variance_deviation_value(g.shared_factor(), shared, other);
  const Matrix l_inv = g.shared_factor().triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  const Matrix a = l_inv * (other - shared) * l_inv.transpose();
  const auto mc = oracle::mc_sphere_average(0.5 * (a + a.transpose()), 1000000, 6);
  EXPECT_NEAR(closed, mc.mean, 0.01 * closed);
}

TEST(VarianceDeviation, ReportAveragesClasses) {
  const Instance inst = random_instance(7, 4, 5, 150);
  const FeatureMatrix f(inst.train);
  const GaussianFit g = fit(f, labels_of(inst), {});
  const auto pc = estimate_per_class_covariances(f, labels_of(inst), g.means());
  const DeviationReport r = variance_deviation(g, pc);
  ASSERT_EQ(r.per_class.size(), static_cast<std::size_t>(g.n_classes()));
  double sum = 0.0;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    EXPECT_GE(r.per_class[c], 0.0);
    EXPECT_EQ(r.per_class[c], variance_deviation_value(g.shared_factor(), g.shared_cov(), pc.covs[c]));
    sum += r.per_class[c];
  }
  EXPECT_NEAR(r.mean, sum / static_cast<double>(r.per_class.size()), 1e-15);
  EXPECT_EQ(r.shrinkage_eps, g.shrinkage_eps());
}

TEST(VarianceDeviation, NormalizationHelpsOnHeteroscedasticData) {
  int better = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthSpec spec;
    spec.n_classes = 10;
    spec.dim = 16;
    spec.train_per_class = 100;
    spec.ood_classes = 2;
    spec.seed = seed;
    const SynthData data = generate(spec);
    const GaussianFit plain = fit(data.train, data.train_labels, {});
    const GaussianFit unit = fit(data.train, data.train_labels, {true, Shrinkage::automatic()});
    const double before =
        variance_deviation(plain, estimate_per_class_covariances(data.train, data.train_labels, plain.means())).mean;
    const double after = variance_deviation(
        unit, estimate_per_class_covariances(l2_normalize(data.train), data.train_labels, unit.means())).mean;
    better += after <= before ? 1 : 0;
  }
  EXPECT_GE(better, 18);
}

// ---- QQ ------------------------------------------------------------------------

TEST(InverseNormal, AgreesWithBoost) {
  const boost::math::normal_distribution<double> n01;
  for (double p : {1e-300, 1e-20, 1e-10, 1e-5, 0.001, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.975, 0.999, 1 - 1e-12}) {
    EXPECT_NEAR(inverse_normal_cdf(p), boost::math::quantile(n01, p), 1e-9 * std::max(1.0, std::abs(boost::math::quantile(n01, p))))
        << p;
  }
  for (int k = 1; k < 1000; ++k) {
    const double p = k / 1000.0;
    EXPECT_NEAR(inverse_normal_cdf(p), boost::math::quantile(n01, p), 1e-9);
  }
  EXPECT_EQ(inverse_normal_cdf(0.5), 0.0);
  EXPECT_TRUE(std::isinf(inverse_normal_cdf(0.0)) && inverse_normal_cdf(0.0) < 0);
  EXPECT_TRUE(std::isinf(inverse_normal_cdf(1.0)) && inverse_normal_cdf(1.0) > 0);
  EXPECT_EQ(code_of([] { inverse_normal_cdf(1.5); }), ErrorCode::InvalidConfig);
}

TEST(LinearQuantile, Interpolates) {
  const std::vector<double> v{1, 2, 4, 8};
  EXPECT_EQ(linear_quantile(v, 0.0), 1.0);
  EXPECT_EQ(linear_quantile(v, 1.0), 8.0);
  EXPECT_DOUBLE_EQ(linear_quantile(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(linear_quantile(v, 0.25), 1.75);
}

TEST(Qq, ExactQuantilesReproduceTheory) {
  const Index n = 2001;
  Matrix x(n, 1);
  for (Index i = 0; i < n; ++i) x(i, 0) = inverse_normal_cdf((i + 0.5) / n);
  const Labels labels(std::vector<std::int64_t>(n, 0), 1);
  const auto pairs = qq_quantiles(FeatureMatrix(x), labels, Matrix::Identity(1, 1), 9);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_LE((pairs[0].sample_quantiles - pairs[0].theoretical_quantiles).cwiseAbs().maxCoeff(), 0.01);
}

TEST(Qq, SymmetricMedian) {
  Matrix x(6, 2);
  x << -3, 1, -1, 0, 2, 5, 3, -1, 1, 0, -2, -5;
  const Labels labels(std::vector<std::int64_t>(6, 0), 1);
  Matrix dir(1, 2);
  dir << 1, 0;
  const auto pairs = qq_quantiles(FeatureMatrix(x), labels, dir, 3);
  EXPECT_NEAR(pairs[0].sample_quantiles(1), 0.0, 1e-15);
  EXPECT_EQ(pairs[0].theoretical_quantiles(1), 0.0);
}

TEST(Qq, HeavyTailExceedsNormal) {
  Rng rng(8);
  const Index n = 20000;
  Matrix x(n, 3);
  for (Index i = 0; i < n; ++i) {
    const double scale = rng.uniform() < 0.1 ? 5.0 : 1.0;
    for (Index j = 0; j < 3; ++j) x(i, j) = scale * rng.normal();
  }
  const Labels labels(std::vector<std::int64_t>(n, 0), 1);
  const Matrix dirs = default_qq_directions(3, 2, 1);
  const Index q = 99;
  for (const auto& p : qq_quantiles(FeatureMatrix(x), labels, dirs, q)) {
    EXPECT_GT(std::abs(p.sample_quantiles(q - 1)), std::abs(p.theoretical_quantiles(q - 1)));
  }
}

TEST(Qq, StraightForGaussians) {
  const Index n = 200000;
  const Index d = 4;
  Rng rng(9);
  const Matrix cov = random_spd(rng, d);
  const GaussianFit g = GaussianFit::from_parts(Matrix::Zero(1, d), cov, {1}, Vector::Zero(d), cov, false,
                                                Shrinkage::fixed(0.0));
  const FeatureMatrix x = sample_from_fit(g, 0, n, 10);
  const Labels labels(std::vector<std::int64_t>(n, 0), 1);
  const Matrix dirs = default_qq_directions(d, 3, 11, &cov);
  ASSERT_EQ(dirs.rows(), 5);
  for (const auto& p : qq_quantiles(x, labels, dirs, 19)) {
    EXPECT_LT((p.sample_quantiles - p.theoretical_quantiles).cwiseAbs().maxCoeff(), 5.0 / std::sqrt(double(n)));
  }
}

TEST(Qq, OutputsSortedAndSized) {
  const Instance inst = random_instance(12, 3, 6, 150);
  const Matrix dirs = default_qq_directions(inst.train.cols(), 3, 4);
  for (Index r = 0; r < dirs.rows(); ++r) EXPECT_NEAR(dirs.row(r).norm(), 1.0, 1e-14);
  for (const auto& p : qq_quantiles(FeatureMatrix(inst.train), labels_of(inst), dirs, 25)) {
    EXPECT_EQ(p.sample_quantiles.size(), 25);
    EXPECT_EQ(p.theoretical_quantiles.size(), 25);
    EXPECT_TRUE(std::is_sorted(p.sample_quantiles.data(), p.sample_quantiles.data() + 25));
    EXPECT_TRUE(std::is_sorted(p.theoretical_quantiles.data(), p.theoretical_quantiles.data() + 25));
  }
  EXPECT_EQ(default_qq_directions(5, 3, 4), default_qq_directions(5, 3, 4));
}

TEST(Qq, DegenerateDirection) {
  Matrix x(4, 2);
  x << 1, 0, 2, 0, 3, 0, 4, 0;
  Matrix dir(1, 2);
  dir << 0, 1;
  EXPECT_EQ(code_of([&] { qq_quantiles(FeatureMatrix(x), Labels({0, 0, 1, 1}, 2), dir, 5); }),
            ErrorCode::DegenerateDirection);
}

// ---- Norm statistics and correlation ---------------------------------------

TEST(NormStatsTest, UnitRows) {
  Rng rng(13);
  const FeatureMatrix unit = l2_normalize(FeatureMatrix(random_matrix(rng, 30, 4)));
  std::vector<std::int64_t> lab;
  for (int i = 0; i < 30; ++i) lab.push_back(i % 3);
  const NormStats s = norm_stats(unit, Labels(lab, 3));
  ASSERT_EQ(s.per_class.size(), 3u);
  for (const auto& c : s.per_class) {
    EXPECT_NEAR(c.mean, 1.0, 1e-15);
    EXPECT_NEAR(c.std, 0.0, 1e-15);
  }
}

TEST(NormStatsTest, TwoClasses) {
  Matrix x(4, 2);
  x << 1, 0, 0, 1, 2, 0, 0, -2;
  const NormStats s = norm_stats(FeatureMatrix(x), Labels({0, 0, 1, 1}, 2), 4);
  EXPECT_EQ(s.per_class[0].mean, 1.0);
  EXPECT_EQ(s.per_class[1].mean, 2.0);
  EXPECT_EQ(s.edges.size(), 5u);
  EXPECT_EQ(s.edges.front(), 1.0);
  EXPECT_EQ(s.edges.back(), 2.0);
  EXPECT_EQ(s.counts, (std::vector<Index>{2, 0, 0, 2}));
}

TEST(NormStatsTest, MatchesDirectNorms) {
  const Instance inst = random_instance(14);
  const NormStats s = norm_stats(FeatureMatrix(inst.train), labels_of(inst));
  const Vector norms = inst.train.rowwise().norm();
  Index total = 0;
  for (Index c : s.counts) total += c;
  EXPECT_EQ(total, inst.train.rows());
  EXPECT_EQ(s.counts.size(), 100u);
  for (const auto& c : s.per_class) {
    double lo = INFINITY, hi = -INFINITY, sum = 0;
    Index count = 0;
    for (Index i = 0; i < norms.size(); ++i) {
      if (inst.labels[static_cast<std::size_t>(i)] != c.label) continue;
      lo = std::min(lo, norms(i));
      hi = std::max(hi, norms(i));
      sum += norms(i);
      ++count;
    }
    EXPECT_EQ(c.count, count);
    EXPECT_EQ(c.min, lo);
    EXPECT_EQ(c.max, hi);
    EXPECT_NEAR(c.mean, sum / count, 1e-14);
  }
}

TEST(Correlation, Identity) {
  const Instance inst = random_instance(15);
  const Vector norms = inst.train.rowwise().norm();
  const Correlation c = norm_score_correlation(FeatureMatrix(inst.train), norms);
  EXPECT_NEAR(c.pearson, 1.0, 1e-14);
  EXPECT_NEAR(c.spearman, 1.0, 1e-14);
}

TEST(Correlation, ConstantScoresRejected) {
  const Instance inst = random_instance(16);
  const Vector constant = Vector::Constant(inst.train.rows(), 3.0);
  EXPECT_EQ(code_of([&] { norm_score_correlation(FeatureMatrix(inst.train), constant); }), ErrorCode::ConstantInput);
}

TEST(Correlation, MonotoneNonlinear) {
  const Instance inst = random_instance(17);
  const Vector norms = inst.train.rowwise().norm();
  const Correlation c = norm_score_correlation(FeatureMatrix(inst.train), -norms.array().cube().matrix());
  EXPECT_NEAR(c.spearman, -1.0, 1e-14);
  EXPECT_LT(std::abs(c.pearson), 1.0);
}

TEST(Correlation, AverageRanksWithTies) {
  Vector v(5);
  v << 3, 1, 3, 2, 3;
  Vector expected(5);
  expected << 4, 1, 4, 2, 4;
  EXPECT_EQ(average_ranks(v), expected);
}

// ---- Alpha sweep ---------------------------------------------------------------

TEST(AlphaSweep, UnitAlphaMatchesDirectEvaluation) {
  SynthSpec spec;
  spec.n_classes = 6;
  spec.dim = 8;
  spec.train_per_class = 60;
  spec.ood_classes = 3;
  const SynthData data = generate(spec);
  const GaussianFit g = fit(data.train, data.train_labels, {});
  const std::vector<double> alphas{1.0};
  const auto pts = alpha_sweep(g, data.id_test, data.ood_test, alphas, Method::Maha);
  const double direct = fpr_at_tpr(score_maha(g, data.id_test, false).values,
                                   score_maha(g, data.ood_test, false).values).fpr_at_tpr;
  EXPECT_EQ(pts[0].fpr, direct);
}

TEST(AlphaSweep, PlusPlusConstant) {
  SynthSpec spec;
  spec.n_classes = 6;
  spec.dim = 8;
  spec.train_per_class = 60;
  spec.ood_classes = 3;
  const SynthData data = generate(spec);
  const GaussianFit g = fit(data.train, data.train_labels, {true, Shrinkage::automatic()});
  const std::vector<double> alphas{0.1, 0.5, 1.0, 3.0, 10.0};
  const auto pts = alpha_sweep(g, data.id_test, data.ood_test, alphas, Method::MahaPP);
  const double step = 1.0 / static_cast<double>(data.ood_test.rows());
  for (const auto& p : pts) EXPECT_LE(std::abs(p.fpr - pts[2].fpr), step + 1e-15);
}

TEST(AlphaSweep, ZeroAlphaPlainMaha) {
  SynthSpec spec;
  spec.n_classes = 5;
  spec.dim = 6;
  spec.train_per_class = 50;
  spec.ood_classes = 2;
  const SynthData data = generate(spec);
  const GaussianFit g = fit(data.train, data.train_labels, {});
  const std::vector<double> alphas{0.0};
  const auto pts = alpha_sweep(g, data.id_test, data.ood_test, alphas, Method::Maha);
  const double t = tpr_threshold(score_maha(g, data.id_test, false).values);
  const double zero_score = score_maha(g, FeatureMatrix(Matrix::Zero(1, 6)), false).values(0);
  EXPECT_EQ(pts[0].fpr, zero_score >= t ? 1.0 : 0.0);
}
