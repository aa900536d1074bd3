#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mahakit/gaussian_model.hpp"
#include "mahakit/scorers.hpp"
#include "mahakit/types.hpp"

namespace mahakit {

/// First two moments of ||X||^2 for X ~ N(mu, Sigma).
struct NormMoments {
  double mean_sq_norm = 0.0;  // tr(Sigma) + ||mu||^2
  double var_sq_norm = 0.0;   // 2 tr(Sigma^2) + 4 mu^T Sigma mu

  /// Chebyshev bound on P(| ||X||^2 - mean | >= eps).
  double concentration_bound(double eps) const { return var_sq_norm / (eps * eps); }
};

/// Throws NotPSD when an eigenvalue of sigma is below -1e-10 tr(sigma).
NormMoments gaussian_norm_moments(const Vector& mu, const Matrix& sigma);

/// sum_i (3 l_i^2 + 6 m_i^2 l_i + m_i^4) - (l_i + m_i^2)^2 with m the
/// coordinates of mu in the eigenbasis of sigma.
double eigenbasis_norm_variance(const Vector& mu, const Matrix& sigma);

struct DeviationReport {
  std::vector<double> per_class;
  double mean = 0.0;
  double shrinkage_eps = 0.0;
};

/// (2 tr(A^2) + tr(A)^2) / (d (d + 2)) for A = L^{-1} (class_cov - shared) L^{-T}.
double variance_deviation_value(const Matrix& shared_factor, const Matrix& shared_cov,
                                const Matrix& class_cov);

/// Expected squared relative variance deviation of each class covariance from
/// the shared one over uniform directions, under the shrunk shared covariance.
DeviationReport variance_deviation(const GaussianFit& fit, const PerClassCovariances& per_class);

struct QQPair {
  Index direction = 0;
  Vector sample_quantiles;
  Vector theoretical_quantiles;
};

/// Standard normal quantile function (Wichura's AS241, about 1e-16 relative).
double inverse_normal_cdf(double p);

/// Linear interpolation between order statistics at position p * (n - 1).
double linear_quantile(std::span<const double> sorted, double p);

/// Rows of the result are unit directions: `n_random` seeded random ones,
/// followed by the top and bottom eigenvectors of shared_cov when given.
Matrix default_qq_directions(Index dim, Index n_random, std::uint64_t seed,
                             const Matrix* shared_cov = nullptr);

/// Class-centered projections onto each direction, standardized by their own
/// divide-by-N standard deviation, at plotting positions k / (Q + 1).
std::vector<QQPair> qq_quantiles(const FeatureMatrix& features, const Labels& labels,
                                 const Matrix& directions, Index n_quantiles);

struct ClassNormStats {
  std::int64_t label = 0;
  Index count = 0;
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct NormStats {
  std::vector<ClassNormStats> per_class;  // classes with at least one row
  std::vector<double> edges;              // bins + 1 equal-width edges over [min, max]
  std::vector<Index> counts;
};

NormStats norm_stats(const FeatureMatrix& features, const Labels& labels, Index bins = 100);

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
};

/// Throws ConstantInput when either input has zero variance.
double pearson_correlation(const Vector& a, const Vector& b);
/// Ranks starting at 1; tied values share their average rank.
Vector average_ranks(const Vector& values);
Correlation norm_score_correlation(const FeatureMatrix& features, const Vector& scores);

struct AlphaPoint {
  double alpha = 0.0;
  double fpr = 0.0;
};

/// FPR@95 after scaling only the OOD rows by each alpha. method is Maha or MahaPP.
std::vector<AlphaPoint> alpha_sweep(const GaussianFit& fit, const FeatureMatrix& id_test,
                                    const FeatureMatrix& ood_test, std::span<const double> alphas,
                                    Method method);

}  // namespace mahakit
