#include "mahakit/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "mahakit/metrics.hpp"
#include "mahakit/parallel.hpp"
#include "mahakit/rng.hpp"

namespace mahakit {
namespace {

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> checked_psd(const Matrix& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() < 1) {
    throw Error(ErrorCode::DimensionMismatch, "covariance must be square and non-empty");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver{Eigen::MatrixXd(sigma)};
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::NumericalFailure, "eigendecomposition did not converge");
  }
  const double tolerance = 1e-10 * std::abs(sigma.trace());
  if (solver.eigenvalues().minCoeff() < -tolerance) {
    throw Error(ErrorCode::NotPSD, "covariance has eigenvalue " +
                                       std::to_string(solver.eigenvalues().minCoeff()));
  }
  return solver;
}

}  // namespace

NormMoments gaussian_norm_moments(const Vector& mu, const Matrix& sigma) {
  checked_psd(sigma);
  if (mu.size() != sigma.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "mean and covariance dimensions differ");
  }
  NormMoments out;
  out.mean_sq_norm = sigma.trace() + mu.squaredNorm();
  out.var_sq_norm = 2.0 * sigma.cwiseProduct(sigma.transpose()).sum() +
                    4.0 * mu.dot(sigma * mu);
  return out;
}

double eigenbasis_norm_variance(const Vector& mu, const Matrix& sigma) {
  const auto solver = checked_psd(sigma);
  if (mu.size() != sigma.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "mean and covariance dimensions differ");
  }
  const Vector m = solver.eigenvectors().transpose() * mu;
  double total = 0.0;
  for (Index i = 0; i < m.size(); ++i) {
    const double l = solver.eigenvalues()[i];
    const double m2 = m[i] * m[i];
    total += 3.0 * l * l + 6.0 * m2 * l + m2 * m2 - (l + m2) * (l + m2);
  }
  return total;
}

double variance_deviation_value(const Matrix& shared_factor, const Matrix& shared_cov,
                                const Matrix& class_cov) {
  const Index d = shared_cov.rows();
  if (class_cov.rows() != d || class_cov.cols() != d || shared_factor.rows() != d) {
    throw Error(ErrorCode::DimensionMismatch, "covariance dimensions differ");
  }
  const Matrix diff = class_cov - shared_cov;
  const auto lower = shared_factor.triangularView<Eigen::Lower>();
  Matrix half = lower.solve(diff);                          // L^{-1} D
  Matrix a = lower.solve(half.transpose()).transpose();     // L^{-1} D L^{-T}
  a = 0.5 * (a + a.transpose()).eval();
  const double trace = a.trace();
  const double dd = static_cast<double>(d);
  return (2.0 * a.squaredNorm() + trace * trace) / (dd * (dd + 2.0));
}

DeviationReport variance_deviation(const GaussianFit& fit, const PerClassCovariances& per_class) {
  const auto n_classes = static_cast<std::size_t>(fit.n_classes());
  if (per_class.covs.size() != n_classes) {
    throw Error(ErrorCode::DimensionMismatch, "per-class covariances do not match the fit");
  }
  DeviationReport out;
  out.per_class.assign(n_classes, 0.0);
  out.shrinkage_eps = fit.shrinkage_eps();
  parallel_for(n_classes, [&](std::size_t c) {
    out.per_class[c] =
        variance_deviation_value(fit.shared_factor(), fit.shared_cov(), per_class.covs[c]);
  });
  out.mean = std::accumulate(out.per_class.begin(), out.per_class.end(), 0.0) /
             static_cast<double>(n_classes);
  return out;
}

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::InvalidConfig, "probability must lie in [0, 1]");
  }
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        ((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r +
            45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
         133.14166789178437745) * r + 3.387132872796366608;
    const double den =
        ((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r +
            21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
         42.313330701600911252) * r + 1.0;
    return q * num / den;
  }
  double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
  double value = 0.0;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        ((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r +
             0.24178072517745061177) * r + 1.27045825245236838258) * r +
           3.64784832476320460504) * r + 5.7694972214606914055) * r + 4.6303378461565452959) * r +
        1.42343711074968357734;
    const double den =
        ((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r +
             0.0151986665636164571966) * r + 0.14810397642748007459) * r +
           0.68976733498510000455) * r + 1.6763848301838038494) * r + 2.05319162663775882187) * r +
        1.0;
    value = num / den;
  } else {
    r -= 5.0;
    const double num =
        ((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r +
             0.0012426609473880784386) * r + 0.026532189526576123093) * r +
           0.29656057182850489123) * r + 1.7848265399172913358) * r + 5.4637849111641143699) * r +
        6.6579046435011037772;
    const double den =
        ((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r +
             1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r +
           0.0148753612908506148525) * r + 0.13692988092273580531) * r +
         0.59983220655588793769) * r + 1.0;
    value = num / den;
  }
  return q < 0.0 ? -value : value;
}

double linear_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "quantile of an empty sample");
  const double position = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(position));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = position - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

Matrix default_qq_directions(Index dim, Index n_random, std::uint64_t seed,
                             const Matrix* shared_cov) {
  if (dim < 1 || n_random < 0) throw Error(ErrorCode::InvalidConfig, "bad direction request");
  const Index extra = shared_cov != nullptr ? 2 : 0;
  Matrix directions(n_random + extra, dim);
  Rng rng(seed);
  for (Index k = 0; k < n_random; ++k) {
    for (Index j = 0; j < dim; ++j) directions(k, j) = rng.normal();
    directions.row(k).normalize();
  }
  if (shared_cov != nullptr) {
    if (shared_cov->rows() != dim) {
      throw Error(ErrorCode::DimensionMismatch, "covariance does not match the dimension");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver{Eigen::MatrixXd(*shared_cov)};
    directions.row(n_random) = solver.eigenvectors().col(dim - 1).transpose();
    directions.row(n_random + 1) = solver.eigenvectors().col(0).transpose();
  }
  return directions;
}

std::vector<QQPair> qq_quantiles(const FeatureMatrix& features, const Labels& labels,
                                 const Matrix& directions, Index n_quantiles) {
  if (features.rows() < 2) throw Error(ErrorCode::EmptyInput, "QQ needs at least 2 samples");
  if (n_quantiles < 1) throw Error(ErrorCode::InvalidConfig, "n_quantiles must be >= 1");
  if (directions.cols() != features.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "directions do not match the feature dimension");
  }
  const Matrix means = estimate_class_means(features, labels);
  Matrix centered = features.values();
  for (Index i = 0; i < centered.rows(); ++i) {
    centered.row(i) -= means.row(labels[static_cast<std::size_t>(i)]);
  }
  Matrix units = directions;
  l2_normalize_rows(units);

  Vector positions(n_quantiles);
  Vector theoretical(n_quantiles);
  for (Index k = 0; k < n_quantiles; ++k) {
    positions[k] = static_cast<double>(k + 1) / static_cast<double>(n_quantiles + 1);
    theoretical[k] = inverse_normal_cdf(positions[k]);
  }

  std::vector<QQPair> out;
  const auto n = static_cast<double>(centered.rows());
  for (Index dir = 0; dir < units.rows(); ++dir) {
    Vector projected = centered * units.row(dir).transpose();
    const double mean = projected.mean();
    const double variance = (projected.array() - mean).square().sum() / n;
    if (!(variance >= 1e-30)) {
      throw Error(ErrorCode::DegenerateDirection,
                  "projection onto direction " + std::to_string(dir) + " has no variance");
    }
    projected /= std::sqrt(variance);
    std::vector<double> sorted(projected.data(), projected.data() + projected.size());
    std::sort(sorted.begin(), sorted.end());
    QQPair pair{dir, Vector(n_quantiles), theoretical};
    for (Index k = 0; k < n_quantiles; ++k) {
      pair.sample_quantiles[k] = linear_quantile(sorted, positions[k]);
    }
    out.push_back(std::move(pair));
  }
  return out;
}

NormStats norm_stats(const FeatureMatrix& features, const Labels& labels, Index bins) {
  if (static_cast<Index>(labels.size()) != features.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "labels do not match feature rows");
  }
  if (features.rows() < 1) throw Error(ErrorCode::EmptyInput, "no rows for norm statistics");
  if (bins < 1) throw Error(ErrorCode::InvalidConfig, "bins must be >= 1");
  const Vector norms = features.values().rowwise().norm();

  NormStats out;
  const auto n_classes = static_cast<std::size_t>(labels.n_classes());
  std::vector<ClassNormStats> stats(n_classes);
  std::vector<double> sums(n_classes, 0.0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    stats[c].label = static_cast<std::int64_t>(c);
    stats[c].min = std::numeric_limits<double>::infinity();
    stats[c].max = -std::numeric_limits<double>::infinity();
  }
  for (Index i = 0; i < norms.size(); ++i) {
    auto& s = stats[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    ++s.count;
    sums[static_cast<std::size_t>(s.label)] += norms[i];
    s.min = std::min(s.min, norms[i]);
    s.max = std::max(s.max, norms[i]);
  }
  for (auto& s : stats) {
    if (s.count > 0) s.mean = sums[static_cast<std::size_t>(s.label)] / static_cast<double>(s.count);
  }
  std::vector<double> sq(n_classes, 0.0);
  for (Index i = 0; i < norms.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    sq[c] += (norms[i] - stats[c].mean) * (norms[i] - stats[c].mean);
  }
  for (auto& s : stats) {
    if (s.count == 0) continue;
    s.std = std::sqrt(sq[static_cast<std::size_t>(s.label)] / static_cast<double>(s.count));
    out.per_class.push_back(s);
  }

  double lo = norms.minCoeff();
  double hi = norms.maxCoeff();
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  out.edges.resize(static_cast<std::size_t>(bins + 1));
  for (Index b = 0; b <= bins; ++b) out.edges[static_cast<std::size_t>(b)] = lo + width * static_cast<double>(b);
  out.edges.back() = hi;
  out.counts.assign(static_cast<std::size_t>(bins), 0);
  for (Index i = 0; i < norms.size(); ++i) {
    auto b = static_cast<Index>(std::floor((norms[i] - lo) / width));
    b = std::clamp<Index>(b, 0, bins - 1);
    ++out.counts[static_cast<std::size_t>(b)];
  }
  return out;
}

double pearson_correlation(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "correlation inputs differ in length");
  if (a.size() < 2) throw Error(ErrorCode::EmptyInput, "correlation needs at least 2 values");
  if (a.maxCoeff() == a.minCoeff() || b.maxCoeff() == b.minCoeff()) {
    throw Error(ErrorCode::ConstantInput, "correlation undefined for constant input");
  }
  const Vector ca = a.array() - a.mean();
  const Vector cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

Vector average_ranks(const Vector& values) {
  const auto n = static_cast<std::size_t>(values.size());
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return values[x] < values[y]; });
  Vector ranks(values.size());
  std::size_t start = 0;
  while (start < n) {
    std::size_t stop = start + 1;
    while (stop < n && values[order[stop]] == values[order[start]]) ++stop;
    const double rank = 0.5 * static_cast<double>(start + 1 + stop);
    for (std::size_t k = start; k < stop; ++k) ranks[order[k]] = rank;
    start = stop;
  }
  return ranks;
}

Correlation norm_score_correlation(const FeatureMatrix& features, const Vector& scores) {
  const Vector norms = features.values().rowwise().norm();
  return {pearson_correlation(norms, scores),
          pearson_correlation(average_ranks(norms), average_ranks(scores))};
}

std::vector<AlphaPoint> alpha_sweep(const GaussianFit& fit, const FeatureMatrix& id_test,
                                    const FeatureMatrix& ood_test, std::span<const double> alphas,
                                    Method method) {
  if (method != Method::Maha && method != Method::MahaPP) {
    throw Error(ErrorCode::InvalidConfig, "alpha sweep supports maha and maha++ only");
  }
  const bool normalized = method == Method::MahaPP;
  const Vector id_scores = score_maha(fit, id_test, normalized).values;
  std::vector<AlphaPoint> out;
  for (double alpha : alphas) {
    const Vector ood_scores = score_maha(fit, scale_features(ood_test, alpha), normalized).values;
    out.push_back({alpha, fpr_at_tpr(id_scores, ood_scores).fpr_at_tpr});
  }
  return out;
}

}  // namespace mahakit
