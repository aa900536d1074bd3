#include "mahakit/gaussian_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include <Eigen/Cholesky>

#include "mahakit/parallel.hpp"
#include "mahakit/rng.hpp"

namespace mahakit {
namespace {

constexpr Index kBlockRows = 2048;
constexpr double kZeroNorm = 1e-30;
// Smallest squared pivot accepted, relative to tr(cov)/d. Kept below the first
// automatic shrinkage step so that step always clears it.
constexpr double kPivotFloor = 1e-13;

void check_labels(Index rows, const Labels& labels) {
  if (static_cast<Index>(labels.size()) != rows) {
    throw Error(ErrorCode::DimensionMismatch,
                "labels length " + std::to_string(labels.size()) + " != feature rows " +
                    std::to_string(rows));
  }
  if (rows < 1) throw Error(ErrorCode::EmptyInput, "no feature rows to fit");
}

void check_means(const FeatureMatrix& features, const Labels& labels, const Matrix& means) {
  check_labels(features.rows(), labels);
  if (means.cols() != features.dim() || means.rows() != labels.n_classes()) {
    throw Error(ErrorCode::DimensionMismatch, "means shape does not match features/labels");
  }
}

std::optional<Matrix> try_cholesky(const Matrix& cov, double eps, double scale) {
  if (!(scale > 0.0)) return std::nullopt;
  Matrix shrunk = cov;
  shrunk.diagonal().array() += eps * scale;
  Eigen::LLT<Matrix> llt(shrunk);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Matrix lower = llt.matrixL();
  const double min_pivot = lower.diagonal().minCoeff();
  if (!(min_pivot * min_pivot >= kPivotFloor * scale) || !lower.allFinite()) return std::nullopt;
  return lower;
}

void fill_upper_from_lower(Matrix& m) {
  m.triangularView<Eigen::StrictlyUpper>() = m.transpose();
}

struct ClassSums {
  Matrix sums;
  std::vector<std::int64_t> counts;
};

ClassSums accumulate_class_sums(const RowSource& source, const Labels& labels, bool normalize) {
  const Index n = source.rows();
  const Index d = source.dim();
  ClassSums out{Matrix::Zero(labels.n_classes(), d),
                std::vector<std::int64_t>(static_cast<std::size_t>(labels.n_classes()), 0)};
  for (Index begin = 0; begin < n; begin += kBlockRows) {
    const Index count = std::min(kBlockRows, n - begin);
    Matrix block = source.read_rows(begin, count);
    if (!block.allFinite()) throw Error(ErrorCode::NonFinite, "non-finite feature value");
    if (normalize) l2_normalize_rows(block, begin);
    for (Index i = 0; i < count; ++i) {
      const auto c = labels[static_cast<std::size_t>(begin + i)];
      out.sums.row(c) += block.row(i);
      ++out.counts[static_cast<std::size_t>(c)];
    }
  }
  for (std::size_t c = 0; c < out.counts.size(); ++c) {
    if (out.counts[c] == 0) {
      throw Error(ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no samples");
    }
  }
  return out;
}

struct Scatter {
  Matrix shared;
  Matrix global;
};

// Second pass: centered outer products, computed per block and reduced in
// block order.
Scatter accumulate_scatter(const RowSource& source, const Labels& labels, bool normalize,
                           const Matrix& means, const Vector& global_mean) {
  const Index n = source.rows();
  const Index d = source.dim();
  Scatter total{Matrix::Zero(d, d), Matrix::Zero(d, d)};
  const Index n_blocks = (n + kBlockRows - 1) / kBlockRows;
  const auto wave = static_cast<Index>(std::max<std::size_t>(1, worker_count()));

  for (Index first = 0; first < n_blocks; first += wave) {
    const Index in_wave = std::min(wave, n_blocks - first);
    std::vector<Matrix> blocks(static_cast<std::size_t>(in_wave));
    for (Index w = 0; w < in_wave; ++w) {
      const Index begin = (first + w) * kBlockRows;
      blocks[w] = source.read_rows(begin, std::min(kBlockRows, n - begin));
      if (normalize) l2_normalize_rows(blocks[w], begin);
    }
    std::vector<Scatter> partial(static_cast<std::size_t>(in_wave));
    parallel_for(static_cast<std::size_t>(in_wave), [&](std::size_t w) {
      const Index begin = (first + static_cast<Index>(w)) * kBlockRows;
      const Matrix& block = blocks[w];
      Matrix centered(block.rows(), d);
      for (Index i = 0; i < block.rows(); ++i) {
        centered.row(i) = block.row(i) - means.row(labels[static_cast<std::size_t>(begin + i)]);
      }
      Scatter s{Matrix::Zero(d, d), Matrix::Zero(d, d)};
      s.shared.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
      centered = block.rowwise() - global_mean.transpose();
      s.global.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
      partial[w] = std::move(s);
    });
    for (auto& s : partial) {
      total.shared.triangularView<Eigen::Lower>() += s.shared;
      total.global.triangularView<Eigen::Lower>() += s.global;
    }
  }
  fill_upper_from_lower(total.shared);
  fill_upper_from_lower(total.global);
  return total;
}

}  // namespace

Shrinkage Shrinkage::fixed(double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) {
    throw Error(ErrorCode::InvalidConfig, "shrinkage must be a finite value >= 0");
  }
  return Shrinkage(eps);
}

FactorizedCovariance factorize_covariance(Matrix cov, Shrinkage shrinkage) {
  if (cov.rows() != cov.cols() || cov.rows() < 1) {
    throw Error(ErrorCode::DimensionMismatch, "covariance must be square and non-empty");
  }
  const double scale = cov.trace() / static_cast<double>(cov.rows());
  return factorize_covariance(std::move(cov), shrinkage, scale);
}

FactorizedCovariance factorize_covariance(Matrix cov, Shrinkage shrinkage, double ridge_scale) {
  if (cov.rows() != cov.cols() || cov.rows() < 1) {
    throw Error(ErrorCode::DimensionMismatch, "covariance must be square and non-empty");
  }
  if (shrinkage.is_automatic()) {
    // Decade steps are generated from integer exponents to land exactly on 1e-k.
    for (int exponent = -10; exponent <= -2; ++exponent) {
      const double eps = std::pow(10.0, exponent);
      if (auto lower = try_cholesky(cov, eps, ridge_scale)) {
        return {std::move(cov), std::move(*lower), eps, eps * ridge_scale};
      }
    }
    throw Error(ErrorCode::SingularCovariance,
                "covariance not positive definite at shrinkage cap 1e-2");
  }
  const double eps = shrinkage.value();
  if (auto lower = try_cholesky(cov, eps, ridge_scale)) {
    return {std::move(cov), std::move(*lower), eps, eps * ridge_scale};
  }
  throw Error(ErrorCode::SingularCovariance,
              "covariance not positive definite at shrinkage " + std::to_string(eps));
}

void l2_normalize_rows(Matrix& block, Index row_offset) {
  for (Index i = 0; i < block.rows(); ++i) {
    const double norm = block.row(i).norm();
    if (!(norm >= kZeroNorm)) {
      throw Error(ErrorCode::ZeroNormRow, "row " + std::to_string(row_offset + i) +
                                              " has zero norm and cannot be normalized");
    }
    block.row(i) /= norm;
  }
}

FeatureMatrix l2_normalize(const FeatureMatrix& features) {
  Matrix values = features.values();
  l2_normalize_rows(values);
  return FeatureMatrix(std::move(values));
}

Matrix estimate_class_means(const FeatureMatrix& features, const Labels& labels) {
  check_labels(features.rows(), labels);
  ClassSums sums = accumulate_class_sums(InMemoryRows(features), labels, false);
  for (Index c = 0; c < sums.sums.rows(); ++c) {
    sums.sums.row(c) /= static_cast<double>(sums.counts[static_cast<std::size_t>(c)]);
  }
  return std::move(sums.sums);
}

Matrix estimate_shared_covariance(const FeatureMatrix& features, const Labels& labels,
                                  const Matrix& means) {
  check_means(features, labels, means);
  const Vector unused = Vector::Zero(features.dim());
  Scatter scatter = accumulate_scatter(InMemoryRows(features), labels, false, means, unused);
  return scatter.shared / static_cast<double>(features.rows());
}

PerClassCovariances estimate_per_class_covariances(const FeatureMatrix& features,
                                                   const Labels& labels, const Matrix& means) {
  check_means(features, labels, means);
  const Index d = features.dim();
  const auto n_classes = static_cast<std::size_t>(labels.n_classes());
  PerClassCovariances out{std::vector<Matrix>(n_classes, Matrix::Zero(d, d)),
                          std::vector<std::int64_t>(n_classes, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) ++out.counts[labels[i]];

  // Gather each class into a contiguous block so one rank update covers it.
  std::vector<std::vector<Index>> members(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    members[labels[i]].push_back(static_cast<Index>(i));
  }
  parallel_for(n_classes, [&](std::size_t c) {
    if (members[c].empty()) return;
    Matrix centered(static_cast<Index>(members[c].size()), d);
    for (std::size_t k = 0; k < members[c].size(); ++k) {
      centered.row(static_cast<Index>(k)) =
          features.row(members[c][k]) - means.row(static_cast<Index>(c));
    }
    Matrix& cov = out.covs[c];
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
    fill_upper_from_lower(cov);
    cov /= static_cast<double>(members[c].size());
  });
  return out;
}

GaussianFit GaussianFit::from_parts(Matrix means, Matrix shared_cov,
                                    std::vector<std::int64_t> class_counts, Vector global_mean,
                                    Matrix global_cov, bool normalized, Shrinkage shrinkage) {
  const Index d = means.cols();
  if (shared_cov.rows() != d || shared_cov.cols() != d || global_cov.rows() != d ||
      global_cov.cols() != d || global_mean.size() != d ||
      static_cast<Index>(class_counts.size()) != means.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "inconsistent Gaussian fit parts");
  }
  GaussianFit out;
  out.means_ = std::move(means);
  out.shared_ = factorize_covariance(std::move(shared_cov), shrinkage);
  out.global_mean_ = std::move(global_mean);
  out.global_ = factorize_covariance(std::move(global_cov), shrinkage);
  out.class_counts_ = std::move(class_counts);
  out.normalized_ = normalized;
  return out;
}

GaussianFit GaussianFit::restore(Matrix means, FactorizedCovariance shared, Vector global_mean,
                                 FactorizedCovariance global,
                                 std::vector<std::int64_t> class_counts, bool normalized) {
  GaussianFit out;
  out.means_ = std::move(means);
  out.shared_ = std::move(shared);
  out.global_mean_ = std::move(global_mean);
  out.global_ = std::move(global);
  out.class_counts_ = std::move(class_counts);
  out.normalized_ = normalized;
  return out;
}

std::int64_t GaussianFit::n_samples() const {
  return std::accumulate(class_counts_.begin(), class_counts_.end(), std::int64_t{0});
}

Matrix GaussianFit::shrunk_shared_cov() const {
  Matrix m = shared_.cov;
  m.diagonal().array() += shared_.ridge;
  return m;
}

Matrix GaussianFit::shrunk_global_cov() const {
  Matrix m = global_.cov;
  m.diagonal().array() += global_.ridge;
  return m;
}

GaussianFit fit(const FeatureMatrix& features, const Labels& labels, const FitOptions& options) {
  return fit(InMemoryRows(features), labels, options);
}

GaussianFit fit(const RowSource& source, const Labels& labels, const FitOptions& options) {
  check_labels(source.rows(), labels);
  const Index n = source.rows();

  ClassSums sums = accumulate_class_sums(source, labels, options.normalize);
  Vector global_mean = sums.sums.colwise().sum().transpose() / static_cast<double>(n);
  Matrix means = std::move(sums.sums);
  for (Index c = 0; c < means.rows(); ++c) {
    means.row(c) /= static_cast<double>(sums.counts[static_cast<std::size_t>(c)]);
  }

  Scatter scatter = accumulate_scatter(source, labels, options.normalize, means, global_mean);
  return GaussianFit::from_parts(std::move(means), scatter.shared / static_cast<double>(n),
                                 std::move(sums.counts), std::move(global_mean),
                                 scatter.global / static_cast<double>(n), options.normalize,
                                 options.shrinkage);
}

Vector whiten(const GaussianFit& fit, const Vector& x, Center center) {
  if (x.size() != fit.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "whiten: vector length != fit dimension");
  }
  return std::visit(
      [&](auto selector) -> Vector {
        using T = decltype(selector);
        if constexpr (std::is_same_v<T, ClassCenter>) {
          if (selector.index < 0 || selector.index >= fit.n_classes()) {
            throw Error(ErrorCode::InvalidLabel, "whiten: class index out of range");
          }
          Vector centered = x - fit.means().row(selector.index).transpose();
          return fit.shared_factor().triangularView<Eigen::Lower>().solve(centered);
        } else {
          Vector centered = x - fit.global_mean();
          return fit.global_factor().triangularView<Eigen::Lower>().solve(centered);
        }
      },
      center);
}

Matrix whiten_rows(const Matrix& lower_factor, const Matrix& x) {
  Matrix y = x;
  lower_factor.transpose().triangularView<Eigen::Upper>().solveInPlace<Eigen::OnTheRight>(y);
  return y;
}

FeatureMatrix sample_gaussian(const Vector& mean, const Matrix& lower_factor, Index n,
                              std::uint64_t seed) {
  const Index d = mean.size();
  Rng rng(seed);
  Matrix out(n, d);
  Vector z(d);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < d; ++k) z[k] = rng.normal();
    out.row(i) = (mean + lower_factor.triangularView<Eigen::Lower>() * z).transpose();
  }
  return FeatureMatrix(std::move(out));
}

FeatureMatrix sample_from_fit(const GaussianFit& fit, Index class_index, Index n,
                              std::uint64_t seed) {
  if (class_index < 0 || class_index >= fit.n_classes()) {
    throw Error(ErrorCode::InvalidLabel, "sample_from_fit: class index out of range");
  }
  return sample_gaussian(fit.means().row(class_index).transpose(), fit.shared_factor(), n, seed);
}

}  // namespace mahakit
