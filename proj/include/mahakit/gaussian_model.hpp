#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "mahakit/types.hpp"

namespace mahakit {

/// Ridge added to a covariance before factorization, as a fraction of the
/// mean eigenvalue: Sigma + eps * (tr(Sigma) / d) * I.
class Shrinkage {
 public:
  /// eps = 1e-10, 1e-9, ..., 1e-2; the first value that factorizes wins.
  static Shrinkage automatic() { return Shrinkage(std::nullopt); }
  static Shrinkage fixed(double eps);

  bool is_automatic() const { return !eps_.has_value(); }
  double value() const { return eps_.value_or(0.0); }

 private:
  explicit Shrinkage(std::optional<double> eps) : eps_(eps) {}
  std::optional<double> eps_;
};

/// Symmetric covariance together with a lower Cholesky factor of its shrunk form.
struct FactorizedCovariance {
  Matrix cov;
  Matrix factor;      // L L^T = cov + ridge * I
  double eps = 0.0;
  double ridge = 0.0;  // eps * ridge_scale
};

/// Factorizes cov + eps * (tr(cov)/d) * I. Throws SingularCovariance when no
/// admissible eps produces a positive-definite factor.
FactorizedCovariance factorize_covariance(Matrix cov, Shrinkage shrinkage);

/// Same policy with an explicit ridge scale in place of tr(cov)/d.
FactorizedCovariance factorize_covariance(Matrix cov, Shrinkage shrinkage, double ridge_scale);

/// Row-wise unit normalization. Throws ZeroNormRow for rows with norm < 1e-30.
FeatureMatrix l2_normalize(const FeatureMatrix& features);

/// In-place variant used on streamed blocks; row_offset only affects error messages.
void l2_normalize_rows(Matrix& block, Index row_offset = 0);

Matrix estimate_class_means(const FeatureMatrix& features, const Labels& labels);

/// (1/N) sum_c sum_{i in c} (x_i - mu_c)(x_i - mu_c)^T.
Matrix estimate_shared_covariance(const FeatureMatrix& features, const Labels& labels,
                                  const Matrix& means);

struct PerClassCovariances {
  std::vector<Matrix> covs;           // divide-by-N_c
  std::vector<std::int64_t> counts;   // N_c
};

PerClassCovariances estimate_per_class_covariances(const FeatureMatrix& features,
                                                   const Labels& labels, const Matrix& means);

/// Row provider for two-pass fitting over data that need not fit in memory.
class RowSource {
 public:
  virtual ~RowSource() = default;
  virtual Index rows() const = 0;
  virtual Index dim() const = 0;
  virtual Matrix read_rows(Index begin, Index count) const = 0;
};

class InMemoryRows final : public RowSource {
 public:
  explicit InMemoryRows(const FeatureMatrix& features) : features_(features) {}
  Index rows() const override { return features_.rows(); }
  Index dim() const override { return features_.dim(); }
  Matrix read_rows(Index begin, Index count) const override {
    return features_.values().middleRows(begin, count);
  }

 private:
  const FeatureMatrix& features_;
};

struct FitOptions {
  bool normalize = false;
  Shrinkage shrinkage = Shrinkage::automatic();
};

struct ClassCenter {
  Index index;
};
struct GlobalCenter {};
using Center = std::variant<ClassCenter, GlobalCenter>;

/// Class-conditional Gaussians with a shared covariance plus a class-agnostic
/// global Gaussian. Immutable once built.
class GaussianFit {
 public:
  /// Assembles a fit from precomputed moments and factorizes both covariances.
  static GaussianFit from_parts(Matrix means, Matrix shared_cov,
                                std::vector<std::int64_t> class_counts, Vector global_mean,
                                Matrix global_cov, bool normalized, Shrinkage shrinkage);

  /// Restores a serialized fit without refactorizing.
  static GaussianFit restore(Matrix means, FactorizedCovariance shared, Vector global_mean,
                             FactorizedCovariance global, std::vector<std::int64_t> class_counts,
                             bool normalized);

  Index n_classes() const { return means_.rows(); }
  Index dim() const { return means_.cols(); }
  std::int64_t n_samples() const;

  const Matrix& means() const { return means_; }
  const Matrix& shared_cov() const { return shared_.cov; }
  const Matrix& shared_factor() const { return shared_.factor; }
  double shrinkage_eps() const { return shared_.eps; }
  double shared_ridge() const { return shared_.ridge; }
  const Vector& global_mean() const { return global_mean_; }
  const Matrix& global_cov() const { return global_.cov; }
  const Matrix& global_factor() const { return global_.factor; }
  double global_shrinkage_eps() const { return global_.eps; }
  double global_ridge() const { return global_.ridge; }
  const std::vector<std::int64_t>& class_counts() const { return class_counts_; }
  bool normalized() const { return normalized_; }

  /// Shared covariance as actually used for scoring: Sigma + eps * (tr/d) * I.
  Matrix shrunk_shared_cov() const;
  Matrix shrunk_global_cov() const;

 private:
  GaussianFit() = default;

  Matrix means_;
  FactorizedCovariance shared_;
  Vector global_mean_;
  FactorizedCovariance global_;
  std::vector<std::int64_t> class_counts_;
  bool normalized_ = false;
};

GaussianFit fit(const FeatureMatrix& features, const Labels& labels, const FitOptions& options);

/// Two passes over the source in fixed 2048-row blocks. Block partial sums are
/// reduced in block order, so the result does not depend on the thread count.
GaussianFit fit(const RowSource& source, const Labels& labels, const FitOptions& options);

/// L^{-1}(x - mu); its squared norm is the Mahalanobis distance under the shrunk covariance.
Vector whiten(const GaussianFit& fit, const Vector& x, Center center);

/// Applies L^{-1} to every row of x (x L^{-T}). Callers center x first.
Matrix whiten_rows(const Matrix& lower_factor, const Matrix& x);

/// n draws of mean + L z, z ~ N(0, I) from Rng(seed).
FeatureMatrix sample_gaussian(const Vector& mean, const Matrix& lower_factor, Index n,
                              std::uint64_t seed);

FeatureMatrix sample_from_fit(const GaussianFit& fit, Index class_index, Index n,
                              std::uint64_t seed);

}  // namespace mahakit
