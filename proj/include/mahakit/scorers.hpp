#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mahakit/gaussian_model.hpp"
#include "mahakit/types.hpp"

namespace mahakit {

// Every scorer follows one convention: larger score = more in-distribution.

enum class Method {
  MSP,
  MaxLogit,
  Energy,
  EnergyReact,
  KLMatching,
  KNN,
  ViM,
  Cosine,
  SSC,
  AshS,
  NeCo,
  GMM,
  NNGuide,
  Maha,
  MahaPP,
  RelMaha,
  RelMahaPP,
};

/// CLI spelling: msp, maxlogit, energy, react, klm, knn, vim, cosine, ssc,
/// ash, neco, gmm, nnguide, maha, maha++, rmaha, rmaha++.
std::string_view method_name(Method method);
Method parse_method(std::string_view name);
std::vector<Method> all_methods();

bool uses_normalized_fit(Method method);
bool uses_plain_fit(Method method);

struct ScorerConfig {
  Method method = Method::Maha;
  Index knn_k = 1000;
  double react_clip_quantile = 0.99;
  double nnguide_subset_fraction = 0.01;
  Index nnguide_k = 10;
  double ash_prune_percentile = 90.0;
  double neco_explained_variance = 0.90;
  std::optional<Index> vim_dim;  // nullopt: 1000 / 512 / round(d/2) by feature width
  double ssc_scale = 1.0;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig for fractions outside (0, 1], counts < 1, or a
  /// percentile outside [0, 100].
  void validate() const;
};

/// Linear classifier head: logits = W x + b with W of shape C x d.
class ModelHead {
 public:
  ModelHead(Matrix weights, Vector bias);

  Index n_classes() const { return weights_.rows(); }
  Index dim() const { return weights_.cols(); }
  const Matrix& weights() const { return weights_; }
  const Vector& bias() const { return bias_; }

  Matrix logits(const Matrix& features) const;

 private:
  Matrix weights_;
  Vector bias_;
};

struct ScoreProvenance {
  std::optional<double> shrinkage_eps;
  bool normalized = false;
};

struct ScoreVector {
  Method method = Method::Maha;
  Vector values;
  ScoreProvenance provenance;
  std::vector<std::string> warnings;

  Index size() const { return values.size(); }
};

// ---- Gaussian scorers -------------------------------------------------------

/// -min_c (x - mu_c)^T (Sigma + ridge I)^{-1} (x - mu_c). With normalized_variant
/// the test rows are l2-normalized first and the fit must be a normalized fit.
ScoreVector score_maha(const GaussianFit& fit, const FeatureMatrix& test, bool normalized_variant);

/// -min_c [d_c(x) - d_global(x)].
ScoreVector score_rel_maha(const GaussianFit& fit, const FeatureMatrix& test,
                           bool normalized_variant);

// ---- Logit scorers ----------------------------------------------------------

ScoreVector score_msp(const Matrix& logits);
ScoreVector score_maxlogit(const Matrix& logits);
ScoreVector score_energy(const Matrix& logits);
ScoreVector score_msp(const ModelHead& head, const FeatureMatrix& test);
ScoreVector score_maxlogit(const ModelHead& head, const FeatureMatrix& test);
ScoreVector score_energy(const ModelHead& head, const FeatureMatrix& test);

/// Empirical quantile of all pooled activations (linear interpolation between
/// order statistics at q * (n - 1)).
double react_threshold(const FeatureMatrix& train, double quantile);
ScoreVector score_energy_react(const ModelHead& head, const FeatureMatrix& test, double clip);
ScoreVector score_energy_react(const ModelHead& head, const FeatureMatrix& test,
                               const FeatureMatrix& train, double quantile = 0.99);

/// Mean softmax vector per class over train rows (C x C).
Matrix klm_class_templates(const Matrix& train_logits, const Labels& train_labels);
ScoreVector score_klm(const Matrix& class_templates, const Matrix& test_logits);
ScoreVector score_klm(const ModelHead& head, const FeatureMatrix& train, const Labels& train_labels,
                      const FeatureMatrix& test);

/// Exact k-nearest-neighbour search over l2-normalized rows.
class KnnIndex {
 public:
  explicit KnnIndex(const FeatureMatrix& train);

  Index size() const { return normalized_.rows(); }

  /// Distance from each normalized query row to its k-th nearest train row.
  Vector kth_distance(const FeatureMatrix& queries, Index k) const;

 private:
  Matrix normalized_;
  Vector squared_norms_;
};

ScoreVector score_knn(const FeatureMatrix& train, const FeatureMatrix& test, Index k);

struct VimModel {
  Vector offset;          // u = -pinv(W) b
  Matrix residual_basis;  // d x (d - D), orthonormal complement of the principal space
  Index principal_dim = 0;
  double alpha = 0.0;
  std::vector<std::string> warnings;
};

/// 1000 for d >= 2048, 512 for 768 <= d < 2048, otherwise round(d / 2).
Index default_vim_dim(Index feature_dim);
VimModel fit_vim(const ModelHead& head, const FeatureMatrix& train,
                 std::optional<Index> principal_dim = std::nullopt);
ScoreVector score_vim(const VimModel& model, const FeatureMatrix& test, const Matrix& test_logits);
ScoreVector score_vim(const VimModel& model, const ModelHead& head, const FeatureMatrix& test);

/// max_c cos(u_c, x) against the given concept vectors (rows).
ScoreVector score_cosine(const Matrix& concept_vectors, const FeatureMatrix& test);

ScoreVector score_ssc(const ModelHead& head, const FeatureMatrix& test, double scale = 1.0);

struct AshShaped {
  Matrix features;
  Index all_pruned_rows = 0;
};
/// Per row: zero activations below the row's own percentile, scale survivors by
/// exp(sum_before / sum_after).
AshShaped ash_s_shape(const Matrix& features, double prune_percentile);
ScoreVector score_ash_s(const ModelHead& head, const FeatureMatrix& test,
                        double prune_percentile = 90.0);

struct NecoModel {
  Vector mean;
  Vector scale;
  Matrix principal_basis;  // d x k in standardized coordinates
};
NecoModel fit_neco(const FeatureMatrix& train, double explained_variance = 0.90);
ScoreVector score_neco(const NecoModel& model, const FeatureMatrix& test, const Matrix& test_logits);
ScoreVector score_neco(const NecoModel& model, const ModelHead& head, const FeatureMatrix& test);

/// Mixture sum_c (N_c/N) N(mu_c, Sigma_c + ridge_c I) with a Cholesky factor per class.
struct GmmModel {
  Matrix means;
  std::vector<Matrix> factors;
  std::vector<double> log_weights;
  std::vector<double> log_normalizers;  // -(d/2) ln 2pi - sum ln L_ii
  std::vector<double> eps;
};
/// Classes whose covariance has zero trace borrow the shared covariance's
/// trace for the ridge scale.
GmmModel fit_gmm(const GaussianFit& fit, const PerClassCovariances& per_class,
                 Shrinkage shrinkage = Shrinkage::automatic());
ScoreVector score_gmm(const GmmModel& model, const FeatureMatrix& test);

/// Sorted row indices of a seeded subsample of ceil(fraction * n) rows.
std::vector<Index> nnguide_subset(Index n_rows, double fraction, std::uint64_t seed);
/// energy(x) * cos-similarity of the k-th nearest normalized subset row.
ScoreVector score_nnguide(const Matrix& test_logits, const FeatureMatrix& train,
                          const FeatureMatrix& test, double subset_fraction, Index k,
                          std::uint64_t seed);
ScoreVector score_nnguide(const ModelHead& head, const FeatureMatrix& train,
                          const FeatureMatrix& test, double subset_fraction = 0.01, Index k = 10,
                          std::uint64_t seed = 0);

FeatureMatrix scale_features(const FeatureMatrix& test, double alpha);

// ---- Unified interface ------------------------------------------------------

/// Everything a scorer may calibrate against. Pointers are borrowed and must
/// outlive make_scorer(); calibration results are owned by the scorer.
struct ScorerInputs {
  const FeatureMatrix* train = nullptr;
  const Labels* train_labels = nullptr;
  const ModelHead* head = nullptr;
  const Matrix* train_logits = nullptr;  // used by logit scorers when no head is given
  const GaussianFit* fit = nullptr;
  const GaussianFit* normalized_fit = nullptr;
  const PerClassCovariances* per_class = nullptr;
  Shrinkage shrinkage = Shrinkage::automatic();
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual Method method() const = 0;

  /// test_logits stands in for a head on logit-based methods; ignored when a
  /// head was supplied at construction.
  virtual ScoreVector score(const FeatureMatrix& test, const Matrix* test_logits = nullptr) const = 0;
};

/// Runs every calibration step once. Missing fits are estimated from train data.
std::unique_ptr<Scorer> make_scorer(const ScorerConfig& config, const ScorerInputs& inputs);

}  // namespace mahakit
