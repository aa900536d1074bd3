#include "mahakit/scorers.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <utility>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "mahakit/parallel.hpp"
#include "mahakit/rng.hpp"

namespace mahakit {
namespace {

constexpr double kProbabilityFloor = 1e-12;
constexpr Index kScoreBlockRows = 256;

void for_row_blocks(Index rows, Index block, const std::function<void(Index, Index)>& body) {
  const Index n_blocks = (rows + block - 1) / block;
  parallel_for(static_cast<std::size_t>(n_blocks), [&](std::size_t b) {
    const Index begin = static_cast<Index>(b) * block;
    body(begin, std::min(block, rows - begin));
  });
}

void check_dim(Index expected, Index actual, const char* what) {
  if (expected != actual) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + ": expected dimension " +
                                                  std::to_string(expected) + ", got " +
                                                  std::to_string(actual));
  }
}

void check_fit_variant(const GaussianFit& fit, bool normalized_variant) {
  if (fit.normalized() != normalized_variant) {
    throw Error(ErrorCode::FitMismatch,
                normalized_variant ? "normalized scorer requires a fit on normalized features"
                                   : "plain scorer requires a fit on unnormalized features");
  }
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

Eigen::RowVectorXd softmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  Eigen::RowVectorXd e = (row.array() - m).exp();
  return e / e.sum();
}

ScoreVector make_scores(Method method, Vector values) {
  ScoreVector out;
  out.method = method;
  out.values = std::move(values);
  return out;
}

Matrix head_logits(const ModelHead& head, const FeatureMatrix& test) {
  check_dim(head.dim(), test.dim(), "head");
  return head.logits(test.values());
}

Matrix normalized_rows(const Matrix& m) {
  Matrix out = m;
  l2_normalize_rows(out);
  return out;
}

// Percentile with linear interpolation between order statistics at p * (n - 1).
double interpolated_quantile(std::vector<double> values, double q) {
  const auto n = values.size();
  const double position = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(position));
  const double frac = position - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double lo_value = values[lo];
  if (frac == 0.0 || lo + 1 >= n) return lo_value;
  const double hi_value =
      *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return lo_value + frac * (hi_value - lo_value);
}

// Eigen-decomposition of a symmetric matrix with eigenpairs in descending
// eigenvalue order; ties keep the solver's original index order.
struct SortedEigen {
  Vector values;
  Matrix vectors;  // columns
};

SortedEigen sorted_eigen(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Eigen::MatrixXd(symmetric),
                                                        Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::NumericalFailure, "symmetric eigendecomposition did not converge");
  }
  const Index d = symmetric.rows();
  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  const auto& ev = solver.eigenvalues();
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return ev[a] > ev[b]; });
  SortedEigen out{Vector(d), Matrix(d, d)};
  for (Index k = 0; k < d; ++k) {
    out.values[k] = ev[order[k]];
    out.vectors.col(k) = solver.eigenvectors().col(order[k]);
  }
  return out;
}

Matrix gram(const Matrix& rows) {
  Matrix g = Matrix::Zero(rows.cols(), rows.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose());
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

}  // namespace

// ---- Method names ------------------------------------------------------------

std::string_view method_name(Method method) {
  switch (method) {
    case Method::MSP: return "msp";
    case Method::MaxLogit: return "maxlogit";
    case Method::Energy: return "energy";
    case Method::EnergyReact: return "react";
    case Method::KLMatching: return "klm";
    case Method::KNN: return "knn";
    case Method::ViM: return "vim";
    case Method::Cosine: return "cosine";
    case Method::SSC: return "ssc";
    case Method::AshS: return "ash";
    case Method::NeCo: return "neco";
    case Method::GMM: return "gmm";
    case Method::NNGuide: return "nnguide";
    case Method::Maha: return "maha";
    case Method::MahaPP: return "maha++";
    case Method::RelMaha: return "rmaha";
    case Method::RelMahaPP: return "rmaha++";
  }
  return "unknown";
}

std::vector<Method> all_methods() {
  return {Method::MSP,    Method::MaxLogit, Method::Energy, Method::EnergyReact, Method::KLMatching,
          Method::KNN,    Method::ViM,      Method::Cosine, Method::SSC,         Method::AshS,
          Method::NeCo,   Method::GMM,      Method::NNGuide, Method::Maha,       Method::MahaPP,
          Method::RelMaha, Method::RelMahaPP};
}

Method parse_method(std::string_view name) {
  for (Method m : all_methods()) {
    if (method_name(m) == name) return m;
  }
  if (name == "ml" || name == "mls") return Method::MaxLogit;
  if (name == "e+r" || name == "energy+react") return Method::EnergyReact;
  if (name == "ash-s") return Method::AshS;
  throw Error(ErrorCode::UnknownMethod, "unknown method '" + std::string(name) + "'");
}

bool uses_normalized_fit(Method method) {
  return method == Method::MahaPP || method == Method::RelMahaPP;
}

bool uses_plain_fit(Method method) {
  return method == Method::Maha || method == Method::RelMaha || method == Method::GMM ||
         method == Method::Cosine;
}

void ScorerConfig::validate() const {
  auto fraction = [](double v, const char* name) {
    if (!(v > 0.0 && v <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, std::string(name) + " must lie in (0, 1]");
    }
  };
  fraction(react_clip_quantile, "react_clip_quantile");
  fraction(nnguide_subset_fraction, "nnguide_subset_fraction");
  fraction(neco_explained_variance, "neco_explained_variance");
  if (knn_k < 1) throw Error(ErrorCode::InvalidConfig, "knn_k must be >= 1");
  if (nnguide_k < 1) throw Error(ErrorCode::InvalidConfig, "nnguide_k must be >= 1");
  if (vim_dim && *vim_dim < 1) throw Error(ErrorCode::InvalidConfig, "vim_dim must be >= 1");
  if (!(ash_prune_percentile >= 0.0 && ash_prune_percentile <= 100.0)) {
    throw Error(ErrorCode::InvalidConfig, "ash_prune_percentile must lie in [0, 100]");
  }
  if (!std::isfinite(ssc_scale) || ssc_scale <= 0.0) {
    throw Error(ErrorCode::InvalidConfig, "ssc_scale must be positive");
  }
}

ModelHead::ModelHead(Matrix weights, Vector bias) : weights_(std::move(weights)), bias_(std::move(bias)) {
  if (weights_.rows() < 1 || weights_.cols() < 1 || bias_.size() != weights_.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "head weights must be C x d with a length-C bias");
  }
  if (!weights_.allFinite() || !bias_.allFinite()) {
    throw Error(ErrorCode::NonFinite, "head contains non-finite values");
  }
}

Matrix ModelHead::logits(const Matrix& features) const {
  Matrix out = features * weights_.transpose();
  out.rowwise() += bias_.transpose();
  return out;
}

// ---- Gaussian scorers ----------------------------------------------------------

ScoreVector score_maha(const GaussianFit& fit, const FeatureMatrix& test, bool normalized_variant) {
  check_fit_variant(fit, normalized_variant);
  check_dim(fit.dim(), test.dim(), "score_maha");
  const Matrix normalized = normalized_variant ? normalized_rows(test.values()) : Matrix();
  const Matrix& x = normalized_variant ? normalized : test.values();

  const Matrix white_means = whiten_rows(fit.shared_factor(), fit.means());
  Vector scores(x.rows());
  for_row_blocks(x.rows(), kScoreBlockRows, [&](Index begin, Index count) {
    const Matrix y = whiten_rows(fit.shared_factor(), x.middleRows(begin, count));
    for (Index i = 0; i < count; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Index c = 0; c < white_means.rows(); ++c) {
        best = std::min(best, (y.row(i) - white_means.row(c)).squaredNorm());
      }
      scores[begin + i] = -best;
    }
  });
  ScoreVector out =
      make_scores(normalized_variant ? Method::MahaPP : Method::Maha, std::move(scores));
  out.provenance = {fit.shrinkage_eps(), fit.normalized()};
  return out;
}

ScoreVector score_rel_maha(const GaussianFit& fit, const FeatureMatrix& test,
                           bool normalized_variant) {
  check_fit_variant(fit, normalized_variant);
  check_dim(fit.dim(), test.dim(), "score_rel_maha");
  const Matrix normalized = normalized_variant ? normalized_rows(test.values()) : Matrix();
  const Matrix& x = normalized_variant ? normalized : test.values();

  const Matrix white_means = whiten_rows(fit.shared_factor(), fit.means());
  Vector scores(x.rows());
  for_row_blocks(x.rows(), kScoreBlockRows, [&](Index begin, Index count) {
    const Matrix block = x.middleRows(begin, count);
    const Matrix y = whiten_rows(fit.shared_factor(), block);
    const Matrix centered_global = block.rowwise() - fit.global_mean().transpose();
    const Matrix yg = whiten_rows(fit.global_factor(), centered_global);
    for (Index i = 0; i < count; ++i) {
      const double global_distance = yg.row(i).squaredNorm();
      double best = std::numeric_limits<double>::infinity();
      for (Index c = 0; c < white_means.rows(); ++c) {
        best = std::min(best, (y.row(i) - white_means.row(c)).squaredNorm() - global_distance);
      }
      scores[begin + i] = -best;
    }
  });
  ScoreVector out =
      make_scores(normalized_variant ? Method::RelMahaPP : Method::RelMaha, std::move(scores));
  out.provenance = {fit.shrinkage_eps(), fit.normalized()};
  return out;
}

// ---- Logit scorers -------------------------------------------------------------

ScoreVector score_msp(const Matrix& logits) {
  Vector scores(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    scores[i] = 1.0 / (logits.row(i).array() - m).exp().sum();
  }
  return make_scores(Method::MSP, std::move(scores));
}

ScoreVector score_maxlogit(const Matrix& logits) {
  return make_scores(Method::MaxLogit, logits.rowwise().maxCoeff());
}

ScoreVector score_energy(const Matrix& logits) {
  Vector scores(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) scores[i] = log_sum_exp(logits.row(i));
  return make_scores(Method::Energy, std::move(scores));
}

ScoreVector score_msp(const ModelHead& head, const FeatureMatrix& test) {
  return score_msp(head_logits(head, test));
}

ScoreVector score_maxlogit(const ModelHead& head, const FeatureMatrix& test) {
  return score_maxlogit(head_logits(head, test));
}

ScoreVector score_energy(const ModelHead& head, const FeatureMatrix& test) {
  return score_energy(head_logits(head, test));
}

double react_threshold(const FeatureMatrix& train, double quantile) {
  if (train.rows() < 1) throw Error(ErrorCode::MissingTrain, "ReAct needs train activations");
  if (!(quantile > 0.0 && quantile <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "react quantile must lie in (0, 1]");
  }
  const Matrix& v = train.values();
  return interpolated_quantile(std::vector<double>(v.data(), v.data() + v.size()), quantile);
}

ScoreVector score_energy_react(const ModelHead& head, const FeatureMatrix& test, double clip) {
  check_dim(head.dim(), test.dim(), "score_energy_react");
  ScoreVector out = score_energy(head.logits(test.values().cwiseMin(clip)));
  out.method = Method::EnergyReact;
  return out;
}

ScoreVector score_energy_react(const ModelHead& head, const FeatureMatrix& test,
                               const FeatureMatrix& train, double quantile) {
  return score_energy_react(head, test, react_threshold(train, quantile));
}

Matrix klm_class_templates(const Matrix& train_logits, const Labels& train_labels) {
  if (static_cast<Index>(train_labels.size()) != train_logits.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "KL matching: labels do not match train logits");
  }
  const Index n_classes = train_logits.cols();
  if (train_labels.n_classes() > n_classes) {
    throw Error(ErrorCode::DimensionMismatch, "KL matching: more label classes than logits");
  }
  Matrix templates = Matrix::Zero(n_classes, n_classes);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (Index i = 0; i < train_logits.rows(); ++i) {
    const auto c = train_labels[static_cast<std::size_t>(i)];
    templates.row(c) += softmax(train_logits.row(i));
    ++counts[static_cast<std::size_t>(c)];
  }
  for (Index c = 0; c < n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw Error(ErrorCode::EmptyClass,
                  "KL matching: class " + std::to_string(c) + " has no train samples");
    }
    templates.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  return templates;
}

ScoreVector score_klm(const Matrix& class_templates, const Matrix& test_logits) {
  check_dim(class_templates.cols(), test_logits.cols(), "score_klm");
  const Matrix log_templates = class_templates.array().max(kProbabilityFloor).log().matrix();
  Vector scores(test_logits.rows());
  for_row_blocks(test_logits.rows(), kScoreBlockRows, [&](Index begin, Index count) {
    Matrix probs(count, test_logits.cols());
    for (Index i = 0; i < count; ++i) {
      probs.row(i) = softmax(test_logits.row(begin + i)).array().max(kProbabilityFloor).matrix();
    }
    const Matrix cross = probs * log_templates.transpose();
    for (Index i = 0; i < count; ++i) {
      const double neg_entropy = (probs.row(i).array() * probs.row(i).array().log()).sum();
      scores[begin + i] = -(neg_entropy - cross.row(i).maxCoeff());
    }
  });
  return make_scores(Method::KLMatching, std::move(scores));
}

ScoreVector score_klm(const ModelHead& head, const FeatureMatrix& train, const Labels& train_labels,
                      const FeatureMatrix& test) {
  return score_klm(klm_class_templates(head_logits(head, train), train_labels),
                   head_logits(head, test));
}

// ---- KNN -----------------------------------------------------------------------

KnnIndex::KnnIndex(const FeatureMatrix& train) : normalized_(normalized_rows(train.values())) {
  if (normalized_.rows() < 1) throw Error(ErrorCode::MissingTrain, "KNN needs train rows");
  squared_norms_ = normalized_.rowwise().squaredNorm();
}

Vector KnnIndex::kth_distance(const FeatureMatrix& queries, Index k) const {
  const Index n = normalized_.rows();
  check_dim(normalized_.cols(), queries.dim(), "knn");
  if (k < 1 || k > n) {
    throw Error(ErrorCode::InvalidConfig, "k = " + std::to_string(k) +
                                              " must lie in [1, " + std::to_string(n) + "]");
  }
  const Matrix q = normalized_rows(queries.values());
  // Gram-based squared distances are exact up to `slack`; candidates within
  // 2 * slack of the approximate k-th value are recomputed from differences.
  const double slack = 64.0 * static_cast<double>(q.cols() + 4) * DBL_EPSILON;
  const Index block = std::clamp<Index>((Index{1} << 22) / std::max<Index>(n, 1), 1, 256);
  Vector out(q.rows());
  for_row_blocks(q.rows(), block, [&](Index begin, Index count) {
    const Matrix dots = q.middleRows(begin, count) * normalized_.transpose();
    std::vector<double> approx(static_cast<std::size_t>(n));
    std::vector<double> exact;
    for (Index i = 0; i < count; ++i) {
      const auto query = q.row(begin + i);
      const double query_norm = query.squaredNorm();
      for (Index j = 0; j < n; ++j) {
        approx[static_cast<std::size_t>(j)] = query_norm + squared_norms_[j] - 2.0 * dots(i, j);
      }
      std::vector<double> scratch = approx;
      std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end());
      const double cutoff = scratch[static_cast<std::size_t>(k - 1)] + 2.0 * slack;
      exact.clear();
      for (Index j = 0; j < n; ++j) {
        if (approx[static_cast<std::size_t>(j)] <= cutoff) {
          exact.push_back((query - normalized_.row(j)).squaredNorm());
        }
      }
      std::nth_element(exact.begin(), exact.begin() + (k - 1), exact.end());
      out[begin + i] = std::sqrt(exact[static_cast<std::size_t>(k - 1)]);
    }
  });
  return out;
}

ScoreVector score_knn(const FeatureMatrix& train, const FeatureMatrix& test, Index k) {
  return make_scores(Method::KNN, -KnnIndex(train).kth_distance(test, k));
}

// ---- ViM -----------------------------------------------------------------------

Index default_vim_dim(Index feature_dim) {
  if (feature_dim >= 2048) return 1000;
  if (feature_dim >= 768) return 512;
  return std::max<Index>(1, std::lround(static_cast<double>(feature_dim) / 2.0));
}

VimModel fit_vim(const ModelHead& head, const FeatureMatrix& train,
                 std::optional<Index> principal_dim) {
  check_dim(head.dim(), train.dim(), "fit_vim");
  if (train.rows() < 1) throw Error(ErrorCode::MissingTrain, "ViM needs train features");
  const Index d = train.dim();
  VimModel model;

  const Eigen::MatrixXd w = head.weights();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(w);
  model.offset = -(cod.pseudoInverse() * head.bias());

  const Matrix offset_train = train.values().rowwise() - model.offset.transpose();
  const SortedEigen eig = sorted_eigen(gram(offset_train));

  Index dim = principal_dim.value_or(default_vim_dim(d));
  const double rank_tol = std::max(eig.values[0], 0.0) * 1e-12;
  const auto rank = static_cast<Index>((eig.values.array() > rank_tol).count());
  if (dim > rank) {
    model.warnings.push_back("DegenerateSpectrum: principal dimension " + std::to_string(dim) +
                             " exceeds train rank " + std::to_string(rank) + "; using " +
                             std::to_string(rank));
    dim = rank;
  }
  model.principal_dim = dim;
  model.residual_basis = eig.vectors.rightCols(d - dim);

  const Vector residuals = (offset_train * model.residual_basis).rowwise().norm();
  const double residual_sum = residuals.sum();
  const double total_norm = offset_train.rowwise().norm().sum();
  const double max_logit_sum = head.logits(train.values()).rowwise().maxCoeff().sum();
  if (residual_sum <= 1e-12 * total_norm) {
    model.alpha = 0.0;
    model.warnings.push_back("train features have no residual outside the principal space; "
                             "virtual logit fixed at 0");
  } else {
    model.alpha = max_logit_sum / residual_sum;
  }
  return model;
}

ScoreVector score_vim(const VimModel& model, const FeatureMatrix& test, const Matrix& test_logits) {
  check_dim(model.offset.size(), test.dim(), "score_vim");
  if (test_logits.rows() != test.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "score_vim: logits rows != test rows");
  }
  const Matrix centered = test.values().rowwise() - model.offset.transpose();
  const Vector residuals = (centered * model.residual_basis).rowwise().norm();
  Vector scores(test.rows());
  for (Index i = 0; i < test.rows(); ++i) {
    const double virtual_logit = model.alpha * residuals[i];
    const double m = std::max(virtual_logit, test_logits.row(i).maxCoeff());
    const double v = std::exp(virtual_logit - m);
    scores[i] = -v / ((test_logits.row(i).array() - m).exp().sum() + v);
  }
  ScoreVector out = make_scores(Method::ViM, std::move(scores));
  out.warnings = model.warnings;
  return out;
}

ScoreVector score_vim(const VimModel& model, const ModelHead& head, const FeatureMatrix& test) {
  return score_vim(model, test, head_logits(head, test));
}

// ---- Cosine / SSC --------------------------------------------------------------

ScoreVector score_cosine(const Matrix& concept_vectors, const FeatureMatrix& test) {
  check_dim(concept_vectors.cols(), test.dim(), "score_cosine");
  const Matrix concepts = normalized_rows(concept_vectors);
  const Matrix x = normalized_rows(test.values());
  return make_scores(Method::Cosine, (x * concepts.transpose()).rowwise().maxCoeff());
}

ScoreVector score_ssc(const ModelHead& head, const FeatureMatrix& test, double scale) {
  check_dim(head.dim(), test.dim(), "score_ssc");
  const Matrix cosines = normalized_rows(test.values()) * normalized_rows(head.weights()).transpose();
  ScoreVector out = score_msp(scale * cosines);
  out.method = Method::SSC;
  return out;
}

// ---- Ash-s ---------------------------------------------------------------------

AshShaped ash_s_shape(const Matrix& features, double prune_percentile) {
  if (!(prune_percentile >= 0.0 && prune_percentile <= 100.0)) {
    throw Error(ErrorCode::InvalidConfig, "prune percentile must lie in [0, 100]");
  }
  AshShaped out{Matrix::Zero(features.rows(), features.cols()), 0};
  for (Index i = 0; i < features.rows(); ++i) {
    const auto row = features.row(i);
    const double threshold = interpolated_quantile(
        std::vector<double>(row.data(), row.data() + row.size()), prune_percentile / 100.0);
    const double sum_before = row.sum();
    Eigen::RowVectorXd kept = (row.array() >= threshold).select(row, 0.0);
    const double sum_after = kept.sum();
    if (sum_after == 0.0) {
      ++out.all_pruned_rows;
      continue;
    }
    const double factor = std::exp(sum_before / sum_after);
    if (!std::isfinite(factor)) {
      throw Error(ErrorCode::NumericalFailure,
                  "Ash-s scaling overflow in row " + std::to_string(i));
    }
    out.features.row(i) = kept * factor;
  }
  return out;
}

ScoreVector score_ash_s(const ModelHead& head, const FeatureMatrix& test, double prune_percentile) {
  check_dim(head.dim(), test.dim(), "score_ash_s");
  AshShaped shaped = ash_s_shape(test.values(), prune_percentile);
  ScoreVector out = score_energy(head.logits(shaped.features));
  out.method = Method::AshS;
  if (shaped.all_pruned_rows > 0) {
    out.warnings.push_back("AllPruned: " + std::to_string(shaped.all_pruned_rows) +
                           " rows lost all activation mass; scored on the bias alone");
  }
  return out;
}

// ---- NeCo ----------------------------------------------------------------------

NecoModel fit_neco(const FeatureMatrix& train, double explained_variance) {
  if (train.rows() < 1) throw Error(ErrorCode::MissingTrain, "NeCo needs train features");
  if (!(explained_variance > 0.0 && explained_variance <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "explained variance must lie in (0, 1]");
  }
  const auto n = static_cast<double>(train.rows());
  NecoModel model;
  model.mean = train.values().colwise().mean().transpose();
  const Matrix centered = train.values().rowwise() - model.mean.transpose();
  model.scale = (centered.colwise().squaredNorm() / n).cwiseSqrt().transpose();
  for (Index k = 0; k < model.scale.size(); ++k) {
    if (!(model.scale[k] > 1e-12)) model.scale[k] = 1.0;
  }
  const Matrix standardized = centered.array().rowwise() / model.scale.transpose().array();
  const SortedEigen eig = sorted_eigen(gram(standardized) / n);

  const Index d = train.dim();
  Index keep = d;
  if (explained_variance < 1.0) {
    const double total = eig.values.cwiseMax(0.0).sum();
    double running = 0.0;
    for (Index k = 0; k < d; ++k) {
      running += std::max(eig.values[k], 0.0);
      if (running >= explained_variance * total) {
        keep = k + 1;
        break;
      }
    }
  }
  model.principal_basis = eig.vectors.leftCols(keep);
  return model;
}

ScoreVector score_neco(const NecoModel& model, const FeatureMatrix& test, const Matrix& test_logits) {
  check_dim(model.mean.size(), test.dim(), "score_neco");
  if (test_logits.rows() != test.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "score_neco: logits rows != test rows");
  }
  const Matrix z = (test.values().rowwise() - model.mean.transpose()).array().rowwise() /
                   model.scale.transpose().array();
  const Vector projected = (z * model.principal_basis).rowwise().norm();
  const Vector full = z.rowwise().norm();
  Vector scores(test.rows());
  for (Index i = 0; i < test.rows(); ++i) {
    const double ratio = full[i] > 0.0 ? projected[i] / full[i] : 1.0;
    scores[i] = ratio * test_logits.row(i).maxCoeff();
  }
  return make_scores(Method::NeCo, std::move(scores));
}

ScoreVector score_neco(const NecoModel& model, const ModelHead& head, const FeatureMatrix& test) {
  return score_neco(model, test, head_logits(head, test));
}

// ---- GMM -----------------------------------------------------------------------

GmmModel fit_gmm(const GaussianFit& fit, const PerClassCovariances& per_class, Shrinkage shrinkage) {
  const Index c_count = fit.n_classes();
  const Index d = fit.dim();
  if (static_cast<Index>(per_class.covs.size()) != c_count ||
      per_class.counts.size() != per_class.covs.size()) {
    throw Error(ErrorCode::DimensionMismatch, "per-class covariances do not match the fit");
  }
  const double total = static_cast<double>(
      std::accumulate(per_class.counts.begin(), per_class.counts.end(), std::int64_t{0}));
  const double shared_scale = fit.shared_cov().trace() / static_cast<double>(d);
  GmmModel model;
  model.means = fit.means();
  for (Index c = 0; c < c_count; ++c) {
    const Matrix& cov = per_class.covs[static_cast<std::size_t>(c)];
    check_dim(d, cov.rows(), "fit_gmm");
    double scale = cov.trace() / static_cast<double>(d);
    if (!(scale > 0.0)) scale = shared_scale;
    FactorizedCovariance f = factorize_covariance(cov, shrinkage, scale);
    model.log_normalizers.push_back(-0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
                                    f.factor.diagonal().array().log().sum());
    model.log_weights.push_back(
        std::log(static_cast<double>(per_class.counts[static_cast<std::size_t>(c)]) / total));
    model.eps.push_back(f.eps);
    model.factors.push_back(std::move(f.factor));
  }
  return model;
}

ScoreVector score_gmm(const GmmModel& model, const FeatureMatrix& test) {
  check_dim(model.means.cols(), test.dim(), "score_gmm");
  const Index c_count = model.means.rows();
  Vector scores(test.rows());
  for_row_blocks(test.rows(), kScoreBlockRows, [&](Index begin, Index count) {
    const Matrix block = test.values().middleRows(begin, count);
    Matrix log_density(count, c_count);
    for (Index c = 0; c < c_count; ++c) {
      const Matrix centered = block.rowwise() - model.means.row(c);
      const Matrix y = whiten_rows(model.factors[static_cast<std::size_t>(c)], centered);
      log_density.col(c) = (model.log_weights[static_cast<std::size_t>(c)] +
                            model.log_normalizers[static_cast<std::size_t>(c)] -
                            0.5 * y.rowwise().squaredNorm().array())
                               .matrix();
    }
    for (Index i = 0; i < count; ++i) scores[begin + i] = log_sum_exp(log_density.row(i));
  });
  ScoreVector out = make_scores(Method::GMM, std::move(scores));
  if (!model.eps.empty()) {
    out.provenance.shrinkage_eps = *std::max_element(model.eps.begin(), model.eps.end());
  }
  return out;
}

// ---- NNGuide -------------------------------------------------------------------

std::vector<Index> nnguide_subset(Index n_rows, double fraction, std::uint64_t seed) {
  if (n_rows < 1) throw Error(ErrorCode::MissingTrain, "NNGuide needs train rows");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "subset fraction must lie in (0, 1]");
  }
  const auto take = std::clamp<Index>(
      static_cast<Index>(std::ceil(fraction * static_cast<double>(n_rows) - 1e-9)), 1, n_rows);
  std::vector<Index> indices(static_cast<std::size_t>(n_rows));
  std::iota(indices.begin(), indices.end(), Index{0});
  Rng rng(seed);
  for (Index i = 0; i < take; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n_rows - i)));
    std::swap(indices[static_cast<std::size_t>(i)], indices[static_cast<std::size_t>(j)]);
  }
  indices.resize(static_cast<std::size_t>(take));
  std::sort(indices.begin(), indices.end());
  return indices;
}

ScoreVector score_nnguide(const Matrix& test_logits, const FeatureMatrix& train,
                          const FeatureMatrix& test, double subset_fraction, Index k,
                          std::uint64_t seed) {
  if (test_logits.rows() != test.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "score_nnguide: logits rows != test rows");
  }
  const std::vector<Index> subset = nnguide_subset(train.rows(), subset_fraction, seed);
  Matrix rows(static_cast<Index>(subset.size()), train.dim());
  for (std::size_t i = 0; i < subset.size(); ++i) rows.row(static_cast<Index>(i)) = train.row(subset[i]);
  const Vector distance = KnnIndex(FeatureMatrix(std::move(rows))).kth_distance(test, k);
  const Vector energy = score_energy(test_logits).values;
  Vector scores(test.rows());
  for (Index i = 0; i < test.rows(); ++i) {
    const double similarity = 1.0 - 0.5 * distance[i] * distance[i];
    scores[i] = energy[i] * similarity;
  }
  return make_scores(Method::NNGuide, std::move(scores));
}

ScoreVector score_nnguide(const ModelHead& head, const FeatureMatrix& train,
                          const FeatureMatrix& test, double subset_fraction, Index k,
                          std::uint64_t seed) {
  return score_nnguide(head_logits(head, test), train, test, subset_fraction, k, seed);
}

FeatureMatrix scale_features(const FeatureMatrix& test, double alpha) {
  if (!std::isfinite(alpha)) throw Error(ErrorCode::InvalidConfig, "alpha must be finite");
  return FeatureMatrix(test.values() * alpha);
}

// ---- Unified interface ---------------------------------------------------------

namespace {

using ScoreFn = std::function<ScoreVector(const FeatureMatrix&, const Matrix*)>;

class CalibratedScorer final : public Scorer {
 public:
  CalibratedScorer(Method method, ScoreFn fn) : method_(method), fn_(std::move(fn)) {}
  Method method() const override { return method_; }
  ScoreVector score(const FeatureMatrix& test, const Matrix* test_logits) const override {
    ScoreVector out = fn_(test, test_logits);
    out.method = method_;
    return out;
  }

 private:
  Method method_;
  ScoreFn fn_;
};

const FeatureMatrix& require_train(const ScorerInputs& in, Method m) {
  if (in.train == nullptr || in.train->rows() == 0) {
    throw Error(ErrorCode::MissingTrain,
                std::string(method_name(m)) + " requires train features");
  }
  return *in.train;
}

const Labels& require_labels(const ScorerInputs& in, Method m) {
  if (in.train_labels == nullptr) {
    throw Error(ErrorCode::MissingTrain, std::string(method_name(m)) + " requires train labels");
  }
  return *in.train_labels;
}

const ModelHead& require_head(const ScorerInputs& in, Method m) {
  if (in.head == nullptr) {
    throw Error(ErrorCode::MissingHead,
                std::string(method_name(m)) + " requires classifier weights and bias");
  }
  return *in.head;
}

std::shared_ptr<const GaussianFit> resolve_fit(const ScorerInputs& in, Method m, bool normalized) {
  const GaussianFit* given = normalized ? in.normalized_fit : in.fit;
  if (given != nullptr) {
    check_fit_variant(*given, normalized);
    return std::shared_ptr<const GaussianFit>(std::shared_ptr<void>(), given);
  }
  FitOptions options;
  options.normalize = normalized;
  options.shrinkage = in.shrinkage;
  return std::make_shared<const GaussianFit>(
      fit(require_train(in, m), require_labels(in, m), options));
}

// Test logits come from the head when present, otherwise from the caller.
std::function<Matrix(const FeatureMatrix&, const Matrix*)> logit_resolver(const ScorerInputs& in,
                                                                          Method m) {
  std::optional<ModelHead> head;
  if (in.head != nullptr) head = *in.head;
  const std::string name(method_name(m));
  return [head = std::move(head), name](const FeatureMatrix& test, const Matrix* given) -> Matrix {
    if (head) return head_logits(*head, test);
    if (given == nullptr) {
      throw Error(ErrorCode::MissingHead, name + " requires a head or precomputed logits");
    }
    if (given->rows() != test.rows()) {
      throw Error(ErrorCode::DimensionMismatch, name + ": logits rows != test rows");
    }
    return *given;
  };
}

Matrix train_logits(const ScorerInputs& in, Method m) {
  if (in.head != nullptr) return head_logits(*in.head, require_train(in, m));
  if (in.train_logits != nullptr) return *in.train_logits;
  throw Error(ErrorCode::MissingHead,
              std::string(method_name(m)) + " requires a head or precomputed train logits");
}

}  // namespace

std::unique_ptr<Scorer> make_scorer(const ScorerConfig& config, const ScorerInputs& in) {
  config.validate();
  const Method m = config.method;
  if (in.head != nullptr && in.train_labels != nullptr &&
      in.head->n_classes() < in.train_labels->n_classes()) {
    throw Error(ErrorCode::DimensionMismatch, "head has fewer classes than the train labels");
  }
  ScoreFn fn;
  switch (m) {
    case Method::Maha:
    case Method::MahaPP: {
      const bool normalized = m == Method::MahaPP;
      auto g = resolve_fit(in, m, normalized);
      fn = [g, normalized](const FeatureMatrix& t, const Matrix*) {
        return score_maha(*g, t, normalized);
      };
      break;
    }
    case Method::RelMaha:
    case Method::RelMahaPP: {
      const bool normalized = m == Method::RelMahaPP;
      auto g = resolve_fit(in, m, normalized);
      fn = [g, normalized](const FeatureMatrix& t, const Matrix*) {
        return score_rel_maha(*g, t, normalized);
      };
      break;
    }
    case Method::MSP:
    case Method::MaxLogit:
    case Method::Energy: {
      auto logits = logit_resolver(in, m);
      fn = [logits, m](const FeatureMatrix& t, const Matrix* given) {
        const Matrix l = logits(t, given);
        return m == Method::MSP ? score_msp(l) : m == Method::MaxLogit ? score_maxlogit(l)
                                                                       : score_energy(l);
      };
      break;
    }
    case Method::EnergyReact: {
      ModelHead head = require_head(in, m);
      const double clip = react_threshold(require_train(in, m), config.react_clip_quantile);
      fn = [head, clip](const FeatureMatrix& t, const Matrix*) {
        return score_energy_react(head, t, clip);
      };
      break;
    }
    case Method::KLMatching: {
      Matrix templates = klm_class_templates(train_logits(in, m), require_labels(in, m));
      auto logits = logit_resolver(in, m);
      fn = [templates = std::move(templates), logits](const FeatureMatrix& t, const Matrix* given) {
        return score_klm(templates, logits(t, given));
      };
      break;
    }
    case Method::KNN: {
      auto index = std::make_shared<const KnnIndex>(require_train(in, m));
      const Index k = config.knn_k;
      fn = [index, k](const FeatureMatrix& t, const Matrix*) {
        return make_scores(Method::KNN, -index->kth_distance(t, k));
      };
      break;
    }
    case Method::ViM: {
      const ModelHead& head = require_head(in, m);
      auto model = std::make_shared<const VimModel>(fit_vim(head, require_train(in, m), config.vim_dim));
      auto logits = logit_resolver(in, m);
      fn = [model, logits](const FeatureMatrix& t, const Matrix* given) {
        return score_vim(*model, t, logits(t, given));
      };
      break;
    }
    case Method::Cosine: {
      Matrix concepts = in.fit != nullptr && !in.fit->normalized()
                            ? in.fit->means()
                            : estimate_class_means(require_train(in, m), require_labels(in, m));
      fn = [concepts = std::move(concepts)](const FeatureMatrix& t, const Matrix*) {
        return score_cosine(concepts, t);
      };
      break;
    }
    case Method::SSC: {
      ModelHead head = require_head(in, m);
      const double scale = config.ssc_scale;
      fn = [head, scale](const FeatureMatrix& t, const Matrix*) { return score_ssc(head, t, scale); };
      break;
    }
    case Method::AshS: {
      ModelHead head = require_head(in, m);
      const double p = config.ash_prune_percentile;
      fn = [head, p](const FeatureMatrix& t, const Matrix*) { return score_ash_s(head, t, p); };
      break;
    }
    case Method::NeCo: {
      auto model = std::make_shared<const NecoModel>(
          fit_neco(require_train(in, m), config.neco_explained_variance));
      auto logits = logit_resolver(in, m);
      fn = [model, logits](const FeatureMatrix& t, const Matrix* given) {
        return score_neco(*model, t, logits(t, given));
      };
      break;
    }
    case Method::GMM: {
      auto g = resolve_fit(in, m, false);
      PerClassCovariances computed;
      const PerClassCovariances* per_class = in.per_class;
      if (per_class == nullptr) {
        computed = estimate_per_class_covariances(require_train(in, m), require_labels(in, m),
                                                  g->means());
        per_class = &computed;
      }
      auto model = std::make_shared<const GmmModel>(fit_gmm(*g, *per_class, in.shrinkage));
      fn = [model](const FeatureMatrix& t, const Matrix*) { return score_gmm(*model, t); };
      break;
    }
    case Method::NNGuide: {
      const FeatureMatrix& train = require_train(in, m);
      const std::vector<Index> subset =
          nnguide_subset(train.rows(), config.nnguide_subset_fraction, config.seed);
      Matrix rows(static_cast<Index>(subset.size()), train.dim());
      for (std::size_t i = 0; i < subset.size(); ++i) {
        rows.row(static_cast<Index>(i)) = train.row(subset[i]);
      }
      auto index = std::make_shared<const KnnIndex>(FeatureMatrix(std::move(rows)));
      auto logits = logit_resolver(in, m);
      const Index k = config.nnguide_k;
      fn = [index, logits, k](const FeatureMatrix& t, const Matrix* given) {
        const Vector distance = index->kth_distance(t, k);
        const Vector energy = score_energy(logits(t, given)).values;
        Vector scores(t.rows());
        for (Index i = 0; i < t.rows(); ++i) {
          scores[i] = energy[i] * (1.0 - 0.5 * distance[i] * distance[i]);
        }
        return make_scores(Method::NNGuide, std::move(scores));
      };
      break;
    }
  }
  return std::make_unique<CalibratedScorer>(m, std::move(fn));
}

}  // namespace mahakit
