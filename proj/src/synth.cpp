#include "mahakit/synth.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "mahakit/rng.hpp"

namespace mahakit {
namespace {

enum Stream : std::uint64_t {
  kMeans = 1,
  kScales,
  kCovariance,
  kTrain,
  kTest,
  kOodMeans,
  kOodScales,
  kOodSamples,
};

Vector random_unit(Rng& rng, Index d) {
  Vector v(d);
  for (Index j = 0; j < d; ++j) v[j] = rng.normal();
  return v / v.norm();
}

double log_uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

Matrix make_covariance(const SynthSpec& spec) {
  const Index d = spec.dim;
  const double variance = spec.sigma * spec.sigma;
  if (spec.covariance == CovarianceKind::Isotropic) return variance * Matrix::Identity(d, d);
  Rng rng(derive_seed(spec.seed, kCovariance));
  Eigen::MatrixXd g(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) g(i, j) = rng.normal();
  }
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Vector eigenvalues(d);
  for (Index k = 0; k < d; ++k) eigenvalues[k] = log_uniform(rng, 0.1, 1.0);
  eigenvalues *= variance * static_cast<double>(d) / eigenvalues.sum();
  Matrix cov = q * eigenvalues.asDiagonal() * q.transpose();
  return 0.5 * (cov + cov.transpose());
}

void draw_block(Rng& rng, const Vector& mean, double scale, const Matrix& factor,
                const SynthSpec& spec, Matrix& out, Index first_row, Index n) {
  const Index d = spec.dim;
  Vector z(d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) z[j] = rng.normal();
    double sample_scale = scale;
    if (spec.heavy_tail_fraction > 0.0 && rng.uniform() < spec.heavy_tail_fraction) {
      sample_scale *= log_uniform(rng, 1.0, spec.heavy_tail_max);
    }
    out.row(first_row + i) = (sample_scale * (mean + factor * z)).transpose();
  }
}

}  // namespace

void SynthSpec::validate() const {
  if (n_classes < 1 || dim < 1 || train_per_class < 1 || test_per_class < 0 || ood_classes < 0 ||
      ood_per_class < 0) {
    throw Error(ErrorCode::InvalidConfig, "synthetic counts must be positive");
  }
  if (!(mean_radius > 0.0) || !(sigma > 0.0) || !(scale_lo > 0.0) || !(scale_hi > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "synthetic scales must be positive");
  }
  if (scale_lo > scale_hi) throw Error(ErrorCode::InvalidConfig, "scale_lo exceeds scale_hi");
  if (!(heavy_tail_fraction >= 0.0 && heavy_tail_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "heavy_tail_fraction must lie in [0, 1]");
  }
  if (!(heavy_tail_max >= 1.0)) throw Error(ErrorCode::InvalidConfig, "heavy_tail_max must be >= 1");
}

SynthData generate(const SynthSpec& spec) {
  spec.validate();
  const Index c_count = spec.n_classes;
  const Index d = spec.dim;

  Matrix directions(c_count, d);
  {
    Rng rng(derive_seed(spec.seed, kMeans));
    for (Index c = 0; c < c_count; ++c) directions.row(c) = spec.mean_radius * random_unit(rng, d);
  }
  Vector scales(c_count);
  {
    Rng rng(derive_seed(spec.seed, kScales));
    for (Index c = 0; c < c_count; ++c) {
      scales[c] = spec.scale_law == ScaleLaw::Constant ? 1.0
                                                       : log_uniform(rng, spec.scale_lo, spec.scale_hi);
    }
  }
  const Matrix covariance = make_covariance(spec);
  const Matrix factor = Eigen::LLT<Eigen::MatrixXd>(Eigen::MatrixXd(covariance)).matrixL();

  Matrix train(c_count * spec.train_per_class, d);
  std::vector<std::int64_t> train_labels;
  {
    Rng rng(derive_seed(spec.seed, kTrain));
    for (Index c = 0; c < c_count; ++c) {
      draw_block(rng, directions.row(c).transpose(), scales[c], factor, spec, train,
                 c * spec.train_per_class, spec.train_per_class);
      train_labels.insert(train_labels.end(), static_cast<std::size_t>(spec.train_per_class), c);
    }
  }
  Matrix test(c_count * spec.test_per_class, d);
  std::vector<std::int64_t> test_labels;
  {
    Rng rng(derive_seed(spec.seed, kTest));
    for (Index c = 0; c < c_count; ++c) {
      draw_block(rng, directions.row(c).transpose(), scales[c], factor, spec, test,
                 c * spec.test_per_class, spec.test_per_class);
      test_labels.insert(test_labels.end(), static_cast<std::size_t>(spec.test_per_class), c);
    }
  }

  const double min_angle = 2.0 / std::sqrt(static_cast<double>(d));
  Matrix ood_directions(spec.ood_classes, d);
  {
    Rng rng(derive_seed(spec.seed, kOodMeans));
    const Matrix unit_means = directions / spec.mean_radius;
    for (Index o = 0; o < spec.ood_classes; ++o) {
      Vector u;
      for (int attempt = 0;; ++attempt) {
        if (attempt == 100000) {
          throw Error(ErrorCode::InvalidConfig,
                      "cannot place held-out OOD means away from every class mean");
        }
        u = random_unit(rng, d);
        const double max_cos = (unit_means * u).maxCoeff();
        if (std::acos(std::clamp(max_cos, -1.0, 1.0)) >= min_angle) break;
      }
      ood_directions.row(o) = spec.mean_radius * u.transpose();
    }
  }
  Vector ood_scales(spec.ood_classes);
  {
    Rng rng(derive_seed(spec.seed, kOodScales));
    for (Index o = 0; o < spec.ood_classes; ++o) {
      ood_scales[o] = spec.scale_law == ScaleLaw::Constant
                          ? 1.0
                          : log_uniform(rng, spec.scale_lo, spec.scale_hi);
    }
  }
  Matrix ood(spec.ood_classes * spec.ood_per_class, d);
  {
    Rng rng(derive_seed(spec.seed, kOodSamples));
    for (Index o = 0; o < spec.ood_classes; ++o) {
      draw_block(rng, ood_directions.row(o).transpose(), ood_scales[o], factor, spec, ood,
                 o * spec.ood_per_class, spec.ood_per_class);
    }
  }

  // Linear discriminant head for the scaled class means under the shared covariance.
  const Matrix scaled_means = scales.asDiagonal() * directions;
  const Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(covariance)};
  const Matrix weights = llt.solve(Eigen::MatrixXd(scaled_means.transpose())).transpose();
  Vector bias(c_count);
  const double log_prior = -std::log(static_cast<double>(c_count));
  for (Index c = 0; c < c_count; ++c) {
    bias[c] = -0.5 * weights.row(c).dot(scaled_means.row(c)) + log_prior;
  }

  return SynthData{FeatureMatrix(std::move(train)),
                   Labels(std::move(train_labels), c_count),
                   FeatureMatrix(std::move(test)),
                   Labels(std::move(test_labels), c_count),
                   FeatureMatrix(std::move(ood)),
                   ModelHead(weights, bias),
                   std::move(directions),
                   std::move(ood_directions),
                   std::move(scales),
                   std::move(ood_scales),
                   covariance};
}

}  // namespace mahakit
