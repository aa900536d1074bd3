#pragma once

#include <cstdint>
#include <vector>

#include "mahakit/types.hpp"

// Brute-force reference implementations. Everything here is plain loops over
// dense storage and shares no arithmetic with the main library.
namespace mahakit::oracle {

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Matrix& m);
Matrix from_rows(const Rows& rows);

Rows class_means(const Rows& x, const std::vector<std::int64_t>& labels, int n_classes);
Rows shared_covariance(const Rows& x, const std::vector<std::int64_t>& labels, const Rows& means);
std::vector<Rows> per_class_covariances(const Rows& x, const std::vector<std::int64_t>& labels,
                                        const Rows& means);
std::vector<double> global_mean(const Rows& x);
Rows global_covariance(const Rows& x);

/// Gauss-Jordan with partial pivoting.
Rows inverse(const Rows& a);
double determinant(const Rows& a);
Rows cholesky(const Rows& a);

struct EigenPairs {
  std::vector<double> values;  // descending
  Rows vectors;                // vectors[k] is the k-th eigenvector
};
/// Cyclic Jacobi rotations for symmetric matrices.
EigenPairs jacobi_eigen(const Rows& a);

/// Moore-Penrose pseudo-inverse via the eigen-decomposition of A^T A.
Rows pinv(const Rows& a);

double quadratic_form(const std::vector<double>& v, const Rows& m);

/// Shrunk covariance: cov + eps * (tr(cov) / d) * I.
Rows shrink(const Rows& cov, double eps);

// ---- Scorers -------------------------------------------------------------------

std::vector<double> mahalanobis(const Matrix& train, const std::vector<std::int64_t>& labels,
                                const Matrix& test, double eps, bool normalized);
std::vector<double> relative_mahalanobis(const Matrix& train, const std::vector<std::int64_t>& labels,
                                         const Matrix& test, double eps, double global_eps,
                                         bool normalized);

Rows logits(const Matrix& w, const Vector& b, const Rows& x);
std::vector<double> msp(const Rows& logits);
std::vector<double> maxlogit(const Rows& logits);
std::vector<double> energy(const Rows& logits);
std::vector<double> energy_react(const Matrix& w, const Vector& b, const Matrix& train,
                                 const Matrix& test, double quantile);
std::vector<double> kl_matching(const Rows& train_logits, const std::vector<std::int64_t>& labels,
                                const Rows& test_logits);
std::vector<double> knn(const Matrix& train, const Matrix& test, int k);
std::vector<double> vim(const Matrix& w, const Vector& b, const Matrix& train, const Matrix& test,
                        int principal_dim);
std::vector<double> cosine(const Matrix& concepts, const Matrix& test);
std::vector<double> ssc(const Matrix& w, const Matrix& test, double scale);
std::vector<double> ash_s(const Matrix& w, const Vector& b, const Matrix& test, double percentile);
std::vector<double> neco(const Matrix& w, const Vector& b, const Matrix& train, const Matrix& test,
                         double explained_variance);
/// Per-class full covariances shrunk with eps[c] times their own trace / d.
std::vector<double> gmm(const Matrix& train, const std::vector<std::int64_t>& labels,
                        const Matrix& test, const std::vector<double>& eps);
std::vector<double> nnguide(const Matrix& w, const Vector& b, const Matrix& train,
                            const std::vector<Index>& subset, const Matrix& test, int k);

// ---- Metrics and diagnostics ----------------------------------------------------

double pair_count_auroc(const std::vector<double>& id, const std::vector<double>& ood);

struct MonteCarlo {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// E_u[(u^T A u)^2] for u uniform on the unit sphere (normalized Gaussians).
MonteCarlo mc_sphere_average(const Matrix& a, std::int64_t n_draws, std::uint64_t seed);

struct MonteCarloMoments {
  MonteCarlo mean;      // of ||X||^2
  MonteCarlo variance;  // of ||X||^2
};
MonteCarloMoments mc_norm_moments(const Vector& mu, const Matrix& sigma, std::int64_t n_draws,
                                  std::uint64_t seed);

}  // namespace mahakit::oracle
