#include "mahakit/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace mahakit::oracle {
namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec unit(const Vec& v) {
  const double n = std::sqrt(dot(v, v));
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

Rows unit_rows(const Rows& x) {
  Rows out;
  for (const auto& r : x) out.push_back(unit(r));
  return out;
}

Vec subtract(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

double trace(const Rows& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) t += a[i][i];
  return t;
}

int class_count(const std::vector<std::int64_t>& labels) {
  return static_cast<int>(*std::max_element(labels.begin(), labels.end())) + 1;
}

Vec row_of(const Matrix& m, Index i) {
  Vec out(static_cast<std::size_t>(m.cols()));
  for (Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

double log_sum_exp(const Vec& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Vec softmax(const Vec& v) {
  const double lse = log_sum_exp(v);
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i] - lse);
  return out;
}

double sorted_quantile(Vec values, double q) {
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double max_of(const Vec& v) { return *std::max_element(v.begin(), v.end()); }

}  // namespace

Rows to_rows(const Matrix& m) {
  Rows out;
  for (Index i = 0; i < m.rows(); ++i) out.push_back(row_of(m, i));
  return out;
}

Matrix from_rows(const Rows& rows) {
  Matrix out(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return out;
}

Rows class_means(const Rows& x, const std::vector<std::int64_t>& labels, int n_classes) {
  const std::size_t d = x[0].size();
  Rows sums(static_cast<std::size_t>(n_classes), Vec(d, 0.0));
  std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    counts[c] += 1.0;
    for (std::size_t j = 0; j < d; ++j) sums[c][j] += x[i][j];
  }
  for (std::size_t c = 0; c < sums.size(); ++c) {
    for (std::size_t j = 0; j < d; ++j) sums[c][j] /= counts[c];
  }
  return sums;
}

Rows shared_covariance(const Rows& x, const std::vector<std::int64_t>& labels, const Rows& means) {
  const std::size_t d = x[0].size();
  Rows cov(d, Vec(d, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Vec diff = subtract(x[i], means[static_cast<std::size_t>(labels[i])]);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a][b] += diff[a] * diff[b];
    }
  }
  for (auto& r : cov) {
    for (double& v : r) v /= static_cast<double>(x.size());
  }
  return cov;
}

std::vector<Rows> per_class_covariances(const Rows& x, const std::vector<std::int64_t>& labels,
                                        const Rows& means) {
  const std::size_t d = x[0].size();
  std::vector<Rows> covs(means.size(), Rows(d, Vec(d, 0.0)));
  std::vector<double> counts(means.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    counts[c] += 1.0;
    const Vec diff = subtract(x[i], means[c]);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) covs[c][a][b] += diff[a] * diff[b];
    }
  }
  for (std::size_t c = 0; c < covs.size(); ++c) {
    for (auto& r : covs[c]) {
      for (double& v : r) v /= counts[c];
    }
  }
  return covs;
}

Vec global_mean(const Rows& x) {
  return class_means(x, std::vector<std::int64_t>(x.size(), 0), 1)[0];
}

Rows global_covariance(const Rows& x) {
  const std::vector<std::int64_t> zeros(x.size(), 0);
  return shared_covariance(x, zeros, class_means(x, zeros, 1));
}

Rows inverse(const Rows& a) {
  const std::size_t n = a.size();
  Rows m = a;
  Rows inv(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    }
    if (m[pivot][col] == 0.0) throw std::runtime_error("oracle: singular matrix");
    std::swap(m[pivot], m[col]);
    std::swap(inv[pivot], inv[col]);
    const double p = m[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      m[col][j] /= p;
      inv[col][j] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        m[r][j] -= f * m[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

double determinant(const Rows& a) {
  const std::size_t n = a.size();
  Rows m = a;
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    }
    if (m[pivot][col] == 0.0) return 0.0;
    if (pivot != col) {
      std::swap(m[pivot], m[col]);
      det = -det;
    }
    det *= m[col][col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m[r][col] / m[col][col];
      for (std::size_t j = col; j < n; ++j) m[r][j] -= f * m[col][j];
    }
  }
  return det;
}

Rows cholesky(const Rows& a) {
  const std::size_t n = a.size();
  Rows l(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      if (i == j) {
        if (s <= 0.0) throw std::runtime_error("oracle: matrix not positive definite");
        l[i][i] = std::sqrt(s);
      } else {
        l[i][j] = s / l[j][j];
      }
    }
  }
  return l;
}

EigenPairs jacobi_eigen(const Rows& a) {
  const std::size_t n = a.size();
  Rows m = a;
  Rows v(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += m[p][q] * m[p][q];
    }
    if (off < 1e-300) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (m[p][q] == 0.0) continue;
        const double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m[k][p];
          const double mkq = m[k][q];
          m[k][p] = c * mkp - s * mkq;
          m[k][q] = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m[p][k];
          const double mqk = m[q][k];
          m[p][k] = c * mpk - s * mqk;
          m[q][k] = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p];
          const double vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return m[x][x] > m[y][y]; });
  EigenPairs out;
  for (std::size_t k : order) {
    out.values.push_back(m[k][k]);
    Vec col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = v[i][k];
    out.vectors.push_back(col);
  }
  return out;
}

Rows pinv(const Rows& a) {
  const std::size_t rows = a.size();
  const std::size_t cols = a[0].size();
  Rows ata(cols, Vec(cols, 0.0));
  for (std::size_t i = 0; i < cols; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t k = 0; k < rows; ++k) ata[i][j] += a[k][i] * a[k][j];
    }
  }
  const EigenPairs e = jacobi_eigen(ata);
  const double tol = std::max(e.values[0], 0.0) * 1e-10;
  Rows inv_ata(cols, Vec(cols, 0.0));
  for (std::size_t k = 0; k < cols; ++k) {
    if (e.values[k] <= tol) continue;
    for (std::size_t i = 0; i < cols; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        inv_ata[i][j] += e.vectors[k][i] * e.vectors[k][j] / e.values[k];
      }
    }
  }
  Rows out(cols, Vec(rows, 0.0));
  for (std::size_t i = 0; i < cols; ++i) {
    for (std::size_t j = 0; j < rows; ++j) {
      for (std::size_t k = 0; k < cols; ++k) out[i][j] += inv_ata[i][k] * a[j][k];
    }
  }
  return out;
}

double quadratic_form(const Vec& v, const Rows& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) s += v[i] * m[i][j] * v[j];
  }
  return s;
}

Rows shrink(const Rows& cov, double eps) {
  Rows out = cov;
  const double ridge = eps * trace(cov) / static_cast<double>(cov.size());
  for (std::size_t i = 0; i < cov.size(); ++i) out[i][i] += ridge;
  return out;
}

std::vector<double> mahalanobis(const Matrix& train, const std::vector<std::int64_t>& labels,
                                const Matrix& test, double eps, bool normalized) {
  Rows x = to_rows(train);
  Rows t = to_rows(test);
  if (normalized) {
    x = unit_rows(x);
    t = unit_rows(t);
  }
  const Rows means = class_means(x, labels, class_count(labels));
  const Rows precision = inverse(shrink(shared_covariance(x, labels, means), eps));
  std::vector<double> out;
  for (const auto& row : t) {
    double best = INFINITY;
    for (const auto& mu : means) best = std::min(best, quadratic_form(subtract(row, mu), precision));
    out.push_back(-best);
  }
  return out;
}

std::vector<double> relative_mahalanobis(const Matrix& train, const std::vector<std::int64_t>& labels,
                                         const Matrix& test, double eps, double global_eps,
                                         bool normalized) {
  Rows x = to_rows(train);
  Rows t = to_rows(test);
  if (normalized) {
    x = unit_rows(x);
    t = unit_rows(t);
  }
  const Rows means = class_means(x, labels, class_count(labels));
  const Rows precision = inverse(shrink(shared_covariance(x, labels, means), eps));
  const Vec mu_global = global_mean(x);
  const Rows precision_global = inverse(shrink(global_covariance(x), global_eps));
  std::vector<double> out;
  for (const auto& row : t) {
    const double dg = quadratic_form(subtract(row, mu_global), precision_global);
    double best = INFINITY;
    for (const auto& mu : means) {
      best = std::min(best, quadratic_form(subtract(row, mu), precision) - dg);
    }
    out.push_back(-best);
  }
  return out;
}

Rows logits(const Matrix& w, const Vector& b, const Rows& x) {
  Rows out;
  for (const auto& row : x) {
    Vec o(static_cast<std::size_t>(w.rows()));
    for (Index c = 0; c < w.rows(); ++c) {
      double s = b[c];
      for (Index j = 0; j < w.cols(); ++j) s += w(c, j) * row[static_cast<std::size_t>(j)];
      o[static_cast<std::size_t>(c)] = s;
    }
    out.push_back(o);
  }
  return out;
}

std::vector<double> msp(const Rows& logits) {
  std::vector<double> out;
  for (const auto& o : logits) out.push_back(max_of(softmax(o)));
  return out;
}

std::vector<double> maxlogit(const Rows& logits) {
  std::vector<double> out;
  for (const auto& o : logits) out.push_back(max_of(o));
  return out;
}

std::vector<double> energy(const Rows& logits) {
  std::vector<double> out;
  for (const auto& o : logits) out.push_back(log_sum_exp(o));
  return out;
}

std::vector<double> energy_react(const Matrix& w, const Vector& b, const Matrix& train,
                                 const Matrix& test, double quantile) {
  Vec pooled;
  for (Index i = 0; i < train.rows(); ++i) {
    for (Index j = 0; j < train.cols(); ++j) pooled.push_back(train(i, j));
  }
  const double clip = sorted_quantile(pooled, quantile);
  Rows t = to_rows(test);
  for (auto& row : t) {
    for (double& v : row) v = v > clip ? clip : v;
  }
  return energy(logits(w, b, t));
}

std::vector<double> kl_matching(const Rows& train_logits, const std::vector<std::int64_t>& labels,
                                const Rows& test_logits) {
  const std::size_t c_count = train_logits[0].size();
  Rows templates(c_count, Vec(c_count, 0.0));
  std::vector<double> counts(c_count, 0.0);
  for (std::size_t i = 0; i < train_logits.size(); ++i) {
    const Vec p = softmax(train_logits[i]);
    const auto c = static_cast<std::size_t>(labels[i]);
    counts[c] += 1.0;
    for (std::size_t k = 0; k < c_count; ++k) templates[c][k] += p[k];
  }
  for (std::size_t c = 0; c < c_count; ++c) {
    for (double& v : templates[c]) v = std::max(v / counts[c], 1e-12);
  }
  std::vector<double> out;
  for (const auto& o : test_logits) {
    Vec p = softmax(o);
    for (double& v : p) v = std::max(v, 1e-12);
    double best = INFINITY;
    for (std::size_t c = 0; c < c_count; ++c) {
      double kl = 0.0;
      for (std::size_t k = 0; k < c_count; ++k) kl += p[k] * std::log(p[k] / templates[c][k]);
      best = std::min(best, kl);
    }
    out.push_back(-best);
  }
  return out;
}

std::vector<double> knn(const Matrix& train, const Matrix& test, int k) {
  const Rows x = unit_rows(to_rows(train));
  std::vector<double> out;
  for (const auto& q : unit_rows(to_rows(test))) {
    Vec distances;
    for (const auto& r : x) {
      const Vec diff = subtract(q, r);
      distances.push_back(std::sqrt(dot(diff, diff)));
    }
    std::sort(distances.begin(), distances.end());
    out.push_back(-distances[static_cast<std::size_t>(k - 1)]);
  }
  return out;
}

std::vector<double> vim(const Matrix& w, const Vector& b, const Matrix& train, const Matrix& test,
                        int principal_dim) {
  const Rows w_pinv = pinv(to_rows(w));
  const std::size_t d = static_cast<std::size_t>(w.cols());
  Vec u(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (Index c = 0; c < w.rows(); ++c) u[i] -= w_pinv[i][static_cast<std::size_t>(c)] * b[c];
  }
  Rows f = to_rows(train);
  for (auto& row : f) row = subtract(row, u);
  Rows gram(d, Vec(d, 0.0));
  for (const auto& row : f) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t c = 0; c < d; ++c) gram[a][c] += row[a] * row[c];
    }
  }
  const EigenPairs e = jacobi_eigen(gram);
  auto residual = [&](const Vec& h) {
    Vec r = h;
    for (int k = 0; k < principal_dim; ++k) {
      const double coef = dot(e.vectors[static_cast<std::size_t>(k)], h);
      for (std::size_t j = 0; j < d; ++j) r[j] -= coef * e.vectors[static_cast<std::size_t>(k)][j];
    }
    return std::sqrt(dot(r, r));
  };
  double max_logit_sum = 0.0;
  double residual_sum = 0.0;
  const Rows train_logits = logits(w, b, to_rows(train));
  for (std::size_t i = 0; i < f.size(); ++i) {
    max_logit_sum += max_of(train_logits[i]);
    residual_sum += residual(f[i]);
  }
  const double alpha = max_logit_sum / residual_sum;
  const Rows t = to_rows(test);
  const Rows test_logits = logits(w, b, t);
  std::vector<double> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    Vec extended = test_logits[i];
    extended.push_back(alpha * residual(subtract(t[i], u)));
    out.push_back(-softmax(extended).back());
  }
  return out;
}

std::vector<double> cosine(const Matrix& concepts, const Matrix& test) {
  const Rows c = to_rows(concepts);
  std::vector<double> out;
  for (const auto& x : to_rows(test)) {
    double best = -INFINITY;
    for (const auto& u : c) best = std::max(best, dot(u, x) / std::sqrt(dot(u, u) * dot(x, x)));
    out.push_back(best);
  }
  return out;
}

std::vector<double> ssc(const Matrix& w, const Matrix& test, double scale) {
  const Rows rows = to_rows(w);
  std::vector<double> out;
  for (const auto& x : to_rows(test)) {
    Vec cosines;
    for (const auto& r : rows) cosines.push_back(scale * dot(r, x) / std::sqrt(dot(r, r) * dot(x, x)));
    out.push_back(max_of(softmax(cosines)));
  }
  return out;
}

std::vector<double> ash_s(const Matrix& w, const Vector& b, const Matrix& test, double percentile) {
  Rows shaped;
  for (const auto& x : to_rows(test)) {
    const double threshold = sorted_quantile(x, percentile / 100.0);
    double before = 0.0;
    double after = 0.0;
    Vec kept(x.size(), 0.0);
    for (std::size_t j = 0; j < x.size(); ++j) {
      before += x[j];
      if (x[j] >= threshold) {
        kept[j] = x[j];
        after += x[j];
      }
    }
    if (after == 0.0) {
      shaped.push_back(Vec(x.size(), 0.0));
      continue;
    }
    for (double& v : kept) v *= std::exp(before / after);
    shaped.push_back(kept);
  }
  return energy(logits(w, b, shaped));
}

std::vector<double> neco(const Matrix& w, const Vector& b, const Matrix& train, const Matrix& test,
                         double explained_variance) {
  const Rows x = to_rows(train);
  const std::size_t d = x[0].size();
  const auto n = static_cast<double>(x.size());
  const Vec mean = global_mean(x);
  Vec sd(d, 0.0);
  for (const auto& row : x) {
    for (std::size_t j = 0; j < d; ++j) sd[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
  }
  for (double& s : sd) {
    s = std::sqrt(s / n);
    if (!(s > 1e-12)) s = 1.0;
  }
  auto standardize = [&](const Vec& row) {
    Vec z(d);
    for (std::size_t j = 0; j < d; ++j) z[j] = (row[j] - mean[j]) / sd[j];
    return z;
  };
  Rows cov(d, Vec(d, 0.0));
  for (const auto& row : x) {
    const Vec z = standardize(row);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t c = 0; c < d; ++c) cov[a][c] += z[a] * z[c] / n;
    }
  }
  const EigenPairs e = jacobi_eigen(cov);
  double total = 0.0;
  for (double v : e.values) total += std::max(v, 0.0);
  std::size_t keep = d;
  if (explained_variance < 1.0) {
    double running = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      running += std::max(e.values[k], 0.0);
      if (running >= explained_variance * total) {
        keep = k + 1;
        break;
      }
    }
  }
  const Rows t = to_rows(test);
  const Rows test_logits = logits(w, b, t);
  std::vector<double> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Vec z = standardize(t[i]);
    double projected = 0.0;
    for (std::size_t k = 0; k < keep; ++k) {
      const double coef = dot(e.vectors[k], z);
      projected += coef * coef;
    }
    const double full = dot(z, z);
    const double ratio = full > 0.0 ? std::sqrt(projected / full) : 1.0;
    out.push_back(ratio * max_of(test_logits[i]));
  }
  return out;
}

std::vector<double> gmm(const Matrix& train, const std::vector<std::int64_t>& labels,
                        const Matrix& test, const std::vector<double>& eps) {
  const Rows x = to_rows(train);
  const int c_count = class_count(labels);
  const Rows means = class_means(x, labels, c_count);
  const std::vector<Rows> covs = per_class_covariances(x, labels, means);
  const double shared_scale =
      trace(shared_covariance(x, labels, means)) / static_cast<double>(x[0].size());
  const auto d = static_cast<double>(x[0].size());
  std::vector<Rows> precisions;
  std::vector<double> log_terms;
  for (int c = 0; c < c_count; ++c) {
    Rows cov = covs[static_cast<std::size_t>(c)];
    double scale = trace(cov) / d;
    if (!(scale > 0.0)) scale = shared_scale;
    for (std::size_t i = 0; i < cov.size(); ++i) cov[i][i] += eps[static_cast<std::size_t>(c)] * scale;
    const double count = static_cast<double>(std::count(labels.begin(), labels.end(), c));
    log_terms.push_back(std::log(count / static_cast<double>(x.size())) -
                        0.5 * d * std::log(2.0 * std::numbers::pi) -
                        0.5 * std::log(determinant(cov)));
    precisions.push_back(inverse(cov));
  }
  std::vector<double> out;
  for (const auto& row : to_rows(test)) {
    Vec terms;
    for (int c = 0; c < c_count; ++c) {
      const auto k = static_cast<std::size_t>(c);
      terms.push_back(log_terms[k] - 0.5 * quadratic_form(subtract(row, means[k]), precisions[k]));
    }
    out.push_back(log_sum_exp(terms));
  }
  return out;
}

std::vector<double> nnguide(const Matrix& w, const Vector& b, const Matrix& train,
                            const std::vector<Index>& subset, const Matrix& test, int k) {
  Rows bank;
  for (Index i : subset) bank.push_back(unit(row_of(train, i)));
  const Rows t = to_rows(test);
  const std::vector<double> e = energy(logits(w, b, t));
  std::vector<double> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Vec q = unit(t[i]);
    Vec similarities;
    for (const auto& r : bank) similarities.push_back(dot(q, r));
    std::sort(similarities.begin(), similarities.end(), std::greater<>());
    out.push_back(e[i] * similarities[static_cast<std::size_t>(k - 1)]);
  }
  return out;
}

double pair_count_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  std::int64_t twice = 0;
  for (double a : id) {
    for (double o : ood) twice += a > o ? 2 : (a == o ? 1 : 0);
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

MonteCarlo mc_sphere_average(const Matrix& a, std::int64_t n_draws, std::uint64_t seed) {
  const Rows m = to_rows(a);
  const std::size_t d = m.size();
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal;
  double sum = 0.0;
  double sum_sq = 0.0;
  Vec u(d);
  for (std::int64_t i = 0; i < n_draws; ++i) {
    for (double& v : u) v = normal(engine);
    const Vec unit_u = unit(u);
    const double q = quadratic_form(unit_u, m);
    sum += q * q;
    sum_sq += q * q * q * q;
  }
  const auto n = static_cast<double>(n_draws);
  const double mean = sum / n;
  const double variance = std::max(sum_sq / n - mean * mean, 0.0) * n / (n - 1.0);
  return {mean, std::sqrt(variance / n)};
}

MonteCarloMoments mc_norm_moments(const Vector& mu, const Matrix& sigma, std::int64_t n_draws,
                                  std::uint64_t seed) {
  const EigenPairs e = jacobi_eigen(to_rows(sigma));
  const std::size_t d = e.values.size();
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal;
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(n_draws));
  Vec x(d);
  for (std::int64_t i = 0; i < n_draws; ++i) {
    for (std::size_t j = 0; j < d; ++j) x[j] = mu[static_cast<Index>(j)];
    for (std::size_t k = 0; k < d; ++k) {
      const double z = normal(engine) * std::sqrt(std::max(e.values[k], 0.0));
      for (std::size_t j = 0; j < d; ++j) x[j] += z * e.vectors[k][j];
    }
    samples.push_back(dot(x, x));
  }
  const auto n = static_cast<double>(n_draws);
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= n;
  double m2 = 0.0;
  double m4 = 0.0;
  for (double s : samples) {
    const double c = (s - mean) * (s - mean);
    m2 += c;
    m4 += c * c;
  }
  const double variance = m2 / (n - 1.0);
  m4 /= n;
  MonteCarloMoments out;
  out.mean = {mean, std::sqrt(variance / n)};
  out.variance = {variance, std::sqrt(std::max(m4 - variance * variance, 0.0) / n)};
  return out;
}

}  // namespace mahakit::oracle
