#include "mahakit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <vector>

namespace mahakit {
namespace {

void check_scores(const Vector& scores, const char* which) {
  if (scores.size() == 0) {
    throw Error(ErrorCode::EmptyScores, std::string(which) + " scores are empty");
  }
  if (!scores.allFinite()) {
    throw Error(ErrorCode::NonFinite, std::string(which) + " scores contain non-finite values");
  }
}

}  // namespace

double auroc(const Vector& id_scores, const Vector& ood_scores) {
  check_scores(id_scores, "ID");
  check_scores(ood_scores, "OOD");
  const Index n_id = id_scores.size();
  const Index n = n_id + ood_scores.size();

  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n_id; ++i) pooled.emplace_back(id_scores[i], true);
  for (Index i = 0; i < ood_scores.size(); ++i) pooled.emplace_back(ood_scores[i], false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Twice the ID rank sum, kept integral: a tie group over 1-based ranks
  // [lo, hi] contributes (lo + hi) per ID member.
  std::int64_t twice_rank_sum = 0;
  std::size_t start = 0;
  while (start < pooled.size()) {
    std::size_t stop = start;
    std::int64_t id_in_group = 0;
    while (stop < pooled.size() && pooled[stop].first == pooled[start].first) {
      id_in_group += pooled[stop].second ? 1 : 0;
      ++stop;
    }
    twice_rank_sum += id_in_group * static_cast<std::int64_t>(start + 1 + stop);
    start = stop;
  }
  const std::int64_t twice_u = twice_rank_sum - static_cast<std::int64_t>(n_id) * (n_id + 1);
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(n_id) * static_cast<double>(ood_scores.size()));
}

double tpr_threshold(const Vector& id_scores, double tpr_target) {
  check_scores(id_scores, "ID");
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "tpr_target must lie in (0, 1]");
  }
  std::vector<double> sorted(id_scores.data(), id_scores.data() + id_scores.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto n_id = static_cast<double>(sorted.size());
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(tpr_target * n_id - 1e-9)), 1, sorted.size());
  return sorted[k - 1];
}

EvalResult fpr_at_tpr(const Vector& id_scores, const Vector& ood_scores, double tpr_target) {
  check_scores(ood_scores, "OOD");
  EvalResult out;
  out.threshold = tpr_threshold(id_scores, tpr_target);
  out.tpr_target = tpr_target;
  out.n_id = id_scores.size();
  out.n_ood = ood_scores.size();
  const auto accepted = (ood_scores.array() >= out.threshold).count();
  out.fpr_at_tpr = static_cast<double>(accepted) / static_cast<double>(out.n_ood);
  out.auroc = auroc(id_scores, ood_scores);
  return out;
}

Index unit_test_failures(std::span<const double> fprs, double threshold) {
  return static_cast<Index>(
      std::count_if(fprs.begin(), fprs.end(), [&](double f) { return f >= threshold; }));
}

Index rejected_class_coverage(const Vector& id_scores, const Labels& id_labels, double threshold) {
  if (static_cast<Index>(id_labels.size()) != id_scores.size()) {
    throw Error(ErrorCode::DimensionMismatch, "ID labels do not match ID scores");
  }
  std::set<std::int64_t> rejected;
  for (Index i = 0; i < id_scores.size(); ++i) {
    if (id_scores[i] < threshold) rejected.insert(id_labels[static_cast<std::size_t>(i)]);
  }
  return static_cast<Index>(rejected.size());
}

}  // namespace mahakit
