#pragma once

#include <cstdint>
#include <span>

#include "mahakit/types.hpp"

namespace mahakit {

struct EvalResult {
  double fpr_at_tpr = 0.0;
  double auroc = 0.0;
  double threshold = 0.0;  // T: a score counts as accepted (ID) when score >= T
  double tpr_target = 0.95;
  Index n_id = 0;
  Index n_ood = 0;
};

/// T is the ceil(tpr_target * n_id)-th largest ID score; FPR is the fraction
/// of OOD scores >= T. Also fills auroc.
EvalResult fpr_at_tpr(const Vector& id_scores, const Vector& ood_scores, double tpr_target = 0.95);

/// The ceil(tpr_target * n)-th largest ID score.
double tpr_threshold(const Vector& id_scores, double tpr_target = 0.95);

/// Mann-Whitney statistic with half credit for ties, by midrank summation.
double auroc(const Vector& id_scores, const Vector& ood_scores);

/// Number of entries >= threshold (boundary counts as a failure).
Index unit_test_failures(std::span<const double> fprs, double threshold = 0.10);

/// Distinct labels among ID samples whose score falls below T.
Index rejected_class_coverage(const Vector& id_scores, const Labels& id_labels, double threshold);

}  // namespace mahakit
