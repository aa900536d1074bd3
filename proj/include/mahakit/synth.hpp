#pragma once

#include <cstdint>

#include "mahakit/scorers.hpp"
#include "mahakit/types.hpp"

namespace mahakit {

enum class CovarianceKind { Isotropic, RandomPSD };
enum class ScaleLaw { Constant, LogUniform };

struct SynthSpec {
  Index n_classes = 50;
  Index dim = 64;
  Index train_per_class = 200;
  Index test_per_class = 50;
  Index ood_classes = 20;
  Index ood_per_class = 50;
  double mean_radius = 1.0;  // class means lie on the sphere of this radius
  CovarianceKind covariance = CovarianceKind::Isotropic;
  double sigma = 0.25;       // isotropic: sigma^2 I; random PSD: mean eigenvalue sigma^2
  ScaleLaw scale_law = ScaleLaw::LogUniform;  // Constant: r_c = 1
  double scale_lo = 0.5;
  double scale_hi = 2.0;
  double heavy_tail_fraction = 0.0;
  double heavy_tail_max = 4.0;  // extra per-sample scale drawn log-uniform [1, heavy_tail_max]
  std::uint64_t seed = 0;

  /// Throws InvalidConfig for non-positive counts or scales, s_lo > s_hi, or
  /// fractions outside [0, 1].
  void validate() const;
};

struct SynthData {
  FeatureMatrix train;
  Labels train_labels;
  FeatureMatrix id_test;
  Labels id_test_labels;
  FeatureMatrix ood_test;
  ModelHead head;             // linear discriminant head built from the true parameters
  Matrix class_directions;    // C x d, norm = mean_radius
  Matrix ood_directions;      // held-out means, same radius
  Vector class_scales;        // r_c
  Vector ood_scales;
  Matrix covariance;          // shared covariance before radial scaling
};

/// Class c draws r_c (mu_c + L z). OOD classes use held-out mean directions
/// at least 2/sqrt(d) radians from every train mean. Deterministic per seed.
SynthData generate(const SynthSpec& spec);

}  // namespace mahakit
