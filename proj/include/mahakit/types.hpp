#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mahakit {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  // input / format
  NonFinite,
  InvalidLabel,
  DimensionMismatch,
  EmptyInput,
  BadMagic,
  UnsupportedVersion,
  UnsupportedDtype,
  UnsupportedShape,
  FortranOrderUnsupported,
  TruncatedPayload,
  BadHeader,
  IoError,
  ManifestError,
  // numerical
  ZeroNormRow,
  EmptyClass,
  SingularCovariance,
  NotPSD,
  DegenerateDirection,
  ConstantInput,
  EmptyScores,
  NumericalFailure,
  // configuration
  FitMismatch,
  MissingHead,
  MissingTrain,
  NoMethods,
  UnknownMethod,
  InvalidConfig,
};

const char* to_string(ErrorCode code);

/// Process exit status for the CLI: 2 input/format, 3 numerical, 4 config.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// N x d matrix of feature rows. Every entry is finite and d >= 1.
/// Zero rows (N = 0) are allowed so empty draws and empty files round-trip.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(Matrix values);

  Index rows() const { return values_.rows(); }
  Index dim() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  auto row(Index i) const { return values_.row(i); }

 private:
  Matrix values_;
};

/// Integer class labels in [0, n_classes).
class Labels {
 public:
  Labels() = default;
  Labels(std::vector<std::int64_t> values, std::int64_t n_classes);

  /// n_classes = max label + 1.
  static Labels infer(std::vector<std::int64_t> values);

  std::size_t size() const { return values_.size(); }
  std::int64_t n_classes() const { return n_classes_; }
  std::int64_t operator[](std::size_t i) const { return values_[i]; }
  std::span<const std::int64_t> values() const { return values_; }

 private:
  std::vector<std::int64_t> values_;
  std::int64_t n_classes_ = 0;
};

}  // namespace mahakit
