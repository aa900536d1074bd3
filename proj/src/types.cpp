#include "mahakit/types.hpp"

#include <algorithm>
#include <utility>

namespace mahakit {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::UnsupportedShape: return "UnsupportedShape";
    case ErrorCode::FortranOrderUnsupported: return "FortranOrderUnsupported";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::BadHeader: return "BadHeader";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ManifestError: return "ManifestError";
    case ErrorCode::ZeroNormRow: return "ZeroNormRow";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::DegenerateDirection: return "DegenerateDirection";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::EmptyScores: return "EmptyScores";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::FitMismatch: return "FitMismatch";
    case ErrorCode::MissingHead: return "MissingHead";
    case ErrorCode::MissingTrain: return "MissingTrain";
    case ErrorCode::NoMethods: return "NoMethods";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFinite:
    case ErrorCode::InvalidLabel:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::EmptyInput:
    case ErrorCode::BadMagic:
    case ErrorCode::UnsupportedVersion:
    case ErrorCode::UnsupportedDtype:
    case ErrorCode::UnsupportedShape:
    case ErrorCode::FortranOrderUnsupported:
    case ErrorCode::TruncatedPayload:
    case ErrorCode::BadHeader:
    case ErrorCode::IoError:
    case ErrorCode::ManifestError:
    case ErrorCode::ZeroNormRow:
    case ErrorCode::EmptyClass:
    case ErrorCode::EmptyScores:
      return 2;
    case ErrorCode::SingularCovariance:
    case ErrorCode::NotPSD:
    case ErrorCode::DegenerateDirection:
    case ErrorCode::ConstantInput:
    case ErrorCode::NumericalFailure:
      return 3;
    case ErrorCode::FitMismatch:
    case ErrorCode::MissingHead:
    case ErrorCode::MissingTrain:
    case ErrorCode::NoMethods:
    case ErrorCode::UnknownMethod:
    case ErrorCode::InvalidConfig:
      return 4;
  }
  return 1;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

FeatureMatrix::FeatureMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.cols() < 1) {
    throw Error(ErrorCode::DimensionMismatch, "feature matrix needs at least one column");
  }
  if (!values_.allFinite()) {
    for (Index i = 0; i < values_.rows(); ++i) {
      if (!values_.row(i).allFinite()) {
        throw Error(ErrorCode::NonFinite, "non-finite entry in feature row " + std::to_string(i));
      }
    }
  }
}

Labels::Labels(std::vector<std::int64_t> values, std::int64_t n_classes)
    : values_(std::move(values)), n_classes_(n_classes) {
  if (n_classes_ < 1) {
    throw Error(ErrorCode::InvalidLabel, "n_classes must be >= 1");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i] < 0 || values_[i] >= n_classes_) {
      throw Error(ErrorCode::InvalidLabel, "label " + std::to_string(values_[i]) + " at index " +
                                               std::to_string(i) + " outside [0, " +
                                               std::to_string(n_classes_) + ")");
    }
  }
}

Labels Labels::infer(std::vector<std::int64_t> values) {
  if (values.empty()) {
    throw Error(ErrorCode::EmptyInput, "cannot infer class count from empty labels");
  }
  const std::int64_t max_label = *std::max_element(values.begin(), values.end());
  return Labels(std::move(values), max_label + 1);
}

}  // namespace mahakit
