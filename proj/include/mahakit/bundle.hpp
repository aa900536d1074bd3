#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mahakit/gaussian_model.hpp"
#include "mahakit/scorers.hpp"
#include "mahakit/types.hpp"

namespace mahakit {

using NamedPaths = std::vector<std::pair<std::string, std::filesystem::path>>;

/// JSON manifest of a dataset bundle. Relative paths resolve against the
/// directory holding the manifest.
struct BundleManifest {
  int format_version = 1;
  std::filesystem::path train_features;
  std::filesystem::path train_labels;
  std::filesystem::path id_test_features;
  std::optional<std::filesystem::path> id_test_labels;
  std::optional<std::filesystem::path> head_w;
  std::optional<std::filesystem::path> head_b;
  std::optional<std::filesystem::path> train_logits;
  std::optional<std::filesystem::path> id_test_logits;
  NamedPaths ood_logits;
  NamedPaths ood_sets;
  NamedPaths unit_tests;  // noise sets that a detector should reject
  nlohmann::ordered_json dtypes = nlohmann::ordered_json::object();
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();
};

constexpr int kManifestVersion = 1;

BundleManifest read_manifest(const std::filesystem::path& path);
nlohmann::ordered_json manifest_to_json(const BundleManifest& manifest,
                                        const std::filesystem::path& relative_to = {});
void write_manifest(const std::filesystem::path& path, const BundleManifest& manifest);

struct NamedFeatures {
  std::string name;
  FeatureMatrix features;
  std::optional<Matrix> logits;
};

struct Bundle {
  BundleManifest manifest;
  FeatureMatrix train;
  Labels train_labels;
  FeatureMatrix id_test;
  std::optional<Labels> id_test_labels;
  std::optional<ModelHead> head;
  std::optional<Matrix> train_logits;
  std::optional<Matrix> id_test_logits;
  std::vector<NamedFeatures> ood_sets;
  std::vector<NamedFeatures> unit_tests;

  Index dim() const { return train.dim(); }
  const NamedFeatures& ood_set(const std::string& name) const;
};

/// Loads and cross-checks every file: consistent feature widths, label counts
/// matching row counts, head and logit shapes matching the class count.
Bundle load_bundle(const std::filesystem::path& manifest_path);

// ---- Fit files ----------------------------------------------------------------

/// Binary container for one or two fits ("MAHAFIT1", little-endian).
void write_fits(const std::filesystem::path& path, const std::vector<const GaussianFit*>& fits);
std::vector<GaussianFit> read_fits(const std::filesystem::path& path);

}  // namespace mahakit
