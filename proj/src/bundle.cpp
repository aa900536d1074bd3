#include "mahakit/bundle.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "mahakit/npy.hpp"

namespace mahakit {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

[[noreturn]] void manifest_error(const fs::path& path, const std::string& what) {
  throw Error(ErrorCode::ManifestError, path.string() + ": " + what);
}

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

std::string path_string(const fs::path& path, const fs::path& relative_to) {
  if (relative_to.empty()) return path.string();
  return path.lexically_relative(relative_to).generic_string();
}

std::string require_string(const json& j, const char* key, const fs::path& path) {
  if (!j.contains(key)) manifest_error(path, std::string("missing required field '") + key + "'");
  if (!j.at(key).is_string()) manifest_error(path, std::string("field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

std::optional<fs::path> optional_path(const json& j, const char* key, const fs::path& base,
                                      const fs::path& path) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_string()) manifest_error(path, std::string("field '") + key + "' must be a string");
  return resolve(base, j.at(key).get<std::string>());
}

NamedPaths named_paths(const json& j, const char* key, const fs::path& base, const fs::path& path) {
  NamedPaths out;
  if (!j.contains(key) || j.at(key).is_null()) return out;
  if (!j.at(key).is_object()) manifest_error(path, std::string("field '") + key + "' must be an object");
  for (const auto& [name, value] : j.at(key).items()) {
    if (!value.is_string()) manifest_error(path, std::string(key) + "." + name + " must be a path string");
    out.emplace_back(name, resolve(base, value.get<std::string>()));
  }
  return out;
}

FeatureMatrix load_features(const fs::path& path, Index expected_dim) {
  Matrix values = read_matrix(path);
  if (expected_dim > 0 && values.cols() != expected_dim) {
    throw Error(ErrorCode::DimensionMismatch, path.string() + ": feature width " +
                                                  std::to_string(values.cols()) + " differs from " +
                                                  std::to_string(expected_dim));
  }
  if (!values.allFinite()) {
    throw Error(ErrorCode::NonFinite, path.string() + ": contains non-finite values");
  }
  return FeatureMatrix(std::move(values));
}

Matrix load_logits(const fs::path& path, Index rows, Index classes) {
  Matrix values = read_matrix(path);
  if (values.rows() != rows || (classes > 0 && values.cols() != classes)) {
    throw Error(ErrorCode::DimensionMismatch,
                path.string() + ": logits shape (" + std::to_string(values.rows()) + ", " +
                    std::to_string(values.cols()) + ") does not match the features");
  }
  if (!values.allFinite()) throw Error(ErrorCode::NonFinite, path.string() + ": non-finite logits");
  return values;
}

// ---- fit file helpers ---------------------------------------------------------

constexpr char kFitMagic[8] = {'M', 'A', 'H', 'A', 'F', 'I', 'T', '1'};

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_matrix(std::string& out, const Matrix& m) {
  out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
}

class Cursor {
 public:
  Cursor(const std::string& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  Matrix matrix(Index rows, Index cols) {
    const auto n = static_cast<std::size_t>(rows * cols) * sizeof(double);
    need(n);
    Matrix m(rows, cols);
    std::memcpy(m.data(), bytes_.data() + pos_, n);
    pos_ += n;
    return m;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw Error(ErrorCode::TruncatedPayload,
                  path_.string() + " (byte " + std::to_string(bytes_.size()) + "): fit file ends early");
    }
  }
  const std::string& bytes_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

BundleManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": cannot open manifest");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    manifest_error(path, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) manifest_error(path, "manifest must be a JSON object");

  static const std::set<std::string> known = {
      "format_version", "train_features", "train_labels", "id_test_features", "id_test_labels",
      "head_w", "head_b", "logits", "ood_sets", "unit_tests", "dtypes", "provenance"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) manifest_error(path, "unknown field '" + key + "'");
  }

  const fs::path base = path.parent_path();
  BundleManifest m;
  if (j.contains("format_version")) {
    if (!j.at("format_version").is_number_integer()) manifest_error(path, "format_version must be an integer");
    m.format_version = j.at("format_version").get<int>();
  }
  if (m.format_version != kManifestVersion) {
    manifest_error(path, "unsupported format_version " + std::to_string(m.format_version));
  }
  m.train_features = resolve(base, require_string(j, "train_features", path));
  m.train_labels = resolve(base, require_string(j, "train_labels", path));
  m.id_test_features = resolve(base, require_string(j, "id_test_features", path));
  m.id_test_labels = optional_path(j, "id_test_labels", base, path);
  m.head_w = optional_path(j, "head_w", base, path);
  m.head_b = optional_path(j, "head_b", base, path);
  if (m.head_w.has_value() != m.head_b.has_value()) {
    manifest_error(path, "head_w and head_b must be given together");
  }
  if (j.contains("logits")) {
    const json& logits = j.at("logits");
    if (!logits.is_object()) manifest_error(path, "logits must be an object");
    m.train_logits = optional_path(logits, "train", base, path);
    m.id_test_logits = optional_path(logits, "id_test", base, path);
    m.ood_logits = named_paths(logits, "ood", base, path);
  }
  m.ood_sets = named_paths(j, "ood_sets", base, path);
  m.unit_tests = named_paths(j, "unit_tests", base, path);
  if (j.contains("dtypes")) m.dtypes = j.at("dtypes");
  if (j.contains("provenance")) m.provenance = j.at("provenance");
  return m;
}

json manifest_to_json(const BundleManifest& m, const fs::path& relative_to) {
  json j;
  j["format_version"] = m.format_version;
  j["train_features"] = path_string(m.train_features, relative_to);
  j["train_labels"] = path_string(m.train_labels, relative_to);
  j["id_test_features"] = path_string(m.id_test_features, relative_to);
  if (m.id_test_labels) j["id_test_labels"] = path_string(*m.id_test_labels, relative_to);
  if (m.head_w) j["head_w"] = path_string(*m.head_w, relative_to);
  if (m.head_b) j["head_b"] = path_string(*m.head_b, relative_to);
  if (m.train_logits || m.id_test_logits || !m.ood_logits.empty()) {
    json logits = json::object();
    if (m.train_logits) logits["train"] = path_string(*m.train_logits, relative_to);
    if (m.id_test_logits) logits["id_test"] = path_string(*m.id_test_logits, relative_to);
    json ood = json::object();
    for (const auto& [name, p] : m.ood_logits) ood[name] = path_string(p, relative_to);
    logits["ood"] = ood;
    j["logits"] = logits;
  }
  json ood = json::object();
  for (const auto& [name, p] : m.ood_sets) ood[name] = path_string(p, relative_to);
  j["ood_sets"] = ood;
  if (!m.unit_tests.empty()) {
    json tests = json::object();
    for (const auto& [name, p] : m.unit_tests) tests[name] = path_string(p, relative_to);
    j["unit_tests"] = tests;
  }
  j["dtypes"] = m.dtypes;
  j["provenance"] = m.provenance;
  return j;
}

void write_manifest(const fs::path& path, const BundleManifest& manifest) {
  write_file_atomic(path, manifest_to_json(manifest, path.parent_path()).dump(2) + "\n");
}

const NamedFeatures& Bundle::ood_set(const std::string& name) const {
  for (const auto& set : ood_sets) {
    if (set.name == name) return set;
  }
  for (const auto& set : unit_tests) {
    if (set.name == name) return set;
  }
  throw Error(ErrorCode::InvalidConfig, "bundle has no OOD set named '" + name + "'");
}

Bundle load_bundle(const fs::path& manifest_path) {
  Bundle b;
  b.manifest = read_manifest(manifest_path);
  const BundleManifest& m = b.manifest;

  b.train = load_features(m.train_features, 0);
  if (b.train.rows() == 0) {
    throw Error(ErrorCode::EmptyInput, m.train_features.string() + ": no train rows");
  }
  const Index d = b.train.dim();

  Index n_classes = 0;
  if (m.head_w) {
    Matrix w = read_matrix(*m.head_w);
    Vector bias = read_vector(*m.head_b);
    if (w.cols() != d) {
      throw Error(ErrorCode::DimensionMismatch,
                  m.head_w->string() + ": head width " + std::to_string(w.cols()) +
                      " differs from feature width " + std::to_string(d));
    }
    b.head.emplace(std::move(w), std::move(bias));
    n_classes = b.head->n_classes();
  }

  std::vector<std::int64_t> labels = read_labels(m.train_labels);
  if (static_cast<Index>(labels.size()) != b.train.rows()) {
    throw Error(ErrorCode::DimensionMismatch, m.train_labels.string() + ": " +
                                                  std::to_string(labels.size()) + " labels for " +
                                                  std::to_string(b.train.rows()) + " train rows");
  }
  if (n_classes == 0) n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  try {
    b.train_labels = Labels(std::move(labels), n_classes);
  } catch (const Error& e) {
    throw Error(e.code(), m.train_labels.string() + ": " + e.what());
  }

  b.id_test = load_features(m.id_test_features, d);
  if (m.id_test_labels) {
    std::vector<std::int64_t> test_labels = read_labels(*m.id_test_labels);
    if (static_cast<Index>(test_labels.size()) != b.id_test.rows()) {
      throw Error(ErrorCode::DimensionMismatch,
                  m.id_test_labels->string() + ": label count does not match ID test rows");
    }
    try {
      b.id_test_labels = Labels(std::move(test_labels), n_classes);
    } catch (const Error& e) {
      throw Error(e.code(), m.id_test_labels->string() + ": " + e.what());
    }
  }

  const Index logit_cols = b.head ? n_classes : 0;
  if (m.train_logits) b.train_logits = load_logits(*m.train_logits, b.train.rows(), logit_cols);
  if (m.id_test_logits) b.id_test_logits = load_logits(*m.id_test_logits, b.id_test.rows(), logit_cols);

  std::set<std::string> names;
  auto load_named = [&](const NamedPaths& paths, std::vector<NamedFeatures>& into) {
    for (const auto& [name, path] : paths) {
      if (!names.insert(name).second) {
        throw Error(ErrorCode::ManifestError, "duplicate OOD set name '" + name + "'");
      }
      NamedFeatures set{name, load_features(path, d), std::nullopt};
      for (const auto& [logit_name, logit_path] : m.ood_logits) {
        if (logit_name == name) set.logits = load_logits(logit_path, set.features.rows(), logit_cols);
      }
      into.push_back(std::move(set));
    }
  };
  load_named(m.ood_sets, b.ood_sets);
  load_named(m.unit_tests, b.unit_tests);
  for (const auto& [logit_name, logit_path] : m.ood_logits) {
    if (!names.contains(logit_name)) {
      throw Error(ErrorCode::ManifestError, "logits given for unknown OOD set '" + logit_name + "'");
    }
  }
  return b;
}

void write_fits(const fs::path& path, const std::vector<const GaussianFit*>& fits) {
  std::string out(kFitMagic, sizeof(kFitMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(fits.size()));
  for (const GaussianFit* f : fits) {
    put<std::uint8_t>(out, f->normalized() ? 1 : 0);
    put<std::int64_t>(out, f->n_classes());
    put<std::int64_t>(out, f->dim());
    put<double>(out, f->shrinkage_eps());
    put<double>(out, f->shared_ridge());
    put<double>(out, f->global_shrinkage_eps());
    put<double>(out, f->global_ridge());
    for (auto c : f->class_counts()) put<std::int64_t>(out, c);
    put_matrix(out, f->means());
    put_matrix(out, f->shared_cov());
    put_matrix(out, f->shared_factor());
    put_matrix(out, f->global_mean().transpose());
    put_matrix(out, f->global_cov());
    put_matrix(out, f->global_factor());
  }
  write_file_atomic(path, out);
}

std::vector<GaussianFit> read_fits(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, path.string() + ": cannot open fit file");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kFitMagic) || std::memcmp(bytes.data(), kFitMagic, sizeof(kFitMagic)) != 0) {
    throw Error(ErrorCode::BadMagic, path.string() + " (byte 0): not a fit file");
  }
  const std::string body = bytes.substr(sizeof(kFitMagic));
  Cursor cur(body, path);
  const auto count = cur.get<std::uint32_t>();
  std::vector<GaussianFit> fits;
  for (std::uint32_t k = 0; k < count; ++k) {
    const bool normalized = cur.get<std::uint8_t>() != 0;
    const auto c = static_cast<Index>(cur.get<std::int64_t>());
    const auto d = static_cast<Index>(cur.get<std::int64_t>());
    if (c < 1 || d < 1 || c > (Index{1} << 24) || d > (Index{1} << 20)) {
      throw Error(ErrorCode::BadHeader, path.string() + ": implausible fit dimensions");
    }
    FactorizedCovariance shared;
    FactorizedCovariance global;
    shared.eps = cur.get<double>();
    shared.ridge = cur.get<double>();
    global.eps = cur.get<double>();
    global.ridge = cur.get<double>();
    std::vector<std::int64_t> counts(static_cast<std::size_t>(c));
    for (auto& n : counts) n = cur.get<std::int64_t>();
    Matrix means = cur.matrix(c, d);
    shared.cov = cur.matrix(d, d);
    shared.factor = cur.matrix(d, d);
    Vector global_mean = cur.matrix(1, d).transpose();
    global.cov = cur.matrix(d, d);
    global.factor = cur.matrix(d, d);
    fits.push_back(GaussianFit::restore(std::move(means), std::move(shared), std::move(global_mean),
                                        std::move(global), std::move(counts), normalized));
  }
  if (!cur.done()) throw Error(ErrorCode::BadHeader, path.string() + ": trailing bytes in fit file");
  return fits;
}

}  // namespace mahakit
