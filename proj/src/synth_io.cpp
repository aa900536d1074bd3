#include "mahakit/synth_io.hpp"

#include <set>

#include "mahakit/bundle.hpp"

namespace mahakit {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

template <class T>
void read_field(const json& j, const char* key, T& into) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::InvalidConfig, std::string("synth spec field '") + key + "' has the wrong type");
  }
}

}  // namespace

SynthSpec synth_spec_from_json(const json& j, SynthOutput* output) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "synth spec must be a JSON object");
  static const std::set<std::string> known = {
      "n_classes", "dim", "train_per_class", "test_per_class", "ood_classes", "ood_per_class",
      "mean_radius", "covariance", "sigma", "scale_law", "scale_lo", "scale_hi",
      "heavy_tail_fraction", "heavy_tail_max", "seed", "ood_sets", "dtype"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorCode::InvalidConfig, "unknown synth spec field '" + key + "'");
  }
  SynthSpec s;
  read_field(j, "n_classes", s.n_classes);
  read_field(j, "dim", s.dim);
  read_field(j, "train_per_class", s.train_per_class);
  read_field(j, "test_per_class", s.test_per_class);
  read_field(j, "ood_classes", s.ood_classes);
  read_field(j, "ood_per_class", s.ood_per_class);
  read_field(j, "mean_radius", s.mean_radius);
  read_field(j, "sigma", s.sigma);
  read_field(j, "scale_lo", s.scale_lo);
  read_field(j, "scale_hi", s.scale_hi);
  read_field(j, "heavy_tail_fraction", s.heavy_tail_fraction);
  read_field(j, "heavy_tail_max", s.heavy_tail_max);
  read_field(j, "seed", s.seed);
  std::string covariance = "isotropic";
  std::string scale_law = "log_uniform";
  read_field(j, "covariance", covariance);
  read_field(j, "scale_law", scale_law);
  if (covariance == "isotropic") {
    s.covariance = CovarianceKind::Isotropic;
  } else if (covariance == "random_psd") {
    s.covariance = CovarianceKind::RandomPSD;
  } else {
    throw Error(ErrorCode::InvalidConfig, "covariance must be 'isotropic' or 'random_psd'");
  }
  if (scale_law == "constant") {
    s.scale_law = ScaleLaw::Constant;
  } else if (scale_law == "log_uniform") {
    s.scale_law = ScaleLaw::LogUniform;
  } else {
    throw Error(ErrorCode::InvalidConfig, "scale_law must be 'constant' or 'log_uniform'");
  }
  SynthOutput out;
  read_field(j, "ood_sets", out.ood_sets);
  std::string dtype = "<f8";
  read_field(j, "dtype", dtype);
  if (dtype != "<f8" && dtype != "<f4") throw Error(ErrorCode::InvalidConfig, "dtype must be '<f8' or '<f4'");
  out.dtype = parse_dtype(dtype);
  if (out.ood_sets < 1 || out.ood_sets > std::max<Index>(s.ood_classes, 1)) {
    throw Error(ErrorCode::InvalidConfig, "ood_sets must lie in [1, ood_classes]");
  }
  s.validate();
  if (output != nullptr) *output = out;
  return s;
}

json synth_spec_to_json(const SynthSpec& s) {
  return json{{"n_classes", s.n_classes},
              {"dim", s.dim},
              {"train_per_class", s.train_per_class},
              {"test_per_class", s.test_per_class},
              {"ood_classes", s.ood_classes},
              {"ood_per_class", s.ood_per_class},
              {"mean_radius", s.mean_radius},
              {"covariance", s.covariance == CovarianceKind::Isotropic ? "isotropic" : "random_psd"},
              {"sigma", s.sigma},
              {"scale_law", s.scale_law == ScaleLaw::Constant ? "constant" : "log_uniform"},
              {"scale_lo", s.scale_lo},
              {"scale_hi", s.scale_hi},
              {"heavy_tail_fraction", s.heavy_tail_fraction},
              {"heavy_tail_max", s.heavy_tail_max},
              {"seed", s.seed}};
}

fs::path write_synth_bundle(const SynthData& data, const SynthSpec& spec, const fs::path& dir,
                            const SynthOutput& output) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, dir.string() + ": cannot create directory");

  BundleManifest m;
  m.train_features = dir / "train_features.npy";
  m.train_labels = dir / "train_labels.npy";
  m.id_test_features = dir / "id_test_features.npy";
  m.id_test_labels = dir / "id_test_labels.npy";
  m.head_w = dir / "head_w.npy";
  m.head_b = dir / "head_b.npy";
  write_array(m.train_features, data.train.values(), output.dtype);
  write_labels(m.train_labels, {data.train_labels.values().begin(), data.train_labels.values().end()});
  write_array(m.id_test_features, data.id_test.values(), output.dtype);
  write_labels(*m.id_test_labels,
               {data.id_test_labels.values().begin(), data.id_test_labels.values().end()});
  write_array(*m.head_w, data.head.weights(), output.dtype);
  write_vector(*m.head_b, data.head.bias(), output.dtype);

  // Held-out classes are dealt to sets in contiguous runs.
  const Index n_sets = spec.ood_classes > 0 ? output.ood_sets : 0;
  for (Index k = 0; k < n_sets; ++k) {
    const Index first_class = k * spec.ood_classes / n_sets;
    const Index last_class = (k + 1) * spec.ood_classes / n_sets;
    const Matrix rows = data.ood_test.values().middleRows(first_class * spec.ood_per_class,
                                                          (last_class - first_class) * spec.ood_per_class);
    const std::string name = "ood" + std::to_string(k);
    const fs::path path = dir / (name + ".npy");
    write_array(path, rows, output.dtype);
    m.ood_sets.emplace_back(name, path);
  }
  m.dtypes = {{"features", dtype_descr(output.dtype)}, {"labels", "<i8"}};
  m.provenance = {{"generator", "mahakit synth"}, {"spec", synth_spec_to_json(spec)}};
  const fs::path manifest = dir / "manifest.json";
  write_manifest(manifest, m);
  return manifest;
}

}  // namespace mahakit
