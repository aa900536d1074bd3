#pragma once

#include <filesystem>

#include <json.hpp>

#include "mahakit/npy.hpp"
#include "mahakit/synth.hpp"

namespace mahakit {

/// Bundle-writing options that sit next to the generator spec in spec.json.
struct SynthOutput {
  Index ood_sets = 1;  // held-out classes are split into this many named sets
  Dtype dtype = Dtype::F8;
};

/// Unknown keys are rejected with InvalidConfig.
SynthSpec synth_spec_from_json(const nlohmann::ordered_json& j, SynthOutput* output = nullptr);
nlohmann::ordered_json synth_spec_to_json(const SynthSpec& spec);

/// Writes features, labels, head and manifest.json into dir; returns the manifest path.
std::filesystem::path write_synth_bundle(const SynthData& data, const SynthSpec& spec,
                                         const std::filesystem::path& dir,
                                         const SynthOutput& output = {});

}  // namespace mahakit
