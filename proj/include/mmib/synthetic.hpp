#pragma once

// Small generated datasets whose labels are recoverable from token identity:
// each entity type owns its own words, and relation types are tied to the
// entity-type pair plus a trigger word. Image rows are type prototypes plus
// Gaussian noise (row 0 is the mean over the sentence's entities).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmib/data.hpp"

namespace mmib::synth {

struct SynthOptions {
  data::Task task = data::Task::kMner;
  std::size_t count = 32;
  std::uint64_t seed = 1;
  std::size_t d_img_raw = 16;
  double image_noise = 0.1;
};

/// The five relation names used for generated relation data.
const std::vector<std::string>& relation_names();

/// Writes `<dir>/<name>.jsonl` and its feature files under `<dir>/features/`.
/// Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const SynthOptions& opts,
                                    const std::string& name = "data");

}  // namespace mmib::synth
