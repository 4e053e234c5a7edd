#pragma once

// Run configuration. On disk it is one JSON document with the sections
// "model", "training", "regularizers" and "data"; unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmib/data.hpp"
#include "mmib/layers.hpp"
#include "mmib/regularizers.hpp"

namespace mmib::cfg {

enum class EvalSampling { kMean, kSample };

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 0;       // 0 means 2d
  std::size_t depth = 1;
  std::size_t d_text = 0;     // embedding / text-feature width, 0 means d
  std::size_t d_img_raw = 2048;
  bool use_text_features = false;
  bool max_pool_entities = false;
  double ln_eps = 1e-5;

  std::size_t text_width() const { return d_text == 0 ? d : d_text; }
  nn::ApencConfig apenc() const;
};

struct TrainingConfig {
  data::Task task = data::Task::kMner;
  double learning_rate = 3e-5;
  double weight_decay = 0.01;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  std::uint64_t seed = 13;
  std::size_t max_len = 0;  // 0 means 128 for MNER and 80 for MRE
  EvalSampling eval_sampling = EvalSampling::kMean;
  bool double_count_task = false;
  bool mre_negative_reconstruction = false;
  double grad_clip = 0.0;  // global-norm clip, 0 disables

  std::size_t effective_max_len() const;
};

struct DataConfig {
  std::optional<std::filesystem::path> train;
  std::optional<std::filesystem::path> dev;
  std::vector<std::string> entity_types{"PER", "LOC", "ORG", "MISC"};
  std::vector<std::string> relations;  // empty: taken from the training set
  std::string negative_relation = "None";
};

struct TrainConfig {
  ModelConfig model;
  TrainingConfig training;
  reg::RegularizerConfig regularizers;
  DataConfig data;

  /// Throws ConfigError on non-positive rates/sizes, d % h != 0, negative betas.
  void validate() const;
};

/// Strict parse; relative data paths resolve against `base_dir`.
TrainConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const TrainConfig& c);
TrainConfig load_config(const std::filesystem::path& path);

std::string to_string(EvalSampling s);

}  // namespace mmib::cfg
