#pragma once

// Checkpoint directory layout:
//   index.json   {name: {"file": "tNNN.mmtf", "shape": [rows, cols]}}
//   tNNN.mmtf    one float64 MMTF file per parameter
//   config.json  vocab.json  labels.json  meta.json

#include <filesystem>
#include <memory>

#include "json.hpp"
#include "mmib/data.hpp"
#include "mmib/model.hpp"

namespace mmib::ckpt {

struct Loaded {
  std::unique_ptr<model::MmibModel> model;
  data::Vocab vocab;
  data::LabelSet labels;
  nlohmann::json meta;
};

/// Replaces `dir` atomically (written to a sibling temp dir, then renamed).
void save_checkpoint(const std::filesystem::path& dir, const model::MmibModel& model, const data::Vocab& vocab,
                     const data::LabelSet& labels, const nlohmann::json& meta = nlohmann::json::object());

/// Rebuilds the model from the stored config and overwrites every
/// parameter. Throws FormatError when files are missing or shapes differ.
Loaded load_checkpoint(const std::filesystem::path& dir);

}  // namespace mmib::ckpt
