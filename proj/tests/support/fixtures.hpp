#pragma once

// Shared helpers: scratch directories, tiny configs, random matrices.

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "mmib/config.hpp"
#include "mmib/data.hpp"
#include "mmib/matrix.hpp"
#include "mmib/synthetic.hpp"
#include "mmib/trainer.hpp"

namespace mmib::testing {

inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("mmib_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.values()) v = u(rng);
  return m;
}

/// d=4, h=2 model small enough for exhaustive finite differences.
inline cfg::TrainConfig tiny_config(data::Task task, std::uint64_t seed = 1) {
  cfg::TrainConfig c;
  c.model.d = 4;
  c.model.heads = 2;
  c.model.d_img_raw = 3;
  c.training.task = task;
  c.training.seed = seed;
  c.training.batch_size = 2;
  c.training.epochs = 2;
  c.training.learning_rate = 1e-3;
  return c;
}

/// Desk-scale config used by the synthetic training runs.
inline cfg::TrainConfig desk_config(data::Task task, std::size_t epochs, std::uint64_t seed = 7) {
  cfg::TrainConfig c;
  c.model.d_img_raw = 16;
  c.training.task = task;
  c.training.learning_rate = 1e-3;
  c.training.epochs = epochs;
  c.training.seed = seed;
  return c;
}

struct Corpus {
  std::filesystem::path manifest;
  std::vector<data::Example> examples;
  data::Vocab vocab;
  data::LabelSet labels;
  std::vector<data::Instance> instances;
};

/// Generated dataset for `c`'s task and image width, written under a fresh
/// scratch directory and prepared with the config's options.
inline Corpus synthetic_corpus(const cfg::TrainConfig& c, std::size_t count, std::uint64_t seed,
                               const std::string& tag) {
  synth::SynthOptions so;
  so.task = c.training.task;
  so.count = count;
  so.seed = seed;
  so.d_img_raw = c.model.d_img_raw;
  Corpus out;
  out.manifest = synth::write_dataset(scratch_dir(tag), so);
  out.examples = data::load_manifest(out.manifest);
  out.vocab = data::Vocab::build(out.examples);
  out.labels = train::make_labels(c, out.examples);
  out.instances = data::prepare(out.examples, out.vocab, out.labels, train::prepare_options(c)).instances;
  return out;
}

}  // namespace mmib::testing
