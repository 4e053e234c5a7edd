#pragma once

// Training loop, evaluation, prediction and the experiment drivers built on
// top of them (beta sweep, regularizer ablation).

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmib/config.hpp"
#include "mmib/data.hpp"
#include "mmib/metrics.hpp"
#include "mmib/model.hpp"

namespace mmib::train {

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;                // "train" or "dev"
  std::optional<metrics::Prf> prf;  // dev rows only
  model::LossParts loss;            // mean over the split's batches
};

struct EvalReport {
  data::Task task = data::Task::kMner;
  metrics::Prf overall;
  std::vector<std::pair<std::string, metrics::Prf>> per_type;  // NER
  double accuracy = 0.0;                                       // RE
  std::size_t examples = 0;
  model::LossParts loss;

  bool operator==(const EvalReport&) const = default;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::vector<double> step_losses;  // one per optimizer step
  std::size_t best_epoch = 0;
  EvalReport best_dev;
  EpochRecord last_train;
  std::size_t skipped_steps = 0;
  std::vector<std::string> warnings;
};

/// Label space for a config: BIO labels over the entity types (NER), or the
/// configured relations / relations of the training set in first-seen order.
data::LabelSet make_labels(const cfg::TrainConfig& config, std::span<const data::Example> train);
data::PrepareOptions prepare_options(const cfg::TrainConfig& config);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoint/ + metrics.csv
  std::ostream* log = nullptr;                   // progress lines
};

/// Validates config and data before the first step, then runs every epoch,
/// evaluating on dev and keeping the checkpoint with the highest dev F1.
TrainResult train(const cfg::TrainConfig& config, std::span<const data::Example> train_set,
                  std::span<const data::Example> dev_set, const TrainOptions& opts = {});

/// Deterministic evaluation; eval_sampling=sample uses a fixed noise seed.
EvalReport evaluate(const model::MmibModel& model, const data::LabelSet& labels,
                    std::span<const data::Instance> instances);

/// One JSON object per input example, in input order.
std::vector<nlohmann::json> predict(const model::MmibModel& model, const data::Vocab& vocab,
                                    const data::LabelSet& labels, std::span<const data::Example> examples);

void write_metrics_csv(std::ostream& out, std::span<const EpochRecord> log);
std::string metrics_csv(std::span<const EpochRecord> log);

struct SweepRow {
  std::string mode;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double dev_f1 = 0.0;
};

/// Modes: "both" ties beta1 = beta2 = g, "beta1" fixes beta2 = 1, "beta2" fixes beta1 = 1.
std::vector<SweepRow> sweep(const cfg::TrainConfig& base, std::span<const data::Example> train_set,
                            std::span<const data::Example> dev_set, std::span<const double> grid,
                            std::span<const std::string> modes, std::ostream* log = nullptr);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

struct AblationRow {
  std::string variant;                // full, -rr, -ar, -both
  metrics::Prf prf;                   // dev metrics at the best epoch
  std::optional<double> delta_f1;     // empty for the full model
  model::LossParts final_train_loss;  // last epoch's logged composition
};

/// Always trains the full model first, then each requested drop target
/// ("rr", "ar", "both").
std::vector<AblationRow> ablate(const cfg::TrainConfig& base, std::span<const data::Example> train_set,
                                std::span<const data::Example> dev_set, std::span<const std::string> drops,
                                std::ostream* log = nullptr);
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

std::vector<double> default_beta_grid();

}  // namespace mmib::train
