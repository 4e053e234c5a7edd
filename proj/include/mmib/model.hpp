#pragma once

// Full network: text embedding (or pre-extracted text features), image
// projection, the two Gaussian heads, cross-modal fusion, the task head and
// the alignment discriminator, plus the composite training objective.

#include <vector>

#include "mmib/autodiff.hpp"
#include "mmib/config.hpp"
#include "mmib/data.hpp"
#include "mmib/decoders.hpp"
#include "mmib/layers.hpp"
#include "mmib/regularizers.hpp"

namespace mmib::model {

/// Weighted contributions to the objective; disabled parts are exactly 0.
struct LossParts {
  double kl_t = 0.0;    // beta1 * KL_T
  double kl_v = 0.0;    // beta2 * KL_V
  double l_ar = 0.0;
  double l_task = 0.0;  // task NLL (twice when double_count_task)
  double total() const { return kl_t + kl_v + l_ar + l_task; }
  bool operator==(const LossParts&) const = default;
};

/// beta1 * kl_t + beta2 * kl_v + l_ar + l_task on unweighted parts; disabled
/// regularizers contribute 0.
double total_loss(double kl_t, double kl_v, double l_ar, double l_task, const reg::RegularizerConfig& cfg);

struct ExampleForward {
  ad::Var text_input;  // X^T after any projection, (text rows) x d
  nn::GaussianLatent text;
  nn::GaussianLatent image;
  nn::FusionOutput fusion;
  ad::Var emissions;  // NER: (valid text rows) x L
  ad::Var logits;     // RE: 1 x K
  ad::Var task_nll;   // unset when labels are not used
};

struct BatchForward {
  std::vector<ExampleForward> examples;
  ad::Var loss;
  ad::Var kl_t, kl_v, l_ar, l_task;
  LossParts parts;
};

struct Decoded {
  std::vector<int> path;  // NER: label per valid text row, CLS/SEP included
  int relation = -1;      // RE
};

class MmibModel {
 public:
  /// `num_labels` is the BIO label count for NER or the relation count for RE.
  MmibModel(const cfg::TrainConfig& config, std::size_t vocab_size, std::size_t num_labels);

  MmibModel(const MmibModel&) = delete;
  MmibModel& operator=(const MmibModel&) = delete;

  const cfg::TrainConfig& config() const { return cfg_; }
  ad::ParameterStore& parameters() { return store_; }
  const ad::ParameterStore& parameters() const { return store_; }
  std::size_t num_labels() const { return num_labels_; }
  std::size_t vocab_size() const { return vocab_size_; }

  ExampleForward forward_example(ad::Tape& tape, const data::BatchItem& item, nn::Noise& noise,
                                 bool with_labels = true) const;
  /// Composite objective averaged over the batch (KL and task terms are
  /// per-example means; the alignment loss pairs the batch's examples).
  BatchForward forward(ad::Tape& tape, const data::Batch& batch, nn::Noise& noise) const;
  /// Runs without gradient recording and decodes every item.
  std::vector<Decoded> decode(const data::Batch& batch, nn::Noise& noise) const;

  const decode::CrfParams& crf() const { return crf_; }
  const decode::RelationHead& relation_head() const { return relation_; }
  const reg::Discriminator& discriminator() const { return disc_; }

 private:
  cfg::TrainConfig cfg_;
  std::size_t vocab_size_;
  std::size_t num_labels_;
  ad::ParameterStore store_;
  ad::Parameter* embedding_ = nullptr;
  ad::Parameter* text_projection_ = nullptr;
  ad::Parameter* image_projection_ = nullptr;
  nn::GaussianHead text_head_;
  nn::GaussianHead image_head_;
  nn::Apenc v2t_;
  nn::Apenc t2v_;
  reg::Discriminator disc_;
  decode::CrfParams crf_;
  decode::RelationHead relation_;
};

}  // namespace mmib::model
