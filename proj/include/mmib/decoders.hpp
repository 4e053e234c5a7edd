#pragma once

// Task heads: a linear-chain CRF with virtual START/STOP states for NER, and
// an entity-pair softmax classifier for relation extraction.

#include <span>
#include <string>
#include <vector>

#include "mmib/autodiff.hpp"
#include "mmib/data.hpp"
#include "mmib/layers.hpp"

namespace mmib::decode {

/// Emission weights (d x L) and transition table ((L+2) x (L+2)); index L is
/// START and L+1 is STOP. Only START->y, y->y' and y->STOP entries are used.
struct CrfParams {
  ad::Parameter* emission = nullptr;
  ad::Parameter* transitions = nullptr;
  std::size_t labels = 0;

  static CrfParams create(ad::ParameterStore& store, const std::string& prefix, std::size_t d, std::size_t labels,
                          nn::Rng& rng);
  std::size_t start() const { return labels; }
  std::size_t stop() const { return labels + 1; }
};

/// C * w_crf: per-position label scores (T x L).
ad::Var crf_emissions(ad::Tape& tape, ad::Var text_fused, const CrfParams& params);

/// Score of one label path: emissions plus START->y0, y_{i-1}->y_i and
/// y_last->STOP transitions. Throws ContractError on bad labels/lengths.
ad::Var crf_score(ad::Var emissions, ad::Var transitions, std::span<const int> labels);
/// Log partition over all label paths (forward algorithm in log space);
/// gradients are the forward-backward marginals.
ad::Var crf_log_partition(ad::Var emissions, ad::Var transitions);
/// -ln p(labels | emissions) = log_partition - score.
ad::Var crf_nll(ad::Var emissions, ad::Var transitions, std::span<const int> labels);

double crf_score(const Matrix& emissions, const Matrix& transitions, std::span<const int> labels);
double crf_log_partition(const Matrix& emissions, const Matrix& transitions);

/// argmax path. Among tied optimal paths the last label is the lowest index,
/// then each earlier label is the lowest index that keeps the path optimal.
std::vector<int> viterbi_decode(const Matrix& emissions, const Matrix& transitions);

namespace serial {
std::vector<std::vector<int>> viterbi_batch(std::span<const Matrix> emissions, const Matrix& transitions);
}
namespace omp {
/// One sentence per iteration; output order matches input order.
std::vector<std::vector<int>> viterbi_batch(std::span<const Matrix> emissions, const Matrix& transitions);
}

enum class Pooling { kMean, kMax };

/// Pools the rows of an entity span (token indices are offset by one for
/// the leading CLS row). Throws ContractError on an empty/out-of-range span.
ad::Var entity_pool(ad::Var text_fused, data::Span span, std::size_t tokens, Pooling mode = Pooling::kMean);

struct RelationHead {
  ad::Parameter* w = nullptr;  // 2d x K
  ad::Parameter* b = nullptr;  // 1 x K

  static RelationHead create(ad::ParameterStore& store, const std::string& prefix, std::size_t d, std::size_t k,
                             nn::Rng& rng);
};

ad::Var relation_logits(ad::Tape& tape, ad::Var head_entity, ad::Var tail_entity, const RelationHead& head);
/// softmax(W [E1 ; E2] + b), 1 x K.
ad::Var relation_probs(ad::Tape& tape, ad::Var head_entity, ad::Var tail_entity, const RelationHead& head);
/// -ln softmax(logits)[k].
ad::Var relation_nll(ad::Var logits, std::size_t k);
/// -sum_{k' != k} ln(1 - softmax(logits)[k']).
ad::Var relation_negative_nll(ad::Var logits, std::size_t k);

}  // namespace mmib::decode
