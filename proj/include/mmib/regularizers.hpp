#pragma once

// Refinement regularizer: closed-form KL of each diagonal Gaussian posterior
// to N(0, I), weighted by beta1/beta2 and added to the task likelihood term.
// Alignment regularizer: a discriminator on mean-pooled text/image latents,
// trained with binary cross-entropy against in-batch negatives.

#include <random>
#include <span>
#include <string>

#include "mmib/autodiff.hpp"
#include "mmib/layers.hpp"

namespace mmib::reg {

struct RegularizerConfig {
  double beta1 = 0.1;
  double beta2 = 0.1;
  bool enable_rr = true;
  bool enable_ar = true;

  void validate() const;
  double effective_beta1() const { return enable_rr ? beta1 : 0.0; }
  double effective_beta2() const { return enable_rr ? beta2 : 0.0; }
};

/// sum over unmasked rows and all dims of 0.5 (mu^2 + sigma^2 - 1 - ln sigma^2).
ad::Var kl_to_std_normal(const nn::GaussianLatent& lat);
/// Same on plain values; throws DomainError if any unmasked sigma <= 0.
double kl_to_std_normal(const Matrix& mu, const Matrix& sigma, const ad::Mask& mask = {});

/// beta1 * kl_text + beta2 * kl_image + task_nll (task_nll stands in for the
/// negated reconstruction bound).
ad::Var refinement_loss(ad::Var kl_text, ad::Var kl_image, ad::Var task_nll, const RegularizerConfig& cfg);
double refinement_loss(double kl_text, double kl_image, double task_nll, const RegularizerConfig& cfg);

/// MLP 2d -> d (ReLU) -> 1 over [pool(Z^T) ; pool(Z^V)], sigmoid on top.
struct Discriminator {
  ad::Parameter* w1 = nullptr;  // 2d x d
  ad::Parameter* b1 = nullptr;  // 1 x d
  ad::Parameter* w2 = nullptr;  // d x 1
  ad::Parameter* b2 = nullptr;  // 1 x 1

  static Discriminator create(ad::ParameterStore& store, const std::string& prefix, std::size_t d, nn::Rng& rng);

  /// Logits for each row of [text_pooled ; image_pooled] (rows x 2d).
  ad::Var logits(ad::Tape& tape, ad::Var pairs) const;
};

/// Probability that (Z^T, Z^V) is a matching pair; masks select the rows
/// that are pooled. Throws ContractError when a mask selects nothing.
ad::Var discriminator_score(ad::Tape& tape, ad::Var z_text, const ad::Mask& text_mask, ad::Var z_image,
                            const ad::Mask& image_mask, const Discriminator& disc);

/// -(mean ln sigmoid(pos)) - (mean ln(1 - sigmoid(neg))); with no negatives
/// only the positive term remains. Both inputs are column vectors of logits.
ad::Var alignment_bce(ad::Var pos_logits, ad::Var neg_logits);
ad::Var alignment_bce(ad::Var pos_logits);

/// Contrastive loss over a batch: pair b with its own image is positive,
/// every (b, b') with b != b' is a negative. Inputs are the 1 x d pooled
/// text and image latents of each example.
ad::Var alignment_loss(ad::Tape& tape, std::span<const ad::Var> text_pooled, std::span<const ad::Var> image_pooled,
                       const Discriminator& disc);

}  // namespace mmib::reg
