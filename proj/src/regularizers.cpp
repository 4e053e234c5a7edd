#include "mmib/regularizers.hpp"

#include <cmath>

#include "mmib/error.hpp"

namespace mmib::reg {

using ad::Var;

void RegularizerConfig::validate() const {
  if (!(beta1 >= 0.0) || !(beta2 >= 0.0)) throw ConfigError("beta1 and beta2 must be non-negative");
}

Var kl_to_std_normal(const nn::GaussianLatent& lat) {
  // ln sigma^2 is the encoder output itself, so no log is taken here.
  Var per_dim = lat.mu * lat.mu + ad::exp(lat.log_var) - lat.log_var;
  per_dim = ad::add_scalar(per_dim, -1.0);
  return ad::scale(ad::sum(ad::mask_rows(per_dim, lat.mask)), 0.5);
}

double kl_to_std_normal(const Matrix& mu, const Matrix& sigma, const ad::Mask& mask) {
  if (!mu.same_shape(sigma)) throw ShapeError("kl: mu " + mu.shape_str() + " vs sigma " + sigma.shape_str());
  if (!mask.empty() && mask.size() != mu.rows()) throw ShapeError("kl: mask length does not match rows");
  double kl = 0.0;
  for (std::size_t r = 0; r < mu.rows(); ++r) {
    if (!mask.empty() && mask[r] == 0) continue;
    for (std::size_t c = 0; c < mu.cols(); ++c) {
      const double s = sigma(r, c);
      if (!(s > 0.0)) throw DomainError("kl: non-positive sigma " + std::to_string(s));
      const double m = mu(r, c);
      kl += 0.5 * (m * m + s * s - 1.0 - 2.0 * std::log(s));
    }
  }
  return kl;
}

Var refinement_loss(Var kl_text, Var kl_image, Var task_nll, const RegularizerConfig& cfg) {
  return ad::scale(kl_text, cfg.effective_beta1()) + ad::scale(kl_image, cfg.effective_beta2()) + task_nll;
}

double refinement_loss(double kl_text, double kl_image, double task_nll, const RegularizerConfig& cfg) {
  return cfg.effective_beta1() * kl_text + cfg.effective_beta2() * kl_image + task_nll;
}

Discriminator Discriminator::create(ad::ParameterStore& store, const std::string& prefix, std::size_t d,
                                    nn::Rng& rng) {
  Discriminator disc;
  disc.w1 = &store.add(prefix + ".w1", nn::xavier_uniform(2 * d, d, rng));
  disc.b1 = &store.add(prefix + ".b1", Matrix(1, d));
  disc.w2 = &store.add(prefix + ".w2", nn::xavier_uniform(d, 1, rng));
  disc.b2 = &store.add(prefix + ".b2", Matrix(1, 1));
  return disc;
}

Var Discriminator::logits(ad::Tape& tape, Var pairs) const {
  Var hidden = ad::relu(ad::add_row(ad::matmul(pairs, tape.leaf(*w1)), tape.leaf(*b1)));
  return ad::add_row(ad::matmul(hidden, tape.leaf(*w2)), tape.leaf(*b2));
}

Var discriminator_score(ad::Tape& tape, Var z_text, const ad::Mask& text_mask, Var z_image,
                        const ad::Mask& image_mask, const Discriminator& disc) {
  Var parts[] = {ad::masked_mean_rows(z_text, text_mask), ad::masked_mean_rows(z_image, image_mask)};
  return ad::sigmoid(disc.logits(tape, ad::concat_cols(parts)));
}

Var alignment_bce(Var pos_logits, Var neg_logits) {
  const double np = static_cast<double>(pos_logits.rows() * pos_logits.cols());
  const double nn = static_cast<double>(neg_logits.rows() * neg_logits.cols());
  // -ln sigmoid(x) = softplus(-x), -ln(1 - sigmoid(x)) = softplus(x)
  Var pos = ad::scale(ad::sum(ad::softplus(ad::scale(pos_logits, -1.0))), 1.0 / np);
  Var neg = ad::scale(ad::sum(ad::softplus(neg_logits)), 1.0 / nn);
  return pos + neg;
}

Var alignment_bce(Var pos_logits) {
  const double np = static_cast<double>(pos_logits.rows() * pos_logits.cols());
  return ad::scale(ad::sum(ad::softplus(ad::scale(pos_logits, -1.0))), 1.0 / np);
}

Var alignment_loss(ad::Tape& tape, std::span<const Var> text_pooled, std::span<const Var> image_pooled,
                   const Discriminator& disc) {
  const std::size_t b = text_pooled.size();
  if (b == 0 || image_pooled.size() != b) throw ContractError("alignment_loss: need matching non-empty batches");
  Var text = ad::concat_rows(text_pooled);
  Var image = ad::concat_rows(image_pooled);
  // Row b*B + b' pairs text b with image b'.
  std::vector<int> ti, vi, pos, neg;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      (i == j ? pos : neg).push_back(static_cast<int>(ti.size()));
      ti.push_back(static_cast<int>(i));
      vi.push_back(static_cast<int>(j));
    }
  }
  Var cols[] = {ad::gather_rows(text, ti), ad::gather_rows(image, vi)};
  Var logits = disc.logits(tape, ad::concat_cols(cols));
  Var pos_logits = ad::gather_rows(logits, pos);
  if (neg.empty()) return alignment_bce(pos_logits);
  return alignment_bce(pos_logits, ad::gather_rows(logits, neg));
}

}  // namespace mmib::reg
