#pragma once

// Attentive propagation encoder (one transformer-style block: multi-head
// attention from queries Q onto keys/values K, residual + layer norm,
// feed-forward, residual + layer norm), the per-modality Gaussian heads
// built from two such encoders, and the two-way cross-modal fusion.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mmib/autodiff.hpp"

namespace mmib::nn {

using Rng = std::mt19937_64;

/// Glorot-uniform matrix.
Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

struct ApencConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t depth = 1;
  double ln_eps = 1e-5;

  /// Throws ConfigError unless d % heads == 0 and all sizes are positive.
  void validate() const;
};

struct AttentionParams {
  std::vector<ad::Parameter*> w_q, w_k, w_v;  // per head, d x d/h
  ad::Parameter* w_out = nullptr;             // d x d
  ad::Parameter* ff_w1 = nullptr;             // d x d_ff
  ad::Parameter* ff_b1 = nullptr;             // 1 x d_ff
  ad::Parameter* ff_w2 = nullptr;             // d_ff x d
  ad::Parameter* ff_b2 = nullptr;             // 1 x d
  ad::Parameter* ln1_gain = nullptr;
  ad::Parameter* ln1_bias = nullptr;
  ad::Parameter* ln2_gain = nullptr;
  ad::Parameter* ln2_bias = nullptr;

  static AttentionParams create(ad::ParameterStore& store, const std::string& prefix, const ApencConfig& cfg,
                                Rng& rng);
  std::vector<ad::Parameter*> all() const;
};

/// Per-head scaled dot-product attention followed by the output projection.
/// Masked key columns get zero weight. When `weights` is non-null the
/// per-head attention matrices are appended to it.
ad::Var multi_head_attention(ad::Tape& tape, ad::Var q, ad::Var k, const ad::Mask& key_mask,
                             const AttentionParams& p, std::vector<ad::Var>* weights = nullptr);

/// One encoder block.
ad::Var apenc_layer(ad::Tape& tape, ad::Var q, ad::Var k, const ad::Mask& key_mask, const AttentionParams& p,
                    double ln_eps, std::vector<ad::Var>* weights = nullptr);

/// Stack of `depth` encoder blocks. With self_attention the keys of block
/// l > 0 are the previous block's output; otherwise they stay K.
class Apenc {
 public:
  Apenc() = default;
  Apenc(ad::ParameterStore& store, const std::string& prefix, const ApencConfig& cfg, bool self_attention, Rng& rng);

  ad::Var operator()(ad::Tape& tape, ad::Var q, ad::Var k, const ad::Mask& key_mask) const;

  const ApencConfig& config() const { return cfg_; }
  const std::vector<AttentionParams>& layers() const { return layers_; }
  std::vector<ad::Parameter*> parameters() const;

 private:
  ApencConfig cfg_;
  bool self_attention_ = true;
  std::vector<AttentionParams> layers_;
};

/// Source of the reparameterization noise.
class Noise {
 public:
  /// eps == 0 everywhere (evaluation).
  static Noise zero() { return Noise(false, 0); }
  static Noise gaussian(std::uint64_t seed) { return Noise(true, seed); }

  bool sampling() const { return sampling_; }
  /// rows x cols draws; rows beyond `valid_rows` are zero and consume no draws.
  Matrix draw(std::size_t rows, std::size_t cols, std::size_t valid_rows);

 private:
  Noise(bool sampling, std::uint64_t seed) : sampling_(sampling), rng_(seed) {}
  bool sampling_;
  Rng rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

struct GaussianLatent {
  ad::Var mu;
  ad::Var log_var;  // ln sigma^2, the sigma-path encoder output
  ad::Var sigma;    // exp(0.5 * log_var)
  ad::Var z;        // mu + sigma * eps
  ad::Mask mask;
};

/// Two disjoint encoders: one for the mean, one for the log-variance.
struct GaussianHead {
  Apenc mu;
  Apenc sigma;

  GaussianHead() = default;
  GaussianHead(ad::ParameterStore& store, const std::string& prefix, const ApencConfig& cfg, Rng& rng);
};

/// Each row of X attends to every unmasked row of X in both encoders.
GaussianLatent variational_encode(ad::Tape& tape, ad::Var x, const ad::Mask& mask, const GaussianHead& head,
                                  Noise& noise);

struct FusionOutput {
  ad::Var image_attended;  // B: image rows attending to text, (m+1) x d
  ad::Var text_fused;      // C: text rows attending to B, (n+2) x d
};

/// B = V2T(Z^V, Z^T), C = T2V(Z^T, B).
FusionOutput fuse(ad::Tape& tape, const GaussianLatent& image, const GaussianLatent& text, const Apenc& v2t,
                  const Apenc& t2v);

}  // namespace mmib::nn
