#include "mmib/layers.hpp"

#include <cmath>

#include "mmib/error.hpp"

namespace mmib::nn {

using ad::Var;

Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = u(rng);
  return m;
}

void ApencConfig::validate() const {
  if (d == 0 || heads == 0 || d_ff == 0 || depth == 0) throw ConfigError("encoder sizes must be positive");
  if (d % heads != 0) {
    throw ConfigError("model width d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
  }
  if (!(ln_eps > 0.0)) throw ConfigError("layer-norm eps must be positive");
}

AttentionParams AttentionParams::create(ad::ParameterStore& store, const std::string& prefix,
                                        const ApencConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t dh = cfg.d / cfg.heads;
  AttentionParams p;
  for (std::size_t j = 0; j < cfg.heads; ++j) {
    const std::string h = prefix + ".head" + std::to_string(j);
    p.w_q.push_back(&store.add(h + ".w_q", xavier_uniform(cfg.d, dh, rng)));
    p.w_k.push_back(&store.add(h + ".w_k", xavier_uniform(cfg.d, dh, rng)));
    p.w_v.push_back(&store.add(h + ".w_v", xavier_uniform(cfg.d, dh, rng)));
  }
  p.w_out = &store.add(prefix + ".w_out", xavier_uniform(cfg.d, cfg.d, rng));
  p.ff_w1 = &store.add(prefix + ".ff_w1", xavier_uniform(cfg.d, cfg.d_ff, rng));
  p.ff_b1 = &store.add(prefix + ".ff_b1", Matrix(1, cfg.d_ff));
  p.ff_w2 = &store.add(prefix + ".ff_w2", xavier_uniform(cfg.d_ff, cfg.d, rng));
  p.ff_b2 = &store.add(prefix + ".ff_b2", Matrix(1, cfg.d));
  p.ln1_gain = &store.add(prefix + ".ln1_gain", Matrix(1, cfg.d, 1.0));
  p.ln1_bias = &store.add(prefix + ".ln1_bias", Matrix(1, cfg.d));
  p.ln2_gain = &store.add(prefix + ".ln2_gain", Matrix(1, cfg.d, 1.0));
  p.ln2_bias = &store.add(prefix + ".ln2_bias", Matrix(1, cfg.d));
  return p;
}

std::vector<ad::Parameter*> AttentionParams::all() const {
  std::vector<ad::Parameter*> out;
  for (std::size_t j = 0; j < w_q.size(); ++j) {
    out.push_back(w_q[j]);
    out.push_back(w_k[j]);
    out.push_back(w_v[j]);
  }
  for (auto* p : {w_out, ff_w1, ff_b1, ff_w2, ff_b2, ln1_gain, ln1_bias, ln2_gain, ln2_bias}) out.push_back(p);
  return out;
}

Var multi_head_attention(ad::Tape& tape, Var q, Var k, const ad::Mask& key_mask, const AttentionParams& p,
                         std::vector<Var>* weights) {
  const std::size_t d = q.cols();
  if (k.cols() != d) {
    throw ShapeError("attention: query width " + std::to_string(d) + " but key width " + std::to_string(k.cols()));
  }
  const std::size_t heads = p.w_q.size();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d) / static_cast<double>(heads));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t j = 0; j < heads; ++j) {
    Var qh = ad::matmul(q, tape.leaf(*p.w_q[j]));
    Var kh = ad::matmul(k, tape.leaf(*p.w_k[j]));
    Var vh = ad::matmul(k, tape.leaf(*p.w_v[j]));
    Var att = ad::row_softmax(ad::scale(ad::matmul_nt(qh, kh), inv_scale), key_mask);
    if (weights) weights->push_back(att);
    outs.push_back(ad::matmul(att, vh));
  }
  return ad::matmul(ad::concat_cols(outs), tape.leaf(*p.w_out));
}

Var apenc_layer(ad::Tape& tape, Var q, Var k, const ad::Mask& key_mask, const AttentionParams& p, double ln_eps,
                std::vector<Var>* weights) {
  Var att = multi_head_attention(tape, q, k, key_mask, p, weights);
  Var f1 = ad::layer_norm(q + att, tape.leaf(*p.ln1_gain), tape.leaf(*p.ln1_bias), ln_eps);
  Var hidden = ad::relu(ad::add_row(ad::matmul(f1, tape.leaf(*p.ff_w1)), tape.leaf(*p.ff_b1)));
  Var ff = ad::add_row(ad::matmul(hidden, tape.leaf(*p.ff_w2)), tape.leaf(*p.ff_b2));
  return ad::layer_norm(f1 + ff, tape.leaf(*p.ln2_gain), tape.leaf(*p.ln2_bias), ln_eps);
}

Apenc::Apenc(ad::ParameterStore& store, const std::string& prefix, const ApencConfig& cfg, bool self_attention,
             Rng& rng)
    : cfg_(cfg), self_attention_(self_attention) {
  cfg_.validate();
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    const std::string name = cfg_.depth == 1 ? prefix : prefix + ".layer" + std::to_string(l);
    layers_.push_back(AttentionParams::create(store, name, cfg_, rng));
  }
}

Var Apenc::operator()(ad::Tape& tape, Var q, Var k, const ad::Mask& key_mask) const {
  if (layers_.empty()) throw ContractError("encoder has no layers");
  Var out = apenc_layer(tape, q, k, key_mask, layers_[0], cfg_.ln_eps);
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    out = apenc_layer(tape, out, self_attention_ ? out : k, key_mask, layers_[l], cfg_.ln_eps);
  }
  return out;
}

std::vector<ad::Parameter*> Apenc::parameters() const {
  std::vector<ad::Parameter*> out;
  for (const auto& l : layers_) {
    auto ps = l.all();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

Matrix Noise::draw(std::size_t rows, std::size_t cols, std::size_t valid_rows) {
  Matrix eps(rows, cols);
  if (!sampling_) return eps;
  for (std::size_t r = 0; r < std::min(rows, valid_rows); ++r) {
    for (double& v : eps.row_span(r)) v = normal_(rng_);
  }
  return eps;
}

GaussianHead::GaussianHead(ad::ParameterStore& store, const std::string& prefix, const ApencConfig& cfg, Rng& rng)
    : mu(store, prefix + ".mu", cfg, true, rng), sigma(store, prefix + ".sigma", cfg, true, rng) {}

GaussianLatent variational_encode(ad::Tape& tape, Var x, const ad::Mask& mask, const GaussianHead& head,
                                  Noise& noise) {
  GaussianLatent lat;
  lat.mask = mask.empty() ? ad::Mask(x.rows(), 1) : mask;
  lat.mu = head.mu(tape, x, x, lat.mask);
  lat.log_var = head.sigma(tape, x, x, lat.mask);
  lat.sigma = ad::exp(ad::scale(lat.log_var, 0.5));
  std::size_t valid = 0;
  for (std::size_t r = 0; r < lat.mask.size(); ++r) {
    if (lat.mask[r]) valid = r + 1;
  }
  if (noise.sampling()) {
    Var eps = tape.constant(noise.draw(x.rows(), x.cols(), valid));
    lat.z = lat.mu + lat.sigma * eps;
  } else {
    lat.z = lat.mu;
  }
  return lat;
}

FusionOutput fuse(ad::Tape& tape, const GaussianLatent& image, const GaussianLatent& text, const Apenc& v2t,
                  const Apenc& t2v) {
  if (image.z.cols() != text.z.cols()) {
    throw ShapeError("fuse: image width " + std::to_string(image.z.cols()) + " but text width " +
                     std::to_string(text.z.cols()));
  }
  FusionOutput out;
  out.image_attended = v2t(tape, image.z, text.z, text.mask);
  out.text_fused = t2v(tape, text.z, out.image_attended, image.mask);
  return out;
}

}  // namespace mmib::nn
