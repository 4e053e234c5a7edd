#include "mmib/model.hpp"

#include "mmib/error.hpp"

namespace mmib::model {

using ad::Var;

MmibModel::MmibModel(const cfg::TrainConfig& config, std::size_t vocab_size, std::size_t num_labels)
    : cfg_(config), vocab_size_(vocab_size), num_labels_(num_labels) {
  cfg_.validate();
  const auto apenc = cfg_.model.apenc();
  const std::size_t d = cfg_.model.d;
  const std::size_t dt = cfg_.model.text_width();
  nn::Rng rng(cfg_.training.seed);
  if (!cfg_.model.use_text_features) {
    if (vocab_size == 0) throw ConfigError("model needs a non-empty vocabulary");
    embedding_ = &store_.add("text.embedding", nn::xavier_uniform(vocab_size, dt, rng));
  }
  if (dt != d) text_projection_ = &store_.add("text.projection", nn::xavier_uniform(dt, d, rng));
  image_projection_ = &store_.add("image.projection", nn::xavier_uniform(cfg_.model.d_img_raw, d, rng));
  text_head_ = nn::GaussianHead(store_, "text.latent", apenc, rng);
  image_head_ = nn::GaussianHead(store_, "image.latent", apenc, rng);
  v2t_ = nn::Apenc(store_, "fusion.v2t", apenc, false, rng);
  t2v_ = nn::Apenc(store_, "fusion.t2v", apenc, false, rng);
  disc_ = reg::Discriminator::create(store_, "align.disc", d, rng);
  if (cfg_.training.task == data::Task::kMner) {
    crf_ = decode::CrfParams::create(store_, "ner.crf", d, num_labels, rng);
  } else {
    relation_ = decode::RelationHead::create(store_, "re.head", d, num_labels, rng);
  }
}

ExampleForward MmibModel::forward_example(ad::Tape& tape, const data::BatchItem& item, nn::Noise& noise,
                                          bool with_labels) const {
  ExampleForward out;
  Var text = cfg_.model.use_text_features ? tape.constant(item.text)
                                          : ad::gather_rows(tape.leaf(*embedding_), item.token_ids);
  if (text_projection_) text = ad::matmul(text, tape.leaf(*text_projection_));
  out.text_input = text;
  Var image = data::project_images(tape.constant(item.image), tape.leaf(*image_projection_));

  out.text = nn::variational_encode(tape, text, item.text_mask, text_head_, noise);
  out.image = nn::variational_encode(tape, image, item.image_mask, image_head_, noise);
  out.fusion = nn::fuse(tape, out.image, out.text, v2t_, t2v_);

  const std::size_t valid = item.text_valid();
  if (cfg_.training.task == data::Task::kMner) {
    out.emissions = decode::crf_emissions(tape, ad::slice_rows(out.fusion.text_fused, 0, valid), crf_);
    if (with_labels) {
      const std::span<const int> gold(item.label_ids.data(), valid);
      out.task_nll = decode::crf_nll(out.emissions, tape.leaf(*crf_.transitions), gold);
    }
  } else {
    const auto mode = cfg_.model.max_pool_entities ? decode::Pooling::kMax : decode::Pooling::kMean;
    Var e1 = decode::entity_pool(out.fusion.text_fused, item.head_span, valid - 2, mode);
    Var e2 = decode::entity_pool(out.fusion.text_fused, item.tail_span, valid - 2, mode);
    out.logits = decode::relation_logits(tape, e1, e2, relation_);
    if (with_labels) {
      if (item.relation < 0) throw ContractError("relation example without a gold label");
      const auto k = static_cast<std::size_t>(item.relation);
      out.task_nll = decode::relation_nll(out.logits, k);
      if (cfg_.training.mre_negative_reconstruction) {
        out.task_nll = out.task_nll + decode::relation_negative_nll(out.logits, k);
      }
    }
  }
  return out;
}

double total_loss(double kl_t, double kl_v, double l_ar, double l_task, const reg::RegularizerConfig& cfg) {
  return reg::refinement_loss(kl_t, kl_v, l_task, cfg) + (cfg.enable_ar ? l_ar : 0.0);
}

BatchForward MmibModel::forward(ad::Tape& tape, const data::Batch& batch, nn::Noise& noise) const {
  if (batch.items.empty()) throw ContractError("forward on an empty batch");
  BatchForward out;
  const double inv_b = 1.0 / static_cast<double>(batch.items.size());
  const double b1 = cfg_.regularizers.effective_beta1();
  const double b2 = cfg_.regularizers.effective_beta2();
  std::vector<Var> kl_t, kl_v, task, pooled_t, pooled_v;
  for (const auto& item : batch.items) {
    out.examples.push_back(forward_example(tape, item, noise, true));
    const auto& ex = out.examples.back();
    task.push_back(ex.task_nll);
    if (b1 != 0.0) kl_t.push_back(reg::kl_to_std_normal(ex.text));
    if (b2 != 0.0) kl_v.push_back(reg::kl_to_std_normal(ex.image));
    if (cfg_.regularizers.enable_ar) {
      pooled_t.push_back(ad::masked_mean_rows(ex.text.z, ex.text.mask));
      pooled_v.push_back(ad::masked_mean_rows(ex.image.z, ex.image.mask));
    }
  }
  auto mean_of = [&](const std::vector<Var>& xs) {
    Var acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = acc + xs[i];
    return ad::scale(acc, inv_b);
  };
  const Var zero = tape.constant(Matrix(1, 1));
  out.kl_t = b1 != 0.0 ? ad::scale(mean_of(kl_t), b1) : zero;
  out.kl_v = b2 != 0.0 ? ad::scale(mean_of(kl_v), b2) : zero;
  out.l_ar = cfg_.regularizers.enable_ar ? reg::alignment_loss(tape, pooled_t, pooled_v, disc_) : zero;
  out.l_task = mean_of(task);
  if (cfg_.training.double_count_task) out.l_task = ad::scale(out.l_task, 2.0);
  out.loss = out.kl_t + out.kl_v + out.l_ar + out.l_task;
  out.parts = {out.kl_t.scalar(), out.kl_v.scalar(), out.l_ar.scalar(), out.l_task.scalar()};
  return out;
}

std::vector<Decoded> MmibModel::decode(const data::Batch& batch, nn::Noise& noise) const {
  ad::Tape tape(false);
  std::vector<Decoded> out(batch.items.size());
  std::vector<Matrix> emissions;
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    const auto ex = forward_example(tape, batch.items[i], noise, false);
    if (cfg_.training.task == data::Task::kMner) {
      emissions.push_back(ex.emissions.value());
    } else {
      const Matrix& l = ex.logits.value();
      std::size_t best = 0;
      for (std::size_t k = 1; k < l.cols(); ++k) {
        if (l(0, k) > l(0, best)) best = k;
      }
      out[i].relation = static_cast<int>(best);
    }
  }
  if (cfg_.training.task == data::Task::kMner) {
    auto paths = decode::omp::viterbi_batch(emissions, crf_.transitions->value);
    for (std::size_t i = 0; i < paths.size(); ++i) out[i].path = std::move(paths[i]);
  }
  return out;
}

}  // namespace mmib::model
