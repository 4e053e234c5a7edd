#include "mmib/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "mmib/checkpoint.hpp"
#include "mmib/error.hpp"
#include "mmib/optimizer.hpp"

namespace mmib::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(batch)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

nn::Noise eval_noise(const cfg::TrainConfig& c) {
  if (c.training.eval_sampling == cfg::EvalSampling::kMean) return nn::Noise::zero();
  return nn::Noise::gaussian(mix_seed(c.training.seed, ~0ULL, 0));
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void add_parts(model::LossParts& acc, const model::LossParts& p) {
  acc.kl_t += p.kl_t;
  acc.kl_v += p.kl_v;
  acc.l_ar += p.l_ar;
  acc.l_task += p.l_task;
}

model::LossParts divide(model::LossParts p, std::size_t n) {
  if (n == 0) return p;
  const double k = static_cast<double>(n);
  return {p.kl_t / k, p.kl_v / k, p.l_ar / k, p.l_task / k};
}

std::vector<std::string> token_labels(const std::vector<int>& ids, const data::LabelSet& labels) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) out.push_back(labels.name(static_cast<std::size_t>(ids[i])));
  return out;
}

void log_line(std::ostream* log, const std::string& s) {
  if (log) *log << s << '\n';
}

}  // namespace

std::vector<double> default_beta_grid() { return {0.0, 0.01, 0.1, 0.5, 1.0, 1.5, 2.0}; }

namespace {

void check_label_count(const model::MmibModel& model, const data::LabelSet& labels) {
  if (model.num_labels() != labels.size()) {
    throw ContractError("model has " + std::to_string(model.num_labels()) + " labels but the label set has " +
                        std::to_string(labels.size()));
  }
}

}  // namespace

data::LabelSet make_labels(const cfg::TrainConfig& config, std::span<const data::Example> train) {
  if (config.training.task == data::Task::kMner) return data::LabelSet::bio(config.data.entity_types);
  if (!config.data.relations.empty()) return data::LabelSet(config.data.relations);
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& ex : train) {
    if (ex.task() == data::Task::kMre && seen.insert(ex.relation).second) names.push_back(ex.relation);
  }
  if (names.size() < 2) throw DataError("relation training data must contain at least two relation labels");
  return data::LabelSet(std::move(names));
}

data::PrepareOptions prepare_options(const cfg::TrainConfig& config) {
  data::PrepareOptions o;
  o.task = config.training.task;
  o.max_len = config.training.effective_max_len();
  o.d_img_raw = config.model.d_img_raw;
  o.d_text = config.model.use_text_features ? config.model.text_width() : 0;
  o.use_text_features = config.model.use_text_features;
  return o;
}

EvalReport evaluate(const model::MmibModel& model, const data::LabelSet& labels,
                    std::span<const data::Instance> instances) {
  check_label_count(model, labels);
  const auto& c = model.config();
  EvalReport r;
  r.task = c.training.task;
  r.examples = instances.size();
  if (instances.empty()) return r;
  const auto batches = data::make_batches(instances, c.training.batch_size, 0, 0, false);
  nn::Noise decode_noise = eval_noise(c);
  nn::Noise loss_noise = eval_noise(c);
  metrics::SpanCounter spans;
  std::vector<std::string> preds, golds;
  model::LossParts loss;
  for (const auto& batch : batches) {
    const auto decoded = model.decode(batch, decode_noise);
    ad::Tape tape(false);
    add_parts(loss, model.forward(tape, batch, loss_noise).parts);
    for (std::size_t i = 0; i < batch.items.size(); ++i) {
      const data::Instance& inst = *batch.items[i].source;
      if (r.task == data::Task::kMner) {
        const auto p = metrics::decode_bio(token_labels(decoded[i].path, labels));
        const auto g = metrics::decode_bio(token_labels(inst.label_ids, labels));
        spans.add(p, g);
      } else {
        preds.push_back(labels.name(static_cast<std::size_t>(decoded[i].relation)));
        golds.push_back(labels.name(static_cast<std::size_t>(inst.relation)));
      }
    }
  }
  r.loss = divide(loss, batches.size());
  if (r.task == data::Task::kMner) {
    r.overall = spans.overall();
    r.per_type = spans.per_type();
  } else {
    r.overall = metrics::relation_prf(preds, golds, c.data.negative_relation);
    r.accuracy = metrics::accuracy(preds, golds);
  }
  return r;
}

void write_metrics_csv(std::ostream& out, std::span<const EpochRecord> log) {
  out << "epoch,split,P,R,F1,loss,kl_t,kl_v,l_ar,l_task\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.split << ',';
    if (e.prf) {
      out << fmt(e.prf->precision) << ',' << fmt(e.prf->recall) << ',' << fmt(e.prf->f1) << ',';
    } else {
      out << ",,,";
    }
    out << fmt(e.loss.total()) << ',' << fmt(e.loss.kl_t) << ',' << fmt(e.loss.kl_v) << ',' << fmt(e.loss.l_ar)
        << ',' << fmt(e.loss.l_task) << '\n';
  }
}

std::string metrics_csv(std::span<const EpochRecord> log) {
  std::ostringstream s;
  write_metrics_csv(s, log);
  return s.str();
}

TrainResult train(const cfg::TrainConfig& config, std::span<const data::Example> train_set,
                  std::span<const data::Example> dev_set, const TrainOptions& opts) {
  config.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (dev_set.empty()) throw DataError("dev set is empty");
  TrainResult result;
  const data::Vocab vocab = data::Vocab::build(train_set);
  const data::LabelSet labels = make_labels(config, train_set);
  const auto popts = prepare_options(config);
  auto train_prep = data::prepare(train_set, vocab, labels, popts);
  auto dev_prep = data::prepare(dev_set, vocab, labels, popts);
  for (auto* w : {&train_prep.warnings, &dev_prep.warnings}) {
    for (auto& s : *w) {
      log_line(opts.log, "warning: " + s);
      result.warnings.push_back(std::move(s));
    }
  }
  if (train_prep.instances.empty()) throw DataError("no usable training examples after preparation");
  if (dev_prep.instances.empty()) throw DataError("no usable dev examples after preparation");

  model::MmibModel model(config, vocab.size(), labels.size());
  optim::AdamWConfig ocfg;
  ocfg.learning_rate = config.training.learning_rate;
  ocfg.weight_decay = config.training.weight_decay;
  ocfg.grad_clip = config.training.grad_clip;
  optim::AdamW opt(ocfg);

  std::optional<fs::path> ckpt_dir, csv_path;
  if (opts.out_dir) {
    fs::create_directories(*opts.out_dir);
    ckpt_dir = *opts.out_dir / "checkpoint";
    csv_path = *opts.out_dir / "metrics.csv";
  }

  double best_f1 = -1.0;
  for (std::size_t epoch = 1; epoch <= config.training.epochs; ++epoch) {
    const auto batches =
        data::make_batches(train_prep.instances, config.training.batch_size, config.training.seed, epoch, true);
    model::LossParts sum;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      nn::Noise noise = nn::Noise::gaussian(mix_seed(config.training.seed, epoch, b));
      ad::Tape tape;
      const auto fwd = model.forward(tape, batches[b], noise);
      model.parameters().zero_grad();
      tape.backward(fwd.loss);
      const auto step = opt.step(model.parameters());
      if (!step.applied) {
        ++result.skipped_steps;
        const std::string msg = "epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                                ": step aborted (" + step.reason + ")";
        log_line(opts.log, "warning: " + msg);
        result.warnings.push_back(msg);
      }
      result.step_losses.push_back(fwd.loss.scalar());
      add_parts(sum, fwd.parts);
    }
    EpochRecord tr{epoch, "train", std::nullopt, divide(sum, batches.size())};
    result.log.push_back(tr);
    result.last_train = tr;

    const EvalReport dev = evaluate(model, labels, dev_prep.instances);
    result.log.push_back({epoch, "dev", dev.overall, dev.loss});
    if (dev.overall.f1 > best_f1) {
      best_f1 = dev.overall.f1;
      result.best_epoch = epoch;
      result.best_dev = dev;
      if (ckpt_dir) {
        ckpt::save_checkpoint(*ckpt_dir, model, vocab, labels,
                              {{"epoch", epoch}, {"dev_f1", dev.overall.f1}, {"task", data::to_string(dev.task)}});
      }
    }
    if (csv_path) {
      std::ofstream out(*csv_path);
      write_metrics_csv(out, result.log);
      if (!out) throw Error("cannot write " + csv_path->string());
    }
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu train_loss %.6f dev_P %.4f dev_R %.4f dev_F1 %.4f", epoch,
                  tr.loss.total(), dev.overall.precision, dev.overall.recall, dev.overall.f1);
    log_line(opts.log, line);
  }
  return result;
}

std::vector<json> predict(const model::MmibModel& model, const data::Vocab& vocab, const data::LabelSet& labels,
                          std::span<const data::Example> examples) {
  check_label_count(model, labels);
  const auto& c = model.config();
  const auto popts = prepare_options(c);
  std::vector<json> out(examples.size());
  std::vector<data::Instance> instances;
  std::vector<std::size_t> where;
  std::vector<std::string> errors;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    data::Prepared p;
    try {
      p = data::prepare(examples.subspan(i, 1), vocab, labels, popts);
    } catch (const DataError& e) {
      errors.push_back(e.what());
      continue;
    }
    if (p.instances.empty()) {
      out[i] = {{"id", examples[i].id}, {"skipped", p.warnings.empty() ? "not usable" : p.warnings.front()}};
      continue;
    }
    instances.push_back(std::move(p.instances.front()));
    where.push_back(i);
  }
  if (!errors.empty()) {
    std::string msg = "cannot predict on this data:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw DataError(msg);
  }
  nn::Noise noise = eval_noise(c);
  const std::size_t bs = c.training.batch_size;
  for (std::size_t start = 0; start < instances.size(); start += bs) {
    const std::size_t end = std::min(instances.size(), start + bs);
    std::vector<const data::Instance*> ptrs;
    for (std::size_t k = start; k < end; ++k) ptrs.push_back(&instances[k]);
    const auto batch = data::make_batch(ptrs);
    const auto decoded = model.decode(batch, noise);
    for (std::size_t k = start; k < end; ++k) {
      const data::Example& ex = examples[where[k]];
      const auto& d = decoded[k - start];
      json j;
      j["id"] = ex.id;
      if (c.training.task == data::Task::kMner) {
        auto tags = token_labels(d.path, labels);
        tags.resize(ex.tokens.size(), "O");
        json spans = json::array();
        for (const auto& s : metrics::decode_bio(tags)) {
          spans.push_back({{"start", s.start}, {"end", s.end}, {"type", s.type}});
        }
        j["tokens"] = ex.tokens;
        j["bio_labels"] = tags;
        j["spans"] = spans;
      } else {
        j["relation"] = labels.name(static_cast<std::size_t>(d.relation));
        j["head_span"] = {ex.head_span.start, ex.head_span.end};
        j["tail_span"] = {ex.tail_span.start, ex.tail_span.end};
      }
      out[where[k]] = std::move(j);
    }
  }
  return out;
}

std::vector<SweepRow> sweep(const cfg::TrainConfig& base, std::span<const data::Example> train_set,
                            std::span<const data::Example> dev_set, std::span<const double> grid,
                            std::span<const std::string> modes, std::ostream* log) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  for (double g : grid) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("sweep grid values must be finite and >= 0");
  }
  if (modes.empty()) throw ConfigError("sweep needs at least one mode");
  for (const auto& m : modes) {
    if (m != "both" && m != "beta1" && m != "beta2") throw ConfigError("unknown sweep mode '" + m + "'");
  }
  std::vector<SweepRow> rows;
  for (const auto& mode : modes) {
    for (double g : grid) {
      cfg::TrainConfig c = base;
      c.regularizers.enable_rr = true;
      c.regularizers.beta1 = mode == "beta2" ? 1.0 : g;
      c.regularizers.beta2 = mode == "beta1" ? 1.0 : g;
      const auto r = train(c, train_set, dev_set, {});
      rows.push_back({mode, c.regularizers.beta1, c.regularizers.beta2, r.best_dev.overall.f1});
      char line[128];
      std::snprintf(line, sizeof line, "sweep %s beta1=%g beta2=%g dev_F1=%.4f", mode.c_str(), rows.back().beta1,
                    rows.back().beta2, rows.back().dev_f1);
      log_line(log, line);
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "mode,beta1,beta2,dev_F1\n";
  for (const auto& r : rows) out << r.mode << ',' << fmt(r.beta1) << ',' << fmt(r.beta2) << ',' << fmt(r.dev_f1) << '\n';
}

std::vector<AblationRow> ablate(const cfg::TrainConfig& base, std::span<const data::Example> train_set,
                                std::span<const data::Example> dev_set, std::span<const std::string> drops,
                                std::ostream* log) {
  std::set<std::string> wanted;
  for (const auto& d : drops) {
    if (d != "rr" && d != "ar" && d != "both") throw ConfigError("unknown ablation target '" + d + "'");
    wanted.insert(d);
  }
  struct Variant {
    std::string name;
    bool rr, ar;
  };
  std::vector<Variant> variants{{"full", true, true}};
  if (wanted.contains("rr")) variants.push_back({"-rr", false, true});
  if (wanted.contains("ar")) variants.push_back({"-ar", true, false});
  if (wanted.contains("both")) variants.push_back({"-both", false, false});
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    cfg::TrainConfig c = base;
    c.regularizers.enable_rr = v.rr;
    c.regularizers.enable_ar = v.ar;
    const auto r = train(c, train_set, dev_set, {});
    AblationRow row{v.name, r.best_dev.overall, std::nullopt, r.last_train.loss};
    if (!rows.empty()) row.delta_f1 = row.prf.f1 - rows.front().prf.f1;
    rows.push_back(row);
    char line[128];
    std::snprintf(line, sizeof line, "ablate %s dev_F1=%.4f", v.name.c_str(), row.prf.f1);
    log_line(log, line);
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "variant,P,R,F1,dF1,kl_t,kl_v,l_ar,l_task\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << fmt(r.prf.precision) << ',' << fmt(r.prf.recall) << ',' << fmt(r.prf.f1) << ','
        << (r.delta_f1 ? fmt(*r.delta_f1) : std::string()) << ',' << fmt(r.final_train_loss.kl_t) << ','
        << fmt(r.final_train_loss.kl_v) << ',' << fmt(r.final_train_loss.l_ar) << ','
        << fmt(r.final_train_loss.l_task) << '\n';
  }
}

}  // namespace mmib::train
