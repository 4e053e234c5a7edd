#include "mmib/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mmib/checkpoint.hpp"
#include "mmib/config.hpp"
#include "mmib/error.hpp"
#include "mmib/metrics.hpp"
#include "mmib/synthetic.hpp"
#include "mmib/trainer.hpp"

namespace mmib::cli {

namespace fs = std::filesystem;

namespace {

struct DataArgs {
  std::string config;
  std::string train;
  std::string dev;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};

void add_data_args(CLI::App* sub, DataArgs& a) {
  sub->add_option("--config", a.config, "JSON config file")->required();
  sub->add_option("--train", a.train, "training manifest (overrides data.train)");
  sub->add_option("--dev", a.dev, "dev manifest (overrides data.dev)");
  sub->add_option("--seed", a.seed, "overrides training.seed");
  sub->add_option("--epochs", a.epochs, "overrides training.epochs");
}

struct Loaded {
  cfg::TrainConfig config;
  std::vector<data::Example> train;
  std::vector<data::Example> dev;
};

std::vector<data::Example> load_examples(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("manifest not found: " + p.string());
  return data::load_manifest(p);
}

Loaded load_run(const DataArgs& a) {
  Loaded l;
  l.config = cfg::load_config(a.config);
  if (a.seed) l.config.training.seed = *a.seed;
  if (a.epochs) l.config.training.epochs = *a.epochs;
  if (!a.train.empty()) l.config.data.train = a.train;
  if (!a.dev.empty()) l.config.data.dev = a.dev;
  l.config.validate();
  if (!l.config.data.train) throw ConfigError("no training manifest (use --train or data.train)");
  if (!l.config.data.dev) throw ConfigError("no dev manifest (use --dev or data.dev)");
  l.train = load_examples(*l.config.data.train);
  l.dev = load_examples(*l.config.data.dev);
  return l;
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << content;
  if (!out) throw Error("cannot write " + p.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_report(std::ostream& out, const train::EvalReport& r) {
  out << "examples " << r.examples << "\n";
  out << "P " << fmt(r.overall.precision) << " R " << fmt(r.overall.recall) << " F1 " << fmt(r.overall.f1) << "\n";
  if (r.task == data::Task::kMner) {
    for (const auto& [type, prf] : r.per_type) {
      out << "  " << type << " P " << fmt(prf.precision) << " R " << fmt(prf.recall) << " F1 " << fmt(prf.f1)
          << "\n";
    }
  } else {
    out << "accuracy " << fmt(r.accuracy) << "\n";
  }
}

void check_compatible(const cfg::TrainConfig& stored, const std::string& config_path) {
  if (config_path.empty()) return;
  const auto given = cfg::load_config(config_path);
  auto mismatch = [](const std::string& what) {
    throw ConfigError("checkpoint is incompatible with the given config: " + what + " differs");
  };
  if (given.training.task != stored.training.task) mismatch("task");
  if (given.model.d != stored.model.d) mismatch("model.d");
  if (given.model.heads != stored.model.heads) mismatch("model.heads");
  if (given.model.apenc().d_ff != stored.model.apenc().d_ff) mismatch("model.d_ff");
  if (given.model.depth != stored.model.depth) mismatch("model.depth");
  if (given.model.d_img_raw != stored.model.d_img_raw) mismatch("model.d_img_raw");
  if (given.model.text_width() != stored.model.text_width()) mismatch("model.d_text");
}

std::vector<data::Instance> prepare_eval(const ckpt::Loaded& ck, const std::vector<data::Example>& ex,
                                         std::ostream& err) {
  auto prep = data::prepare(ex, ck.vocab, ck.labels, train::prepare_options(ck.model->config()));
  for (const auto& w : prep.warnings) err << "warning: " << w << "\n";
  return std::move(prep.instances);
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad grid value '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("sweep grid is empty");
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal entity and relation extraction with information-bottleneck regularizers", "mmib"};
  app.require_subcommand(1);

  DataArgs train_args;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "train a model and keep the best dev checkpoint");
  add_data_args(train_cmd, train_args);
  train_cmd->add_option("--out", train_out, "output directory (checkpoint/ and metrics.csv)")->required();

  std::string ck_dir, data_path, eval_config, pred_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--checkpoint", ck_dir)->required();
  eval_cmd->add_option("--data", data_path)->required();
  eval_cmd->add_option("--config", eval_config, "refuse to run when model/task settings differ");

  auto* pred_cmd = app.add_subcommand("predict", "write JSONL predictions");
  pred_cmd->add_option("--checkpoint", ck_dir)->required();
  pred_cmd->add_option("--data", data_path)->required();
  pred_cmd->add_option("--out", pred_out)->required();
  pred_cmd->add_option("--config", eval_config, "refuse to run when model/task settings differ");

  DataArgs sweep_args;
  std::string grid_str, sweep_csv;
  std::vector<std::string> modes{"both", "beta1", "beta2"};
  auto* sweep_cmd = app.add_subcommand("sweep", "dev F1 over a beta grid");
  add_data_args(sweep_cmd, sweep_args);
  auto* grid_opt = sweep_cmd->add_option("--grid", grid_str, "comma-separated beta values");
  sweep_cmd->add_option("--mode", modes, "both, beta1 and/or beta2")
      ->check(CLI::IsMember({"both", "beta1", "beta2"}));
  sweep_cmd->add_option("--csv", sweep_csv)->required();

  DataArgs ablate_args;
  std::string ablate_csv;
  std::vector<std::string> drops{"rr", "ar", "both"};
  auto* ablate_cmd = app.add_subcommand("ablate", "train with regularizers removed and report dF1");
  add_data_args(ablate_cmd, ablate_args);
  ablate_cmd->add_option("--drop", drops, "rr, ar and/or both")->check(CLI::IsMember({"rr", "ar", "both"}));
  ablate_cmd->add_option("--csv", ablate_csv, "also write the report as CSV");

  std::string synth_task = "mner", synth_out, synth_name = "data";
  synth::SynthOptions synth_opts;
  auto* synth_cmd = app.add_subcommand("synth", "generate a small synthetic dataset");
  synth_cmd->add_option("--task", synth_task)->check(CLI::IsMember({"mner", "mre"}));
  synth_cmd->add_option("--out", synth_out)->required();
  synth_cmd->add_option("--count", synth_opts.count);
  synth_cmd->add_option("--seed", synth_opts.seed);
  synth_cmd->add_option("--d-img-raw", synth_opts.d_img_raw);
  synth_cmd->add_option("--name", synth_name, "manifest file stem");

  std::string contrib_csv, contrib_id;
  auto* contrib_cmd = app.add_subcommand("contrib", "contribution scores of text inputs to their latents");
  contrib_cmd->add_option("--checkpoint", ck_dir)->required();
  contrib_cmd->add_option("--data", data_path)->required();
  contrib_cmd->add_option("--id", contrib_id, "example id (default: first)");
  contrib_cmd->add_option("--csv", contrib_csv)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) {
      const auto run = load_run(train_args);
      const auto r = train::train(run.config, run.train, run.dev, {fs::path(train_out), &out});
      out << "best epoch " << r.best_epoch << " dev F1 " << fmt(r.best_dev.overall.f1) << "\n";
    } else if (*eval_cmd) {
      const auto ck = ckpt::load_checkpoint(ck_dir);
      check_compatible(ck.model->config(), eval_config);
      const auto insts = prepare_eval(ck, load_examples(data_path), err);
      print_report(out, train::evaluate(*ck.model, ck.labels, insts));
    } else if (*pred_cmd) {
      const auto ck = ckpt::load_checkpoint(ck_dir);
      check_compatible(ck.model->config(), eval_config);
      const auto examples = load_examples(data_path);
      std::string text;
      for (const auto& j : train::predict(*ck.model, ck.vocab, ck.labels, examples)) text += j.dump() + "\n";
      write_file(pred_out, text);
      out << "wrote " << examples.size() << " predictions to " << pred_out << "\n";
    } else if (*sweep_cmd) {
      const auto run = load_run(sweep_args);
      const auto grid = grid_opt->count() == 0 ? train::default_beta_grid() : parse_grid(grid_str);
      const auto rows = train::sweep(run.config, run.train, run.dev, grid, modes, &out);
      std::ostringstream csv;
      train::write_sweep_csv(csv, rows);
      write_file(sweep_csv, csv.str());
    } else if (*ablate_cmd) {
      const auto run = load_run(ablate_args);
      const auto rows = train::ablate(run.config, run.train, run.dev, drops, nullptr);
      std::ostringstream csv;
      train::write_ablation_csv(csv, rows);
      out << csv.str();
      if (!ablate_csv.empty()) write_file(ablate_csv, csv.str());
    } else if (*synth_cmd) {
      synth_opts.task = data::parse_task(synth_task);
      out << synth::write_dataset(synth_out, synth_opts, synth_name).string() << "\n";
    } else if (*contrib_cmd) {
      const auto ck = ckpt::load_checkpoint(ck_dir);
      const auto insts = prepare_eval(ck, load_examples(data_path), err);
      auto it = std::find_if(insts.begin(), insts.end(),
                             [&](const data::Instance& i) { return contrib_id.empty() || i.id == contrib_id; });
      if (it == insts.end()) throw DataError("no usable example with id '" + contrib_id + "'");
      const data::Instance* one[] = {&*it};
      const auto batch = data::make_batch(one);
      ad::Tape tape(false);
      nn::Noise noise = nn::Noise::zero();
      const auto fwd = ck.model->forward_example(tape, batch.items[0], noise, false);
      std::ostringstream csv;
      metrics::write_contribution_csv(csv,
                                      metrics::contribution_score(fwd.text_input.value(), fwd.text.z.value()));
      write_file(contrib_csv, csv.str());
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace mmib::cli
