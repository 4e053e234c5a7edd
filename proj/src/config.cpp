#include "mmib/config.hpp"

#include <fstream>
#include <set>

#include "mmib/error.hpp"

namespace mmib::cfg {

using nlohmann::json;

nn::ApencConfig ModelConfig::apenc() const {
  nn::ApencConfig a;
  a.d = d;
  a.heads = heads;
  a.d_ff = d_ff == 0 ? 2 * d : d_ff;
  a.depth = depth;
  a.ln_eps = ln_eps;
  return a;
}

std::size_t TrainingConfig::effective_max_len() const {
  if (max_len > 0) return max_len;
  return task == data::Task::kMner ? 128 : 80;
}

std::string to_string(EvalSampling s) { return s == EvalSampling::kMean ? "mean" : "sample"; }

void TrainConfig::validate() const {
  model.apenc().validate();
  if (model.d_img_raw == 0) throw ConfigError("model.d_img_raw must be positive");
  if (!(training.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
  if (!(training.weight_decay >= 0.0)) throw ConfigError("training.weight_decay must be non-negative");
  if (training.batch_size == 0) throw ConfigError("training.batch_size must be at least 1");
  if (training.epochs == 0) throw ConfigError("training.epochs must be at least 1");
  if (!(training.grad_clip >= 0.0)) throw ConfigError("training.grad_clip must be non-negative");
  regularizers.validate();
  if (training.task == data::Task::kMner && data.entity_types.empty()) {
    throw ConfigError("data.entity_types must not be empty");
  }
}

namespace {

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key " + name_ + "." + key + ": " + e.what());
    }
  }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError("unknown config key " + name_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

template <typename T>
void get_unsigned(Section& s, const std::string& key, T& out) {
  if (const json* v = s.raw(key)) {
    if (!v->is_number_integer() || v->get<long long>() < 0) {
      throw ConfigError("config key " + key + " must be a non-negative integer");
    }
    out = static_cast<T>(v->get<unsigned long long>());
  }
}

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

TrainConfig from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> kSections{"model", "training", "regularizers", "data"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kSections.contains(it.key())) throw ConfigError("unknown config section '" + it.key() + "'");
  }
  TrainConfig c;
  const json empty = json::object();
  {
    Section s(j.contains("model") ? j["model"] : empty, "model");
    get_unsigned(s, "d", c.model.d);
    get_unsigned(s, "heads", c.model.heads);
    get_unsigned(s, "d_ff", c.model.d_ff);
    get_unsigned(s, "depth", c.model.depth);
    get_unsigned(s, "d_text", c.model.d_text);
    get_unsigned(s, "d_img_raw", c.model.d_img_raw);
    s.get("use_text_features", c.model.use_text_features);
    std::string pooling = c.model.max_pool_entities ? "max" : "mean";
    s.get("entity_pooling", pooling);
    if (pooling != "mean" && pooling != "max") throw ConfigError("model.entity_pooling must be 'mean' or 'max'");
    c.model.max_pool_entities = pooling == "max";
    s.get("ln_eps", c.model.ln_eps);
    s.finish();
  }
  {
    Section s(j.contains("training") ? j["training"] : empty, "training");
    std::string task = data::to_string(c.training.task);
    s.get("task", task);
    try {
      c.training.task = data::parse_task(task);
    } catch (const Error& e) {
      throw ConfigError(std::string("training.task: ") + e.what());
    }
    s.get("learning_rate", c.training.learning_rate);
    s.get("weight_decay", c.training.weight_decay);
    get_unsigned(s, "batch_size", c.training.batch_size);
    get_unsigned(s, "epochs", c.training.epochs);
    get_unsigned(s, "seed", c.training.seed);
    get_unsigned(s, "max_len", c.training.max_len);
    std::string sampling = to_string(c.training.eval_sampling);
    s.get("eval_sampling", sampling);
    if (sampling != "mean" && sampling != "sample") throw ConfigError("training.eval_sampling must be mean or sample");
    c.training.eval_sampling = sampling == "mean" ? EvalSampling::kMean : EvalSampling::kSample;
    s.get("double_count_task", c.training.double_count_task);
    s.get("mre_negative_reconstruction", c.training.mre_negative_reconstruction);
    s.get("grad_clip", c.training.grad_clip);
    s.finish();
  }
  {
    Section s(j.contains("regularizers") ? j["regularizers"] : empty, "regularizers");
    s.get("beta1", c.regularizers.beta1);
    s.get("beta2", c.regularizers.beta2);
    s.get("enable_rr", c.regularizers.enable_rr);
    s.get("enable_ar", c.regularizers.enable_ar);
    s.finish();
  }
  {
    Section s(j.contains("data") ? j["data"] : empty, "data");
    std::string train, dev;
    s.get("train", train);
    s.get("dev", dev);
    if (!train.empty()) c.data.train = resolve(train, base_dir);
    if (!dev.empty()) c.data.dev = resolve(dev, base_dir);
    s.get("entity_types", c.data.entity_types);
    s.get("relations", c.data.relations);
    s.get("negative_relation", c.data.negative_relation);
    s.finish();
  }
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  json j;
  j["model"] = {{"d", c.model.d},
                {"heads", c.model.heads},
                {"d_ff", c.model.d_ff},
                {"depth", c.model.depth},
                {"d_text", c.model.d_text},
                {"d_img_raw", c.model.d_img_raw},
                {"use_text_features", c.model.use_text_features},
                {"entity_pooling", c.model.max_pool_entities ? "max" : "mean"},
                {"ln_eps", c.model.ln_eps}};
  j["training"] = {{"task", data::to_string(c.training.task)},
                   {"learning_rate", c.training.learning_rate},
                   {"weight_decay", c.training.weight_decay},
                   {"batch_size", c.training.batch_size},
                   {"epochs", c.training.epochs},
                   {"seed", c.training.seed},
                   {"max_len", c.training.max_len},
                   {"eval_sampling", to_string(c.training.eval_sampling)},
                   {"double_count_task", c.training.double_count_task},
                   {"mre_negative_reconstruction", c.training.mre_negative_reconstruction},
                   {"grad_clip", c.training.grad_clip}};
  j["regularizers"] = {{"beta1", c.regularizers.beta1},
                       {"beta2", c.regularizers.beta2},
                       {"enable_rr", c.regularizers.enable_rr},
                       {"enable_ar", c.regularizers.enable_ar}};
  json d = {{"entity_types", c.data.entity_types},
            {"relations", c.data.relations},
            {"negative_relation", c.data.negative_relation}};
  if (c.data.train) d["train"] = c.data.train->string();
  if (c.data.dev) d["dev"] = c.data.dev->string();
  j["data"] = d;
  return j;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

}  // namespace mmib::cfg
