#include "mmib/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mmib/error.hpp"
#include "mmib/metrics.hpp"
#include "mmib/tensor_file.hpp"

namespace mmib::data {

using nlohmann::json;

std::string to_string(Task t) { return t == Task::kMner ? "mner" : "mre"; }

Task parse_task(const std::string& s) {
  if (s == "mner") return Task::kMner;
  if (s == "mre") return Task::kMre;
  throw ConfigError("unknown task '" + s + "' (expected mner or mre)");
}

bool is_well_formed_bio(std::span<const std::string> labels, std::string* why) {
  std::string prev_type;  // empty when outside an entity
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::string& l = labels[i];
    if (l == "O") {
      prev_type.clear();
      continue;
    }
    const bool begin = l.rfind("B-", 0) == 0;
    const bool inside = l.rfind("I-", 0) == 0;
    if ((!begin && !inside) || l.size() < 3) {
      if (why) *why = "label '" + l + "' at position " + std::to_string(i) + " is not O, B-X or I-X";
      return false;
    }
    const std::string type = l.substr(2);
    if (inside && prev_type != type) {
      if (why) *why = "orphan '" + l + "' at position " + std::to_string(i);
      return false;
    }
    prev_type = type;
  }
  return true;
}

namespace {

const std::set<std::string> kManifestKeys = {"id",        "tokens",    "bio_labels", "relation",
                                             "head_span", "tail_span", "image_ref",  "text_ref"};

Span parse_span(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw DataError(std::string(key) + " must be [start, end]");
  }
  return Span{j[0].get<int>(), j[1].get<int>()};
}

void check_span(const Span& s, std::size_t n, const char* key) {
  if (s.start < 0 || s.end < s.start || static_cast<std::size_t>(s.end) >= n) {
    throw DataError(std::string(key) + " [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                    "] outside [0, " + std::to_string(n) + ")");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

Example parse_example(const std::string& line, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("line is not a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (!kManifestKeys.contains(k)) throw DataError("unknown key '" + k + "'");
  }
  Example ex;
  try {
    ex.id = j.at("id").get<std::string>();
    ex.tokens = j.at("tokens").get<std::vector<std::string>>();
    ex.image_ref = resolve(base_dir, j.at("image_ref").get<std::string>());
    if (j.contains("text_ref")) ex.text_ref = resolve(base_dir, j.at("text_ref").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("bad field: ") + e.what());
  }
  if (ex.tokens.empty()) throw DataError("empty token list");
  const bool ner = j.contains("bio_labels");
  const bool re = j.contains("relation") || j.contains("head_span") || j.contains("tail_span");
  if (ner == re) throw DataError("expected exactly one of bio_labels or relation+head_span+tail_span");
  if (ner) {
    try {
      ex.bio_labels = j.at("bio_labels").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw DataError(std::string("bad bio_labels: ") + e.what());
    }
    if (ex.bio_labels.size() != ex.tokens.size()) {
      throw DataError(std::to_string(ex.bio_labels.size()) + " labels for " + std::to_string(ex.tokens.size()) +
                      " tokens");
    }
    std::string why;
    if (!is_well_formed_bio(ex.bio_labels, &why)) throw DataError("BIO violation: " + why);
  } else {
    if (!j.contains("relation") || !j.contains("head_span") || !j.contains("tail_span")) {
      throw DataError("relation examples need relation, head_span and tail_span");
    }
    if (!j["relation"].is_string() || j["relation"].get<std::string>().empty()) {
      throw DataError("relation must be a non-empty string");
    }
    ex.relation = j["relation"].get<std::string>();
    ex.head_span = parse_span(j["head_span"], "head_span");
    ex.tail_span = parse_span(j["tail_span"], "tail_span");
    check_span(ex.head_span, ex.tokens.size(), "head_span");
    check_span(ex.tail_span, ex.tokens.size(), "tail_span");
    if (ex.head_span == ex.tail_span) throw DataError("head_span and tail_span are identical");
  }
  return ex;
}

std::vector<Example> parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  std::vector<Example> out;
  std::vector<std::string> errors;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Example ex = parse_example(line, base_dir);
      if (!ids.insert(ex.id).second) throw DataError("duplicate id");
      if (!out.empty() && out.front().task() != ex.task()) throw DataError("mixes NER and relation examples");
      out.push_back(std::move(ex));
    } catch (const DataError& e) {
      std::string id = "?";
      try {
        id = json::parse(line).at("id").get<std::string>();
      } catch (...) {
      }
      errors.push_back("line " + std::to_string(lineno) + " (id " + id + "): " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " invalid manifest line(s): ";
    for (std::size_t i = 0; i < errors.size(); ++i) msg += (i ? "; " : "") + errors[i];
    throw DataError(msg);
  }
  return out;
}

std::vector<Example> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  try {
    return parse_manifest(in, path.parent_path());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---- vocabularies -----------------------------------------------------------

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  const std::vector<std::string> specials = {"[UNK]", "[CLS]", "[SEP]"};
  for (const auto& s : specials) {
    index_.emplace(s, static_cast<int>(tokens_.size()));
    tokens_.push_back(s);
  }
  for (auto& t : tokens) {
    if (index_.contains(t)) continue;
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }
}

Vocab Vocab::build(std::span<const Example> examples) {
  std::vector<std::string> toks;
  for (const auto& ex : examples) toks.insert(toks.end(), ex.tokens.begin(), ex.tokens.end());
  return Vocab(std::move(toks));
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate label '" + names_[i] + "'");
    }
  }
}

LabelSet LabelSet::bio(std::span<const std::string> entity_types) {
  std::vector<std::string> names = {"O"};
  for (const auto& t : entity_types) {
    names.push_back("B-" + t);
    names.push_back("I-" + t);
  }
  return LabelSet(std::move(names));
}

int LabelSet::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown label '" + name + "'");
  return it->second;
}

// ---- instances --------------------------------------------------------------

Prepared prepare(std::span<const Example> examples, const Vocab& vocab, const LabelSet& labels,
                 const PrepareOptions& opts) {
  Prepared out;
  std::vector<std::string> errors;
  std::vector<const Example*> kept;
  for (const auto& ex : examples) {
    if (ex.task() != opts.task) {
      errors.push_back("id " + ex.id + ": expected a " + to_string(opts.task) + " example");
      continue;
    }
    const std::size_t n = ex.tokens.size();
    if (n > opts.max_len) {
      bool destroyed = false;
      if (opts.task == Task::kMner) {
        for (const auto& s : metrics::decode_bio(ex.bio_labels)) {
          destroyed = destroyed || static_cast<std::size_t>(s.end) >= opts.max_len;
        }
      } else {
        destroyed = static_cast<std::size_t>(ex.head_span.end) >= opts.max_len ||
                    static_cast<std::size_t>(ex.tail_span.end) >= opts.max_len;
      }
      if (destroyed) {
        out.warnings.push_back("skipping " + ex.id + ": truncation to " + std::to_string(opts.max_len) +
                               " tokens cuts an entity span");
        continue;
      }
    }
    kept.push_back(&ex);
  }

  // Feature files are read concurrently; instance order follows the manifest.
  std::vector<std::shared_ptr<const Matrix>> images(kept.size());
  std::vector<std::shared_ptr<const Matrix>> texts(kept.size());
  std::vector<std::string> load_errors(kept.size());
  const auto count = static_cast<std::ptrdiff_t>(kept.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < count; ++k) {
    const Example& ex = *kept[k];
    try {
      auto img = std::make_shared<Matrix>(io::read_tensor_file(ex.image_ref));
      if (img->rows() < 1) throw DataError("image tensor has no rows");
      if (img->cols() != opts.d_img_raw) {
        throw DataError("image features have width " + std::to_string(img->cols()) + ", expected " +
                        std::to_string(opts.d_img_raw));
      }
      images[k] = std::move(img);
      if (opts.use_text_features) {
        if (!ex.text_ref) throw DataError("text features requested but text_ref is missing");
        Matrix t = io::read_tensor_file(*ex.text_ref);
        if (t.rows() != ex.tokens.size() + 2) {
          throw DataError("text features have " + std::to_string(t.rows()) + " rows, expected " +
                          std::to_string(ex.tokens.size() + 2));
        }
        if (opts.d_text > 0 && t.cols() != opts.d_text) {
          throw DataError("text features have width " + std::to_string(t.cols()) + ", expected " +
                          std::to_string(opts.d_text));
        }
        const std::size_t n = std::min(ex.tokens.size(), opts.max_len);
        if (n + 2 != t.rows()) {
          Matrix cut(n + 2, t.cols());
          for (std::size_t r = 0; r <= n; ++r) std::copy_n(t.row_span(r).data(), t.cols(), cut.row_span(r).data());
          std::copy_n(t.row_span(t.rows() - 1).data(), t.cols(), cut.row_span(n + 1).data());
          t = std::move(cut);
        }
        texts[k] = std::make_shared<Matrix>(std::move(t));
      }
    } catch (const Error& e) {
      load_errors[k] = "id " + ex.id + ": " + e.what();
    }
  }
  for (auto& e : load_errors) {
    if (!e.empty()) errors.push_back(std::move(e));
  }

  const int outside = labels.contains("O") ? labels.index("O") : 0;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const Example& ex = *kept[k];
    if (!images[k]) continue;
    Instance inst;
    inst.id = ex.id;
    const std::size_t n = std::min(ex.tokens.size(), opts.max_len);
    inst.tokens.assign(ex.tokens.begin(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(n));
    inst.token_ids.push_back(Vocab::kCls);
    for (const auto& t : inst.tokens) inst.token_ids.push_back(vocab.id(t));
    inst.token_ids.push_back(Vocab::kSep);
    inst.image = images[k];
    inst.text = texts[k];
    try {
      if (opts.task == Task::kMner) {
        inst.label_ids.push_back(outside);
        for (std::size_t i = 0; i < n; ++i) inst.label_ids.push_back(labels.index(ex.bio_labels[i]));
        inst.label_ids.push_back(outside);
      } else {
        inst.relation = labels.index(ex.relation);
        inst.head_span = ex.head_span;
        inst.tail_span = ex.tail_span;
      }
    } catch (const DataError& e) {
      errors.push_back("id " + ex.id + ": " + e.what());
      continue;
    }
    out.instances.push_back(std::move(inst));
  }
  if (!errors.empty()) {
    std::string msg;
    for (std::size_t i = 0; i < errors.size(); ++i) msg += (i ? "; " : "") + errors[i];
    throw DataError(msg);
  }
  return out;
}

// ---- batches ----------------------------------------------------------------

std::size_t BatchItem::text_valid() const { return static_cast<std::size_t>(std::count(text_mask.begin(), text_mask.end(), 1)); }
std::size_t BatchItem::image_valid() const {
  return static_cast<std::size_t>(std::count(image_mask.begin(), image_mask.end(), 1));
}

Batch make_batch(std::span<const Instance* const> instances, std::size_t extra_text_pad, std::size_t extra_image_pad) {
  Batch b;
  for (const Instance* inst : instances) {
    b.text_len = std::max(b.text_len, inst->token_ids.size());
    b.image_len = std::max(b.image_len, inst->image->rows());
  }
  b.text_len += extra_text_pad;
  b.image_len += extra_image_pad;
  for (const Instance* inst : instances) {
    BatchItem item;
    item.source = inst;
    const std::size_t tn = inst->token_ids.size();
    item.token_ids = inst->token_ids;
    item.token_ids.resize(b.text_len, -1);
    item.text_mask.assign(b.text_len, 0);
    std::fill_n(item.text_mask.begin(), tn, 1);
    if (inst->text) {
      item.text = Matrix(b.text_len, inst->text->cols());
      std::copy(inst->text->values().begin(), inst->text->values().end(), item.text.data());
    }
    const Matrix& img = *inst->image;
    item.image = Matrix(b.image_len, img.cols());
    std::copy(img.values().begin(), img.values().end(), item.image.data());
    item.image_mask.assign(b.image_len, 0);
    std::fill_n(item.image_mask.begin(), img.rows(), 1);
    if (!inst->label_ids.empty()) {
      item.label_ids = inst->label_ids;
      item.label_ids.resize(b.text_len, -1);
    }
    item.relation = inst->relation;
    item.head_span = inst->head_span;
    item.tail_span = inst->tail_span;
    b.items.push_back(std::move(item));
  }
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit modulo draw: the permutation is fixed by
  // (seed, epoch) regardless of standard library distribution details.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<Batch> make_batches(std::span<const Instance> instances, std::size_t batch_size, std::uint64_t seed,
                                std::uint64_t epoch, bool shuffle) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(instances.size());
  if (shuffle) {
    order = epoch_order(instances.size(), seed, epoch);
  } else {
    std::iota(order.begin(), order.end(), 0);
  }
  std::vector<Batch> out;
  std::vector<const Instance*> members;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    members.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      members.push_back(&instances[order[i]]);
    }
    out.push_back(make_batch(members));
  }
  return out;
}

ad::Var embed_text(ad::Var table, std::span<const std::string> tokens, const Vocab& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 2);
  ids.push_back(Vocab::kCls);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  ids.push_back(Vocab::kSep);
  return ad::gather_rows(table, ids);
}

ad::Var project_images(ad::Var raw, ad::Var projection) {
  if (raw.cols() != projection.rows()) {
    throw ShapeError("project_images: raw width " + std::to_string(raw.cols()) + " does not match projection " +
                     projection.value().shape_str());
  }
  return ad::matmul(raw, projection);
}

}  // namespace mmib::data
