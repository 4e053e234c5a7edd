#include "mmib/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>

#include "json.hpp"
#include "mmib/error.hpp"
#include "mmib/tensor_file.hpp"

namespace mmib::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kTypes = {"PER", "LOC", "ORG", "MISC"};
const std::vector<std::string> kFillers = {"the", "a", "is", "at", "with", "saw", "today", "near", "so", "look"};

struct RelationSpec {
  std::string name;
  std::string head_type;
  std::string tail_type;
  std::string trigger;
};

const std::vector<RelationSpec> kRelations = {
    {"None", "MISC", "PER", "and"},
    {"per/per/peer", "PER", "PER", "met"},
    {"per/loc/place_of_residence", "PER", "LOC", "lives"},
    {"org/loc/locate_at", "ORG", "LOC", "in"},
    {"per/org/member_of", "PER", "ORG", "joined"},
};

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

class Generator {
 public:
  Generator(const SynthOptions& o) : opts_(o), rng_(o.seed) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t t = 0; t < kTypes.size(); ++t) {
      Matrix p(1, o.d_img_raw);
      for (double& v : p.values()) v = n(rng_);
      prototypes_.push_back(p);
    }
  }

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  std::vector<std::string> entity(const std::string& type) {
    const std::size_t len = 1 + pick(2);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < len; ++i) out.push_back(lower(type) + "_" + std::to_string(pick(4)));
    return out;
  }

  std::string filler() { return kFillers[pick(kFillers.size())]; }

  Matrix image(const std::vector<std::string>& types) {
    std::normal_distribution<double> n(0.0, opts_.image_noise);
    Matrix m(types.size() + 1, opts_.d_img_raw);
    for (std::size_t r = 0; r < types.size(); ++r) {
      const auto t = static_cast<std::size_t>(std::find(kTypes.begin(), kTypes.end(), types[r]) - kTypes.begin());
      for (std::size_t c = 0; c < opts_.d_img_raw; ++c) {
        m(r + 1, c) = prototypes_[t](0, c) + n(rng_);
        m(0, c) += prototypes_[t](0, c) / static_cast<double>(types.size());
      }
    }
    for (std::size_t c = 0; c < opts_.d_img_raw; ++c) m(0, c) += n(rng_);
    return m;
  }

 private:
  SynthOptions opts_;
  std::mt19937_64 rng_;
  std::vector<Matrix> prototypes_;
};

}  // namespace

const std::vector<std::string>& relation_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& r : kRelations) n.push_back(r.name);
    return n;
  }();
  return names;
}

fs::path write_dataset(const fs::path& dir, const SynthOptions& opts, const std::string& name) {
  if (opts.count == 0 || opts.d_img_raw == 0) throw ConfigError("synthetic data needs count and d_img_raw > 0");
  fs::create_directories(dir / "features");
  Generator gen(opts);
  const fs::path manifest = dir / (name + ".jsonl");
  std::ofstream out(manifest);
  if (!out) throw Error("cannot write " + manifest.string());
  for (std::size_t i = 0; i < opts.count; ++i) {
    json j;
    const std::string id = name + "-" + std::to_string(i);
    std::vector<std::string> tokens;
    std::vector<std::string> types;
    j["id"] = id;
    if (opts.task == data::Task::kMner) {
      std::vector<std::string> labels;
      const std::size_t entities = 1 + gen.pick(2);
      for (std::size_t k = 0, lead = gen.pick(3); k < lead; ++k) {
        tokens.push_back(gen.filler());
        labels.push_back("O");
      }
      for (std::size_t e = 0; e < entities; ++e) {
        const std::string type = kTypes[gen.pick(kTypes.size())];
        const auto words = gen.entity(type);
        for (std::size_t w = 0; w < words.size(); ++w) {
          tokens.push_back(words[w]);
          labels.push_back((w == 0 ? "B-" : "I-") + type);
        }
        types.push_back(type);
        for (std::size_t k = 0, gap = 1 + gen.pick(2); k < gap; ++k) {
          tokens.push_back(gen.filler());
          labels.push_back("O");
        }
      }
      j["tokens"] = tokens;
      j["bio_labels"] = labels;
    } else {
      const RelationSpec& rel = kRelations[i % kRelations.size()];
      for (std::size_t k = 0, lead = gen.pick(2); k < lead; ++k) tokens.push_back(gen.filler());
      const auto head = gen.entity(rel.head_type);
      const int hs = static_cast<int>(tokens.size());
      tokens.insert(tokens.end(), head.begin(), head.end());
      const int he = static_cast<int>(tokens.size()) - 1;
      tokens.push_back(rel.trigger);
      if (gen.pick(2) == 1) tokens.push_back(gen.filler());
      const auto tail = gen.entity(rel.tail_type);
      const int ts = static_cast<int>(tokens.size());
      tokens.insert(tokens.end(), tail.begin(), tail.end());
      const int te = static_cast<int>(tokens.size()) - 1;
      tokens.push_back(gen.filler());
      types = {rel.head_type, rel.tail_type};
      j["tokens"] = tokens;
      j["relation"] = rel.name;
      j["head_span"] = {hs, he};
      j["tail_span"] = {ts, te};
    }
    const std::string image_file = "features/" + id + ".mmtf";
    io::write_tensor_file(gen.image(types), dir / image_file, io::Dtype::kFloat32);
    j["image_ref"] = image_file;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed for " + manifest.string());
  return manifest;
}

}  // namespace mmib::synth
