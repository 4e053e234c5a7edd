#include "mmib/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "mmib/config.hpp"
#include "mmib/error.hpp"
#include "mmib/tensor_file.hpp"

namespace mmib::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for " + p.string());
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError("checkpoint file missing: " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint file " + p.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const model::MmibModel& model, const data::Vocab& vocab,
                     const data::LabelSet& labels, const json& meta) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  json index = json::object();
  std::size_t k = 0;
  for (const auto& p : model.parameters()) {
    char name[32];
    std::snprintf(name, sizeof name, "t%03zu.mmtf", k++);
    io::write_tensor_file(p.value, tmp / name, io::Dtype::kFloat64);
    index[p.name] = {{"file", name}, {"shape", {p.value.rows(), p.value.cols()}}};
  }
  write_json(tmp / "index.json", index);
  write_json(tmp / "config.json", cfg::to_json(model.config()));
  write_json(tmp / "vocab.json", vocab.tokens());
  write_json(tmp / "labels.json", labels.names());
  write_json(tmp / "meta.json", meta);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Loaded load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("checkpoint directory not found: " + dir.string());
  Loaded out;
  cfg::TrainConfig config;
  try {
    config = cfg::from_json(read_json(dir / "config.json"));
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint config: " + std::string(e.what()));
  }
  try {
    out.vocab = data::Vocab(read_json(dir / "vocab.json").get<std::vector<std::string>>());
    out.labels = data::LabelSet(read_json(dir / "labels.json").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw FormatError("checkpoint vocab/labels: " + std::string(e.what()));
  }
  out.meta = read_json(dir / "meta.json");
  out.model = std::make_unique<model::MmibModel>(config, out.vocab.size(), out.labels.size());
  const json index = read_json(dir / "index.json");
  auto& store = out.model->parameters();
  if (!index.is_object() || index.size() != store.size()) {
    throw FormatError("checkpoint index lists " + std::to_string(index.size()) + " tensors, model has " +
                      std::to_string(store.size()));
  }
  for (auto& p : store) {
    auto it = index.find(p.name);
    if (it == index.end()) throw FormatError("checkpoint has no tensor '" + p.name + "'");
    Matrix m = io::read_tensor_file(dir / it->at("file").get<std::string>());
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw FormatError("checkpoint tensor '" + p.name + "' has shape " + m.shape_str() + ", model expects " +
                        p.value.shape_str());
    }
    p.value = std::move(m);
  }
  return out;
}

}  // namespace mmib::ckpt
