#pragma once

// Dataset ingestion: JSONL manifests, vocabularies, label sets, feature
// loading and padded batches.
//
// Manifest lines carry {id, tokens, image_ref} plus either bio_labels (NER)
// or relation + head_span + tail_span (relation extraction). An optional
// text_ref names a pre-extracted (n+2) x d_text feature file. Relative paths
// resolve against the manifest's directory.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmib/autodiff.hpp"
#include "mmib/matrix.hpp"

namespace mmib::data {

enum class Task { kMner, kMre };

std::string to_string(Task t);
Task parse_task(const std::string& s);

/// Inclusive token index range.
struct Span {
  int start = 0;
  int end = 0;
  bool operator==(const Span&) const = default;
};

struct Example {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<std::string> bio_labels;
  std::string relation;
  Span head_span;
  Span tail_span;
  std::filesystem::path image_ref;
  std::optional<std::filesystem::path> text_ref;

  Task task() const { return relation.empty() ? Task::kMner : Task::kMre; }
};

/// Strict BIO check for gold data: every I-X continues a B-X or I-X.
bool is_well_formed_bio(std::span<const std::string> labels, std::string* why = nullptr);

/// Parses one manifest line; throws DataError with the reason.
Example parse_example(const std::string& line, const std::filesystem::path& base_dir);
/// Parses a whole manifest stream, collecting every bad line into one
/// DataError ("line N (id X): reason").
std::vector<Example> parse_manifest(std::istream& in, const std::filesystem::path& base_dir);
std::vector<Example> load_manifest(const std::filesystem::path& path);

class Vocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;

  Vocab();
  explicit Vocab(std::vector<std::string> tokens);
  /// Specials followed by the training tokens in first-seen order.
  static Vocab build(std::span<const Example> examples);

  int id(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

/// Ordered label names with index lookup.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names);
  /// "O" followed by B-/I- pairs for each type.
  static LabelSet bio(std::span<const std::string> entity_types);

  int index(const std::string& name) const;  // throws DataError
  bool contains(const std::string& name) const { return index_.contains(name); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
};

/// An example after truncation, encoding and feature loading.
struct Instance {
  std::string id;
  std::vector<std::string> tokens;          // truncated
  std::vector<int> token_ids;               // n+2, CLS first, SEP last
  std::shared_ptr<const Matrix> text;       // optional (n+2) x d_text
  std::shared_ptr<const Matrix> image;      // (m+1) x d_img_raw
  std::vector<int> label_ids;               // n+2 for NER, "O" at CLS/SEP
  int relation = -1;
  Span head_span;
  Span tail_span;
};

struct PrepareOptions {
  Task task = Task::kMner;
  std::size_t max_len = 128;  // tokens, excluding CLS/SEP
  std::size_t d_img_raw = 2048;
  std::size_t d_text = 0;     // required width of text_ref files when > 0
  bool use_text_features = false;
};

struct Prepared {
  std::vector<Instance> instances;
  std::vector<std::string> warnings;
};

/// Truncates to max_len, encodes tokens/labels and loads feature files.
/// Examples whose entity spans would be cut are skipped with a warning.
/// Throws DataError on task mismatch, unknown labels or bad feature files.
Prepared prepare(std::span<const Example> examples, const Vocab& vocab, const LabelSet& labels,
                 const PrepareOptions& opts);

struct BatchItem {
  const Instance* source = nullptr;
  std::vector<int> token_ids;  // text_len, -1 for padding
  Matrix text;                 // text_len x d_text when feature path is used
  Matrix image;                // image_len x d_img_raw, zero rows for padding
  ad::Mask text_mask;
  ad::Mask image_mask;
  std::vector<int> label_ids;  // text_len, -1 for padding (NER)
  int relation = -1;
  Span head_span;
  Span tail_span;

  std::size_t text_valid() const;
  std::size_t image_valid() const;
};

struct Batch {
  std::vector<BatchItem> items;
  std::size_t text_len = 0;
  std::size_t image_len = 0;
};

/// Pads the given instances to common lengths (+extra rows of padding).
Batch make_batch(std::span<const Instance* const> instances, std::size_t extra_text_pad = 0,
                 std::size_t extra_image_pad = 0);

/// Deterministic epoch order: permutation depends only on (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// Consecutive batches of `batch_size` over a shuffled order (shuffle=false
/// keeps dataset order).
std::vector<Batch> make_batches(std::span<const Instance> instances, std::size_t batch_size, std::uint64_t seed,
                                std::uint64_t epoch = 0, bool shuffle = true);

/// [CLS] tokens [SEP] rows of the embedding table.
ad::Var embed_text(ad::Var table, std::span<const std::string> tokens, const Vocab& vocab);
/// X_raw * W_v, checking the raw feature width.
ad::Var project_images(ad::Var raw, ad::Var projection);

}  // namespace mmib::data
