#pragma once

// Span-level NER scoring, relation scoring, and the contribution-score
// diagnostic (row sums of X * Z^T).

#include <compare>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mmib/matrix.hpp"

namespace mmib::metrics {

struct TypedSpan {
  int start = 0;
  int end = 0;  // inclusive
  std::string type;
  auto operator<=>(const TypedSpan&) const = default;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool operator==(const Prf&) const = default;
};

/// Maximal typed spans of a BIO sequence. An I-X that does not continue an
/// X entity opens a new span (repair rule for model output).
std::vector<TypedSpan> decode_bio(std::span<const std::string> labels);
/// Inverse of decode_bio for non-overlapping spans over n tokens.
std::vector<std::string> encode_bio(std::size_t n, std::span<const TypedSpan> spans);

/// Counts-based P/R/F1 where 0/0 is taken as 0.
Prf prf_from_counts(std::size_t tp, std::size_t predicted, std::size_t gold);

/// Exact span+type matching; duplicates in either list count once.
Prf span_prf(std::span<const TypedSpan> pred, std::span<const TypedSpan> gold);

/// Micro P/R/F1 over relation labels: predictions equal to negative_label are
/// not positives, gold equal to negative_label is not recalled.
Prf relation_prf(std::span<const std::string> preds, std::span<const std::string> golds,
                 const std::string& negative_label);

double accuracy(std::span<const std::string> preds, std::span<const std::string> golds);

/// Corpus-level NER report accumulated over sentences.
class SpanCounter {
 public:
  void add(std::span<const TypedSpan> pred, std::span<const TypedSpan> gold);
  Prf overall() const;
  /// Per entity type, sorted by type name.
  std::vector<std::pair<std::string, Prf>> per_type() const;

 private:
  struct Counts {
    std::size_t tp = 0, pred = 0, gold = 0;
  };
  Counts total_;
  std::vector<std::pair<std::string, Counts>> by_type_;
  Counts& type_counts(const std::string& type);
};

/// A = x * z^T, returns the row sums of A (one score per position).
std::vector<double> contribution_score(const Matrix& x, const Matrix& z);

/// "position,score" CSV.
void write_contribution_csv(std::ostream& out, std::span<const double> scores);

}  // namespace mmib::metrics
