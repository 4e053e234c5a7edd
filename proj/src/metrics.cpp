#include "mmib/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <set>

#include "mmib/error.hpp"

namespace mmib::metrics {

std::vector<TypedSpan> decode_bio(std::span<const std::string> labels) {
  std::vector<TypedSpan> spans;
  bool open = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::string& l = labels[i];
    const bool begin = l.rfind("B-", 0) == 0;
    const bool inside = l.rfind("I-", 0) == 0;
    const std::string type = (begin || inside) ? l.substr(2) : std::string();
    if (inside && open && spans.back().type == type && spans.back().end == static_cast<int>(i) - 1) {
      spans.back().end = static_cast<int>(i);
      continue;
    }
    open = false;
    if (begin || inside) {
      spans.push_back({static_cast<int>(i), static_cast<int>(i), type});
      open = true;
    }
  }
  return spans;
}

std::vector<std::string> encode_bio(std::size_t n, std::span<const TypedSpan> spans) {
  std::vector<std::string> labels(n, "O");
  for (const auto& s : spans) {
    if (s.start < 0 || s.end < s.start || static_cast<std::size_t>(s.end) >= n) {
      throw ContractError("encode_bio: span outside sentence");
    }
    labels[s.start] = "B-" + s.type;
    for (int i = s.start + 1; i <= s.end; ++i) labels[i] = "I-" + s.type;
  }
  return labels;
}

Prf prf_from_counts(std::size_t tp, std::size_t predicted, std::size_t gold) {
  Prf r;
  r.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
  r.recall = gold == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(gold);
  // 2PR / (P + R) in count form
  r.f1 = tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + gold);
  return r;
}

Prf span_prf(std::span<const TypedSpan> pred, std::span<const TypedSpan> gold) {
  const std::set<TypedSpan> p(pred.begin(), pred.end());
  const std::set<TypedSpan> g(gold.begin(), gold.end());
  std::size_t tp = 0;
  for (const auto& s : p) tp += g.contains(s);
  return prf_from_counts(tp, p.size(), g.size());
}

Prf relation_prf(std::span<const std::string> preds, std::span<const std::string> golds,
                 const std::string& negative_label) {
  if (preds.size() != golds.size()) {
    throw ContractError("relation_prf: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(golds.size()) + " gold labels");
  }
  std::size_t tp = 0, npred = 0, ngold = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p_pos = preds[i] != negative_label;
    const bool g_pos = golds[i] != negative_label;
    npred += p_pos;
    ngold += g_pos;
    tp += p_pos && preds[i] == golds[i];
  }
  return prf_from_counts(tp, npred, ngold);
}

double accuracy(std::span<const std::string> preds, std::span<const std::string> golds) {
  if (preds.size() != golds.size()) throw ContractError("accuracy: length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i] == golds[i];
  return static_cast<double>(ok) / static_cast<double>(preds.size());
}

SpanCounter::Counts& SpanCounter::type_counts(const std::string& type) {
  auto it = std::lower_bound(by_type_.begin(), by_type_.end(), type,
                             [](const auto& e, const std::string& t) { return e.first < t; });
  if (it == by_type_.end() || it->first != type) it = by_type_.insert(it, {type, Counts{}});
  return it->second;
}

void SpanCounter::add(std::span<const TypedSpan> pred, std::span<const TypedSpan> gold) {
  const std::set<TypedSpan> p(pred.begin(), pred.end());
  const std::set<TypedSpan> g(gold.begin(), gold.end());
  for (const auto& s : p) {
    const bool hit = g.contains(s);
    total_.pred += 1;
    total_.tp += hit;
    auto& c = type_counts(s.type);
    c.pred += 1;
    c.tp += hit;
  }
  for (const auto& s : g) {
    total_.gold += 1;
    type_counts(s.type).gold += 1;
  }
}

Prf SpanCounter::overall() const { return prf_from_counts(total_.tp, total_.pred, total_.gold); }

std::vector<std::pair<std::string, Prf>> SpanCounter::per_type() const {
  std::vector<std::pair<std::string, Prf>> out;
  for (const auto& [t, c] : by_type_) out.emplace_back(t, prf_from_counts(c.tp, c.pred, c.gold));
  return out;
}

std::vector<double> contribution_score(const Matrix& x, const Matrix& z) {
  if (!x.same_shape(z)) {
    throw ShapeError("contribution_score: shapes " + x.shape_str() + " and " + z.shape_str() + " differ");
  }
  // sum_j (x_i . z_j) = x_i . (sum_j z_j)
  std::vector<double> zsum(z.cols(), 0.0);
  for (std::size_t j = 0; j < z.rows(); ++j) {
    for (std::size_t k = 0; k < z.cols(); ++k) zsum[k] += z(j, k);
  }
  std::vector<double> out(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < x.cols(); ++k) out[i] += x(i, k) * zsum[k];
  }
  return out;
}

void write_contribution_csv(std::ostream& out, std::span<const double> scores) {
  out << "position,score\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < scores.size(); ++i) out << i << ',' << scores[i] << '\n';
}

}  // namespace mmib::metrics
