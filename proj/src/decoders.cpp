#include "mmib/decoders.hpp"

#include <cmath>
#include <limits>

#include "mmib/error.hpp"

namespace mmib::decode {

using ad::Var;

CrfParams CrfParams::create(ad::ParameterStore& store, const std::string& prefix, std::size_t d, std::size_t labels,
                            nn::Rng& rng) {
  if (labels == 0) throw ConfigError("CRF needs at least one label");
  CrfParams p;
  p.labels = labels;
  p.emission = &store.add(prefix + ".emission", nn::xavier_uniform(d, labels, rng));
  p.transitions = &store.add(prefix + ".transitions", Matrix(labels + 2, labels + 2));
  return p;
}

Var crf_emissions(ad::Tape& tape, Var text_fused, const CrfParams& params) {
  return ad::matmul(text_fused, tape.leaf(*params.emission));
}

namespace {

std::size_t check_crf(const Matrix& e, const Matrix& t) {
  const std::size_t l = e.cols();
  if (e.rows() == 0 || l == 0) throw ContractError("CRF: empty emission matrix");
  if (t.rows() != l + 2 || t.cols() != l + 2) {
    throw ShapeError("CRF: transitions " + t.shape_str() + " for " + std::to_string(l) + " labels");
  }
  return l;
}

void check_labels(std::span<const int> labels, std::size_t steps, std::size_t l) {
  if (labels.size() != steps) {
    throw ContractError("CRF: " + std::to_string(labels.size()) + " labels for " + std::to_string(steps) + " positions");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= l) throw ContractError("CRF: label " + std::to_string(y) + " out of range");
  }
}

struct Lattice {
  Matrix alpha;  // T x L
  Matrix beta;   // T x L
  double log_z = 0.0;
};

Lattice forward_backward(const Matrix& e, const Matrix& t, bool with_beta) {
  const std::size_t steps = e.rows();
  const std::size_t l = e.cols();
  const std::size_t start = l, stop = l + 1;
  Lattice lat;
  lat.alpha = Matrix(steps, l);
  std::vector<double> buf(l);
  for (std::size_t y = 0; y < l; ++y) lat.alpha(0, y) = t(start, y) + e(0, y);
  for (std::size_t i = 1; i < steps; ++i) {
    for (std::size_t y = 0; y < l; ++y) {
      for (std::size_t yp = 0; yp < l; ++yp) buf[yp] = lat.alpha(i - 1, yp) + t(yp, y);
      lat.alpha(i, y) = ad::log_sum_exp(buf) + e(i, y);
    }
  }
  for (std::size_t y = 0; y < l; ++y) buf[y] = lat.alpha(steps - 1, y) + t(y, stop);
  lat.log_z = ad::log_sum_exp(buf);
  if (!with_beta) return lat;
  lat.beta = Matrix(steps, l);
  for (std::size_t y = 0; y < l; ++y) lat.beta(steps - 1, y) = t(y, stop);
  for (std::size_t i = steps - 1; i-- > 0;) {
    for (std::size_t y = 0; y < l; ++y) {
      for (std::size_t yn = 0; yn < l; ++yn) buf[yn] = t(y, yn) + e(i + 1, yn) + lat.beta(i + 1, yn);
      lat.beta(i, y) = ad::log_sum_exp(buf);
    }
  }
  return lat;
}

}  // namespace

double crf_score(const Matrix& e, const Matrix& t, std::span<const int> labels) {
  const std::size_t l = check_crf(e, t);
  check_labels(labels, e.rows(), l);
  double s = t(l, labels[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s += e(i, labels[i]);
    if (i > 0) s += t(labels[i - 1], labels[i]);
  }
  return s + t(labels.back(), l + 1);
}

double crf_log_partition(const Matrix& e, const Matrix& t) {
  check_crf(e, t);
  return forward_backward(e, t, false).log_z;
}

Var crf_score(Var emissions, Var transitions, std::span<const int> labels) {
  const double s = crf_score(emissions.value(), transitions.value(), labels);
  std::vector<int> y(labels.begin(), labels.end());
  Var inputs[] = {emissions, transitions};
  return emissions.tape->push(Matrix(1, 1, s), inputs, [emissions, transitions, y](ad::Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    if (tp.requires_grad(emissions.id)) {
      Matrix& ge = tp.grad_slot(emissions.id);
      for (std::size_t i = 0; i < y.size(); ++i) ge(i, y[i]) += g;
    }
    if (tp.requires_grad(transitions.id)) {
      Matrix& gt = tp.grad_slot(transitions.id);
      const std::size_t l = tp.value(emissions.id).cols();
      gt(l, y[0]) += g;
      for (std::size_t i = 1; i < y.size(); ++i) gt(y[i - 1], y[i]) += g;
      gt(y.back(), l + 1) += g;
    }
  });
}

Var crf_log_partition(Var emissions, Var transitions) {
  check_crf(emissions.value(), transitions.value());
  const bool need_grad = emissions.tape->recording();
  auto lat = std::make_shared<Lattice>(forward_backward(emissions.value(), transitions.value(), need_grad));
  Var inputs[] = {emissions, transitions};
  return emissions.tape->push(Matrix(1, 1, lat->log_z), inputs, [emissions, transitions, lat](ad::Tape& tp,
                                                                                              std::size_t self) {
    const double g = tp.grad(self)[0];
    const Matrix& e = tp.value(emissions.id);
    const Matrix& t = tp.value(transitions.id);
    const std::size_t steps = e.rows(), l = e.cols();
    const std::size_t start = l, stop = l + 1;
    if (tp.requires_grad(emissions.id)) {
      Matrix& ge = tp.grad_slot(emissions.id);
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t y = 0; y < l; ++y) ge(i, y) += g * std::exp(lat->alpha(i, y) + lat->beta(i, y) - lat->log_z);
      }
    }
    if (tp.requires_grad(transitions.id)) {
      Matrix& gt = tp.grad_slot(transitions.id);
      for (std::size_t y = 0; y < l; ++y) {
        gt(start, y) += g * std::exp(lat->alpha(0, y) + lat->beta(0, y) - lat->log_z);
        gt(y, stop) += g * std::exp(lat->alpha(steps - 1, y) + lat->beta(steps - 1, y) - lat->log_z);
      }
      for (std::size_t i = 1; i < steps; ++i) {
        for (std::size_t yp = 0; yp < l; ++yp) {
          for (std::size_t y = 0; y < l; ++y) {
            gt(yp, y) +=
                g * std::exp(lat->alpha(i - 1, yp) + t(yp, y) + e(i, y) + lat->beta(i, y) - lat->log_z);
          }
        }
      }
    }
  });
}

Var crf_nll(Var emissions, Var transitions, std::span<const int> labels) {
  return crf_log_partition(emissions, transitions) - crf_score(emissions, transitions, labels);
}

std::vector<int> viterbi_decode(const Matrix& e, const Matrix& t) {
  const std::size_t l = check_crf(e, t);
  const std::size_t steps = e.rows();
  Matrix score(steps, l);
  std::vector<int> back(steps * l, 0);
  for (std::size_t y = 0; y < l; ++y) score(0, y) = t(l, y) + e(0, y);
  for (std::size_t i = 1; i < steps; ++i) {
    for (std::size_t y = 0; y < l; ++y) {
      std::size_t best = 0;
      double best_v = score(i - 1, 0) + t(0, y);
      for (std::size_t yp = 1; yp < l; ++yp) {
        const double v = score(i - 1, yp) + t(yp, y);
        if (v > best_v) {
          best_v = v;
          best = yp;
        }
      }
      score(i, y) = best_v + e(i, y);
      back[i * l + y] = static_cast<int>(best);
    }
  }
  std::size_t last = 0;
  double last_v = score(steps - 1, 0) + t(0, l + 1);
  for (std::size_t y = 1; y < l; ++y) {
    const double v = score(steps - 1, y) + t(y, l + 1);
    if (v > last_v) {
      last_v = v;
      last = y;
    }
  }
  std::vector<int> path(steps);
  path[steps - 1] = static_cast<int>(last);
  for (std::size_t i = steps - 1; i > 0; --i) path[i - 1] = back[i * l + static_cast<std::size_t>(path[i])];
  return path;
}

namespace serial {
std::vector<std::vector<int>> viterbi_batch(std::span<const Matrix> emissions, const Matrix& transitions) {
  std::vector<std::vector<int>> out(emissions.size());
  for (std::size_t i = 0; i < emissions.size(); ++i) out[i] = viterbi_decode(emissions[i], transitions);
  return out;
}
}  // namespace serial

namespace omp {
std::vector<std::vector<int>> viterbi_batch(std::span<const Matrix> emissions, const Matrix& transitions) {
  std::vector<std::vector<int>> out(emissions.size());
  std::vector<std::string> errors(emissions.size());
  const auto n = static_cast<std::ptrdiff_t>(emissions.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[i] = viterbi_decode(emissions[i], transitions);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw ContractError(e);
  }
  return out;
}
}  // namespace omp

Var entity_pool(Var text_fused, data::Span span, std::size_t tokens, Pooling mode) {
  if (span.start < 0 || span.end < span.start || static_cast<std::size_t>(span.end) >= tokens ||
      static_cast<std::size_t>(span.end) + 1 >= text_fused.rows()) {
    throw ContractError("entity_pool: span [" + std::to_string(span.start) + "," + std::to_string(span.end) +
                        "] outside the " + std::to_string(tokens) + " token rows");
  }
  const std::size_t begin = static_cast<std::size_t>(span.start) + 1;
  const std::size_t end = static_cast<std::size_t>(span.end) + 2;
  if (mode == Pooling::kMax) return ad::max_pool_rows(text_fused, begin, end);
  return ad::mean_pool_rows(ad::slice_rows(text_fused, begin, end));
}

RelationHead RelationHead::create(ad::ParameterStore& store, const std::string& prefix, std::size_t d, std::size_t k,
                                  nn::Rng& rng) {
  if (k < 2) throw ConfigError("relation head needs at least two relation types");
  RelationHead h;
  h.w = &store.add(prefix + ".w", nn::xavier_uniform(2 * d, k, rng));
  h.b = &store.add(prefix + ".b", Matrix(1, k));
  return h;
}

Var relation_logits(ad::Tape& tape, Var head_entity, Var tail_entity, const RelationHead& head) {
  Var parts[] = {head_entity, tail_entity};
  return ad::add_row(ad::matmul(ad::concat_cols(parts), tape.leaf(*head.w)), tape.leaf(*head.b));
}

Var relation_probs(ad::Tape& tape, Var head_entity, Var tail_entity, const RelationHead& head) {
  return ad::row_softmax(relation_logits(tape, head_entity, tail_entity, head));
}

Var relation_nll(Var logits, std::size_t k) { return ad::log_sum_exp(logits) - ad::element(logits, 0, k); }

Var relation_negative_nll(Var logits, std::size_t k) {
  // ln(1 - p_j) = ln(sum_{i != j} e^{l_i}) - lse(l)
  const std::size_t n = logits.cols();
  Var lse = ad::log_sum_exp(logits);
  Var total = ad::scale(lse, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (j == k) continue;
    std::vector<Var> others;
    for (std::size_t i = 0; i < n; ++i) {
      if (i != j) others.push_back(ad::element(logits, 0, i));
    }
    Var rest = ad::log_sum_exp(ad::concat_cols(others));
    total = total + (lse - rest);
  }
  return total;
}

}  // namespace mmib::decode
