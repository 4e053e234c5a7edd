#include "mmib/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmib/error.hpp"
#include "mmib/kernels.hpp"

namespace mmib::ad {

// ---- ParameterStore ---------------------------------------------------------

Parameter& ParameterStore::add(const std::string& name, Matrix init) {
  if (index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  return params_.emplace_back(name, std::move(init));
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

// ---- Var / Tape -------------------------------------------------------------

const Matrix& Var::value() const { return tape->value(id); }
const Matrix& Var::grad() const { return tape->grad(id); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("scalar() on " + v.shape_str() + " tensor");
  return v[0];
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, record_grad_, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Parameter& param) {
  if (auto it = leaves_.find(&param); it != leaves_.end()) return Var{this, it->second};
  leaves_.emplace(&param, nodes_.size());
  nodes_.push_back(Node{param.value, {}, record_grad_, &param, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (record_grad_) {
    for (const Var& v : inputs) {
      if (v.tape != this) throw ContractError("operation mixes tensors from different tapes");
      needs = needs || nodes_[v.id].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(fn) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

const Matrix& Tape::grad(std::size_t id) { return grad_slot(id); }

Matrix& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value)) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward() on a tensor from another tape");
  if (!record_grad_) throw ContractError("backward() on a tape created without gradient recording");
  const Matrix& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward() requires a scalar loss, got " + lv.shape_str());
  }
  for (auto& n : nodes_) n.grad = Matrix();
  grad_slot(loss.id)[0] = 1.0;
  backward_visits_ = 0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    ++backward_visits_;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// ---- helpers ----------------------------------------------------------------

namespace {

enum class Bcast { kSame, kScalarA, kScalarB };

bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

Bcast broadcast_kind(const char* op, const Matrix& a, const Matrix& b) {
  if (a.same_shape(b)) return Bcast::kSame;
  if (is_scalar(b)) return Bcast::kScalarB;
  if (is_scalar(a)) return Bcast::kScalarA;
  throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() + " do not match");
}

template <typename F>
Matrix map(const Matrix& m, F f) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = f(m[i]);
  return out;
}

// Pointwise op with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var unary_op(Var a, Fwd fwd, Deriv deriv) {
  Matrix out = map(a.value(), fwd);
  Var inputs[] = {a};
  return a.tape->push(std::move(out), inputs, [a, deriv](Tape& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(a.id);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad_slot(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void check_mask(const char* op, const Mask& mask, std::size_t n) {
  if (!mask.empty() && mask.size() != n) {
    throw ShapeError(std::string(op) + ": mask of length " + std::to_string(mask.size()) + " for " +
                     std::to_string(n) + " entries");
  }
}

}  // namespace

// ---- products ---------------------------------------------------------------

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + a.value().shape_str() + " and " + b.value().shape_str());
  }
  Matrix out;
  kernels::matmul(a.value(), b.value(), out);
  Var inputs[] = {a, b};
  return a.tape->push(std::move(out), inputs, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id)) kernels::matmul_nt(g, t.value(b.id), t.grad_slot(a.id), kernels::Accumulate::kAdd);
    if (t.requires_grad(b.id)) kernels::matmul_tn(t.value(a.id), g, t.grad_slot(b.id), kernels::Accumulate::kAdd);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: widths differ for " + a.value().shape_str() + " and " + b.value().shape_str());
  }
  Matrix out;
  kernels::matmul_nt(a.value(), b.value(), out);
  Var inputs[] = {a, b};
  return a.tape->push(std::move(out), inputs, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    // out = a b^T  =>  da = g b, db = g^T a
    if (t.requires_grad(a.id)) kernels::matmul(g, t.value(b.id), t.grad_slot(a.id), kernels::Accumulate::kAdd);
    if (t.requires_grad(b.id)) kernels::matmul_tn(g, t.value(a.id), t.grad_slot(b.id), kernels::Accumulate::kAdd);
  });
}

// ---- elementwise ------------------------------------------------------------

namespace {

template <typename F, typename Da, typename Db>
Var binary_op(const char* name, Var a, Var b, F f, Da da, Db db) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Bcast kind = broadcast_kind(name, av, bv);
  const std::size_t rows = kind == Bcast::kScalarA ? bv.rows() : av.rows();
  const std::size_t cols = kind == Bcast::kScalarA ? bv.cols() : av.cols();
  auto ai = [kind](std::size_t i) { return kind == Bcast::kScalarA ? 0 : i; };
  auto bi = [kind](std::size_t i) { return kind == Bcast::kScalarB ? 0 : i; };
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[ai(i)], bv[bi(i)]);
  Var inputs[] = {a, b};
  return a.tape->push(std::move(out), inputs, [a, b, ai, bi, da, db](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(a.id);
    const Matrix& y = t.value(b.id);
    if (t.requires_grad(a.id)) {
      Matrix& ga = t.grad_slot(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[ai(i)] += g[i] * da(x[ai(i)], y[bi(i)]);
    }
    if (t.requires_grad(b.id)) {
      Matrix& gb = t.grad_slot(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bi(i)] += g[i] * db(x[ai(i)], y[bi(i)]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double s) {
  return unary_op(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary_op(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary_op(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var elementwise(Unary op, Var a) {
  switch (op) {
    case Unary::kExp: return exp(a);
    case Unary::kLog: return log(a);
    case Unary::kSigmoid: return sigmoid(a);
    case Unary::kRelu: return relu(a);
    case Unary::kSoftplus: return softplus(a);
  }
  throw ContractError("unknown unary op");
}

Var elementwise(Binary op, Var a, Var b) {
  switch (op) {
    case Binary::kAdd: return add(a, b);
    case Binary::kSub: return sub(a, b);
    case Binary::kMul: return mul(a, b);
  }
  throw ContractError("unknown binary op");
}

Var add_row(Var x, Var bias) {
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_row: bias " + bv.shape_str() + " for input " + xv.shape_str());
  }
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  }
  Var inputs[] = {x, bias};
  return x.tape->push(std::move(out), inputs, [x, bias](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(x.id)) t.grad_slot(x.id) += g;
    if (t.requires_grad(bias.id)) {
      Matrix& gb = t.grad_slot(bias.id);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
      }
    }
  });
}

// ---- normalization ----------------------------------------------------------

Var row_softmax(Var x, const Mask& key_mask) {
  const Matrix& xv = x.value();
  check_mask("row_softmax", key_mask, xv.cols());
  auto valid = [&key_mask](std::size_t c) { return key_mask.empty() || key_mask[c] != 0; };
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      if (valid(c)) mx = std::max(mx, xv(r, c));
    }
    if (!std::isfinite(mx)) throw ContractError("row_softmax: row has no valid finite entry");
    double z = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      if (valid(c)) {
        out(r, c) = std::exp(xv(r, c) - mx);
        z += out(r, c);
      }
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) /= z;
  }
  Var inputs[] = {x};
  return x.tape->push(std::move(out), inputs, [x](Tape& t, std::size_t self) {
    if (!t.requires_grad(x.id)) return;
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& gx = t.grad_slot(x.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ShapeError("layer_norm: gain " + gain.value().shape_str() + " / bias " + bias.value().shape_str() +
                     " for input " + xv.shape_str());
  }
  Matrix xhat(xv.rows(), n);
  std::vector<double> rstd(xv.rows());
  Matrix out(xv.rows(), n);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += xv(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (xv(r, c) - mean) * rstd[r];
      out(r, c) = xhat(r, c) * gv[c] + bv[c];
    }
  }
  Var inputs[] = {x, gain, bias};
  return x.tape->push(std::move(out), inputs,
                      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, std::size_t self) {
                        const Matrix& g = t.grad(self);
                        const std::size_t n = g.cols();
                        const Matrix& gv = t.value(gain.id);
                        if (t.requires_grad(gain.id) || t.requires_grad(bias.id)) {
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                            for (std::size_t c = 0; c < n; ++c) {
                              if (t.requires_grad(gain.id)) t.grad_slot(gain.id)[c] += g(r, c) * xhat(r, c);
                              if (t.requires_grad(bias.id)) t.grad_slot(bias.id)[c] += g(r, c);
                            }
                          }
                        }
                        if (!t.requires_grad(x.id)) return;
                        Matrix& gx = t.grad_slot(x.id);
                        std::vector<double> dxhat(n);
                        for (std::size_t r = 0; r < g.rows(); ++r) {
                          double mean_d = 0.0;
                          double mean_dx = 0.0;
                          for (std::size_t c = 0; c < n; ++c) {
                            dxhat[c] = g(r, c) * gv[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xhat(r, c);
                          }
                          mean_d /= static_cast<double>(n);
                          mean_dx /= static_cast<double>(n);
                          for (std::size_t c = 0; c < n; ++c) {
                            gx(r, c) += rstd[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
                          }
                        }
                      });
}

// ---- pooling and reshaping --------------------------------------------------

Var mean_pool_rows(Var x) {
  if (x.rows() == 0) throw ContractError("mean_pool_rows: empty tensor");
  return masked_mean_rows(x, Mask(x.rows(), 1));
}

Var masked_mean_rows(Var x, const Mask& mask) {
  const Matrix& xv = x.value();
  check_mask("masked_mean_rows", mask, xv.rows());
  std::vector<double> w(xv.rows(), 0.0);
  std::size_t count = 0;
  for (std::size_t r = 0; r < xv.rows(); ++r) count += mask.empty() || mask[r] != 0;
  if (count == 0) throw ContractError("masked_mean_rows: no unmasked rows");
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    if (mask.empty() || mask[r] != 0) w[r] = 1.0 / static_cast<double>(count);
  }
  Matrix out(1, xv.cols());
  for (std::size_t c = 0; c < xv.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      if (w[r] != 0.0) s += xv(r, c);
    }
    out[c] = s / static_cast<double>(count);
  }
  Var inputs[] = {x};
  return x.tape->push(std::move(out), inputs, [x, w = std::move(w)](Tape& t, std::size_t self) {
    if (!t.requires_grad(x.id)) return;
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad_slot(x.id);
    for (std::size_t r = 0; r < gx.rows(); ++r) {
      if (w[r] == 0.0) continue;
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += w[r] * g[c];
    }
  });
}

Var max_pool_rows(Var x, std::size_t begin, std::size_t end) {
  const Matrix& xv = x.value();
  if (begin >= end || end > xv.rows()) throw ContractError("max_pool_rows: bad row range");
  Matrix out(1, xv.cols());
  std::vector<std::size_t> arg(xv.cols(), begin);
  for (std::size_t c = 0; c < xv.cols(); ++c) {
    for (std::size_t r = begin + 1; r < end; ++r) {
      if (xv(r, c) > xv(arg[c], c)) arg[c] = r;
    }
    out[c] = xv(arg[c], c);
  }
  Var inputs[] = {x};
  return x.tape->push(std::move(out), inputs, [x, arg = std::move(arg)](Tape& t, std::size_t self) {
    if (!t.requires_grad(x.id)) return;
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad_slot(x.id);
    for (std::size_t c = 0; c < arg.size(); ++c) gx(arg[c], c) += g[c];
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Matrix& xv = x.value();
  if (begin > end || end > xv.rows()) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + xv.shape_str());
  }
  Matrix out(end - begin, xv.cols());
  std::copy(xv.data() + begin * xv.cols(), xv.data() + end * xv.cols(), out.data());
  Var inputs[] = {x};
  return x.tape->push(std::move(out), inputs, [x, begin](Tape& t, std::size_t self) {
    if (!t.requires_grad(x.id)) return;
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * gx.cols() + i] += g[i];
  });
}

Var mask_rows(Var x, const Mask& mask) {
  const Matrix& xv = x.value();
  check_mask("mask_rows", mask, xv.rows());
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if (!mask.empty() && mask[r] == 0) {
      for (double& v : out.row_span(r)) v = 0.0;
    }
  }
  Var inputs[] = {x};
  return x.tape->push(std::move(out), inputs, [x, mask](Tape& t, std::size_t self) {
    if (!t.requires_grad(x.id)) return;
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad_slot(x.id);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      if (!mask.empty() && mask[r] == 0) continue;
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += g(r, c);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ (" + p.value().shape_str() + ")");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    }
    off += pv.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), parts, [ins](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : ins) {
      const std::size_t pc = t.value(p.id).cols();
      if (t.requires_grad(p.id)) {
        Matrix& gp = t.grad_slot(p.id);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < pc; ++c) gp(r, c) += g(r, off + c);
        }
      }
      off += pc;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ (" + p.value().shape_str() + ")");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  double* dst = out.data();
  for (const Var& p : parts) dst = std::copy(p.value().values().begin(), p.value().values().end(), dst);
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), parts, [ins](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : ins) {
      const std::size_t n = t.value(p.id).size();
      if (t.requires_grad(p.id)) {
        Matrix& gp = t.grad_slot(p.id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var gather_rows(Var table, std::span<const int> indices) {
  const Matrix& tv = table.value();
  Matrix out(indices.size(), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0) continue;
    if (static_cast<std::size_t>(idx) >= tv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx) + " outside table " + tv.shape_str());
    }
    std::copy_n(tv.data() + idx * tv.cols(), tv.cols(), out.data() + i * tv.cols());
  }
  std::vector<int> idx(indices.begin(), indices.end());
  Var inputs[] = {table};
  return table.tape->push(std::move(out), inputs, [table, idx = std::move(idx)](Tape& t, std::size_t self) {
    if (!t.requires_grad(table.id)) return;
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad_slot(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0) continue;
      for (std::size_t c = 0; c < g.cols(); ++c) gt(static_cast<std::size_t>(idx[i]), c) += g(i, c);
    }
  });
}

// ---- reductions -------------------------------------------------------------

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  Var inputs[] = {x};
  return x.tape->push(Matrix(1, 1, s), inputs, [x](Tape& t, std::size_t self) {
    if (!t.requires_grad(x.id)) return;
    const double g = t.grad(self)[0];
    for (double& v : t.grad_slot(x.id).values()) v += g;
  });
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : xs) s += std::exp(v - mx);
  return mx + std::log(s);
}

Var log_sum_exp(Var x) {
  const double lse = log_sum_exp(std::span<const double>(x.value().values()));
  Var inputs[] = {x};
  return x.tape->push(Matrix(1, 1, lse), inputs, [x](Tape& t, std::size_t self) {
    if (!t.requires_grad(x.id)) return;
    const double g = t.grad(self)[0];
    const double lse = t.value(self)[0];
    const Matrix& xv = t.value(x.id);
    Matrix& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g * std::exp(xv[i] - lse);
  });
}

Var element(Var x, std::size_t r, std::size_t c) {
  const Matrix& xv = x.value();
  if (r >= xv.rows() || c >= xv.cols()) {
    throw ShapeError("element (" + std::to_string(r) + "," + std::to_string(c) + ") of " + xv.shape_str());
  }
  Var inputs[] = {x};
  return x.tape->push(Matrix(1, 1, xv(r, c)), inputs, [x, r, c](Tape& t, std::size_t self) {
    if (!t.requires_grad(x.id)) return;
    t.grad_slot(x.id)(r, c) += t.grad(self)[0];
  });
}

}  // namespace mmib::ad
