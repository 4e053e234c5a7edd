#pragma once

// Reverse-mode automatic differentiation over dense rank-2 tensors.
//
// A Tape records every operation applied during one forward pass. Nodes are
// appended in evaluation order, so the node vector is already topologically
// sorted and backward() walks it once in reverse. Node values never change
// after they are recorded.
//
// Learnable state lives in Parameter objects outside the tape. Tape::leaf()
// wraps a parameter; backward() adds the parameter's gradient into
// Parameter::grad. Gradients accumulate across backward() calls until
// ParameterStore::zero_grad() (or Parameter::zero_grad()) is called, which the
// training loop does explicitly before every step.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <unordered_map>
#include <span>
#include <string>
#include <vector>

#include "mmib/matrix.hpp"

namespace mmib::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Owns every learnable matrix of a model. Addresses are stable; iteration
/// order is insertion order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Matrix init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }
  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;
};

using Mask = std::vector<std::uint8_t>;

class Tape {
 public:
  /// Propagation callback of one node: reads grad(self) and adds into the
  /// gradients of its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  /// With record_grad=false no backward closures are kept (inference mode).
  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Free leaf whose gradient stays on the tape.
  Var variable(Matrix value);
  /// Parameter leaf; repeated calls for one parameter return the same node.
  Var leaf(Parameter& param);

  /// Records an operation output. `inputs` decides whether the node requires
  /// a gradient; `fn` is only stored when it does.
  Var push(Matrix value, std::span<const Var> inputs, BackwardFn fn);

  /// Fills gradients for every node reachable from `loss` (a 1x1 node) and
  /// adds parameter gradients into their Parameter::grad.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient of a node after backward(); zeros if it received none.
  const Matrix& grad(std::size_t id);
  /// Mutable gradient slot for use inside BackwardFn.
  Matrix& grad_slot(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool recording() const { return record_grad_; }
  std::size_t size() const { return nodes_.size(); }
  /// Nodes whose propagation ran during the last backward().
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> leaves_;
  bool record_grad_;
  std::size_t backward_visits_ = 0;
};

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);

// Same-shape or 1x1-broadcast elementwise arithmetic.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var exp(Var a);
/// Throws DomainError if any entry is <= 0.
Var log(Var a);
Var sigmoid(Var a);
/// Subgradient at 0 is 0.
Var relu(Var a);
/// ln(1 + e^x), evaluated without overflow.
Var softplus(Var a);

enum class Unary { kExp, kLog, kSigmoid, kRelu, kSoftplus };
enum class Binary { kAdd, kSub, kMul };
Var elementwise(Unary op, Var a);
Var elementwise(Binary op, Var a, Var b);

/// x + bias broadcast over rows (bias is 1 x cols).
Var add_row(Var x, Var bias);

/// Softmax of each row, max-shifted. Columns with key_mask[c]==0 get
/// probability exactly 0 (an empty mask means all columns are valid).
Var row_softmax(Var x, const Mask& key_mask = {});

/// Per-row standardization followed by gain/bias (both 1 x cols).
Var layer_norm(Var x, Var gain, Var bias, double eps);

/// Column means over all rows -> 1 x cols.
Var mean_pool_rows(Var x);
/// Column means over rows with mask[r] != 0 -> 1 x cols.
Var masked_mean_rows(Var x, const Mask& mask);
/// Column-wise max over rows [begin, end); ties go to the first row.
Var max_pool_rows(Var x, std::size_t begin, std::size_t end);

Var slice_rows(Var x, std::size_t begin, std::size_t end);
/// Zeros rows whose mask entry is 0.
Var mask_rows(Var x, const Mask& mask);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Rows of `table` picked by index; negative indices produce zero rows.
Var gather_rows(Var table, std::span<const int> indices);

/// Sum of all entries -> 1x1.
Var sum(Var x);
/// ln sum exp over all entries -> 1x1, max-shifted.
Var log_sum_exp(Var x);
/// The (r, c) entry as a 1x1 node.
Var element(Var x, std::size_t r, std::size_t c);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// Scalar log-sum-exp on plain values (used by decoders and tests).
double log_sum_exp(std::span<const double> xs);

}  // namespace mmib::ad
