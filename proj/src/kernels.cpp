#include "mmib/kernels.hpp"

#include <omp.h>

#include <vector>

#include "mmib/error.hpp"

namespace mmib::kernels {
namespace {

void check(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

void prepare(Matrix& out, std::size_t rows, std::size_t cols, Accumulate acc) {
  if (acc == Accumulate::kAdd) {
    if (out.rows() != rows || out.cols() != cols) {
      throw ShapeError("accumulating product into " + out.shape_str() + ", expected " + shape_str(rows, cols));
    }
  } else if (out.rows() != rows || out.cols() != cols) {
    out = Matrix(rows, cols);
  }
}

// One output row of a*b. The row buffer keeps per-element summation order
// identical between the serial and threaded drivers.
inline void row_ab(const Matrix& a, const Matrix& b, std::size_t i, double* acc_row, double* out_row, Accumulate acc) {
  const std::size_t k_dim = a.cols();
  const std::size_t n = b.cols();
  std::fill(acc_row, acc_row + n, 0.0);
  const double* arow = a.data() + i * k_dim;
  for (std::size_t k = 0; k < k_dim; ++k) {
    const double aik = arow[k];
    const double* brow = b.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) acc_row[j] += aik * brow[j];
  }
  if (acc == Accumulate::kAdd) {
    for (std::size_t j = 0; j < n; ++j) out_row[j] += acc_row[j];
  } else {
    std::copy(acc_row, acc_row + n, out_row);
  }
}

inline void row_abt(const Matrix& a, const Matrix& b, std::size_t i, double* out_row, Accumulate acc) {
  const std::size_t k_dim = a.cols();
  const double* arow = a.data() + i * k_dim;
  for (std::size_t j = 0; j < b.rows(); ++j) {
    const double* brow = b.data() + j * k_dim;
    double s = 0.0;
    for (std::size_t k = 0; k < k_dim; ++k) s += arow[k] * brow[k];
    out_row[j] = acc == Accumulate::kAdd ? out_row[j] + s : s;
  }
}

// Row i of a^T*b is sum_k a(k,i) * b(k,:).
inline void row_atb(const Matrix& a, const Matrix& b, std::size_t i, double* acc_row, double* out_row, Accumulate acc) {
  const std::size_t n = b.cols();
  std::fill(acc_row, acc_row + n, 0.0);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double aki = a(k, i);
    const double* brow = b.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) acc_row[j] += aki * brow[j];
  }
  if (acc == Accumulate::kAdd) {
    for (std::size_t j = 0; j < n; ++j) out_row[j] += acc_row[j];
  } else {
    std::copy(acc_row, acc_row + n, out_row);
  }
}

}  // namespace

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc) {
  check(a.cols() == b.rows(), "matmul", a, b);
  prepare(out, a.rows(), b.cols(), acc);
  std::vector<double> buf(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) row_ab(a, b, i, buf.data(), out.data() + i * out.cols(), acc);
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc) {
  check(a.cols() == b.cols(), "matmul_nt", a, b);
  prepare(out, a.rows(), b.rows(), acc);
  for (std::size_t i = 0; i < a.rows(); ++i) row_abt(a, b, i, out.data() + i * out.cols(), acc);
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc) {
  check(a.rows() == b.rows(), "matmul_tn", a, b);
  prepare(out, a.cols(), b.cols(), acc);
  std::vector<double> buf(b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) row_atb(a, b, i, buf.data(), out.data() + i * out.cols(), acc);
}

}  // namespace serial

namespace omp {

void matmul(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc) {
  check(a.cols() == b.rows(), "matmul", a, b);
  prepare(out, a.rows(), b.cols(), acc);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel
  {
    std::vector<double> buf(b.cols());
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      row_ab(a, b, static_cast<std::size_t>(i), buf.data(), out.data() + i * out.cols(), acc);
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc) {
  check(a.cols() == b.cols(), "matmul_nt", a, b);
  prepare(out, a.rows(), b.rows(), acc);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    row_abt(a, b, static_cast<std::size_t>(i), out.data() + i * out.cols(), acc);
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc) {
  check(a.rows() == b.rows(), "matmul_tn", a, b);
  prepare(out, a.cols(), b.cols(), acc);
  const auto rows = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel
  {
    std::vector<double> buf(b.cols());
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      row_atb(a, b, static_cast<std::size_t>(i), buf.data(), out.data() + i * out.cols(), acc);
    }
  }
}

}  // namespace omp

namespace {
bool go_parallel(std::size_t m, std::size_t k, std::size_t n) {
  return m > 1 && m * k * n >= kParallelThreshold && omp_get_max_threads() > 1;
}
}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc) {
  if (go_parallel(a.rows(), a.cols(), b.cols())) return omp::matmul(a, b, out, acc);
  serial::matmul(a, b, out, acc);
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc) {
  if (go_parallel(a.rows(), a.cols(), b.rows())) return omp::matmul_nt(a, b, out, acc);
  serial::matmul_nt(a, b, out, acc);
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc) {
  if (go_parallel(a.cols(), a.rows(), b.cols())) return omp::matmul_tn(a, b, out, acc);
  serial::matmul_tn(a, b, out, acc);
}

}  // namespace mmib::kernels
