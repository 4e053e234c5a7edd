#pragma once

// Dense products used by the autodiff engine. Every kernel exists twice: a
// serial reference and an OpenMP version that splits output rows across
// threads. Both accumulate each output element over k in increasing order, so
// they agree bitwise and results do not depend on the thread count.

#include <cstddef>

#include "mmib/matrix.hpp"

namespace mmib::kernels {

enum class Accumulate { kOverwrite, kAdd };

namespace serial {
/// out (+)= a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc = Accumulate::kOverwrite);
/// out (+)= a * b^T
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc = Accumulate::kOverwrite);
/// out (+)= a^T * b
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc = Accumulate::kOverwrite);
}  // namespace serial

namespace omp {
void matmul(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc = Accumulate::kOverwrite);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc = Accumulate::kOverwrite);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc = Accumulate::kOverwrite);
}  // namespace omp

/// Multiply-add count above which the dispatching kernels go parallel.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

// Dispatching entry points: serial below the threshold, OpenMP above.
void matmul(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc = Accumulate::kOverwrite);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc = Accumulate::kOverwrite);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, Accumulate acc = Accumulate::kOverwrite);

}  // namespace mmib::kernels
