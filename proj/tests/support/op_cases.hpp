#pragma once

// Finite-difference cases for every differentiable primitive: each case
// builds random inputs in a store and returns a scalar loss over them.

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mmib/autodiff.hpp"

namespace mmib::testing {

using ad::Var;

struct OpCase {
  const char* name;
  double tol;
  // Builds inputs in the store and returns a loss builder.
  std::function<mmib::testing::LossFn(ad::ParameterStore&, std::mt19937_64&)> make;
};

inline Var weighted(ad::Tape& t, Var y, std::shared_ptr<std::optional<Matrix>> w, std::uint64_t seed) {
  if (!*w) {
    std::mt19937_64 r(seed);
    *w = random_matrix(y.rows(), y.cols(), r);
  }
  return ad::sum(y * t.constant(**w));
}

template <typename F>
std::function<mmib::testing::LossFn(ad::ParameterStore&, std::mt19937_64&)> unary(std::size_t r, std::size_t c,
                                                                                   F f, double lo = -1.0,
                                                                                   double hi = 1.0) {
  return [=](ad::ParameterStore& s, std::mt19937_64& rng) -> mmib::testing::LossFn {
    auto* x = &s.add("x", random_matrix(r, c, rng, lo, hi));
    auto w = std::make_shared<std::optional<Matrix>>();
    const std::uint64_t seed = rng();
    return [=](ad::Tape& t) { return weighted(t, f(t.leaf(*x)), w, seed); };
  };
}

template <typename F>
std::function<mmib::testing::LossFn(ad::ParameterStore&, std::mt19937_64&)> binary(std::size_t r1, std::size_t c1,
                                                                                    std::size_t r2, std::size_t c2,
                                                                                    F f) {
  return [=](ad::ParameterStore& s, std::mt19937_64& rng) -> mmib::testing::LossFn {
    auto* a = &s.add("a", random_matrix(r1, c1, rng));
    auto* b = &s.add("b", random_matrix(r2, c2, rng));
    auto w = std::make_shared<std::optional<Matrix>>();
    const std::uint64_t seed = rng();
    return [=](ad::Tape& t) { return weighted(t, f(t.leaf(*a), t.leaf(*b)), w, seed); };
  };
}

inline std::vector<OpCase> op_cases() {
  const ad::Mask row_mask{1, 0, 1, 1};
  return {
      {"matmul", 1e-6, binary(3, 4, 4, 2, [](Var a, Var b) { return ad::matmul(a, b); })},
      {"matmul_nt", 1e-6, binary(3, 4, 5, 4, [](Var a, Var b) { return ad::matmul_nt(a, b); })},
      {"add", 1e-6, binary(3, 4, 3, 4, [](Var a, Var b) { return a + b; })},
      {"sub", 1e-6, binary(3, 4, 3, 4, [](Var a, Var b) { return a - b; })},
      {"mul", 1e-6, binary(3, 4, 3, 4, [](Var a, Var b) { return a * b; })},
      {"mul_broadcast", 1e-6, binary(3, 4, 1, 1, [](Var a, Var b) { return a * b; })},
      {"add_broadcast", 1e-6, binary(1, 1, 2, 3, [](Var a, Var b) { return a + b; })},
      {"scale", 1e-6, unary(3, 3, [](Var x) { return ad::scale(x, -1.7); })},
      {"add_scalar", 1e-6, unary(3, 3, [](Var x) { return ad::add_scalar(x, 0.4); })},
      {"exp", 1e-6, unary(3, 3, [](Var x) { return ad::exp(x); })},
      {"log", 1e-6, unary(3, 3, [](Var x) { return ad::log(x); }, 0.5, 2.0)},
      {"sigmoid", 1e-6, unary(3, 3, [](Var x) { return ad::sigmoid(x); }, -4.0, 4.0)},
      {"relu", 1e-6, unary(3, 3, [](Var x) { return ad::relu(x); }, 0.01, 1.0)},
      {"relu_negative", 1e-6, unary(3, 3, [](Var x) { return ad::relu(x); }, -1.0, -0.01)},
      {"softplus", 1e-6, unary(3, 3, [](Var x) { return ad::softplus(x); }, -5.0, 5.0)},
      {"add_row", 1e-6, binary(4, 3, 1, 3, [](Var a, Var b) { return ad::add_row(a, b); })},
      {"row_softmax", 1e-6, unary(3, 5, [](Var x) { return ad::row_softmax(x); }, -2.0, 2.0)},
      {"row_softmax_masked", 1e-6,
       unary(3, 4, [row_mask](Var x) { return ad::row_softmax(x, row_mask); }, -2.0, 2.0)},
      {"layer_norm", 1e-5,
       [](ad::ParameterStore& s, std::mt19937_64& rng) -> mmib::testing::LossFn {
         auto* x = &s.add("x", random_matrix(3, 5, rng, -2, 2));
         auto* g = &s.add("g", random_matrix(1, 5, rng, 0.5, 1.5));
         auto* b = &s.add("b", random_matrix(1, 5, rng));
         auto w = std::make_shared<std::optional<Matrix>>();
         const std::uint64_t seed = rng();
         return [=](ad::Tape& t) {
           return weighted(t, ad::layer_norm(t.leaf(*x), t.leaf(*g), t.leaf(*b), 1e-5), w, seed);
         };
       }},
      {"mean_pool_rows", 1e-6, unary(4, 3, [](Var x) { return ad::mean_pool_rows(x); })},
      {"masked_mean_rows", 1e-6, unary(4, 3, [row_mask](Var x) { return ad::masked_mean_rows(x, row_mask); })},
      {"max_pool_rows", 1e-6, unary(4, 3, [](Var x) { return ad::max_pool_rows(x, 1, 4); })},
      {"slice_rows", 1e-6, unary(5, 2, [](Var x) { return ad::slice_rows(x, 1, 3); })},
      {"mask_rows", 1e-6, unary(4, 2, [row_mask](Var x) { return ad::mask_rows(x, row_mask); })},
      {"concat_cols", 1e-6,
       binary(3, 2, 3, 4, [](Var a, Var b) { Var p[] = {a, b, a}; return ad::concat_cols(p); })},
      {"concat_rows", 1e-6,
       binary(2, 3, 1, 3, [](Var a, Var b) { Var p[] = {b, a, b}; return ad::concat_rows(p); })},
      {"gather_rows", 1e-6,
       unary(4, 3, [](Var x) { const int idx[] = {2, -1, 0, 2}; return ad::gather_rows(x, idx); })},
      {"sum", 1e-6, unary(3, 3, [](Var x) { return ad::sum(x * x); })},
      {"log_sum_exp", 1e-6, unary(2, 4, [](Var x) { return ad::log_sum_exp(x); }, -3.0, 3.0)},
      {"element", 1e-6, unary(3, 3, [](Var x) { return ad::element(x, 2, 1) * ad::element(x, 0, 0); })},
  };
}

}  // namespace mmib::testing
