#pragma once

#include <cstdint>
#include <stdexcept>

#include "spq/scale.hpp"

namespace spq {

inline std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t r = 0;
  if (__builtin_add_overflow(a, b, &r) || r == INT64_MIN) {
    throw std::overflow_error("integer lane overflow in addition");
  }
  return r;
}

inline std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r) || r == INT64_MIN) {
    throw std::overflow_error("integer lane overflow in multiplication");
  }
  return r;
}

// Table-1 kernels on {x, s} pairs. None of them re-scales; protocol_apply
// projects results back to p bits.

/// {x1 * x2, s1 * s2}; exact in the de-quantized domain.
ScaledTensor ew_mul(const ScaledTensor& a, const ScaledTensor& b);

/// Scale-match, then add payloads.
ScaledTensor add(const ScaledTensor& a, const ScaledTensor& b,
                 MatchRounding mode = MatchRounding::Exact);
ScaledTensor subtract(const ScaledTensor& a, const ScaledTensor& b,
                      MatchRounding mode = MatchRounding::Exact);

/// a: [m, k], b_t: [n, k] -> [m, n]. Both operands are first matched along
/// k; the output scale is the outer product of the matched row scales.
ScaledTensor matmul(const ScaledTensor& a, const ScaledTensor& b_t,
                    MatchRounding mode = MatchRounding::Exact);

/// {x^n, s^n}. Inputs whose n-th power would leave the lane are first
/// re-scaled just enough to fit.
ScaledTensor pow_n(const ScaledTensor& t, int n);

ScaledTensor abs(const ScaledTensor& t);
ScaledTensor relu(const ScaledTensor& t);
ScaledTensor negate(const ScaledTensor& t);

/// Sums payloads along `axis` (kept as size 1), matching scales along that
/// axis first when they differ.
ScaledTensor sum_reduce(const ScaledTensor& t, std::size_t axis,
                        MatchRounding mode = MatchRounding::Exact);

/// Truncating payload division with scale s_num / s_den. Denominator
/// payloads must be strictly positive.
ScaledTensor int_div(const ScaledTensor& num, const ScaledTensor& den);

/// Divides the represented value by a positive integer: payload rounded
/// half to even, scale unchanged. Used for integer means.
ScaledTensor round_div(const ScaledTensor& t, std::int64_t divisor);

namespace kernels {

Kernel ew_mul();
Kernel add(MatchRounding mode = MatchRounding::Exact);
Kernel subtract(MatchRounding mode = MatchRounding::Exact);
Kernel matmul(MatchRounding mode = MatchRounding::Exact);
Kernel pow_n(int n);
Kernel abs();
Kernel relu();
Kernel sum_reduce(std::size_t axis, MatchRounding mode = MatchRounding::Exact);
Kernel int_div();
Kernel round_div(std::int64_t divisor);

}  // namespace kernels

}  // namespace spq
