#pragma once

// Exact-fraction oracle shared by the test suites. Everything here is
// computed independently of the library's integer kernels.

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "spq/tensor.hpp"

namespace spq::oracle {

using Fraction = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

/// Exact value of a finite double.
inline Fraction exact(double v) {
  if (v == 0.0) return Fraction(0);
  int e = 0;
  const double f = std::frexp(v, &e);
  const auto m = static_cast<std::int64_t>(std::ldexp(f, 53));
  e -= 53;
  Fraction r{BigInt(m)};
  if (e > 0) {
    r *= Fraction(BigInt(1) << e);
  } else if (e < 0) {
    r /= Fraction(BigInt(1) << -e);
  }
  return r;
}

inline Fraction exact(std::int64_t v) { return Fraction(BigInt(v)); }

inline Fraction abs(const Fraction& f) { return f < 0 ? Fraction(-f) : f; }

/// D(x, s) of element i, computed exactly.
inline Fraction dequantized(const ScaledTensor& t, std::size_t i) {
  return exact(t.data()[i]) / exact(t.scale_at(i));
}

inline std::vector<Fraction> dequantized(const ScaledTensor& t) {
  std::vector<Fraction> out;
  out.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out.push_back(dequantized(t, i));
  return out;
}

inline RationalTensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return RationalTensor(std::move(shape), std::move(v));
}

}  // namespace spq::oracle
