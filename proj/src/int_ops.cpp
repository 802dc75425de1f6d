#include "spq/int_ops.hpp"

#include <cmath>
#include <string>

namespace spq {

namespace {

Precision precision_of(const ScaledTensor& a, const ScaledTensor& b) {
  return a.precision().bits() >= b.precision().bits() ? a.precision() : b.precision();
}

ScaledTensor materialize(const ScaledTensor& t, const Shape& shape) {
  if (t.shape() == shape) return t;
  return ScaledTensor(broadcast_payload(t.data(), shape), t.scale(), t.precision());
}

// Scale shape of an elementwise result: a dim stays collapsed only when it
// is collapsed in both operands.
ScaleTensor combine_scales(const ScaledTensor& a, const ScaledTensor& b, const Shape& out_shape,
                           double (*op)(double, double)) {
  Shape shape(out_shape.size());
  for (std::size_t d = 0; d < shape.size(); ++d) {
    shape[d] = a.scale().shape()[d] == 1 && b.scale().shape()[d] == 1 ? 1 : out_shape[d];
  }
  const ScaleTensor sa = broadcast_scale(a.scale(), shape);
  const ScaleTensor sb = broadcast_scale(b.scale(), shape);
  std::vector<double> values(sa.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = op(sa[i], sb[i]);
  return ScaleTensor(std::move(shape), std::move(values));
}

ScaledTensor map_payload(const ScaledTensor& t, std::int64_t (*f)(std::int64_t)) {
  std::vector<std::int64_t> x(t.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = f(t.data()[i]);
  return ScaledTensor(IntTensor(t.shape(), std::move(x)), t.scale(), t.precision());
}

ScaledTensor add_signed(const ScaledTensor& a, const ScaledTensor& b, MatchRounding mode,
                        std::int64_t sign) {
  const Shape shape = broadcast_shapes(a.shape(), b.shape());
  const ScaledTensor operands[] = {materialize(a, shape), materialize(b, shape)};
  const auto matched = scale_match(operands, mode);
  std::vector<std::int64_t> x(numel(shape));
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = checked_add(matched[0].data()[i], sign * matched[1].data()[i]);
  }
  return ScaledTensor(IntTensor(shape, std::move(x)), matched[0].scale(), precision_of(a, b));
}

}  // namespace

ScaledTensor ew_mul(const ScaledTensor& a, const ScaledTensor& b) {
  const Shape shape = broadcast_shapes(a.shape(), b.shape());
  const IntTensor xa = broadcast_payload(a.data(), shape);
  const IntTensor xb = broadcast_payload(b.data(), shape);
  std::vector<std::int64_t> x(xa.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = checked_mul(xa[i], xb[i]);
  return ScaledTensor(IntTensor(shape, std::move(x)),
                      combine_scales(a, b, shape, [](double u, double v) { return u * v; }),
                      precision_of(a, b));
}

ScaledTensor add(const ScaledTensor& a, const ScaledTensor& b, MatchRounding mode) {
  return add_signed(a, b, mode, 1);
}

ScaledTensor subtract(const ScaledTensor& a, const ScaledTensor& b, MatchRounding mode) {
  return add_signed(a, b, mode, -1);
}

ScaledTensor matmul(const ScaledTensor& a, const ScaledTensor& b_t, MatchRounding mode) {
  if (a.rank() != 2 || b_t.rank() != 2) throw std::invalid_argument("matmul: operands must be rank 2");
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b_t.shape()[0];
  if (b_t.shape()[1] != k) {
    throw std::invalid_argument("matmul: contraction mismatch " + shape_string(a.shape()) + " x " +
                                shape_string(b_t.shape()) + "^T");
  }
  const ScaledTensor lhs = scale_match_dim(a, 1, mode);
  const ScaledTensor rhs = scale_match_dim(b_t, 1, mode);
  std::vector<std::int64_t> x(m * n, 0);
  const auto xa = lhs.data().values();
  const auto xb = rhs.data().values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::int64_t acc = 0;
      for (std::size_t c = 0; c < k; ++c) acc = checked_add(acc, checked_mul(xa[i * k + c], xb[j * k + c]));
      x[i * n + j] = acc;
    }
  }
  const ScaleTensor& sa = lhs.scale();
  const ScaleTensor& sb = rhs.scale();
  const std::size_t rows = sa.shape()[0];
  const std::size_t cols = sb.shape()[0];
  std::vector<double> s(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) s[i * cols + j] = sa[i] * sb[j];
  }
  return ScaledTensor(IntTensor({m, n}, std::move(x)), ScaleTensor({rows, cols}, std::move(s)),
                      precision_of(a, b_t));
}

ScaledTensor pow_n(const ScaledTensor& t, int n) {
  if (n < 1) throw std::invalid_argument("pow_n: exponent must be positive, got " + std::to_string(n));
  if (n == 1) return t;
  // Largest magnitude whose n-th power stays below 2^62.
  auto limit = static_cast<std::int64_t>(std::floor(std::pow(2.0, 62.0 / n)));
  while (limit > 1 && std::pow(static_cast<double>(limit), n) >= 4.611686018427388e18) --limit;
  const ScaledTensor base = t.data().max_abs() > limit ? rescale_to_limit(t, limit) : t;
  std::vector<std::int64_t> x(base.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::int64_t acc = 1;
    for (int e = 0; e < n; ++e) acc = checked_mul(acc, base.data()[i]);
    x[i] = acc;
  }
  std::vector<double> s(base.scale().size());
  for (std::size_t g = 0; g < s.size(); ++g) {
    double acc = 1.0;
    for (int e = 0; e < n; ++e) acc *= base.scale()[g];
    s[g] = acc;
  }
  return ScaledTensor(IntTensor(base.shape(), std::move(x)),
                      ScaleTensor(base.scale().shape(), std::move(s)), t.precision());
}

ScaledTensor abs(const ScaledTensor& t) {
  return map_payload(t, [](std::int64_t v) { return v < 0 ? -v : v; });
}

ScaledTensor relu(const ScaledTensor& t) {
  return map_payload(t, [](std::int64_t v) { return v > 0 ? v : std::int64_t{0}; });
}

ScaledTensor negate(const ScaledTensor& t) {
  return map_payload(t, [](std::int64_t v) { return -v; });
}

ScaledTensor sum_reduce(const ScaledTensor& t, std::size_t axis, MatchRounding mode) {
  if (axis >= t.rank()) throw std::invalid_argument("sum_reduce: axis out of range");
  const ScaledTensor m = t.scale().shape()[axis] == 1 ? t : scale_match_dim(t, axis, mode);
  Shape out_shape = t.shape();
  out_shape[axis] = 1;
  const BroadcastIndexer target(out_shape, t.shape());
  std::vector<std::int64_t> x(numel(out_shape), 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto& acc = x[target(i)];
    acc = checked_add(acc, m.data()[i]);
  }
  return ScaledTensor(IntTensor(std::move(out_shape), std::move(x)), m.scale(), t.precision());
}

ScaledTensor int_div(const ScaledTensor& num, const ScaledTensor& den) {
  const Shape shape = broadcast_shapes(num.shape(), den.shape());
  const IntTensor xn = broadcast_payload(num.data(), shape);
  const IntTensor xd = broadcast_payload(den.data(), shape);
  std::vector<std::int64_t> x(xn.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (xd[i] <= 0) throw std::domain_error("int_div: denominator payload must be positive");
    x[i] = xn[i] / xd[i];
  }
  return ScaledTensor(IntTensor(shape, std::move(x)),
                      combine_scales(num, den, shape, [](double u, double v) { return u / v; }),
                      precision_of(num, den));
}

ScaledTensor round_div(const ScaledTensor& t, std::int64_t divisor) {
  if (divisor <= 0) throw std::invalid_argument("round_div: divisor must be positive");
  std::vector<std::int64_t> x(t.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::int64_t v = t.data()[i];
    std::int64_t q = v / divisor;
    const std::int64_t r = v % divisor;  // same sign as v
    const std::int64_t twice = 2 * (r < 0 ? -r : r);
    if (twice > divisor || (twice == divisor && q % 2 != 0)) q += v < 0 ? -1 : 1;
    x[i] = q;
  }
  return ScaledTensor(IntTensor(t.shape(), std::move(x)), t.scale(), t.precision());
}

namespace kernels {

Kernel ew_mul() {
  return {KernelKind::EwMul, [](std::span<const ScaledTensor> in) { return spq::ew_mul(in[0], in[1]); }};
}

Kernel add(MatchRounding mode) {
  return {KernelKind::Add,
          [mode](std::span<const ScaledTensor> in) { return spq::add(in[0], in[1], mode); }};
}

Kernel subtract(MatchRounding mode) {
  return {KernelKind::Add,
          [mode](std::span<const ScaledTensor> in) { return spq::subtract(in[0], in[1], mode); }};
}

Kernel matmul(MatchRounding mode) {
  return {KernelKind::MatMul,
          [mode](std::span<const ScaledTensor> in) { return spq::matmul(in[0], in[1], mode); }};
}

Kernel pow_n(int n) {
  return {KernelKind::PowN, [n](std::span<const ScaledTensor> in) { return spq::pow_n(in[0], n); }};
}

Kernel abs() {
  return {KernelKind::Abs, [](std::span<const ScaledTensor> in) { return spq::abs(in[0]); }};
}

Kernel relu() {
  return {KernelKind::Relu, [](std::span<const ScaledTensor> in) { return spq::relu(in[0]); }};
}

Kernel sum_reduce(std::size_t axis, MatchRounding mode) {
  return {KernelKind::SumReduce,
          [axis, mode](std::span<const ScaledTensor> in) { return spq::sum_reduce(in[0], axis, mode); }};
}

Kernel int_div() {
  return {KernelKind::IntDiv,
          [](std::span<const ScaledTensor> in) { return spq::int_div(in[0], in[1]); }};
}

Kernel round_div(std::int64_t divisor) {
  return {KernelKind::IntDiv,
          [divisor](std::span<const ScaledTensor> in) { return spq::round_div(in[0], divisor); }};
}

}  // namespace kernels

}  // namespace spq
