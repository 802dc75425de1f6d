#include "spq/scale.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace spq {

std::string_view to_string(ScaleGranularity g) {
  switch (g) {
    case ScaleGranularity::PerRow: return "row";
    case ScaleGranularity::PerBatchTime: return "bt";
    case ScaleGranularity::PerBatch: return "b";
  }
  return "?";
}

std::optional<ScaleGranularity> parse_granularity(std::string_view name) {
  if (name == "row") return ScaleGranularity::PerRow;
  if (name == "bt") return ScaleGranularity::PerBatchTime;
  if (name == "b") return ScaleGranularity::PerBatch;
  return std::nullopt;
}

std::vector<bool> reduced_axes(const Shape& shape, ScaleGranularity g) {
  const std::size_t rank = shape.size();
  if (rank == 0) throw std::invalid_argument("reduced_axes: rank-0 tensor");
  std::vector<bool> reduce(rank, true);
  switch (g) {
    case ScaleGranularity::PerRow:
      std::fill(reduce.begin(), reduce.end() - 1, false);
      break;
    case ScaleGranularity::PerBatchTime:
      // Keep [B, T] when present; a rank-2 activation is [T, C].
      for (std::size_t i = 0; i < std::min<std::size_t>(2, rank - 1); ++i) reduce[i] = false;
      break;
    case ScaleGranularity::PerBatch:
      if (rank >= 3) reduce[0] = false;
      break;
  }
  return reduce;
}

ScaleTensor init_scale(const RationalTensor& r, ScaleGranularity g, Precision p) {
  return init_scale_over(r, reduced_axes(r.shape(), g), p);
}

ScaleTensor init_scale_over(const RationalTensor& r, const std::vector<bool>& reduce, Precision p) {
  if (reduce.size() != r.rank()) throw std::invalid_argument("init_scale: axis mask rank mismatch");
  Shape group_shape = r.shape();
  for (std::size_t i = 0; i < reduce.size(); ++i) {
    if (reduce[i]) group_shape[i] = 1;
  }
  std::vector<double> max_abs(numel(group_shape), 0.0);
  const BroadcastIndexer group(group_shape, r.shape());
  for (std::size_t i = 0; i < r.size(); ++i) {
    double& m = max_abs[group(i)];
    m = std::max(m, std::fabs(r[i]));
  }
  const double top = static_cast<double>(p.max_magnitude());
  std::vector<double> scales(max_abs.size());
  for (std::size_t g = 0; g < scales.size(); ++g) {
    if (max_abs[g] == 0.0) {
      scales[g] = 1.0;
      continue;
    }
    const float s = static_cast<float>(top / max_abs[g]);
    if (!std::isfinite(s) || s <= 0.0f) {
      throw std::domain_error("init_scale: scale not representable for max|r| = " +
                              std::to_string(max_abs[g]));
    }
    scales[g] = s;
  }
  return ScaleTensor(std::move(group_shape), std::move(scales));
}

std::int64_t quantize_value(double r, double s) {
  constexpr double kLimit = 4611686018427387904.0;  // 2^62
  const double prod = s * r;
  if (!std::isfinite(prod) || std::fabs(prod) >= kLimit) {
    throw std::overflow_error("quantize: |s * r| exceeds the accumulator lane");
  }
  const double err = std::fma(s, r, -prod);  // s * r == prod + err exactly
  const double q = std::nearbyint(prod);     // ties to even under the default mode
  const double d = prod - q;                 // exact
  double out = q;
  if (d == 0.5) {
    if (err > 0) out = q + 1;
  } else if (d == -0.5) {
    if (err < 0) out = q - 1;
  } else if (d == 0.0) {
    if (err > 0.5 || err < -0.5) {
      out = q + (err > 0 ? 1 : -1);
    } else if (err == 0.5 || err == -0.5) {
      const double lo = err > 0 ? q : q - 1;
      out = std::fmod(lo, 2.0) == 0.0 ? lo : lo + 1;
    }
  }
  return static_cast<std::int64_t>(out);
}

ScaledTensor quantize(const RationalTensor& r, const ScaleTensor& s, Precision p) {
  if (!broadcast_compatible(s.shape(), r.shape())) {
    throw std::invalid_argument("quantize: scale shape " + shape_string(s.shape()) +
                                " incompatible with " + shape_string(r.shape()));
  }
  const BroadcastIndexer scale_index(s.shape(), r.shape());
  std::vector<std::int64_t> x(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) x[i] = quantize_value(r[i], s[scale_index(i)]);
  return ScaledTensor(IntTensor(r.shape(), std::move(x)), s, p);
}

ScaledTensor quantize(const RationalTensor& r, ScaleGranularity g, Precision p) {
  return quantize(r, init_scale(r, g, p), p);
}

RationalTensor dequantize(const ScaledTensor& t) {
  const BroadcastIndexer scale_index(t.scale().shape(), t.shape());
  std::vector<double> r(t.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = static_cast<double>(t.data()[i]) / t.scale()[scale_index(i)];
  }
  return RationalTensor(t.shape(), std::move(r));
}

std::int64_t ceil_ratio(double from, double to) {
  if (!(to > 0) || !(from > 0)) throw std::invalid_argument("ceil_ratio: scales must be positive");
  double k = std::ceil(from / to);
  // Correct the rounded quotient against the exact sign of k * to - from.
  while (k > 1 && std::fma(k - 1, to, -from) >= 0) k -= 1;
  while (std::fma(k, to, -from) < 0) k += 1;
  if (k >= 9.2e18) throw std::overflow_error("ceil_ratio: scale ratio exceeds the lane");
  return static_cast<std::int64_t>(k);
}

namespace {

struct Mantissa {
  std::int64_t m;  // 53-bit integer
  int e;           // value = m * 2^e
};

Mantissa split(double v) {
  int e = 0;
  const double f = std::frexp(v, &e);
  return {static_cast<std::int64_t>(std::ldexp(f, 53)), e - 53};
}

}  // namespace

std::int64_t match_payload(std::int64_t x, double from, double to, MatchRounding mode) {
  if (!(to > 0) || !(from > 0)) throw std::invalid_argument("match_payload: non-positive scale");
  if (x == 0 || to == from) return x;
  if (to > from) throw std::invalid_argument("match_payload: target scale exceeds source scale");
  if (mode == MatchRounding::CeilDivisor) return x / ceil_ratio(from, to);

  const Mantissa t = split(to);
  const Mantissa f = split(from);
  const int shift = t.e - f.e;
  __int128 num = static_cast<__int128>(x) * t.m;
  __int128 den = f.m;
  if (shift >= 0) {
    num <<= shift;  // to <= from keeps this within 117 bits
  } else if (-shift > 64) {
    return 0;  // |x| * to / from < 1
  } else {
    den <<= -shift;
  }
  return static_cast<std::int64_t>(num / den);
}

std::vector<ScaledTensor> scale_match(std::span<const ScaledTensor> ts, MatchRounding mode) {
  if (ts.empty()) throw std::invalid_argument("scale_match: empty input list");
  if (ts.size() == 1) return {ts.front()};
  const Shape& shape = ts.front().shape();
  Shape scale_shape = ts.front().scale().shape();
  for (const auto& t : ts) {
    if (t.shape() != shape) {
      throw std::invalid_argument("scale_match: shape mismatch " + shape_string(t.shape()) +
                                  " vs " + shape_string(shape));
    }
    scale_shape = broadcast_shapes(scale_shape, t.scale().shape());
  }
  std::vector<ScaleTensor> scales;
  for (const auto& t : ts) scales.push_back(broadcast_scale(t.scale(), scale_shape));
  // A group whose payload is all zero is exact at any scale, so it does not
  // take part in choosing the minimum unless every input is zero there.
  const BroadcastIndexer group(scale_shape, shape);
  const std::size_t groups = numel(scale_shape);
  std::vector<double> common(groups, std::numeric_limits<double>::infinity());
  std::vector<double> fallback(groups, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < ts.size(); ++k) {
    for (std::size_t g = 0; g < groups; ++g) fallback[g] = std::min(fallback[g], scales[k][g]);
    for (std::size_t i = 0; i < ts[k].size(); ++i) {
      if (ts[k].data()[i] == 0) continue;
      const std::size_t g = group(i);
      common[g] = std::min(common[g], scales[k][g]);
    }
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (std::isinf(common[g])) common[g] = fallback[g];
  }
  std::vector<ScaledTensor> out;
  out.reserve(ts.size());
  for (std::size_t k = 0; k < ts.size(); ++k) {
    std::vector<std::int64_t> x(ts[k].size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t g = group(i);
      x[i] = match_payload(ts[k].data()[i], scales[k][g], common[g], mode);
    }
    out.emplace_back(IntTensor(shape, std::move(x)), ScaleTensor(scale_shape, common),
                     ts[k].precision());
  }
  return out;
}

ScaledTensor scale_match_dim(const ScaledTensor& t, std::size_t axis, MatchRounding mode) {
  if (axis >= t.rank()) throw std::invalid_argument("scale_match_dim: axis out of range");
  const Shape& in_shape = t.scale().shape();
  if (in_shape[axis] == 1) return t;
  Shape out_shape = in_shape;
  out_shape[axis] = 1;
  const BroadcastIndexer collapse(out_shape, in_shape);
  const BroadcastIndexer group(in_shape, t.shape());
  std::vector<double> common(numel(out_shape), std::numeric_limits<double>::infinity());
  std::vector<double> fallback(common);
  for (std::size_t g = 0; g < t.scale().size(); ++g) {
    double& c = fallback[collapse(g)];
    c = std::min(c, t.scale()[g]);
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.data()[i] == 0) continue;
    const std::size_t g = group(i);
    double& c = common[collapse(g)];
    c = std::min(c, t.scale()[g]);
  }
  for (std::size_t c = 0; c < common.size(); ++c) {
    if (std::isinf(common[c])) common[c] = fallback[c];
  }
  std::vector<std::int64_t> x(t.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t g = group(i);
    x[i] = match_payload(t.data()[i], t.scale()[g], common[collapse(g)], mode);
  }
  return ScaledTensor(IntTensor(t.shape(), std::move(x)),
                      ScaleTensor(std::move(out_shape), std::move(common)), t.precision());
}

ScaledTensor rescale(const IntTensor& x, const ScaleTensor& s, Precision p) {
  return rescale_to_limit(ScaledTensor(x, s, p), p.max_magnitude());
}

ScaledTensor rescale_to_limit(const ScaledTensor& t, std::int64_t limit) {
  if (limit < 1) throw std::invalid_argument("rescale: limit must be positive");
  const IntTensor& x = t.data();
  const ScaleTensor& s = t.scale();
  const BroadcastIndexer group(s.shape(), x.shape());
  std::vector<std::int64_t> group_max(s.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto& m = group_max[group(i)];
    m = std::max(m, x[i] < 0 ? -x[i] : x[i]);
  }
  const std::int64_t top = limit;
  std::vector<std::int64_t> divisor(s.size());
  std::vector<double> scale(s.size());
  for (std::size_t g = 0; g < s.size(); ++g) {
    divisor[g] = group_max[g] / top + (group_max[g] % top != 0 ? 1 : 0);
    divisor[g] = std::max<std::int64_t>(divisor[g], 1);
    scale[g] = s[g] / static_cast<double>(divisor[g]);
  }
  std::vector<std::int64_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / divisor[group(i)];
  return ScaledTensor(IntTensor(x.shape(), std::move(out)), ScaleTensor(s.shape(), std::move(scale)),
                      t.precision());
}

ScaledTensor rescale(const ScaledTensor& t) { return rescale(t.data(), t.scale(), t.precision()); }

namespace {

std::uint64_t work_of(const Kernel& kernel, std::span<const ScaledTensor> ins,
                      const ScaledTensor& out) {
  if (kernel.kind == KernelKind::MatMul && !ins.empty()) {
    return static_cast<std::uint64_t>(out.size()) * ins.front().shape().back();
  }
  if (kernel.kind == KernelKind::SumReduce && !ins.empty()) return ins.front().size();
  return out.size();
}

// Groups whose payload is entirely zero carry no information in their scale;
// resetting them to 1 keeps repeated products from driving it to infinity.
ScaledTensor reset_empty_groups(const ScaledTensor& t, Precision p) {
  const BroadcastIndexer group(t.scale().shape(), t.shape());
  std::vector<bool> empty(t.scale().size(), true);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.data()[i] != 0) empty[group(i)] = false;
  }
  std::vector<double> s(t.scale().values().begin(), t.scale().values().end());
  for (std::size_t g = 0; g < s.size(); ++g) {
    if (empty[g]) s[g] = 1.0;
  }
  return ScaledTensor(t.data(), ScaleTensor(t.scale().shape(), std::move(s)), p);
}

ScaledTensor run(const Kernel& kernel, std::span<const ScaledTensor> ins,
                 const ProtocolContext& ctx, bool project) {
  ScaledTensor out = reset_empty_groups(kernel.fn(ins), ctx.precision);
  bool rescaled = false;
  if (project && !out.in_range()) {
    out = rescale(out);
    rescaled = true;
  }
  if (project && !out.in_range()) {
    throw std::logic_error("protocol_apply: payload exceeds 2^p - 1 after re-scaling");
  }
  if (ctx.log) {
    ctx.log->append({to_audit_op(kernel.kind), Lane::Payload, work_of(kernel, ins, out),
                     out.scale().size(), rescaled, ctx.module});
  }
  return out;
}

}  // namespace

ScaledTensor protocol_apply(const Kernel& kernel, std::span<const ScaledTensor> ins,
                            const ProtocolContext& ctx) {
  return run(kernel, ins, ctx, true);
}

ScaledTensor wide_apply(const Kernel& kernel, std::span<const ScaledTensor> ins,
                        const ProtocolContext& ctx) {
  return run(kernel, ins, ctx, false);
}

void log_scale_op(const ProtocolContext& ctx, std::uint64_t elements) {
  if (ctx.log) ctx.log->append({AuditOp::EwMul, Lane::Scale, 0, elements, false, ctx.module});
}

}  // namespace spq
