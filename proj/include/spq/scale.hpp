#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "spq/audit.hpp"
#include "spq/tensor.hpp"

namespace spq {

/// Which dims of an activation's scale are collapsed. Activations are laid
/// out [B, T, C] (rank 3) or [T, C] (rank 2, batch of one).
enum class ScaleGranularity : std::uint8_t {
  PerRow = 0,        // collapse the hidden dim C only
  PerBatchTime = 1,  // one scale per (b, t)
  PerBatch = 2,      // one scale per batch entry
};

std::string_view to_string(ScaleGranularity g);
/// Accepts "row", "bt" and "b".
std::optional<ScaleGranularity> parse_granularity(std::string_view name);

/// Axes reduced by the max in init_scale for the given granularity.
std::vector<bool> reduced_axes(const Shape& shape, ScaleGranularity g);

/// s = (2^p - 1) / max|r| over each group. A group whose max is zero gets
/// scale 1. Scales are rounded to the nearest float so they serialize
/// exactly.
ScaleTensor init_scale(const RationalTensor& r, ScaleGranularity g, Precision p);
ScaleTensor init_scale_over(const RationalTensor& r, const std::vector<bool>& reduce, Precision p);

/// round(s * r), ties to even, evaluated on the exact product.
std::int64_t quantize_value(double r, double s);

ScaledTensor quantize(const RationalTensor& r, const ScaleTensor& s, Precision p = {});
ScaledTensor quantize(const RationalTensor& r, ScaleGranularity g, Precision p = {});
RationalTensor dequantize(const ScaledTensor& t);

/// How a payload is moved from scale `from` onto a smaller scale `to`.
enum class MatchRounding : std::uint8_t {
  /// trunc(x * to / from), evaluated exactly in integer arithmetic.
  Exact,
  /// trunc(x / ceil(from / to)); coincides with Exact for integral ratios.
  CeilDivisor,
};

/// Re-expresses payload `x` at scale `to` (to <= from), truncating toward
/// zero so |result| <= |x|.
std::int64_t match_payload(std::int64_t x, double from, double to, MatchRounding mode);

/// Smallest integer k with k * to >= from.
std::int64_t ceil_ratio(double from, double to);

/// Unifies every input onto the elementwise minimum scale. Groups whose
/// payload is entirely zero are exact at any scale and are skipped when
/// picking the minimum.
std::vector<ScaledTensor> scale_match(std::span<const ScaledTensor> ts,
                                      MatchRounding mode = MatchRounding::Exact);

/// Collapses the scale along `axis` to its minimum (zero groups skipped).
ScaledTensor scale_match_dim(const ScaledTensor& t, std::size_t axis,
                             MatchRounding mode = MatchRounding::Exact);

/// Divides each scale group's payload and scale by ceil(max|x| / (2^p - 1)).
ScaledTensor rescale(const IntTensor& x, const ScaleTensor& s, Precision p);
ScaledTensor rescale(const ScaledTensor& t);
/// Same grouping, with an arbitrary magnitude limit in place of 2^p - 1.
ScaledTensor rescale_to_limit(const ScaledTensor& t, std::int64_t limit);

using KernelFn = std::function<ScaledTensor(std::span<const ScaledTensor>)>;

struct Kernel {
  KernelKind kind;
  KernelFn fn;
};

/// Session-local state threaded through protocol calls.
struct ProtocolContext {
  Precision precision;
  OpAuditLog* log = nullptr;
  std::optional<ModuleTag> module;
  MatchRounding matching = MatchRounding::Exact;
};

/// Runs `kernel` in the wide lane, re-scales when any |x| > 2^p - 1 and
/// appends one audit record. The result always satisfies the precision bound.
ScaledTensor protocol_apply(const Kernel& kernel, std::span<const ScaledTensor> ins,
                            const ProtocolContext& ctx);

/// Same as protocol_apply but keeps the wide-lane result. Only for
/// intermediates consumed directly by an integer division.
ScaledTensor wide_apply(const Kernel& kernel, std::span<const ScaledTensor> ins,
                        const ProtocolContext& ctx);

/// Logs pure scale-lane bookkeeping (e.g. folding a constant into a scale).
void log_scale_op(const ProtocolContext& ctx, std::uint64_t elements);

}  // namespace spq
