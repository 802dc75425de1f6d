#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "spq/model.hpp"
#include "spq/reference.hpp"
#include "spq/transformer.hpp"

namespace spq {

using TokenSeq = std::vector<std::size_t>;
using ModuleSet = std::set<ModuleTag>;

/// "all", "none" or a comma-separated list of module names.
std::optional<ModuleSet> parse_module_set(std::string_view csv);
ModuleSet all_modules();

struct MseEntry {
  ModuleTag module = ModuleTag::Emb;
  int layer = 0;
  double sse = 0;
  std::size_t count = 0;
  double mse() const { return count ? sse / static_cast<double>(count) : 0.0; }
};

struct PrecisionReport {
  std::vector<MseEntry> entries;  // first-seen order of (module, layer)
  const MseEntry* find(ModuleTag module, int layer) const;
};

/// Per-module, per-layer MSE between reference activations and the
/// de-quantized integer activations, pooled over all inputs.
PrecisionReport precision_loss(const QuantizedModel& q, const FloatModel& f,
                               std::span<const TokenSeq> inputs);

/// Forward pass where only `int_modules` run on the integer path; other
/// modules run in floating point. Activations cross domains through
/// quantize (model granularity) and de-quantize, both logged.
RationalTensor hybrid_forward(const QuantizedModel& q, const FloatModel& f, const TokenSeq& tokens,
                              const ModuleSet& int_modules, OpAuditLog* log = nullptr);

/// Mean output MSE of hybrid_forward against the floating-point forward.
double module_ablation(const QuantizedModel& q, const FloatModel& f,
                       std::span<const TokenSeq> inputs, const ModuleSet& int_modules);

/// The sandwiched feed-forward sublayer: every integer op is wrapped in
/// quantize/de-quantize and the rest runs in floating point.
ScaledTensor canonical_ffn_forward(const ScaledTensor& x, const LayerParams<RationalTensor>& l,
                                   Precision p, ScaleGranularity g, OpAuditLog* log);

struct StorageReport {
  std::size_t fp32_bytes = 0;     // floating-point file size
  std::size_t int_bytes = 0;      // quantized file size
  std::size_t payload_bytes = 0;  // integer payload records, data only
  std::size_t scale_bytes = 0;    // scale records, data only
  std::size_t fp32_payload_bytes = 0;
  double ratio() const { return static_cast<double>(fp32_bytes) / static_cast<double>(int_bytes); }
  double payload_ratio() const {
    return static_cast<double>(fp32_payload_bytes) / static_cast<double>(payload_bytes);
  }
};

/// Byte counts taken from the serialized forms of both models.
StorageReport storage_report(const QuantizedModel& q, const FloatModel& f);

struct SpeedupEstimate {
  double accelerable = 0;      // integer MatMul work
  double non_accelerable = 0;  // everything else
  double factor = 6.0;
  double share() const;
  double speedup() const;
};

/// Amdahl estimate total / (acc / factor + rest), with logged element counts
/// as time proxies. Scale-lane bookkeeping is treated as free.
SpeedupEstimate speedup_estimate(const OpAuditLog& log, double factor = 6.0);
double amdahl(double accelerable, double non_accelerable, double factor);

/// Greedy-decoding trace without caching: one fixed Prepare record, then a
/// full forward pass for every prefix length 1..length.
OpAuditLog decode_trace(const QuantizedModel& m, std::size_t length, std::uint64_t seed,
                        std::uint64_t prepare_cost);
std::uint64_t default_prepare_cost(const ModelConfig& c);

struct SweepPoint {
  int bits = 0;
  double mse = 0;
  double relative_error = 0;  // sqrt(sum sq err / sum sq reference)
};

/// Re-quantizes `f` at each precision in [lo, hi] and compares the integer
/// output with the floating-point forward of `f`. lo > hi gives no points.
std::vector<SweepPoint> bit_sweep(const FloatModel& f, std::span<const TokenSeq> inputs, int lo,
                                  int hi, ScaleGranularity g = ScaleGranularity::PerRow);

/// One-sided binomial sign test: P(X >= successes) for X ~ Bin(trials, 1/2).
double sign_test_p(std::size_t successes, std::size_t trials);

/// Tab-separated lines: tag, layer, metric, value.
void write_report(std::ostream& os, const PrecisionReport& r);

}  // namespace spq
