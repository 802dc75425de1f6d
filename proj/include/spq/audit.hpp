#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string_view>
#include <vector>

namespace spq {

/// The closed set of integer kernels.
enum class KernelKind : std::uint8_t { Add, EwMul, MatMul, PowN, Abs, Relu, SumReduce, IntDiv };

/// Everything an audit record can describe: a kernel, a boundary conversion,
/// a float operation, or fixed per-sequence work.
enum class AuditOp : std::uint8_t {
  Add,
  EwMul,
  MatMul,
  PowN,
  Abs,
  Relu,
  SumReduce,
  IntDiv,
  Quantize,
  Dequantize,
  FloatOp,
  Prepare,
};

enum class Lane : std::uint8_t {
  Payload,       // integer arithmetic on tensor values
  Scale,         // floating-point bookkeeping on scales only
  FloatPayload,  // floating-point arithmetic on tensor values
};

/// Module granularity used for taps and ablations.
enum class ModuleTag : std::uint8_t { Emb, Attn, FFN, LN, Res, Proj };

inline constexpr ModuleTag kAllModules[] = {ModuleTag::Emb, ModuleTag::Attn, ModuleTag::FFN,
                                            ModuleTag::LN,  ModuleTag::Res,  ModuleTag::Proj};

constexpr AuditOp to_audit_op(KernelKind k) { return static_cast<AuditOp>(k); }

std::string_view to_string(KernelKind k);
std::string_view to_string(AuditOp op);
std::string_view to_string(Lane lane);
std::string_view to_string(ModuleTag tag);
std::optional<ModuleTag> parse_module_tag(std::string_view name);

struct AuditRecord {
  AuditOp op = AuditOp::Add;
  Lane lane = Lane::Payload;
  /// Work proxy: output elements, or multiply-accumulates for MatMul.
  std::uint64_t elements = 0;
  /// Scale-lane elements touched alongside the payload work.
  std::uint64_t scale_elements = 0;
  bool rescaled = false;
  std::optional<ModuleTag> module;

  bool operator==(const AuditRecord&) const = default;
};

/// Append-only record of executed ops, owned by one inference session.
class OpAuditLog {
 public:
  void append(const AuditRecord& r) { records_.push_back(r); }
  const std::vector<AuditRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  std::size_t count(AuditOp op) const;
  std::size_t count(Lane lane) const;

  /// True when no de-quantize record and no float op on a payload lane exists.
  bool integer_only() const;

  /// One tab-separated line per record: op, lane, elements, scale_elements,
  /// rescaled, module.
  void write_tsv(std::ostream& os) const;

 private:
  std::vector<AuditRecord> records_;
};

}  // namespace spq
