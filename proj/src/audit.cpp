#include "spq/audit.hpp"

#include <algorithm>
#include <cctype>

namespace spq {

std::string_view to_string(KernelKind k) { return to_string(to_audit_op(k)); }

std::string_view to_string(AuditOp op) {
  switch (op) {
    case AuditOp::Add: return "add";
    case AuditOp::EwMul: return "ew_mul";
    case AuditOp::MatMul: return "matmul";
    case AuditOp::PowN: return "pow_n";
    case AuditOp::Abs: return "abs";
    case AuditOp::Relu: return "relu";
    case AuditOp::SumReduce: return "sum_reduce";
    case AuditOp::IntDiv: return "int_div";
    case AuditOp::Quantize: return "quantize";
    case AuditOp::Dequantize: return "dequantize";
    case AuditOp::FloatOp: return "float_op";
    case AuditOp::Prepare: return "prepare";
  }
  return "?";
}

std::string_view to_string(Lane lane) {
  switch (lane) {
    case Lane::Payload: return "payload";
    case Lane::Scale: return "scale";
    case Lane::FloatPayload: return "float_payload";
  }
  return "?";
}

std::string_view to_string(ModuleTag tag) {
  switch (tag) {
    case ModuleTag::Emb: return "Emb";
    case ModuleTag::Attn: return "Attn";
    case ModuleTag::FFN: return "FFN";
    case ModuleTag::LN: return "LN";
    case ModuleTag::Res: return "Res";
    case ModuleTag::Proj: return "Proj";
  }
  return "?";
}

std::optional<ModuleTag> parse_module_tag(std::string_view name) {
  for (ModuleTag t : kAllModules) {
    std::string_view canonical = to_string(t);
    if (name.size() == canonical.size() &&
        std::equal(name.begin(), name.end(), canonical.begin(),
                   [](char a, char b) { return std::tolower(a) == std::tolower(b); })) {
      return t;
    }
  }
  return std::nullopt;
}

std::size_t OpAuditLog::count(AuditOp op) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [op](const auto& r) { return r.op == op; }));
}

std::size_t OpAuditLog::count(Lane lane) const {
  return static_cast<std::size_t>(std::count_if(
      records_.begin(), records_.end(), [lane](const auto& r) { return r.lane == lane; }));
}

bool OpAuditLog::integer_only() const {
  return count(AuditOp::Dequantize) == 0 && count(Lane::FloatPayload) == 0;
}

void OpAuditLog::write_tsv(std::ostream& os) const {
  for (const auto& r : records_) {
    os << to_string(r.op) << '\t' << to_string(r.lane) << '\t' << r.elements << '\t'
       << r.scale_elements << '\t' << (r.rescaled ? 1 : 0) << '\t'
       << (r.module ? to_string(*r.module) : std::string_view("-")) << '\n';
  }
}

}  // namespace spq
