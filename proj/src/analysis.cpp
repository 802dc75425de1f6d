#include "spq/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>

#include <boost/math/distributions/binomial.hpp>

#include "spq/int_ops.hpp"
#include "spq/model_io.hpp"

namespace spq {

std::optional<ModuleSet> parse_module_set(std::string_view csv) {
  if (csv == "all") return all_modules();
  ModuleSet out;
  if (csv == "none" || csv.empty()) return out;
  while (!csv.empty()) {
    const auto comma = csv.find(',');
    const auto item = csv.substr(0, comma);
    const auto tag = parse_module_tag(item);
    if (!tag) return std::nullopt;
    out.insert(*tag);
    if (comma == std::string_view::npos) break;
    csv.remove_prefix(comma + 1);
  }
  return out;
}

ModuleSet all_modules() { return ModuleSet(std::begin(kAllModules), std::end(kAllModules)); }

const MseEntry* PrecisionReport::find(ModuleTag module, int layer) const {
  for (const auto& e : entries) {
    if (e.module == module && e.layer == layer) return &e;
  }
  return nullptr;
}

namespace {

struct Tap {
  ModuleTag module;
  int layer;
  RationalTensor value;
};

double squared_error(const RationalTensor& a, const RationalTensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("analysis: shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  double sse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) sse += (a[i] - b[i]) * (a[i] - b[i]);
  return sse;
}

}  // namespace

PrecisionReport precision_loss(const QuantizedModel& q, const FloatModel& f,
                               std::span<const TokenSeq> inputs) {
  PrecisionReport report;
  std::map<std::pair<ModuleTag, int>, std::size_t> index;
  for (const auto& tokens : inputs) {
    std::vector<Tap> int_taps;
    std::vector<Tap> ref_taps;
    IntForwardOptions opts;
    opts.tap = [&](ModuleTag m, int layer, const RationalTensor& t) { int_taps.push_back({m, layer, t}); };
    integer_forward(q, tokens, opts);
    reference_forward(f, tokens, AttentionFlavor::Poly,
                      [&](ModuleTag m, int layer, const RationalTensor& t) { ref_taps.push_back({m, layer, t}); });
    if (int_taps.size() != ref_taps.size()) throw std::logic_error("precision_loss: tap count mismatch");
    for (std::size_t i = 0; i < int_taps.size(); ++i) {
      const Tap& a = int_taps[i];
      const Tap& b = ref_taps[i];
      if (a.module != b.module || a.layer != b.layer) {
        throw std::logic_error("precision_loss: taps out of order");
      }
      const auto key = std::make_pair(a.module, a.layer);
      auto it = index.find(key);
      if (it == index.end()) {
        it = index.emplace(key, report.entries.size()).first;
        report.entries.push_back({a.module, a.layer, 0.0, 0});
      }
      MseEntry& e = report.entries[it->second];
      e.sse += squared_error(a.value, b.value);
      e.count += a.value.size();
    }
  }
  return report;
}

namespace {

using Activation = std::variant<ScaledTensor, RationalTensor>;

class HybridExecutor {
 public:
  HybridExecutor(const QuantizedModel& q, const FloatModel& f, const ModuleSet& ints, OpAuditLog* log)
      : q_(q), f_(f), ints_(ints), log_(log) {}

  RationalTensor run(const TokenSeq& tokens) {
    Activation x;
    if (is_int(ModuleTag::Emb)) {
      x = gather_rows(q_.emb, tokens);
    } else {
      x = float_op(ModuleTag::Emb, gather_rows(f_.emb, tokens));
    }
    for (std::size_t i = 0; i < q_.layers.size(); ++i) x = layer(x, q_.layers[i], f_.layers[i]);
    Activation logits;
    if (is_int(ModuleTag::Proj)) {
      const ScaledTensor in[] = {to_int(x), q_.emb};
      logits = protocol_apply(kernels::matmul(), in, ctx(ModuleTag::Proj));
    } else {
      logits = float_op(ModuleTag::Proj, ref::linear(to_float(x), f_.emb, nullptr));
    }
    // The final de-quantization belongs to the consumer, not to the network.
    if (const auto* t = std::get_if<ScaledTensor>(&logits)) return dequantize(*t);
    return std::get<RationalTensor>(logits);
  }

 private:
  bool is_int(ModuleTag t) const { return ints_.contains(t); }

  ProtocolContext ctx(ModuleTag t) const { return {q_.precision, log_, t, MatchRounding::Exact}; }

  void record(AuditOp op, std::size_t elements, std::optional<ModuleTag> module) const {
    if (log_) log_->append({op, Lane::FloatPayload, elements, 0, false, module});
  }

  RationalTensor float_op(ModuleTag t, RationalTensor r) const {
    record(AuditOp::FloatOp, r.size(), t);
    return r;
  }

  ScaledTensor to_int(const Activation& a) const {
    if (const auto* t = std::get_if<ScaledTensor>(&a)) return *t;
    const auto& r = std::get<RationalTensor>(a);
    record(AuditOp::Quantize, r.size(), std::nullopt);
    return quantize(r, q_.granularity, q_.precision);
  }

  RationalTensor to_float(const Activation& a) const {
    if (const auto* r = std::get_if<RationalTensor>(&a)) return *r;
    const auto& t = std::get<ScaledTensor>(a);
    record(AuditOp::Dequantize, t.size(), std::nullopt);
    return dequantize(t);
  }

  Activation norm(const Activation& x, const ScaledTensor& qg, const ScaledTensor& qb,
                  const RationalTensor& fg, const RationalTensor& fb) const {
    if (is_int(ModuleTag::LN)) return l1_layer_norm(to_int(x), qg, qb, ctx(ModuleTag::LN));
    return float_op(ModuleTag::LN, ref::l1_layer_norm(to_float(x), fg, fb));
  }

  Activation residual(const Activation& x, const Activation& y) const {
    if (is_int(ModuleTag::Res)) {
      const ScaledTensor in[] = {to_int(x), to_int(y)};
      return protocol_apply(kernels::add(), in, ctx(ModuleTag::Res));
    }
    return float_op(ModuleTag::Res, ref::add(to_float(x), to_float(y)));
  }

  Activation layer(const Activation& x, const LayerParams<ScaledTensor>& ql,
                   const LayerParams<RationalTensor>& fl) const {
    const Activation h1 = norm(x, ql.ln1_g, ql.ln1_b, fl.ln1_g, fl.ln1_b);
    Activation a;
    if (is_int(ModuleTag::Attn)) {
      a = attention_block(to_int(h1), ql, q_.config, ctx(ModuleTag::Attn));
    } else {
      a = float_op(ModuleTag::Attn,
                   ref::attention_block(to_float(h1), fl, f_.config, AttentionFlavor::Poly));
    }
    const Activation x1 = residual(x, a);
    const Activation h2 = norm(x1, ql.ln2_g, ql.ln2_b, fl.ln2_g, fl.ln2_b);
    Activation y;
    if (is_int(ModuleTag::FFN)) {
      y = ffn_block(to_int(h2), ql, ctx(ModuleTag::FFN));
    } else {
      y = float_op(ModuleTag::FFN, ref::ffn_block(to_float(h2), fl));
    }
    return residual(x1, y);
  }

  const QuantizedModel& q_;
  const FloatModel& f_;
  const ModuleSet& ints_;
  OpAuditLog* log_;
};

}  // namespace

RationalTensor hybrid_forward(const QuantizedModel& q, const FloatModel& f, const TokenSeq& tokens,
                              const ModuleSet& int_modules, OpAuditLog* log) {
  if (q.config != f.config) throw std::invalid_argument("hybrid_forward: model configs differ");
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  return HybridExecutor(q, f, int_modules, log).run(tokens);
}

double module_ablation(const QuantizedModel& q, const FloatModel& f,
                       std::span<const TokenSeq> inputs, const ModuleSet& int_modules) {
  double sse = 0;
  std::size_t count = 0;
  for (const auto& tokens : inputs) {
    const RationalTensor ref = reference_forward(f, tokens);
    const RationalTensor out = hybrid_forward(q, f, tokens, int_modules);
    sse += squared_error(out, ref);
    count += ref.size();
  }
  return count ? sse / static_cast<double>(count) : 0.0;
}

ScaledTensor canonical_ffn_forward(const ScaledTensor& x, const LayerParams<RationalTensor>& l,
                                   Precision p, ScaleGranularity g, OpAuditLog* log) {
  auto note = [&](AuditOp op, std::size_t n) {
    if (log) log->append({op, Lane::FloatPayload, n, 0, false, ModuleTag::FFN});
  };
  auto dq = [&](const ScaledTensor& t) {
    note(AuditOp::Dequantize, t.size());
    return dequantize(t);
  };
  auto qz = [&](const RationalTensor& r, ScaleGranularity gr) {
    note(AuditOp::Quantize, r.size());
    return quantize(r, gr, p);
  };
  const ProtocolContext ctx{p, log, ModuleTag::FFN, MatchRounding::Exact};

  const RationalTensor h = ref::l1_layer_norm(dq(x), l.ln2_g, l.ln2_b);
  note(AuditOp::FloatOp, h.size());
  const ScaledTensor w1 = qz(l.w1, ScaleGranularity::PerRow);
  const ScaledTensor w2 = qz(l.w2, ScaleGranularity::PerRow);

  const ScaledTensor in1[] = {qz(h, g), w1};
  ScaledTensor y = protocol_apply(kernels::matmul(), in1, ctx);
  const ScaledTensor in1b[] = {y, qz(l.b1, ScaleGranularity::PerRow)};
  y = protocol_apply(kernels::add(), in1b, ctx);
  const ScaledTensor in1r[] = {y};
  y = protocol_apply(kernels::relu(), in1r, ctx);

  const ScaledTensor in2[] = {qz(dq(y), g), w2};
  const RationalTensor f = ref::add(dq(protocol_apply(kernels::matmul(), in2, ctx)), l.b2);
  const RationalTensor out = ref::add(dq(x), f);
  note(AuditOp::FloatOp, 2 * out.size());
  return qz(out, g);
}

StorageReport storage_report(const QuantizedModel& q, const FloatModel& f) {
  const Container qc = to_container(q);
  const Container fc = to_container(f);
  StorageReport r;
  r.int_bytes = encode(qc).size();
  r.fp32_bytes = encode(fc).size();
  for (const auto& rec : qc.records) {
    if (rec.name.ends_with(".scale")) {
      r.scale_bytes += rec.bytes.size();
    } else if (rec.dtype != DType::F32 && rec.dtype != DType::F64) {
      r.payload_bytes += rec.bytes.size();
    }
  }
  for (const auto& rec : fc.records) {
    if (qc.find(rec.name) && qc.find(rec.name)->dtype != DType::F32) r.fp32_payload_bytes += rec.bytes.size();
  }
  return r;
}

double amdahl(double accelerable, double non_accelerable, double factor) {
  if (!(factor >= 1)) throw std::invalid_argument("speedup: factor must be at least 1");
  if (accelerable < 0 || non_accelerable < 0 || accelerable + non_accelerable <= 0) {
    throw std::invalid_argument("speedup: work must be non-negative and non-empty");
  }
  return (accelerable + non_accelerable) / (accelerable / factor + non_accelerable);
}

double SpeedupEstimate::share() const { return accelerable / (accelerable + non_accelerable); }

double SpeedupEstimate::speedup() const { return amdahl(accelerable, non_accelerable, factor); }

SpeedupEstimate speedup_estimate(const OpAuditLog& log, double factor) {
  if (log.empty()) throw std::invalid_argument("speedup: empty audit log");
  SpeedupEstimate e;
  e.factor = factor;
  for (const auto& r : log.records()) {
    if (r.lane == Lane::Scale) continue;
    const auto work = static_cast<double>(r.elements);
    if (r.op == AuditOp::MatMul && r.lane == Lane::Payload) {
      e.accelerable += work;
    } else {
      e.non_accelerable += work;
    }
  }
  return e;
}

std::uint64_t default_prepare_cost(const ModelConfig& c) {
  // Roughly one touch per parameter: loading and laying out the weights.
  const std::uint64_t d = c.d_model;
  const std::uint64_t per_layer = 4 * d * d + 2 * d * c.ffn + c.ffn + 7 * d + 2;
  return c.vocab * d + c.layers * per_layer;
}

OpAuditLog decode_trace(const QuantizedModel& m, std::size_t length, std::uint64_t seed,
                        std::uint64_t prepare_cost) {
  OpAuditLog log;
  log.append({AuditOp::Prepare, Lane::FloatPayload, prepare_cost, 0, false, std::nullopt});
  const TokenSeq tokens = random_tokens(length, m.config.vocab, seed);
  IntForwardOptions opts;
  opts.log = &log;
  for (std::size_t t = 1; t <= length; ++t) {
    integer_forward(m, std::span<const std::size_t>(tokens.data(), t), opts);
  }
  return log;
}

std::vector<SweepPoint> bit_sweep(const FloatModel& f, std::span<const TokenSeq> inputs, int lo,
                                  int hi, ScaleGranularity g) {
  std::vector<SweepPoint> out;
  if (lo > hi) return out;
  std::vector<RationalTensor> refs;
  for (const auto& tokens : inputs) refs.push_back(reference_forward(f, tokens));
  for (int p = lo; p <= hi; ++p) {
    const QuantizedModel q = quantize_model(f, Precision(p), g);
    double sse = 0;
    double ref_sq = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const RationalTensor y = dequantize(integer_forward(q, inputs[i]));
      sse += squared_error(y, refs[i]);
      for (double v : refs[i].values()) ref_sq += v * v;
      count += y.size();
    }
    SweepPoint pt;
    pt.bits = p;
    pt.mse = count ? sse / static_cast<double>(count) : 0.0;
    pt.relative_error = ref_sq > 0 ? std::sqrt(sse / ref_sq) : 0.0;
    out.push_back(pt);
  }
  return out;
}

double sign_test_p(std::size_t successes, std::size_t trials) {
  if (successes > trials) throw std::invalid_argument("sign test: successes exceed trials");
  if (successes == 0) return 1.0;
  const boost::math::binomial_distribution<double> fair(static_cast<double>(trials), 0.5);
  return boost::math::cdf(boost::math::complement(fair, static_cast<double>(successes - 1)));
}

void write_report(std::ostream& os, const PrecisionReport& r) {
  char buf[32];
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof buf, "%.9g", e.mse());
    os << to_string(e.module) << '\t' << e.layer << "\tmse\t" << buf << '\n';
  }
}

}  // namespace spq
