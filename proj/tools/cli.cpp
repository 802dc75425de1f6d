#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "spq/analysis.hpp"
#include "spq/model_io.hpp"
#include "spq/scale.hpp"

namespace spq::cli {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kReportFormat =
    "Report lines are tab-separated: tag, layer, metric, value.\n"
    "A '-' layer marks a whole-model figure. Lines starting with '#' are comments.";

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void line(std::ostream& os, std::string_view tag, const std::string& layer, std::string_view metric,
          const std::string& value) {
  os << tag << '\t' << layer << '\t' << metric << '\t' << value << '\n';
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text) || !f.flush()) throw IoError("cannot write '" + path + "'");
}

struct BitRange {
  int lo = 0;
  int hi = 0;
};

BitRange parse_bit_range(const std::string& s) {
  const auto dots = s.find("..");
  auto parse = [&](std::string_view part) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size() || part.empty()) {
      throw std::invalid_argument("--sweep-bits expects a..b, got '" + s + "'");
    }
    return v;
  };
  if (dots == std::string::npos) throw std::invalid_argument("--sweep-bits expects a..b, got '" + s + "'");
  const BitRange r{parse(std::string_view(s).substr(0, dots)), parse(std::string_view(s).substr(dots + 2))};
  for (int p : {r.lo, r.hi}) {
    if (p < Precision::kMin || p > Precision::kMax) {
      throw std::invalid_argument("--sweep-bits: precision " + std::to_string(p) + " outside [" +
                                  std::to_string(Precision::kMin) + ", " + std::to_string(Precision::kMax) + "]");
    }
  }
  return r;
}

ScaleGranularity granularity_of(const std::string& name) {
  const auto g = parse_granularity(name);
  if (!g) throw std::invalid_argument("unknown granularity '" + name + "' (row, bt or b)");
  return *g;
}

QuantizedModel load_quantized(const std::string& path) {
  AnyModel m = load_model(path);
  if (auto* q = std::get_if<QuantizedModel>(&m)) return std::move(*q);
  throw std::invalid_argument("'" + path + "' is a floating-point model; quantize it first");
}

FloatModel load_float(const std::string& path) {
  AnyModel m = load_model(path);
  if (auto* f = std::get_if<FloatModel>(&m)) return std::move(*f);
  throw std::invalid_argument("'" + path + "' is already quantized");
}

// Activation files reuse the model container: one "input" or "output" record.
RationalTensor load_activations(const std::string& path) {
  const Container c = decode(read_file(path));
  const Record* r = c.find("input");
  if (!r) throw FormatError("'" + path + "' has no 'input' record");
  return read_float(*r);
}

std::vector<TokenSeq> seeded_inputs(const ModelConfig& c, std::size_t count, std::size_t length,
                                    std::uint64_t seed) {
  if (count == 0 || length == 0) throw std::invalid_argument("--inputs and --length must be positive");
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_tokens(length, c.vocab, seed + i));
  return out;
}

void print_storage(std::ostream& out, const StorageReport& s, json& j) {
  line(out, "storage", "-", "fp32_bytes", std::to_string(s.fp32_bytes));
  line(out, "storage", "-", "int_bytes", std::to_string(s.int_bytes));
  line(out, "storage", "-", "payload_bytes", std::to_string(s.payload_bytes));
  line(out, "storage", "-", "scale_bytes", std::to_string(s.scale_bytes));
  line(out, "storage", "-", "ratio", num(s.ratio()));
  j["storage"] = {{"fp32_bytes", s.fp32_bytes}, {"int_bytes", s.int_bytes}, {"payload_bytes", s.payload_bytes},
                  {"scale_bytes", s.scale_bytes}, {"ratio", s.ratio()}};
}

struct InitArgs {
  std::string out;
  std::uint64_t seed = 0;
  ModelConfig config;
  InitOptions init;
  std::string input;
  std::size_t input_rows = 8;
};

void cmd_init(const InitArgs& a, std::ostream& out) {
  a.config.validate();
  save_model(a.out, random_model(a.config, a.seed, a.init));
  line(out, "init", "-", "parameters", std::to_string(default_prepare_cost(a.config)));
  if (!a.input.empty()) {
    if (a.input_rows == 0) throw std::invalid_argument("--input-rows must be positive");
    Container c;
    c.records.push_back(float_record("input", random_activations({a.input_rows, a.config.d_model}, a.seed + 1)));
    write_file(a.input, encode(c));
    line(out, "init", "-", "input_rows", std::to_string(a.input_rows));
  }
}

struct QuantizeArgs {
  std::string in;
  std::string out;
  int precision = 7;
  std::string granularity = "row";
  bool dequantize = false;
};

void cmd_quantize(const QuantizeArgs& a, std::ostream& out) {
  if (a.dequantize) {
    save_model(a.out, dequantize_model(load_quantized(a.in)));
    return;
  }
  const Precision p(a.precision);
  const ScaleGranularity g = granularity_of(a.granularity);
  const FloatModel f = load_float(a.in);
  const QuantizedModel q = quantize_model(f, p, g);
  save_model(a.out, q);
  json j;
  print_storage(out, storage_report(q, f), j);
}

struct InferArgs {
  std::string model;
  std::string input;
  std::string out;
  bool audit = false;
  std::string audit_file;
  bool dequantize_output = false;
};

void cmd_infer(const InferArgs& a, std::ostream& out) {
  const QuantizedModel q = load_quantized(a.model);
  const RationalTensor x = load_activations(a.input);
  if (x.rank() != 2 || x.shape()[1] != q.config.d_model) {
    throw std::invalid_argument("input shape " + shape_string(x.shape()) + " does not match d_model " +
                                std::to_string(q.config.d_model));
  }
  // Entering the integer domain happens before the session starts.
  const ScaledTensor xq = quantize(x, q.granularity, q.precision);
  OpAuditLog log;
  IntForwardOptions opts;
  opts.log = &log;
  const ScaledTensor y = integer_stack_forward(q, xq, opts);

  Container c;
  c.header.layers = q.config.layers;
  c.header.d_model = q.config.d_model;
  c.header.heads = q.config.heads;
  c.header.ffn = q.config.ffn;
  c.header.vocab = q.config.vocab;
  if (a.dequantize_output) {
    c.records.push_back(float_record("output", dequantize(y)));
  } else {
    c.header.precision = static_cast<std::uint8_t>(q.precision.bits());
    c.header.granularity = static_cast<std::uint8_t>(q.granularity);
    append_scaled(c, "output", y);
  }
  write_file(a.out, encode(c));

  line(out, "infer", "-", "rows", std::to_string(y.shape()[0]));
  line(out, "infer", "-", "records", std::to_string(log.size()));
  line(out, "infer", "-", "dequantize_records", std::to_string(log.count(AuditOp::Dequantize)));
  line(out, "infer", "-", "float_payload_records", std::to_string(log.count(Lane::FloatPayload)));
  line(out, "infer", "-", "scale_records", std::to_string(log.count(Lane::Scale)));
  if (!a.audit_file.empty()) {
    std::ostringstream tsv;
    log.write_tsv(tsv);
    write_text(a.audit_file, tsv.str());
  } else if (a.audit) {
    out << "# audit: op, lane, elements, scale_elements, rescaled, module\n";
    log.write_tsv(out);
  }
}

struct CompareArgs {
  std::string model;
  std::string reference;
  std::uint64_t seed = 0;
  std::size_t inputs = 4;
  std::size_t length = 8;
  std::string sweep;
  std::string ablate;
  std::string json_path;
};

void cmd_compare(const CompareArgs& a, std::ostream& out) {
  std::optional<BitRange> sweep;
  if (!a.sweep.empty()) sweep = parse_bit_range(a.sweep);
  std::optional<ModuleSet> ablate;
  if (!a.ablate.empty()) {
    ablate = parse_module_set(a.ablate);
    if (!ablate) throw std::invalid_argument("--ablate: unknown module in '" + a.ablate + "'");
  }
  const QuantizedModel q = load_quantized(a.model);
  const FloatModel f = a.reference.empty() ? dequantize_model(q) : load_float(a.reference);
  if (f.config != q.config) throw std::invalid_argument("reference and model configurations differ");
  const auto ins = seeded_inputs(q.config, a.inputs, a.length, a.seed);
  json j;
  out << "# mse is measured against the floating-point forward pass\n";
  if (sweep) {
    j["sweep"] = json::array();
    for (const auto& pt : bit_sweep(f, ins, sweep->lo, sweep->hi, q.granularity)) {
      line(out, "sweep", std::to_string(pt.bits), "mse", num(pt.mse));
      line(out, "sweep", std::to_string(pt.bits), "relative_error", num(pt.relative_error));
      j["sweep"].push_back({{"bits", pt.bits}, {"mse", pt.mse}, {"relative_error", pt.relative_error}});
    }
  }
  if (ablate) {
    const double mse = module_ablation(q, f, ins, *ablate);
    line(out, "ablate", "-", "mse", num(mse));
    j["ablate"] = {{"modules", a.ablate}, {"mse", mse}};
  }
  if (!sweep && !ablate) {
    const PrecisionReport r = precision_loss(q, f, ins);
    write_report(out, r);
    j["modules"] = json::array();
    for (const auto& e : r.entries) {
      j["modules"].push_back(
          {{"module", to_string(e.module)}, {"layer", e.layer}, {"mse", e.mse()}, {"count", e.count}});
    }
  }
  if (!a.json_path.empty()) write_text(a.json_path, j.dump(2) + "\n");
}

struct ReportArgs {
  std::string model;
  std::string reference;
  std::uint64_t seed = 0;
  std::vector<std::size_t> lengths = {1, 4, 16};
  double factor = 6.0;
  std::string json_path;
};

void cmd_report(const ReportArgs& a, std::ostream& out) {
  const QuantizedModel q = load_quantized(a.model);
  const FloatModel f = a.reference.empty() ? dequantize_model(q) : load_float(a.reference);
  if (f.config != q.config) throw std::invalid_argument("reference and model configurations differ");
  json j;
  const ModelConfig& c = q.config;
  line(out, "model", "-", "precision", std::to_string(q.precision.bits()));
  line(out, "model", "-", "granularity", std::string(to_string(q.granularity)));
  line(out, "model", "-", "layers", std::to_string(c.layers));
  line(out, "model", "-", "d_model", std::to_string(c.d_model));
  line(out, "model", "-", "degree", std::to_string(c.degree));
  j["model"] = {{"precision", q.precision.bits()}, {"granularity", to_string(q.granularity)},
                {"layers", c.layers}, {"d_model", c.d_model}, {"heads", c.heads}, {"ffn", c.ffn},
                {"vocab", c.vocab}, {"degree", c.degree}};
  print_storage(out, storage_report(q, f), j);
  j["speedup"] = json::array();
  for (std::size_t len : a.lengths) {
    if (len == 0) throw std::invalid_argument("--length values must be positive");
    const OpAuditLog log = decode_trace(q, len, a.seed, default_prepare_cost(c));
    const SpeedupEstimate e = speedup_estimate(log, a.factor);
    line(out, "speedup", std::to_string(len), "share", num(e.share()));
    line(out, "speedup", std::to_string(len), "estimate", num(e.speedup()));
    j["speedup"].push_back({{"length", len}, {"share", e.share()}, {"estimate", e.speedup()}});
  }
  if (!a.json_path.empty()) write_text(a.json_path, j.dump(2) + "\n");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Integer transformer inference with scale propagation"};
  app.require_subcommand(1);
  app.footer(kReportFormat);

  InitArgs init;
  auto* c_init = app.add_subcommand("init", "Write a random floating-point toy model");
  c_init->add_option("out", init.out, "Model file to write")->required();
  c_init->add_option("--seed", init.seed, "Random seed");
  c_init->add_option("--degree", init.config.degree, "Polynomial attention degree")->capture_default_str();
  c_init->add_option("--layers", init.config.layers)->capture_default_str();
  c_init->add_option("--d-model", init.config.d_model)->capture_default_str();
  c_init->add_option("--heads", init.config.heads)->capture_default_str();
  c_init->add_option("--ffn", init.config.ffn)->capture_default_str();
  c_init->add_option("--vocab", init.config.vocab)->capture_default_str();
  c_init->add_option("--poly-bias", init.init.poly_bias)->capture_default_str();
  c_init->add_option("--poly-delta", init.init.poly_delta)->capture_default_str();
  c_init->add_option("--input", init.input, "Also write a random [rows, d_model] input file");
  c_init->add_option("--input-rows", init.input_rows)->capture_default_str();

  QuantizeArgs quant;
  auto* c_quant = app.add_subcommand("quantize", "Quantize a floating-point model");
  c_quant->add_option("in", quant.in)->required();
  c_quant->add_option("out", quant.out)->required();
  c_quant->add_option("--precision", quant.precision, "Payload bits p")->capture_default_str();
  c_quant->add_option("--granularity", quant.granularity, "Activation scale granularity: row, bt or b")
      ->capture_default_str();
  c_quant->add_flag("--dequantize", quant.dequantize, "Convert a quantized model back to floating point");

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Run the integer layer stack on an input file");
  c_infer->add_option("model", infer.model)->required();
  c_infer->add_option("input", infer.input)->required();
  c_infer->add_option("out", infer.out)->required();
  c_infer->add_flag("--audit", infer.audit, "Print the op audit log");
  c_infer->add_option("--audit-file", infer.audit_file, "Write the op audit log to a file");
  c_infer->add_flag("--dequantize-output", infer.dequantize_output, "Store the output as floating point");

  CompareArgs cmp;
  auto* c_cmp = app.add_subcommand("compare", "Measure precision loss against the floating-point forward");
  c_cmp->add_option("model", cmp.model)->required();
  c_cmp->add_option("--reference", cmp.reference, "Floating-point model (default: de-quantized weights)");
  c_cmp->add_option("--seed", cmp.seed, "Seed for the token inputs");
  c_cmp->add_option("--inputs", cmp.inputs)->capture_default_str();
  c_cmp->add_option("--length", cmp.length)->capture_default_str();
  c_cmp->add_option("--sweep-bits", cmp.sweep, "Re-quantize at each precision in a..b");
  c_cmp->add_option("--ablate", cmp.ablate, "Integer modules: all, none or a list of Emb,Attn,FFN,LN,Res,Proj");
  c_cmp->add_option("--json", cmp.json_path, "Also write the results as JSON");

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Storage and speedup estimates");
  c_rep->add_option("model", rep.model)->required();
  c_rep->add_option("--reference", rep.reference, "Floating-point model for the storage ratio");
  c_rep->add_option("--seed", rep.seed);
  c_rep->add_option("--length", rep.lengths, "Decoding lengths")->capture_default_str();
  c_rep->add_option("--factor", rep.factor, "Integer MatMul speedup")->capture_default_str();
  c_rep->add_option("--json", rep.json_path);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (c_init->parsed()) cmd_init(init, out);
    if (c_quant->parsed()) cmd_quantize(quant, out);
    if (c_infer->parsed()) cmd_infer(infer, out);
    if (c_cmp->parsed()) cmd_compare(cmp, out);
    if (c_rep->parsed()) cmd_report(rep, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace spq::cli
