// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "oracle.hpp"
#include "spq/analysis.hpp"
#include "spq/int_ops.hpp"
#include "spq/model_io.hpp"
#include "spq/scale.hpp"

namespace {

using namespace spq;
using oracle::exact;
using oracle::Fraction;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double to_double(const Fraction& f) { return f.convert_to<double>(); }

std::vector<TokenSeq> token_inputs(const ModelConfig& c, std::size_t n, std::size_t len, std::uint64_t seed) {
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_tokens(len, c.vocab, seed * 1000 + i));
  return out;
}

// 1. |D(Q(r, s)) - r| <= 0.5 / s, i.e. |x - s r| <= 1/2 exactly.
Outcome quantization_bound() {
  std::mt19937_64 rng(1);
  const ScaleGranularity modes[] = {ScaleGranularity::PerRow, ScaleGranularity::PerBatchTime, ScaleGranularity::PerBatch};
  Fraction worst = 0;
  std::size_t elements = 0;
  for (int i = 0; i < 1000; ++i) {
    const int p = 6 + i % 5;
    Shape shape(1 + rng() % 3);
    for (auto& d : shape) d = 1 + rng() % 8;
    const double mag = std::pow(10.0, -3.0 + 6.0 * unit_uniform(rng()));
    const RationalTensor r = oracle::random_tensor(rng, shape, -mag, mag);
    const ScaleTensor s = init_scale(r, modes[rng() % 3], Precision(p));
    const ScaledTensor q = quantize(r, s, Precision(p));
    for (std::size_t k = 0; k < q.size(); ++k) {
      const Fraction err = oracle::abs(exact(q.data()[k]) - exact(q.scale_at(k)) * exact(r[k]));
      worst = std::max(worst, err);
      ++elements;
    }
  }
  return {worst <= Fraction(1, 2),
          fmt("1000 tensors (%zu elements), p 6..10, worst |x - s*r| = %.6f, limit 0.5", elements, to_double(worst))};
}

// 2. Post-protocol payloads stay within 2^p - 1.
Outcome overflow_safety() {
  std::size_t cases = 0, violations = 0, errors = 0;
  auto check = [&](const ScaledTensor& t, Precision p) {
    ++cases;
    if (t.data().max_abs() > p.max_magnitude()) ++violations;
  };

  const Precision p4(4);
  const double scales[] = {0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 7.0, 10.0};
  const ProtocolContext ctx4{p4, nullptr, std::nullopt};
  for (double sa : scales) {
    for (double sb : scales) {
      for (std::int64_t x = -15; x <= 15; ++x) {
        for (std::int64_t y = -15; y <= 15; ++y) {
          const ScaledTensor a(IntTensor({1}, {x}), ScaleTensor({1}, {sa}), p4);
          const ScaledTensor b(IntTensor({1}, {y}), ScaleTensor({1}, {sb}), p4);
          const ScaledTensor in[] = {a, b};
          try {
            check(protocol_apply(kernels::add(), in, ctx4), p4);
            check(protocol_apply(kernels::ew_mul(), in, ctx4), p4);
            for (const auto& m : scale_match(in)) check(m, p4);
            check(rescale(IntTensor({1}, {x * y}), ScaleTensor({1}, {sa * sb}), p4), p4);
            check(rescale(IntTensor({1}, {x + y}), ScaleTensor({1}, {sa}), p4), p4);
          } catch (const std::exception&) {
            ++errors;
          }
        }
      }
    }
  }
  const std::size_t exhaustive = cases;

  std::mt19937_64 rng(2);
  const Precision p7(7);
  const ProtocolContext ctx7{p7, nullptr, std::nullopt};
  auto tensor = [&](Shape shape, bool positive = false) {
    const double mag = std::pow(10.0, -2.0 + 4.0 * unit_uniform(rng()));
    RationalTensor r = oracle::random_tensor(rng, shape, positive ? 0.01 * mag : -mag, mag);
    const ScaleGranularity g = rng() % 2 ? ScaleGranularity::PerRow : ScaleGranularity::PerBatch;
    return quantize(r, g, p7);
  };
  for (int i = 0; i < 100000; ++i) {
    const std::size_t m = 1 + rng() % 4, n = 1 + rng() % 4;
    const ScaledTensor a = tensor({m, n});
    try {
      switch (rng() % 9) {
        case 0: { const ScaledTensor in[] = {a, tensor({m, n})}; check(protocol_apply(kernels::add(), in, ctx7), p7); break; }
        case 1: { const ScaledTensor in[] = {a, tensor({m, n})}; check(protocol_apply(kernels::subtract(), in, ctx7), p7); break; }
        case 2: { const ScaledTensor in[] = {a, tensor({m, n})}; check(protocol_apply(kernels::ew_mul(), in, ctx7), p7); break; }
        case 3: { const ScaledTensor in[] = {a, tensor({1 + rng() % 4, n})}; check(protocol_apply(kernels::matmul(), in, ctx7), p7); break; }
        case 4: { const ScaledTensor in[] = {a}; check(protocol_apply(kernels::pow_n(1 + rng() % 4), in, ctx7), p7); break; }
        case 5: { const ScaledTensor in[] = {a}; check(protocol_apply(kernels::abs(), in, ctx7), p7); break; }
        case 6: { const ScaledTensor in[] = {a}; check(protocol_apply(kernels::relu(), in, ctx7), p7); break; }
        case 7: { const ScaledTensor in[] = {a}; check(protocol_apply(kernels::sum_reduce(rng() % 2), in, ctx7), p7); break; }
        default: {
          const ScaledTensor den = tensor({m, 1}, true);
          bool positive = true;
          for (auto v : den.data().values()) positive = positive && v > 0;
          if (!positive) break;
          const ScaledTensor in[] = {a, den};
          check(protocol_apply(kernels::int_div(), in, ctx7), p7);
        }
      }
    } catch (const std::exception&) {
      ++errors;
    }
  }
  return {violations == 0 && errors == 0,
          fmt("%zu exhaustive checks at p=4, %zu fuzz checks at p=7, %zu out of range, %zu exceptions", exhaustive,
              cases - exhaustive, violations, errors)};
}

// 3. D(OP(x, s)) == OP(D(x, s)) for pow_n, abs and relu.
Outcome distribution_law() {
  std::size_t cases = 0, mismatches = 0, pow_third = 0;
  for (std::int64_t den = 1; den <= 4; ++den) {
    for (std::int64_t num = 1; num <= 10; ++num) {
      const double s = static_cast<double>(num) / static_cast<double>(den);
      for (std::int64_t x = -20; x <= 20; ++x) {
        const ScaledTensor t(IntTensor({1}, {x}), ScaleTensor({1}, {s}), Precision(15));
        const Fraction r = exact(x) / exact(s);
        auto compare = [&](const ScaledTensor& y, const Fraction& want, bool is_pow) {
          ++cases;
          if (oracle::dequantized(y, 0) != want) {
            ++mismatches;
            if (is_pow && den == 3) ++pow_third;
          }
        };
        compare(spq::abs(t), oracle::abs(r), false);
        compare(spq::relu(t), r > 0 ? r : Fraction(0), false);
        Fraction power = 1;
        for (int n = 1; n <= 4; ++n) {
          power *= r;
          compare(pow_n(t, n), power, true);
        }
      }
    }
  }
  return {mismatches == 0,
          fmt("%zu cases over |x| <= 20, s = a/b (a 1..10, b 1..4), n 1..4: %zu mismatches, %zu of them pow_n with "
              "b = 3 where s^n has no exact double",
              cases, mismatches, pow_third)};
}

// 4. Protocol matmul against an exact oracle with a per-case error budget.
Outcome matmul_oracle() {
  std::mt19937_64 rng(4);
  const Precision p(7);
  const ProtocolContext ctx{p, nullptr, std::nullopt};
  std::size_t violations = 0;
  double worst_ratio = 0;
  for (int c = 0; c < 100; ++c) {
    auto operand = [&] {
      const RationalTensor r = oracle::random_tensor(rng, {8, 8}, -2.0, 2.0);
      // Every third case uses per-column scales so the contraction needs matching.
      if (c % 3 == 2) {
        return quantize(r, init_scale_over(r, {true, false}, p), p);
      }
      return quantize(r, c % 3 ? ScaleGranularity::PerRow : ScaleGranularity::PerBatch, p);
    };
    const ScaledTensor a = operand();
    const ScaledTensor b_t = operand();
    const ScaledTensor in[] = {a, b_t};
    const ScaledTensor out = protocol_apply(kernels::matmul(), in, ctx);

    // Matching along the contraction moves each operand by less than one
    // step of its smallest scale in that row.
    auto match_step = [](const ScaledTensor& t, std::size_t row) {
      double lo = t.scale_at(row * 8), hi = lo;
      for (std::size_t k = 0; k < 8; ++k) {
        lo = std::min(lo, t.scale_at(row * 8 + k));
        hi = std::max(hi, t.scale_at(row * 8 + k));
      }
      return lo == hi ? Fraction(0) : 1 / exact(lo);
    };
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j) {
        const Fraction da = match_step(a, i), db = match_step(b_t, j);
        Fraction want = 0, budget = 0;
        for (std::size_t k = 0; k < 8; ++k) {
          const Fraction x = oracle::dequantized(a, i * 8 + k), y = oracle::dequantized(b_t, j * 8 + k);
          want += x * y;
          budget += oracle::abs(y) * da + oracle::abs(x) * db + da * db;
        }
        // Re-scaling truncates by less than one output step; the divided
        // scale itself is rounded to double.
        const Fraction step = 1 / exact(out.scale_at(i * 8 + j));
        budget += step * (1 + Fraction(1, std::int64_t{1} << 40));
        const Fraction err = oracle::abs(oracle::dequantized(out, i * 8 + j) - want);
        if (err > budget) ++violations;
        worst_ratio = std::max(worst_ratio, to_double(err / budget));
      }
    }
  }
  return {violations == 0, fmt("100 cases of 8x8 . 8x8 at p=7, %zu bound violations, worst error/bound %.4f",
                               violations, worst_ratio)};
}

// 5. A full forward never leaves the integer domain.
Outcome integer_purity() {
  const ModelConfig c;
  const QuantizedModel q = quantize_model(random_model(c, 5), Precision(7));
  OpAuditLog log;
  IntForwardOptions opts;
  opts.log = &log;
  integer_forward(q, random_tokens(12, c.vocab, 5), opts);
  const std::size_t deq = log.count(AuditOp::Dequantize);
  const std::size_t fp = log.count(Lane::FloatPayload);
  return {deq == 0 && fp == 0 && log.count(Lane::Payload) > 0,
          fmt("%zu records (%zu payload, %zu scale), %zu de-quantize, %zu float payload ops", log.size(),
              log.count(Lane::Payload), log.count(Lane::Scale), deq, fp)};
}

// 6. Serialized file sizes.
Outcome storage_ratio() {
  namespace fs = std::filesystem;
  const ModelConfig c;
  const FloatModel f = random_model(c, 6);
  const QuantizedModel q = quantize_model(f, Precision(7));
  const fs::path dir = fs::temp_directory_path() / "spq_acceptance_storage";
  fs::create_directories(dir);
  save_model(dir / "fp32.spq", f);
  save_model(dir / "int8.spq", q);
  const auto fb = fs::file_size(dir / "fp32.spq");
  const auto ib = fs::file_size(dir / "int8.spq");
  fs::remove_all(dir);
  const double ratio = static_cast<double>(fb) / static_cast<double>(ib);
  return {ratio >= 3.4 && ratio < 4.0,
          fmt("d_m=32, 2 layers: %ju / %ju bytes = %.4f", static_cast<std::uintmax_t>(fb),
              static_cast<std::uintmax_t>(ib), ratio)};
}

// 7. Output error shrinks with more bits.
Outcome bit_sweep_trend() {
  const ModelConfig c;
  constexpr int kSeeds = 20;
  std::vector<std::vector<SweepPoint>> runs;
  double worst15 = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const FloatModel f = random_model(c, 700 + seed);
    const auto ins = token_inputs(c, 4, 12, 700 + seed);
    runs.push_back(bit_sweep(f, ins, 6, 10));
    worst15 = std::max(worst15, bit_sweep(f, ins, 15, 15).at(0).relative_error);
  }
  bool means_ok = true, signs_ok = true;
  double worst_p = 0;
  std::string means;
  for (std::size_t k = 0; k < 5; ++k) {
    double mean = 0;
    for (const auto& r : runs) mean += r[k].mse / kSeeds;
    means += fmt("%s%.3g", k ? " " : "", mean);
    if (k > 0) {
      double prev = 0;
      std::size_t wins = 0;
      for (const auto& r : runs) {
        prev += r[k - 1].mse / kSeeds;
        wins += r[k].mse < r[k - 1].mse;
      }
      means_ok = means_ok && mean <= prev;
      const double pv = sign_test_p(wins, kSeeds);
      worst_p = std::max(worst_p, pv);
      signs_ok = signs_ok && pv < 0.05;
    }
  }
  return {means_ok && signs_ok && worst15 < 1e-3,
          fmt("%d seeds, mean mse p6..10 = %s, worst step sign-test p = %.2g, worst p15 relative error %.3g",
              kSeeds, means.c_str(), worst_p, worst15)};
}

// 8. All scores below -b: the output is the plain average of the V rows.
Outcome degenerate_attention() {
  std::mt19937_64 rng(8);
  const Precision p(7);
  const ProtocolContext ctx{p, nullptr, std::nullopt};
  const RationalTensor b(Shape{1, 1}, {0.5}), delta(Shape{1, 1}, {0.05});
  const PolyParams pp{quantize(b, ScaleGranularity::PerRow, p), quantize(delta, ScaleGranularity::PerRow, p), 3};
  std::size_t instances = 0, violations = 0;
  double worst_ratio = 0;
  for (int i = 0; i < 60; ++i) {
    const std::size_t tq = 1 + rng() % 6, tk = 1 + rng() % 10, d = i % 2 ? 16 : 32;
    const ScaledTensor q = quantize(oracle::random_tensor(rng, {tq, d}, 0.5, 1.0), ScaleGranularity::PerRow, p);
    const ScaledTensor k = quantize(oracle::random_tensor(rng, {tk, d}, -1.0, -0.5), ScaleGranularity::PerRow, p);
    // One scale for V, so the numerator is exact and only the division truncates.
    const ScaledTensor v = quantize(oracle::random_tensor(rng, {tk, d}, -3.0, 3.0), ScaleGranularity::PerBatch, p);

    // score / sqrt(d) + b < 0, squared to stay exact.
    const Fraction bias = oracle::dequantized(pp.bias, 0);
    bool degenerate = true;
    for (std::size_t a = 0; a < tq && degenerate; ++a) {
      for (std::size_t t = 0; t < tk; ++t) {
        Fraction score = 0;
        for (std::size_t c = 0; c < d; ++c) score += oracle::dequantized(q, a * d + c) * oracle::dequantized(k, t * d + c);
        if (score >= 0 || score * score <= bias * bias * static_cast<long>(d)) degenerate = false;
      }
    }
    if (!degenerate) continue;
    ++instances;
    const ScaledTensor out = poly_attention(q, k, v, pp, d, ctx);
    for (std::size_t a = 0; a < tq; ++a) {
      for (std::size_t c = 0; c < d; ++c) {
        Fraction mean = 0;
        for (std::size_t t = 0; t < tk; ++t) mean += oracle::dequantized(v, t * d + c);
        mean /= static_cast<long>(tk);
        const Fraction step = 1 / exact(out.scale_at(a * d + c));
        const Fraction err = oracle::abs(oracle::dequantized(out, a * d + c) - mean);
        if (err >= step) ++violations;
        worst_ratio = std::max(worst_ratio, to_double(err / step));
      }
    }
  }
  return {instances >= 50 && violations == 0,
          fmt("%zu constructed instances, %zu elements outside one int_div step, worst error/step %.4f", instances,
              violations, worst_ratio)};
}

// 9. The last layer's residual stream carries more error than the first.
Outcome last_layer_concentration() {
  const ModelConfig c;
  constexpr int kSeeds = 20;
  std::size_t wins = 0;
  double first = 0, last = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const QuantizedModel q = quantize_model(random_model(c, 900 + seed), Precision(7));
    const PrecisionReport r = precision_loss(q, dequantize_model(q), token_inputs(c, 4, 12, 900 + seed));
    const double a = r.find(ModuleTag::Res, 1)->mse();
    const double b = r.find(ModuleTag::Res, static_cast<int>(c.layers))->mse();
    wins += b > a;
    first += a / kSeeds;
    last += b / kSeeds;
  }
  const double pv = sign_test_p(wins, kSeeds);
  return {last > first && pv < 0.05, fmt("%zu/%d seeds, sign-test p = %.2g, mean Res mse layer 1 %.3g, layer %u %.3g",
                                         wins, kSeeds, pv, first, c.layers, last)};
}

// 10. Amdahl limits, monotonicity and the sequence-length trend.
Outcome speedup_sanity() {
  OpAuditLog all, none;
  all.append({AuditOp::MatMul, Lane::Payload, 4096, 0, false, ModuleTag::FFN});
  none.append({AuditOp::Add, Lane::Payload, 4096, 0, false, ModuleTag::Res});
  none.append({AuditOp::Dequantize, Lane::FloatPayload, 512, 0, false, {}});
  const double hi = speedup_estimate(all).speedup();
  const double lo = speedup_estimate(none).speedup();

  bool monotone = true;
  double prev = 0;
  for (int acc = 0; acc <= 1000; ++acc) {
    OpAuditLog log;
    log.append({AuditOp::MatMul, Lane::Payload, static_cast<std::uint64_t>(acc), 0, false, {}});
    log.append({AuditOp::Add, Lane::Payload, static_cast<std::uint64_t>(1000 - acc), 0, false, {}});
    const double s = speedup_estimate(log).speedup();
    monotone = monotone && s > prev && s >= 1.0 && s <= 6.0;
    prev = s;
  }

  const ModelConfig c;
  constexpr int kSeeds = 20;
  std::size_t wins = 0;
  double short_mean = 0, long_mean = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const QuantizedModel q = quantize_model(random_model(c, 1000 + seed), Precision(7));
    const auto cost = default_prepare_cost(c);
    const double s4 = speedup_estimate(decode_trace(q, 4, seed, cost)).speedup();
    const double s16 = speedup_estimate(decode_trace(q, 16, seed, cost)).speedup();
    wins += s16 > s4;
    short_mean += s4 / kSeeds;
    long_mean += s16 / kSeeds;
  }
  const double pv = sign_test_p(wins, kSeeds);
  return {hi == 6.0 && lo == 1.0 && monotone && pv < 0.05,
          fmt("limits %.6g and %.6g, monotone in share: %s, length 16 beats 4 in %zu/%d seeds (p = %.2g, mean %.3f vs "
              "%.3f)",
              hi, lo, monotone ? "yes" : "no", wins, kSeeds, pv, long_mean, short_mean)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double limit_s;  // 0: no runtime limit
  };
  const Criterion criteria[] = {
      {"quantization bound", quantization_bound, 10},
      {"overflow safety", overflow_safety, 60},
      {"distribution law", distribution_law, 30},
      {"matmul oracle agreement", matmul_oracle, 0},
      {"integer-path purity", integer_purity, 0},
      {"storage ratio", storage_ratio, 0},
      {"bit-sweep trend", bit_sweep_trend, 300},
      {"degenerate attention", degenerate_attention, 0},
      {"last-layer loss concentration", last_layer_concentration, 0},
      {"speedup estimator", speedup_sanity, 0},
  };
  int failed = 0;
  int index = 0;
  for (const auto& c : criteria) {
    ++index;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s limit", c.limit_s);
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", index, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
