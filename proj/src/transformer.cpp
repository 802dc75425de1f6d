#include "spq/transformer.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "spq/int_ops.hpp"

namespace spq {

namespace {

ProtocolContext tagged(const ProtocolContext& ctx, ModuleTag tag) {
  ProtocolContext out = ctx;
  out.module = tag;
  return out;
}

ScaledTensor apply1(const Kernel& k, const ScaledTensor& a, const ProtocolContext& ctx) {
  const ScaledTensor in[] = {a};
  return protocol_apply(k, in, ctx);
}

ScaledTensor apply2(const Kernel& k, const ScaledTensor& a, const ScaledTensor& b,
                    const ProtocolContext& ctx) {
  const ScaledTensor in[] = {a, b};
  return protocol_apply(k, in, ctx);
}

ScaledTensor wide1(const Kernel& k, const ScaledTensor& a, const ProtocolContext& ctx) {
  const ScaledTensor in[] = {a};
  return wide_apply(k, in, ctx);
}

ScaledTensor wide2(const Kernel& k, const ScaledTensor& a, const ScaledTensor& b,
                   const ProtocolContext& ctx) {
  const ScaledTensor in[] = {a, b};
  return wide_apply(k, in, ctx);
}

// Multiplies every scale by `factor`, dividing the represented value by it.
ScaledTensor fold_into_scale(const ScaledTensor& t, double factor, const ProtocolContext& ctx) {
  std::vector<double> s(t.scale().values().begin(), t.scale().values().end());
  for (auto& v : s) v *= factor;
  log_scale_op(ctx, s.size());
  return ScaledTensor(t.data(), ScaleTensor(t.scale().shape(), std::move(s)), t.precision());
}

void emit(const TapFn& tap, ModuleTag tag, int layer, const ScaledTensor& t) {
  if (tap) tap(tag, layer, dequantize(t));
}

}  // namespace

PolyParams poly_params(const LayerParams<ScaledTensor>& l, int degree) {
  return {l.poly_b, l.poly_delta, degree};
}

ScaledTensor poly(const ScaledTensor& scores, const PolyParams& pp, const ProtocolContext& ctx) {
  ScaledTensor x = apply2(kernels::add(ctx.matching), scores, pp.bias, ctx);
  x = apply1(kernels::relu(), x, ctx);
  x = apply1(kernels::pow_n(pp.degree), x, ctx);
  const ScaledTensor delta = apply1(kernels::abs(), pp.delta, ctx);
  return apply2(kernels::add(ctx.matching), x, delta, ctx);
}

ScaledTensor poly_attention(const ScaledTensor& q, const ScaledTensor& k, const ScaledTensor& v,
                            const PolyParams& pp, std::size_t d_model, const ProtocolContext& ctx) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.shape()[0] != v.shape()[0]) {
    throw std::invalid_argument("poly_attention: expected q [Tq, d], k and v [Tk, d]");
  }
  ScaledTensor scores = apply2(kernels::matmul(ctx.matching), q, k, ctx);
  scores = fold_into_scale(scores, std::sqrt(static_cast<double>(d_model)), ctx);
  // One scale per query row so numerator and denominator see the same weights.
  const ScaledTensor w = scale_match_dim(poly(scores, pp, ctx), 1, ctx.matching);
  const ScaledTensor num = wide2(kernels::matmul(ctx.matching), w, transpose(v), ctx);
  const ScaledTensor den = wide1(kernels::sum_reduce(1), w, ctx);
  return apply2(kernels::int_div(), num, den, ctx);
}

ScaledTensor l1_layer_norm(const ScaledTensor& x, const ScaledTensor& g, const ScaledTensor& b,
                           const ProtocolContext& ctx) {
  const std::size_t axis = x.rank() - 1;
  const std::size_t n = x.shape()[axis];
  if (g.shape().back() != n || b.shape().back() != n) {
    throw std::invalid_argument("l1_layer_norm: gain/bias width does not match " +
                                shape_string(x.shape()));
  }
  const ScaledTensor xm = scale_match_dim(x, axis, ctx.matching);
  const ScaledTensor mu =
      apply1(kernels::round_div(static_cast<std::int64_t>(n)), wide1(kernels::sum_reduce(axis), xm, ctx), ctx);
  const ScaledTensor centered = apply2(kernels::subtract(ctx.matching), xm, mu, ctx);
  const ScaledTensor l1 = wide1(kernels::sum_reduce(axis), apply1(kernels::abs(), centered, ctx), ctx);

  // Lift the numerator by a unit-valued constant so the quotient keeps about
  // p bits instead of truncating towards zero.
  const int k = ctx.precision.bits() + static_cast<int>(std::bit_width(n - 1));
  const double lift = std::ldexp(1.0, k);
  const ScaledTensor unit(IntTensor(Shape(x.rank(), 1), {std::int64_t{1} << k}),
                          ScaleTensor::uniform(x.rank(), lift), x.precision());
  const ScaledTensor num = wide2(kernels::ew_mul(), centered, unit, ctx);

  // Denominator value C * l1 / n: fold n / C into the scale. A zero norm
  // means the row is constant; its centered values are all zero already.
  std::vector<std::int64_t> dx(l1.data().values().begin(), l1.data().values().end());
  const ScaleTensor l1_scale = l1.dense_scale();
  std::vector<double> ds(l1_scale.values().begin(), l1_scale.values().end());
  const double fold = static_cast<double>(n) / kL1NormConstant;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (dx[i] == 0) {
      dx[i] = 1;
      ds[i] = 1.0;
    } else {
      ds[i] *= fold;
    }
  }
  log_scale_op(ctx, ds.size());
  const ScaledTensor den(IntTensor(l1.shape(), std::move(dx)), ScaleTensor(l1.shape(), std::move(ds)),
                         x.precision());

  ScaledTensor y = apply2(kernels::int_div(), num, den, ctx);
  y = apply2(kernels::ew_mul(), y, g, ctx);
  return apply2(kernels::add(ctx.matching), y, b, ctx);
}

ScaledTensor linear(const ScaledTensor& x, const ScaledTensor& w, const ScaledTensor* bias,
                    const ProtocolContext& ctx) {
  ScaledTensor y = apply2(kernels::matmul(ctx.matching), x, w, ctx);
  if (bias) y = apply2(kernels::add(ctx.matching), y, *bias, ctx);
  return y;
}

ScaledTensor attention_block(const ScaledTensor& h, const LayerParams<ScaledTensor>& l,
                             const ModelConfig& c, const ProtocolContext& ctx) {
  const ScaledTensor q = linear(h, l.wq, nullptr, ctx);
  const ScaledTensor k = linear(h, l.wk, nullptr, ctx);
  const ScaledTensor v = linear(h, l.wv, nullptr, ctx);
  const PolyParams pp = poly_params(l, c.degree);
  const std::size_t dh = c.head_dim();
  std::vector<ScaledTensor> heads;
  for (std::size_t i = 0; i < c.heads; ++i) {
    const std::size_t lo = i * dh;
    heads.push_back(poly_attention(slice(q, 1, lo, lo + dh), slice(k, 1, lo, lo + dh),
                                   slice(v, 1, lo, lo + dh), pp, c.d_model, ctx));
  }
  return linear(concat(heads, 1), l.wo, nullptr, ctx);
}

ScaledTensor ffn_block(const ScaledTensor& h, const LayerParams<ScaledTensor>& l,
                       const ProtocolContext& ctx) {
  const ScaledTensor hidden = apply1(kernels::relu(), linear(h, l.w1, &l.b1, ctx), ctx);
  return linear(hidden, l.w2, &l.b2, ctx);
}

ScaledTensor ffn_forward(const ScaledTensor& x, const LayerParams<ScaledTensor>& l,
                         const ProtocolContext& ctx) {
  const ScaledTensor f = ffn_block(l1_layer_norm(x, l.ln2_g, l.ln2_b, ctx), l, ctx);
  return apply2(kernels::add(ctx.matching), x, f, ctx);
}

ScaledTensor layer_forward(const ScaledTensor& x, const LayerParams<ScaledTensor>& l,
                           const ModelConfig& c, const ProtocolContext& ctx, const TapFn& tap,
                           int layer) {
  const auto ln = tagged(ctx, ModuleTag::LN);
  const auto res = tagged(ctx, ModuleTag::Res);

  const ScaledTensor h1 = l1_layer_norm(x, l.ln1_g, l.ln1_b, ln);
  emit(tap, ModuleTag::LN, layer, h1);
  const ScaledTensor a = attention_block(h1, l, c, tagged(ctx, ModuleTag::Attn));
  emit(tap, ModuleTag::Attn, layer, a);
  const ScaledTensor x1 = apply2(kernels::add(ctx.matching), x, a, res);
  emit(tap, ModuleTag::Res, layer, x1);

  const ScaledTensor h2 = l1_layer_norm(x1, l.ln2_g, l.ln2_b, ln);
  emit(tap, ModuleTag::LN, layer, h2);
  const ScaledTensor f = ffn_block(h2, l, tagged(ctx, ModuleTag::FFN));
  emit(tap, ModuleTag::FFN, layer, f);
  const ScaledTensor x2 = apply2(kernels::add(ctx.matching), x1, f, res);
  emit(tap, ModuleTag::Res, layer, x2);
  return x2;
}

namespace {

ProtocolContext context_for(const QuantizedModel& m, const IntForwardOptions& opts) {
  return ProtocolContext{m.precision, opts.log, std::nullopt, opts.matching};
}

void check_width(const QuantizedModel& m, const Shape& shape) {
  if (shape.size() != 2 || shape[1] != m.config.d_model) {
    throw std::invalid_argument("forward: expected [T, " + std::to_string(m.config.d_model) +
                                "] activations, got " + shape_string(shape));
  }
}

}  // namespace

ScaledTensor integer_stack_forward(const QuantizedModel& m, const ScaledTensor& x,
                                   const IntForwardOptions& opts) {
  check_width(m, x.shape());
  const ProtocolContext ctx = context_for(m, opts);
  ScaledTensor h(x.data(), x.scale(), m.precision);
  if (!h.in_range()) throw std::invalid_argument("forward: input payload exceeds the model precision");
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = layer_forward(h, m.layers[i], m.config, ctx, opts.tap, static_cast<int>(i) + 1);
  }
  return h;
}

ScaledTensor integer_forward(const QuantizedModel& m, std::span<const std::size_t> tokens,
                             const IntForwardOptions& opts) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  const ScaledTensor x = gather_rows(m.emb, tokens);
  emit(opts.tap, ModuleTag::Emb, 0, x);
  const ScaledTensor h = integer_stack_forward(m, x, opts);
  const ProtocolContext ctx = tagged(context_for(m, opts), ModuleTag::Proj);
  const ScaledTensor logits = apply2(kernels::matmul(ctx.matching), h, m.emb, ctx);
  emit(opts.tap, ModuleTag::Proj, static_cast<int>(m.layers.size()) + 1, logits);
  return logits;
}

}  // namespace spq
