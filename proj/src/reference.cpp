#include "spq/reference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spq::ref {

namespace {

std::vector<double> copy(const RationalTensor& t) { return {t.values().begin(), t.values().end()}; }

double scalar_of(const RationalTensor& t) {
  if (t.size() != 1) throw std::invalid_argument("reference: expected a scalar parameter");
  return t[0];
}

}  // namespace

RationalTensor linear(const RationalTensor& x, const RationalTensor& w, const RationalTensor* bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1]) {
    throw std::invalid_argument("reference linear: shape mismatch " + shape_string(x.shape()) +
                                " x " + shape_string(w.shape()) + "^T");
  }
  const std::size_t m = x.shape()[0];
  const std::size_t k = x.shape()[1];
  const std::size_t n = w.shape()[0];
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t c = 0; c < k; ++c) acc += x[i * k + c] * w[j * k + c];
      y[i * n + j] = acc + (bias ? (*bias)[j] : 0.0);
    }
  }
  return RationalTensor({m, n}, std::move(y));
}

RationalTensor add(const RationalTensor& a, const RationalTensor& b) {
  const Shape shape = broadcast_shapes(a.shape(), b.shape());
  const RationalTensor xa = broadcast_values(a, shape);
  const RationalTensor xb = broadcast_values(b, shape);
  std::vector<double> y(xa.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + xb[i];
  return RationalTensor(shape, std::move(y));
}

RationalTensor relu(const RationalTensor& x) {
  auto v = copy(x);
  for (auto& e : v) e = std::max(e, 0.0);
  return RationalTensor(x.shape(), std::move(v));
}

RationalTensor poly(const RationalTensor& scores, double bias, double delta, int degree) {
  auto v = copy(scores);
  for (auto& e : v) e = std::pow(std::max(e + bias, 0.0), degree) + std::fabs(delta);
  return RationalTensor(scores.shape(), std::move(v));
}

RationalTensor softmax_rows(const RationalTensor& x) {
  const std::size_t cols = x.shape().back();
  auto v = copy(x);
  for (std::size_t r = 0; r < v.size() / cols; ++r) {
    double* row = v.data() + r * cols;
    const double top = *std::max_element(row, row + cols);
    double sum = 0;
    for (std::size_t c = 0; c < cols; ++c) sum += row[c] = std::exp(row[c] - top);
    for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
  return RationalTensor(x.shape(), std::move(v));
}

RationalTensor attention_weights(const RationalTensor& q, const RationalTensor& k,
                                 std::size_t d_model, AttentionFlavor flavor, double bias,
                                 double delta, int degree) {
  auto s = copy(linear(q, k, nullptr));
  const double root = std::sqrt(static_cast<double>(d_model));
  for (auto& e : s) e /= root;
  const RationalTensor scores({q.shape()[0], k.shape()[0]}, std::move(s));
  if (flavor == AttentionFlavor::Softmax) return softmax_rows(scores);
  auto w = copy(poly(scores, bias, delta, degree));
  const std::size_t cols = k.shape()[0];
  for (std::size_t r = 0; r < q.shape()[0]; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < cols; ++c) sum += w[r * cols + c];
    if (sum <= 0) throw std::domain_error("reference poly attention: zero weight sum");
    for (std::size_t c = 0; c < cols; ++c) w[r * cols + c] /= sum;
  }
  return RationalTensor(scores.shape(), std::move(w));
}

RationalTensor attention(const RationalTensor& q, const RationalTensor& k, const RationalTensor& v,
                         std::size_t d_model, AttentionFlavor flavor, double bias, double delta,
                         int degree) {
  const RationalTensor w = attention_weights(q, k, d_model, flavor, bias, delta, degree);
  return linear(w, transpose(v), nullptr);
}

namespace {

enum class Deviation { L1, L2 };

RationalTensor normalize(const RationalTensor& x, const RationalTensor& g, const RationalTensor& b,
                         Deviation kind, double eps) {
  const std::size_t n = x.shape().back();
  if (g.shape().back() != n || b.shape().back() != n) {
    throw std::invalid_argument("reference layer norm: gain/bias width mismatch");
  }
  auto v = copy(x);
  for (std::size_t r = 0; r < v.size() / n; ++r) {
    double* row = v.data() + r * n;
    double mu = 0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double dev = 0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = row[c] - mu;
      dev += kind == Deviation::L1 ? std::fabs(d) : d * d;
    }
    dev /= static_cast<double>(n);
    const double denom = kind == Deviation::L1 ? kL1NormConstant * dev : std::sqrt(dev + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double centered = denom > 0 ? (row[c] - mu) / denom : 0.0;
      row[c] = centered * g[c] + b[c];
    }
  }
  return RationalTensor(x.shape(), std::move(v));
}

}  // namespace

RationalTensor l1_layer_norm(const RationalTensor& x, const RationalTensor& g,
                             const RationalTensor& b) {
  return normalize(x, g, b, Deviation::L1, 0.0);
}

RationalTensor l2_layer_norm(const RationalTensor& x, const RationalTensor& g,
                             const RationalTensor& b, double eps) {
  return normalize(x, g, b, Deviation::L2, eps);
}

RationalTensor layer_norm(const RationalTensor& x, const RationalTensor& g, const RationalTensor& b,
                          AttentionFlavor flavor) {
  return flavor == AttentionFlavor::Poly ? l1_layer_norm(x, g, b) : l2_layer_norm(x, g, b);
}

RationalTensor attention_block(const RationalTensor& h, const LayerParams<RationalTensor>& l,
                               const ModelConfig& c, AttentionFlavor flavor) {
  const RationalTensor q = linear(h, l.wq, nullptr);
  const RationalTensor k = linear(h, l.wk, nullptr);
  const RationalTensor v = linear(h, l.wv, nullptr);
  const double bias = scalar_of(l.poly_b);
  const double delta = scalar_of(l.poly_delta);
  const std::size_t dh = c.head_dim();
  std::vector<RationalTensor> heads;
  for (std::size_t i = 0; i < c.heads; ++i) {
    const std::size_t lo = i * dh;
    heads.push_back(attention(slice(q, 1, lo, lo + dh), slice(k, 1, lo, lo + dh),
                              slice(v, 1, lo, lo + dh), c.d_model, flavor, bias, delta, c.degree));
  }
  return linear(concat(heads, 1), l.wo, nullptr);
}

RationalTensor ffn_block(const RationalTensor& h, const LayerParams<RationalTensor>& l) {
  return linear(relu(linear(h, l.w1, &l.b1)), l.w2, &l.b2);
}

RationalTensor layer_forward(const RationalTensor& x, const LayerParams<RationalTensor>& l,
                             const ModelConfig& c, AttentionFlavor flavor, const TapFn& tap,
                             int layer) {
  auto emit = [&](ModuleTag tag, const RationalTensor& t) {
    if (tap) tap(tag, layer, t);
  };
  const RationalTensor h1 = layer_norm(x, l.ln1_g, l.ln1_b, flavor);
  emit(ModuleTag::LN, h1);
  const RationalTensor a = attention_block(h1, l, c, flavor);
  emit(ModuleTag::Attn, a);
  const RationalTensor x1 = add(x, a);
  emit(ModuleTag::Res, x1);
  const RationalTensor h2 = layer_norm(x1, l.ln2_g, l.ln2_b, flavor);
  emit(ModuleTag::LN, h2);
  const RationalTensor f = ffn_block(h2, l);
  emit(ModuleTag::FFN, f);
  const RationalTensor x2 = add(x1, f);
  emit(ModuleTag::Res, x2);
  return x2;
}

}  // namespace spq::ref

namespace spq {

RationalTensor reference_stack_forward(const FloatModel& m, const RationalTensor& x,
                                       AttentionFlavor flavor, const TapFn& tap) {
  if (x.rank() != 2 || x.shape()[1] != m.config.d_model) {
    throw std::invalid_argument("forward: expected [T, " + std::to_string(m.config.d_model) +
                                "] activations, got " + shape_string(x.shape()));
  }
  RationalTensor h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = ref::layer_forward(h, m.layers[i], m.config, flavor, tap, static_cast<int>(i) + 1);
  }
  return h;
}

RationalTensor reference_forward(const FloatModel& m, std::span<const std::size_t> tokens,
                                 AttentionFlavor flavor, const TapFn& tap) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  const RationalTensor x = gather_rows(m.emb, tokens);
  if (tap) tap(ModuleTag::Emb, 0, x);
  const RationalTensor h = reference_stack_forward(m, x, flavor, tap);
  const RationalTensor logits = ref::linear(h, m.emb, nullptr);
  if (tap) tap(ModuleTag::Proj, static_cast<int>(m.layers.size()) + 1, logits);
  return logits;
}

}  // namespace spq
