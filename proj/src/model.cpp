#include "spq/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace spq {

void ModelConfig::validate() const {
  if (layers == 0 || d_model == 0 || heads == 0 || ffn == 0 || vocab == 0) {
    throw std::invalid_argument("model: every dimension must be positive");
  }
  if (d_model % heads != 0) {
    throw std::invalid_argument("model: d_model " + std::to_string(d_model) +
                                " is not divisible by heads " + std::to_string(heads));
  }
  if (degree < 1 || degree > 8) {
    throw std::invalid_argument("model: polynomial degree must be in 1..8, got " +
                                std::to_string(degree));
  }
}

Shape param_shape(const ModelConfig& c, const std::string& name) {
  const std::size_t d = c.d_model;
  const std::size_t f = c.ffn;
  if (name == "emb") return {c.vocab, d};
  const auto dot = name.find('.');
  if (name.empty() || name[0] != 'l' || dot == std::string::npos) {
    throw std::invalid_argument("model: unknown parameter '" + name + "'");
  }
  const std::string field = name.substr(dot + 1);
  if (field == "wq" || field == "wk" || field == "wv" || field == "wo") return {d, d};
  if (field == "w1") return {f, d};
  if (field == "b1") return {1, f};
  if (field == "w2") return {d, f};
  if (field == "b2" || field.starts_with("ln")) return {1, d};
  if (field == "poly.b" || field == "poly.delta") return {1, 1};
  throw std::invalid_argument("model: unknown parameter '" + name + "'");
}

double unit_uniform(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

namespace {

class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) {
    return static_cast<float>(lo + (hi - lo) * unit_uniform(rng_()));
  }

 private:
  std::mt19937_64 rng_;
};

RationalTensor fill(Uniform& u, Shape shape, double lo, double hi) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(lo, hi);
  return RationalTensor(std::move(shape), std::move(v));
}

RationalTensor gain(Uniform& u, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<float>(1.0 + u(-0.1, 0.1));
  return RationalTensor({1, n}, std::move(v));
}

}  // namespace

FloatModel random_model(const ModelConfig& c, std::uint64_t seed, const InitOptions& opts) {
  c.validate();
  Uniform u(seed);
  FloatModel m;
  m.config = c;
  const std::size_t d = c.d_model;
  const std::size_t f = c.ffn;
  const double wd = 1.0 / std::sqrt(static_cast<double>(d));
  const double wf = 1.0 / std::sqrt(static_cast<double>(f));
  m.emb = fill(u, {c.vocab, d}, -1, 1);
  for (std::uint32_t i = 0; i < c.layers; ++i) {
    LayerParams<RationalTensor> l;
    l.wq = fill(u, {d, d}, -wd, wd);
    l.wk = fill(u, {d, d}, -wd, wd);
    l.wv = fill(u, {d, d}, -wd, wd);
    l.wo = fill(u, {d, d}, -wd, wd);
    l.w1 = fill(u, {f, d}, -wd, wd);
    l.b1 = fill(u, {1, f}, -0.1, 0.1);
    l.w2 = fill(u, {d, f}, -wf, wf);
    l.b2 = fill(u, {1, d}, -0.1, 0.1);
    l.ln1_g = gain(u, d);
    l.ln1_b = fill(u, {1, d}, -0.1, 0.1);
    l.ln2_g = gain(u, d);
    l.ln2_b = fill(u, {1, d}, -0.1, 0.1);
    l.poly_b = RationalTensor({1, 1}, {static_cast<float>(opts.poly_bias)});
    l.poly_delta = RationalTensor({1, 1}, {static_cast<float>(opts.poly_delta)});
    m.layers.push_back(std::move(l));
  }
  return m;
}

QuantizedModel quantize_model(const FloatModel& m, Precision p, ScaleGranularity g) {
  QuantizedModel q;
  q.config = m.config;
  q.precision = p;
  q.granularity = g;
  q.layers.resize(m.layers.size());
  // Walk both models in lockstep through the shared visitor order.
  std::vector<const RationalTensor*> src;
  for_each_param(m, [&](const std::string&, const RationalTensor& t) { src.push_back(&t); });
  std::size_t k = 0;
  for_each_param(q, [&](const std::string&, ScaledTensor& t) {
    t = quantize(*src[k++], ScaleGranularity::PerRow, p);
  });
  return q;
}

FloatModel dequantize_model(const QuantizedModel& m) {
  FloatModel f;
  f.config = m.config;
  f.layers.resize(m.layers.size());
  std::vector<const ScaledTensor*> src;
  for_each_param(m, [&](const std::string&, const ScaledTensor& t) { src.push_back(&t); });
  std::size_t k = 0;
  for_each_param(f, [&](const std::string&, RationalTensor& t) { t = dequantize(*src[k++]); });
  return f;
}

std::vector<std::size_t> random_tokens(std::size_t count, std::uint32_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out(count);
  for (auto& t : out) t = static_cast<std::size_t>(unit_uniform(rng()) * vocab);
  return out;
}

RationalTensor random_activations(Shape shape, std::uint64_t seed) {
  Uniform u(seed);
  return fill(u, std::move(shape), -1, 1);
}

}  // namespace spq
