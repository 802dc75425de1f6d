#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spq/scale.hpp"
#include "spq/tensor.hpp"

namespace spq {

struct ModelConfig {
  std::uint32_t layers = 2;
  std::uint32_t d_model = 32;
  std::uint32_t heads = 2;
  std::uint32_t ffn = 128;
  std::uint32_t vocab = 64;
  int degree = 3;  // polynomial attention degree n

  std::uint32_t head_dim() const { return d_model / heads; }
  /// Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Weights are stored [out, in] so a linear layer is matmul(x, W).
template <class T>
struct LayerParams {
  T wq, wk, wv, wo;
  T w1, b1, w2, b2;  // b1: [1, ffn], b2: [1, d_model]
  T ln1_g, ln1_b, ln2_g, ln2_b;  // [1, d_model]
  T poly_b, poly_delta;          // [1, 1]
};

template <class T>
struct ModelParams {
  ModelConfig config;
  T emb;  // [vocab, d_model], shared with the output projection
  std::vector<LayerParams<T>> layers;
};

using FloatModel = ModelParams<RationalTensor>;

struct QuantizedModel : ModelParams<ScaledTensor> {
  Precision precision;
  ScaleGranularity granularity = ScaleGranularity::PerRow;
};

/// Visits every parameter in file order with its record name.
template <class T, class F>
void for_each_param(ModelParams<T>& m, F&& f) {
  f(std::string("emb"), m.emb);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& l = m.layers[i];
    const std::string p = "l" + std::to_string(i) + ".";
    f(p + "wq", l.wq);
    f(p + "wk", l.wk);
    f(p + "wv", l.wv);
    f(p + "wo", l.wo);
    f(p + "w1", l.w1);
    f(p + "b1", l.b1);
    f(p + "w2", l.w2);
    f(p + "b2", l.b2);
    f(p + "ln1.g", l.ln1_g);
    f(p + "ln1.b", l.ln1_b);
    f(p + "ln2.g", l.ln2_g);
    f(p + "ln2.b", l.ln2_b);
    f(p + "poly.b", l.poly_b);
    f(p + "poly.delta", l.poly_delta);
  }
}

template <class T, class F>
void for_each_param(const ModelParams<T>& m, F&& f) {
  for_each_param(const_cast<ModelParams<T>&>(m),
                 [&](const std::string& name, T& t) { f(name, static_cast<const T&>(t)); });
}

/// Expected shape of each named parameter under `c`.
Shape param_shape(const ModelConfig& c, const std::string& name);

struct InitOptions {
  double poly_bias = 0.5;
  double poly_delta = 0.05;
};

/// Deterministic random toy model. Values are rounded to float so the FP32
/// file stores them exactly.
FloatModel random_model(const ModelConfig& c, std::uint64_t seed, const InitOptions& opts = {});

/// Per-row quantization of every parameter (weights are [out, in]).
QuantizedModel quantize_model(const FloatModel& m, Precision p,
                              ScaleGranularity g = ScaleGranularity::PerRow);
FloatModel dequantize_model(const QuantizedModel& m);

/// Random token ids in [0, vocab).
std::vector<std::size_t> random_tokens(std::size_t count, std::uint32_t vocab, std::uint64_t seed);
/// Uniform [-1, 1) activations rounded to float.
RationalTensor random_activations(Shape shape, std::uint64_t seed);

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
double unit_uniform(std::uint64_t bits);

}  // namespace spq
