#pragma once

#include <span>

#include "spq/model.hpp"
#include "spq/transformer.hpp"

namespace spq {

/// Softmax + L2 layer norm is the conventional baseline; Poly + L1 layer
/// norm is the floating-point twin of the integer architecture.
enum class AttentionFlavor : std::uint8_t { Poly, Softmax };

namespace ref {

/// x: [m, k], w: [n, k] -> [m, n], plus an optional [1, n] bias.
RationalTensor linear(const RationalTensor& x, const RationalTensor& w, const RationalTensor* bias);
RationalTensor add(const RationalTensor& a, const RationalTensor& b);
RationalTensor relu(const RationalTensor& x);

/// relu(x + b)^n + |delta| elementwise.
RationalTensor poly(const RationalTensor& scores, double bias, double delta, int degree);
RationalTensor softmax_rows(const RationalTensor& x);

/// Attention weights for one head (rows normalized), before multiplying by V.
RationalTensor attention_weights(const RationalTensor& q, const RationalTensor& k,
                                 std::size_t d_model, AttentionFlavor flavor, double bias,
                                 double delta, int degree);
RationalTensor attention(const RationalTensor& q, const RationalTensor& k, const RationalTensor& v,
                         std::size_t d_model, AttentionFlavor flavor, double bias, double delta,
                         int degree);

/// (x - mu) / (C * mean|x - mu|) * g + b; a zero deviation yields b.
RationalTensor l1_layer_norm(const RationalTensor& x, const RationalTensor& g,
                             const RationalTensor& b);
/// (x - mu) / sqrt(var + eps) * g + b; a zero deviation yields b.
RationalTensor l2_layer_norm(const RationalTensor& x, const RationalTensor& g,
                             const RationalTensor& b, double eps = 0.0);
RationalTensor layer_norm(const RationalTensor& x, const RationalTensor& g, const RationalTensor& b,
                          AttentionFlavor flavor);

RationalTensor attention_block(const RationalTensor& h, const LayerParams<RationalTensor>& l,
                               const ModelConfig& c, AttentionFlavor flavor);
RationalTensor ffn_block(const RationalTensor& h, const LayerParams<RationalTensor>& l);

RationalTensor layer_forward(const RationalTensor& x, const LayerParams<RationalTensor>& l,
                             const ModelConfig& c, AttentionFlavor flavor, const TapFn& tap = {},
                             int layer = 1);

}  // namespace ref

RationalTensor reference_stack_forward(const FloatModel& m, const RationalTensor& x,
                                       AttentionFlavor flavor = AttentionFlavor::Poly,
                                       const TapFn& tap = {});

/// Tokens -> embedding -> layers -> tied projection; returns [T, vocab] logits.
RationalTensor reference_forward(const FloatModel& m, std::span<const std::size_t> tokens,
                                 AttentionFlavor flavor = AttentionFlavor::Poly,
                                 const TapFn& tap = {});

}  // namespace spq
