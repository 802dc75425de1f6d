#pragma once

#include <functional>
#include <span>
#include <vector>

#include "spq/model.hpp"
#include "spq/scale.hpp"

namespace spq {

/// Observes a module's output as a rational tensor. `layer` is 0 for the
/// embedding, 1..L for transformer layers and L + 1 for the projection.
using TapFn = std::function<void(ModuleTag, int layer, const RationalTensor&)>;

/// sqrt(pi / 2): scales the mean absolute deviation to the standard
/// deviation of a normal distribution.
inline constexpr double kL1NormConstant = 1.2533141373155003;

struct PolyParams {
  ScaledTensor bias;   // [1, 1]
  ScaledTensor delta;  // [1, 1], used as |delta|
  int degree = 3;
};

/// [relu(x + b)]^n + |delta|, each step through the protocol.
ScaledTensor poly(const ScaledTensor& scores, const PolyParams& pp, const ProtocolContext& ctx);

/// Single-head polynomial attention. q: [T_q, d], k, v: [T_k, d]. Scores are
/// divided by sqrt(d_model) by folding the factor into their scale.
ScaledTensor poly_attention(const ScaledTensor& q, const ScaledTensor& k, const ScaledTensor& v,
                            const PolyParams& pp, std::size_t d_model, const ProtocolContext& ctx);

/// g * (x - mu) / (C * |x - mu|_1 / n) + b along the last axis. g, b: [1, n].
ScaledTensor l1_layer_norm(const ScaledTensor& x, const ScaledTensor& g, const ScaledTensor& b,
                           const ProtocolContext& ctx);

/// matmul(x, w) plus an optional [1, out] bias.
ScaledTensor linear(const ScaledTensor& x, const ScaledTensor& w, const ScaledTensor* bias,
                    const ProtocolContext& ctx);

/// Multi-head self-attention sublayer body (projections, heads, output
/// projection), without normalization or residual.
ScaledTensor attention_block(const ScaledTensor& h, const LayerParams<ScaledTensor>& l,
                             const ModelConfig& c, const ProtocolContext& ctx);

/// relu(h W1 + b1) W2 + b2.
ScaledTensor ffn_block(const ScaledTensor& h, const LayerParams<ScaledTensor>& l,
                       const ProtocolContext& ctx);

/// x + ffn_block(l1_layer_norm(x)): the whole feed-forward sublayer.
ScaledTensor ffn_forward(const ScaledTensor& x, const LayerParams<ScaledTensor>& l,
                         const ProtocolContext& ctx);

/// Pre-norm layer: x + Attn(LN1(x)), then + FFN(LN2(.)). Each module's
/// records carry its ModuleTag.
ScaledTensor layer_forward(const ScaledTensor& x, const LayerParams<ScaledTensor>& l,
                           const ModelConfig& c, const ProtocolContext& ctx,
                           const TapFn& tap = {}, int layer = 1);

struct IntForwardOptions {
  OpAuditLog* log = nullptr;
  TapFn tap;
  MatchRounding matching = MatchRounding::Exact;
};

/// Layer stack on activations x: [T, d_model].
ScaledTensor integer_stack_forward(const QuantizedModel& m, const ScaledTensor& x,
                                   const IntForwardOptions& opts = {});

/// Tokens -> embedding -> layers -> tied projection. Returns [T, vocab]
/// logits; normalizing them over the vocabulary is left to the caller.
ScaledTensor integer_forward(const QuantizedModel& m, std::span<const std::size_t> tokens,
                             const IntForwardOptions& opts = {});

PolyParams poly_params(const LayerParams<ScaledTensor>& l, int degree);

}  // namespace spq
