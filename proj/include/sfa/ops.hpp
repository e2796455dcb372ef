#pragma once

// Differentiable operations over Var<T>. Instantiated for float (training)
// and double (gradient verification). Tensors are treated as a stack of rows
// over their innermost dimension unless an op states otherwise.

#include <cstdint>
#include <span>

#include "sfa/autograd.hpp"

namespace sfa::ops {

inline constexpr double kLayerNormEps = 1e-5;

/// a(..., k) @ b(k, n) -> (..., n)
template <class T>
Var<T> matmul(Var<T> a, Var<T> b);

/// Elementwise sum. b may also match the trailing dimensions of a, in which
/// case it is broadcast over the leading ones.
template <class T>
Var<T> add(Var<T> a, Var<T> b);

/// Elementwise product of equal shapes.
template <class T>
Var<T> mul(Var<T> a, Var<T> b);

template <class T>
Var<T> scale(Var<T> x, double factor);

template <class T>
Var<T> relu(Var<T> x);

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <class T>
Var<T> gelu(Var<T> x);

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = kLayerNormEps);

template <class T>
Var<T> softmax_lastdim(Var<T> x);

/// x(..., in) @ w(in, out) + b(out)
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

/// Multi-head scaled dot-product attention over (batch, tokens, dim) inputs.
/// Heads split the last dimension into num_heads contiguous column blocks.
template <class T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t num_heads);

template <class T>
Var<T> reshape(Var<T> x, Shape shape);

/// (B, h, w, C) -> (B, h*factor, w*factor, C), nearest neighbour.
template <class T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor);

/// Mean softmax cross-entropy of logits(..., K) against one class id per row.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> labels);

/// Mean squared error against a constant target of the same shape.
template <class T>
Var<T> mse(Var<T> pred, const BasicTensor<T>& target);

template <class T>
Var<T> sum(Var<T> x);

}  // namespace sfa::ops
