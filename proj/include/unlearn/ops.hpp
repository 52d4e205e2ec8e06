#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "unlearn/autodiff.hpp"

// Differentiable operations over Var. Shapes are checked eagerly and
// mismatches throw ShapeError. Every op rejects non-finite outputs.
namespace unlearn::ops {

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);

Var exp(const Var& a);
Var log(const Var& a);
// log(1 - exp(a)) for a < 0, evaluated without cancellation near 0.
Var log1mexp(const Var& a);
// log(1 + exp(a)).
Var softplus(const Var& a);
Var sigmoid(const Var& a);
// Clamps values to [lo, hi] in the forward pass; gradient passes through unchanged.
Var clamp_straight_through(const Var& a, double lo, double hi);
// Same value, no gradient.
Var detach(const Var& a);

// Reductions to a rank-0 scalar.
Var sum(const Var& a);
Var mean(const Var& a);

// 1-D gather: out[k] = a[indices[k]] over the flattened values.
Var gather(const Var& a, std::span<const std::size_t> indices);
// Concatenates flattened inputs into one 1-D tensor.
Var concat(std::span<const Var> parts);
// Rows [begin, end) of a rank-2 tensor.
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);

// Rank-2 row ops.
Var row_sum(const Var& a);                      // [T,V] -> [T]
Var log_softmax(const Var& a);                  // rowwise, max-subtracted
Var pick(const Var& a, std::span<const std::int32_t> columns);  // [T,V] -> [T]

// Transformer building blocks.
Var embedding(const Var& table, std::span<const std::int32_t> ids);  // [V,C] -> [T,C]
Var add_rows(const Var& x, const Var& table, std::size_t count);     // x[T,C] + table[0..T)
Var linear(const Var& x, const Var& weight, const Var& bias);        // [T,K]x[K,N]+[N]
Var linear(const Var& x, const Var& weight);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var gelu(const Var& x);  // tanh approximation
// qkv [T,3C] laid out as [q | k | v]; returns [T,C].
Var causal_self_attention(const Var& qkv, std::size_t num_heads);

}  // namespace unlearn::ops
