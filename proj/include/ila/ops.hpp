// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Each op records itself on the tape of its tracked
// operands; when no operand is tracked the result is a plain value. Shapes are
// checked eagerly and reported as DimensionError.
//
// Broadcasting is limited to scalar-with-tensor: a size-1 operand combines
// with any shape, otherwise shapes must be equal.

#ifndef ILA_OPS_HPP_
#define ILA_OPS_HPP_

#include <cstddef>
#include <span>

#include "ila/tensor.hpp"

namespace ila::ops {

// Targets equal to this value are excluded from the cross-entropy mean.
inline constexpr int kIgnoreTarget = -1;
inline constexpr double kRmsNormDelta = 1e-6;

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor sum(const Tensor& a);

// Mean of -log softmax(logits)[target] over rows whose target is not ignored.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

// x / sqrt(mean(x^2) + delta) * gain, normalizing over the last dimension.
Tensor rmsnorm(const Tensor& x, const Tensor& gain);

// Row gather: out[i] = table[ids[i]].
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Multi-head causal self-attention over [batch*seq, d] projections. Head h
// uses columns [h*d/heads, (h+1)*d/heads).
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t batch, std::size_t seq, std::size_t heads);

// Plain (untracked) kernels shared with code that composes weights outside a
// tape, so both routes produce identical bits.
namespace kernels {
void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
double sigmoid(double x);
}  // namespace kernels

}  // namespace ila::ops

#endif  // ILA_OPS_HPP_
