// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ila/errors.hpp"

namespace ila::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<>;
using StridedMat = Eigen::Map<RowMat, 0, Stride>;
using ConstStridedMat = Eigen::Map<const RowMat, 0, Stride>;

ConstMapMat as_matrix(std::span<const double> d, std::size_t r, std::size_t c) {
  return ConstMapMat(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MapMat as_matrix(std::span<double> d, std::size_t r, std::size_t c) {
  return MapMat(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

Tape* tape_of(std::initializer_list<const Tensor*> operands) {
  Tape* tape = nullptr;
  for (const Tensor* t : operands) {
    if (!t->tracked()) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw ContractError("operands belong to different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

std::vector<const Tensor*> tracked_inputs(std::initializer_list<const Tensor*> operands) {
  std::vector<const Tensor*> out;
  for (const Tensor* t : operands) {
    if (t->tracked()) out.push_back(t);
  }
  return out;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

enum class Binary { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind) {
  // Two size-1 operands of different shapes take the higher-rank shape.
  const bool a_scalar = a.size() == 1 && (b.size() != 1 || (a.shape() != b.shape() && a.rank() < b.rank()));
  const bool b_scalar = b.size() == 1 && !a_scalar && a.shape() != b.shape();
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw DimensionError("elementwise op on incompatible shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(out_shape);
  std::vector<double> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a_scalar ? ad[0] : ad[i];
    const double y = b_scalar ? bd[0] : bd[i];
    switch (kind) {
      case Binary::kAdd: out[i] = x + y; break;
      case Binary::kSub: out[i] = x - y; break;
      case Binary::kMul: out[i] = x * y; break;
    }
  }
  Tensor result(out_shape, std::move(out));
  Tape* tape = tape_of({&a, &b});
  if (tape == nullptr) return result;

  const bool ta = a.tracked();
  const bool tb = b.tracked();
  Tensor av = a.detached();
  Tensor bv = b.detached();
  auto rule = [=](const BackwardContext& ctx) {
    auto g = ctx.grad_out();
    std::size_t slot = 0;
    if (ta) {
      auto ga = ctx.grad_in(slot++);
      auto bd2 = bv.data();
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == Binary::kMul) d *= b_scalar ? bd2[0] : bd2[i];
        ga[a_scalar ? 0 : i] += d;
      }
    }
    if (tb) {
      auto gb = ctx.grad_in(slot);
      auto ad2 = av.data();
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == Binary::kSub) d = -d;
        if (kind == Binary::kMul) d *= a_scalar ? ad2[0] : ad2[i];
        gb[b_scalar ? 0 : i] += d;
      }
    }
  };
  return tape->record(std::move(result), tracked_inputs({&a, &b}), rule);
}

}  // namespace

namespace kernels {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n) {
  as_matrix(c, m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, k, n);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor result(Shape{m, n});
  kernels::gemm(a.data(), b.data(), result.mutable_data(), m, k, n);
  Tape* tape = tape_of({&a, &b});
  if (tape == nullptr) return result;

  const bool ta = a.tracked();
  const bool tb = b.tracked();
  Tensor av = a.detached();
  Tensor bv = b.detached();
  auto rule = [=](const BackwardContext& ctx) {
    auto g = as_matrix(ctx.grad_out(), m, n);
    std::size_t slot = 0;
    if (ta) as_matrix(ctx.grad_in(slot++), m, k).noalias() += g * as_matrix(bv.data(), k, n).transpose();
    if (tb) as_matrix(ctx.grad_in(slot), k, n).noalias() += as_matrix(av.data(), m, k).transpose() * g;
  };
  return tape->record(std::move(result), tracked_inputs({&a, &b}), rule);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& x : out) x *= factor;
  Tensor result(a.shape(), std::move(out));
  if (!a.tracked()) return result;
  auto rule = [factor](const BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto ga = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  };
  return a.tape()->record(std::move(result), {&a}, rule);
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kernels::sigmoid(ad[i]);
  Tensor result(a.shape(), std::move(out));
  if (!a.tracked()) return result;
  Tensor yv = result.detached();
  auto rule = [yv](const BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto ga = ctx.grad_in(0);
    auto y = yv.data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  };
  return a.tape()->record(std::move(result), {&a}, rule);
}

Tensor silu(const Tensor& a) {
  std::vector<double> out(a.size());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * kernels::sigmoid(ad[i]);
  Tensor result(a.shape(), std::move(out));
  if (!a.tracked()) return result;
  Tensor xv = a.detached();
  auto rule = [xv](const BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto ga = ctx.grad_in(0);
    auto x = xv.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = kernels::sigmoid(x[i]);
      ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
    }
  };
  return a.tape()->record(std::move(result), {&a}, rule);
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  Tensor result = Tensor::scalar(total);
  if (!a.tracked()) return result;
  auto rule = [](const BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    for (double& x : ctx.grad_in(0)) x += g;
  };
  return a.tape()->record(std::move(result), {&a}, rule);
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_matrix(logits, "softmax_cross_entropy");
  const std::size_t rows = logits.rows();
  const std::size_t v = logits.cols();
  if (targets.size() != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  std::size_t counted = 0;
  for (int t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                       " outside [0, " + std::to_string(v) + ")");
    }
    ++counted;
  }

  auto x = logits.data();
  std::vector<double> probs(rows * v, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == kIgnoreTarget) continue;
    const double* row = x.data() + r * v;
    double* p = probs.data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      p[c] = std::exp(row[c] - mx);
      z += p[c];
    }
    for (std::size_t c = 0; c < v; ++c) p[c] /= z;
    total += -(row[targets[r]] - mx - std::log(z));
  }
  const double denom = counted == 0 ? 1.0 : static_cast<double>(counted);
  Tensor result = Tensor::scalar(total / denom);
  if (!logits.tracked()) return result;

  std::vector<int> tgt(targets.begin(), targets.end());
  auto rule = [probs = std::move(probs), tgt = std::move(tgt), v, denom](const BackwardContext& ctx) {
    const double g = ctx.grad_out()[0] / denom;
    auto gx = ctx.grad_in(0);
    for (std::size_t r = 0; r < tgt.size(); ++r) {
      if (tgt[r] == kIgnoreTarget) continue;
      const double* p = probs.data() + r * v;
      double* out = gx.data() + r * v;
      for (std::size_t c = 0; c < v; ++c) out[c] += g * p[c];
      out[tgt[r]] -= g;
    }
  };
  return logits.tape()->record(std::move(result), {&logits}, rule);
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain) {
  if (x.rank() < 1 || gain.rank() != 1 || x.shape().back() != gain.size()) {
    throw DimensionError("rmsnorm: last dimension of " + shape_string(x.shape()) +
                         " does not match gain " + shape_string(gain.shape()));
  }
  const std::size_t d = gain.size();
  const std::size_t rows = x.size() / d;
  auto xd = x.data();
  auto gd = gain.data();
  std::vector<double> inv(rows);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double ms = 0.0;
    for (std::size_t c = 0; c < d; ++c) ms += row[c] * row[c];
    ms /= static_cast<double>(d);
    inv[r] = 1.0 / std::sqrt(ms + kRmsNormDelta);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = row[c] * inv[r] * gd[c];
  }
  Tensor result(x.shape(), std::move(out));
  Tape* tape = tape_of({&x, &gain});
  if (tape == nullptr) return result;

  const bool tx = x.tracked();
  const bool tg = gain.tracked();
  Tensor xv = x.detached();
  Tensor gv = gain.detached();
  auto rule = [=, inv = std::move(inv)](const BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto xs = xv.data();
    auto gs = gv.data();
    std::size_t slot = 0;
    std::span<double> gx, gg;
    if (tx) gx = ctx.grad_in(slot++);
    if (tg) gg = ctx.grad_in(slot);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = xs.data() + r * d;
      const double* gr = g.data() + r * d;
      const double s = inv[r];
      if (tg) {
        for (std::size_t c = 0; c < d; ++c) gg[c] += gr[c] * row[c] * s;
      }
      if (tx) {
        // y_c = x_c s g_c with s = (mean(x^2)+delta)^(-1/2); ds/dx_j = -s^3 x_j / d.
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += gr[c] * gs[c] * row[c];
        const double k = s * s * s * dot / static_cast<double>(d);
        double* out = gx.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) out[c] += gr[c] * gs[c] * s - k * row[c];
      }
    }
  };
  return tape->record(std::move(result), tracked_inputs({&x, &gain}), rule);
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.rows();
  const std::size_t d = table.cols();
  std::vector<double> out(ids.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Tensor result(Shape{ids.size(), d}, std::move(out));
  if (!table.tracked()) return result;
  std::vector<int> idv(ids.begin(), ids.end());
  auto rule = [idv = std::move(idv), d](const BackwardContext& ctx) {
    auto g = ctx.grad_out();
    auto gt = ctx.grad_in(0);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      double* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
      const double* src = g.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  };
  return table.tape()->record(std::move(result), {&table}, rule);
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t batch, std::size_t seq, std::size_t heads) {
  require_matrix(q, "causal_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("causal_attention: q/k/v shapes differ: " + shape_string(q.shape()) +
                         ", " + shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  const std::size_t d = q.cols();
  if (q.rows() != batch * seq || heads == 0 || d % heads != 0) {
    throw DimensionError("causal_attention: " + shape_string(q.shape()) +
                         " incompatible with batch=" + std::to_string(batch) +
                         " seq=" + std::to_string(seq) + " heads=" + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto T = static_cast<Eigen::Index>(seq);
  const auto DH = static_cast<Eigen::Index>(dh);
  const Stride stride(static_cast<Eigen::Index>(d));

  // probs holds the causal softmax for every (batch, head), [seq, seq] each.
  std::vector<double> probs(batch * heads * seq * seq, 0.0);
  Tensor result(Shape{batch * seq, d});
  auto out = result.mutable_data();
  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();
  RowMat scores(T, T);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * seq * d + h * dh;
      ConstStridedMat Q(qd.data() + off, T, DH, stride);
      ConstStridedMat K(kd.data() + off, T, DH, stride);
      ConstStridedMat V(vd.data() + off, T, DH, stride);
      scores.noalias() = Q * K.transpose();
      MapMat P(probs.data() + (b * heads + h) * seq * seq, T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j) * inv_sqrt);
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          P(i, j) = std::exp(scores(i, j) * inv_sqrt - mx);
          z += P(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) P(i, j) /= z;
      }
      StridedMat O(out.data() + off, T, DH, stride);
      O.noalias() = P.triangularView<Eigen::Lower>() * V;
    }
  }

  Tape* tape = tape_of({&q, &k, &v});
  if (tape == nullptr) return result;

  const bool tq = q.tracked(), tk = k.tracked(), tv = v.tracked();
  Tensor qv = q.detached(), kv = k.detached(), vv = v.detached();
  auto rule = [=, probs = std::move(probs)](const BackwardContext& ctx) {
    auto g = ctx.grad_out();
    std::size_t slot = 0;
    std::span<double> gq, gk, gv;
    if (tq) gq = ctx.grad_in(slot++);
    if (tk) gk = ctx.grad_in(slot++);
    if (tv) gv = ctx.grad_in(slot);
    RowMat dP(T, T);
    RowMat dS(T, T);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = b * seq * d + h * dh;
        ConstStridedMat Q(qv.data().data() + off, T, DH, stride);
        ConstStridedMat K(kv.data().data() + off, T, DH, stride);
        ConstStridedMat V(vv.data().data() + off, T, DH, stride);
        ConstStridedMat dO(g.data() + off, T, DH, stride);
        ConstMapMat P(probs.data() + (b * heads + h) * seq * seq, T, T);
        if (tv) {
          StridedMat dV(gv.data() + off, T, DH, stride);
          dV.noalias() += P.transpose() * dO;
        }
        if (!tq && !tk) continue;
        dP.noalias() = dO * V.transpose();
        for (Eigen::Index i = 0; i < T; ++i) {
          double dot = 0.0;
          for (Eigen::Index j = 0; j <= i; ++j) dot += dP(i, j) * P(i, j);
          for (Eigen::Index j = 0; j <= i; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot) * inv_sqrt;
          for (Eigen::Index j = i + 1; j < T; ++j) dS(i, j) = 0.0;
        }
        if (tq) {
          StridedMat dQ(gq.data() + off, T, DH, stride);
          dQ.noalias() += dS * K;
        }
        if (tk) {
          StridedMat dK(gk.data() + off, T, DH, stride);
          dK.noalias() += dS.transpose() * Q;
        }
      }
    }
  };
  return tape->record(std::move(result), tracked_inputs({&q, &k, &v}), rule);
}

}  // namespace ila::ops
