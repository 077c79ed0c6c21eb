// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Fixtures and numeric oracles shared by the unit tests.

#ifndef ILA_TESTS_SUPPORT_HPP_
#define ILA_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ila/adapters.hpp"
#include "ila/data.hpp"
#include "ila/model.hpp"
#include "ila/tensor.hpp"

namespace ila::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline ModelConfig tiny_config(int blocks = 1) {
  ModelConfig c;
  c.blocks = blocks;
  c.d_model = 8;
  c.heads = 2;
  c.d_ffn = 16;
  c.seq_len = 64;
  c.seed = 3;
  return c;
}

inline BatchPlan tiny_plan(std::uint64_t seed = 0, std::size_t size = 48,
                           TaskFamily family = TaskFamily::kReverse) {
  SyntheticTaskSpec spec;
  spec.family = family;
  spec.size = size;
  spec.max_items = 4;
  return make_batches(generate_dataset(spec, seed + 1), 4, 64, seed, 2);
}

// LoRA adapters on every layer with nonzero B so that every gate matters.
inline AdapterSet random_lora(const ModelParams& params, int rank, double scale, std::uint64_t seed) {
  AdapterSet a = init_lora(params, rank, scale, seed);
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  std::normal_distribution<double> n(0.0, 0.2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (double& x : a.pair(i).b.mutable_data()) x = n(rng);
  }
  return a;
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double scale = std::max(norm(a), norm(b));
  return scale == 0.0 ? 0.0 : norm(d) / scale;
}

// Central differences of a scalar function of a flat vector.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace ila::testing

#endif  // ILA_TESTS_SUPPORT_HPP_
