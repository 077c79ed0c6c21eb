// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Per-layer deltas over a frozen base: LoRA pairs (delta = scale * B * A) or
// dense full-fine-tuning deltas. Both modes expose the same surface, so the
// masking and merge code never branches on where a delta came from.

#ifndef ILA_ADAPTERS_HPP_
#define ILA_ADAPTERS_HPP_

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ila/model.hpp"
#include "ila/tensor.hpp"

namespace ila {

enum class AdapterMode { kLora, kFft };

std::string mode_name(AdapterMode mode);
AdapterMode mode_from_name(const std::string& name);

struct LoraPair {
  Tensor b;  // [in, rank]
  Tensor a;  // [rank, out]
};

class AdapterSet {
 public:
  AdapterSet() = default;

  static AdapterSet lora(std::vector<LayerId> layers, std::vector<LoraPair> pairs, int rank,
                         double scale);
  static AdapterSet fft(std::vector<LayerId> layers, std::vector<Tensor> deltas);

  AdapterMode mode() const { return mode_; }
  int rank() const { return rank_; }
  double scale() const { return scale_; }
  const std::vector<LayerId>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }

  bool contains(const LayerId& id) const;
  std::size_t index_of(const LayerId& id) const;

  const LoraPair& pair(std::size_t i) const { return pairs_.at(i); }
  LoraPair& pair(std::size_t i) { return pairs_.at(i); }
  const Tensor& dense(std::size_t i) const { return deltas_.at(i); }
  Tensor& dense(std::size_t i) { return deltas_.at(i); }

  // Restriction to a subset of layers, preserving order.
  AdapterSet subset(const std::set<LayerId>& keep) const;

  bool bitwise_equal(const AdapterSet& other) const;

 private:
  AdapterMode mode_ = AdapterMode::kLora;
  int rank_ = 0;
  double scale_ = 1.0;
  std::vector<LayerId> layers_;
  std::vector<LoraPair> pairs_;
  std::vector<Tensor> deltas_;
};

// A_i ~ N(0, 0.02^2), B_i = 0 on each layer of `layers` (all linear layers when
// empty). Throws ConfigError when rank exceeds min(in, out) of any layer.
AdapterSet init_lora(const ModelParams& params, int rank, double scale, std::uint64_t seed,
                     const std::vector<LayerId>& layers = {});

// Zero dense deltas on `layers` (all linear layers when empty).
AdapterSet init_fft(const ModelParams& params, const std::vector<LayerId>& layers = {});

// Throws DimensionError unless every delta has the shape of its base layer.
void check_adapter_shapes(const ModelParams& params, const AdapterSet& adapters);

Tensor materialize_delta(const AdapterSet& adapters, const LayerId& layer);
Tensor materialize_delta(const AdapterSet& adapters, std::size_t index);

// theta0 + gate_i * delta_i on every adapted layer; gates aligned with
// adapters.layers(), each in [0, 1].
ModelParams apply_masked(const ModelParams& params, const AdapterSet& adapters,
                         std::span<const double> gates);

// Adds deltas only for layers in `keep` (a hard binary mask).
ModelParams merge(const ModelParams& params, const AdapterSet& adapters,
                  const std::set<LayerId>& keep);

// keep = every adapted layer.
ModelParams merge_all(const ModelParams& params, const AdapterSet& adapters);

// theta0 + gate * delta, elementwise, with the exact operation order that the
// taped forward uses.
Tensor compose_weight(const Tensor& base, const Tensor& delta, double gate);

}  // namespace ila

#endif  // ILA_ADAPTERS_HPP_
