// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/adapters.hpp"

#include <algorithm>
#include <random>

#include "ila/errors.hpp"
#include "ila/ops.hpp"

namespace ila {

std::string mode_name(AdapterMode mode) { return mode == AdapterMode::kLora ? "lora" : "fft"; }

AdapterMode mode_from_name(const std::string& name) {
  if (name == "lora") return AdapterMode::kLora;
  if (name == "fft") return AdapterMode::kFft;
  throw ConfigError("unknown adapter mode '" + name + "' (expected lora or fft)");
}

AdapterSet AdapterSet::lora(std::vector<LayerId> layers, std::vector<LoraPair> pairs, int rank,
                            double scale) {
  if (rank < 1) throw ConfigError("LoRA rank must be >= 1");
  if (!(scale > 0.0)) throw ConfigError("LoRA scale must be > 0");
  if (layers.size() != pairs.size()) throw ContractError("one LoRA pair per layer");
  for (const LoraPair& p : pairs) {
    if (p.b.rank() != 2 || p.a.rank() != 2 || p.b.cols() != static_cast<std::size_t>(rank) ||
        p.a.rows() != static_cast<std::size_t>(rank)) {
      throw DimensionError("LoRA pair " + shape_string(p.b.shape()) + " x " +
                           shape_string(p.a.shape()) + " does not have rank " +
                           std::to_string(rank));
    }
  }
  AdapterSet s;
  s.mode_ = AdapterMode::kLora;
  s.rank_ = rank;
  s.scale_ = scale;
  s.layers_ = std::move(layers);
  s.pairs_ = std::move(pairs);
  return s;
}

AdapterSet AdapterSet::fft(std::vector<LayerId> layers, std::vector<Tensor> deltas) {
  if (layers.size() != deltas.size()) throw ContractError("one dense delta per layer");
  AdapterSet s;
  s.mode_ = AdapterMode::kFft;
  s.layers_ = std::move(layers);
  s.deltas_ = std::move(deltas);
  return s;
}

bool AdapterSet::contains(const LayerId& id) const {
  return std::find(layers_.begin(), layers_.end(), id) != layers_.end();
}

std::size_t AdapterSet::index_of(const LayerId& id) const {
  auto it = std::find(layers_.begin(), layers_.end(), id);
  if (it == layers_.end()) throw LookupError("layer " + id.str() + " has no adapter");
  return static_cast<std::size_t>(it - layers_.begin());
}

AdapterSet AdapterSet::subset(const std::set<LayerId>& keep) const {
  AdapterSet s;
  s.mode_ = mode_;
  s.rank_ = rank_;
  s.scale_ = scale_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!keep.count(layers_[i])) continue;
    s.layers_.push_back(layers_[i]);
    if (mode_ == AdapterMode::kLora) {
      s.pairs_.push_back(pairs_[i]);
    } else {
      s.deltas_.push_back(deltas_[i]);
    }
  }
  return s;
}

bool AdapterSet::bitwise_equal(const AdapterSet& other) const {
  if (mode_ != other.mode_ || rank_ != other.rank_ || scale_ != other.scale_ ||
      layers_ != other.layers_) {
    return false;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (mode_ == AdapterMode::kLora) {
      if (!pairs_[i].a.bitwise_equal(other.pairs_[i].a) ||
          !pairs_[i].b.bitwise_equal(other.pairs_[i].b)) {
        return false;
      }
    } else if (!deltas_[i].bitwise_equal(other.deltas_[i])) {
      return false;
    }
  }
  return true;
}

AdapterSet init_lora(const ModelParams& params, int rank, double scale, std::uint64_t seed,
                     const std::vector<LayerId>& layers) {
  std::vector<LayerId> targets = layers.empty() ? enumerate_layers(params.config) : layers;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  std::vector<LoraPair> pairs;
  for (const LayerId& id : targets) {
    const Shape shape = layer_shape(params.config, id);
    if (rank < 1 || static_cast<std::size_t>(rank) > std::min(shape[0], shape[1])) {
      throw ConfigError("LoRA rank " + std::to_string(rank) + " too large for layer " + id.str() +
                        " " + shape_string(shape));
    }
    const auto r = static_cast<std::size_t>(rank);
    std::vector<double> a(r * shape[1]);
    for (double& v : a) v = dist(rng);
    pairs.push_back(LoraPair{Tensor({shape[0], r}, 0.0), Tensor({r, shape[1]}, std::move(a))});
  }
  return AdapterSet::lora(std::move(targets), std::move(pairs), rank, scale);
}

AdapterSet init_fft(const ModelParams& params, const std::vector<LayerId>& layers) {
  std::vector<LayerId> targets = layers.empty() ? enumerate_layers(params.config) : layers;
  std::vector<Tensor> deltas;
  for (const LayerId& id : targets) deltas.emplace_back(layer_shape(params.config, id), 0.0);
  return AdapterSet::fft(std::move(targets), std::move(deltas));
}

void check_adapter_shapes(const ModelParams& params, const AdapterSet& adapters) {
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    const LayerId& id = adapters.layers()[i];
    const Shape want = layer_shape(params.config, id);
    Shape got;
    if (adapters.mode() == AdapterMode::kLora) {
      got = {adapters.pair(i).b.rows(), adapters.pair(i).a.cols()};
    } else {
      got = adapters.dense(i).shape();
    }
    if (got != want) {
      throw DimensionError("delta for " + id.str() + " has shape " + shape_string(got) +
                           ", layer is " + shape_string(want));
    }
  }
}

Tensor materialize_delta(const AdapterSet& adapters, std::size_t index) {
  if (index >= adapters.size()) throw LookupError("adapter index out of range");
  if (adapters.mode() == AdapterMode::kFft) return adapters.dense(index);
  const LoraPair& p = adapters.pair(index);
  return ops::scale(ops::matmul(p.b.detached(), p.a.detached()), adapters.scale());
}

Tensor materialize_delta(const AdapterSet& adapters, const LayerId& layer) {
  return materialize_delta(adapters, adapters.index_of(layer));
}

Tensor compose_weight(const Tensor& base, const Tensor& delta, double gate) {
  return ops::add(base.detached(), ops::mul(Tensor::scalar(gate), delta.detached()));
}

ModelParams apply_masked(const ModelParams& params, const AdapterSet& adapters,
                         std::span<const double> gates) {
  if (gates.size() != adapters.size()) {
    throw ContractError("gates cover " + std::to_string(gates.size()) + " layers but " +
                        std::to_string(adapters.size()) + " are adapted");
  }
  for (double g : gates) {
    if (!(g >= 0.0 && g <= 1.0)) {
      throw ContractError("gate value " + std::to_string(g) + " outside [0, 1]");
    }
  }
  ModelParams out = params;
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    Tensor& w = out.weight(adapters.layers()[i]);
    w = compose_weight(w, materialize_delta(adapters, i), gates[i]);
  }
  return out;
}

ModelParams merge(const ModelParams& params, const AdapterSet& adapters,
                  const std::set<LayerId>& keep) {
  for (const LayerId& id : keep) {
    if (!adapters.contains(id)) throw LookupError("cannot keep " + id.str() + ": not adapted");
  }
  ModelParams out = params;
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    if (!keep.count(adapters.layers()[i])) continue;
    Tensor& w = out.weight(adapters.layers()[i]);
    w = ops::add(w, materialize_delta(adapters, i));
  }
  return out;
}

ModelParams merge_all(const ModelParams& params, const AdapterSet& adapters) {
  return merge(params, adapters, std::set<LayerId>(adapters.layers().begin(), adapters.layers().end()));
}

}  // namespace ila
