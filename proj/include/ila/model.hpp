// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer used as the fine-tuning substrate. Every linear
// layer is addressed by a LayerId (block index, role); these are the units
// that adapters attach to and that importance scores rank.
//
// Layout per block (pre-norm):
//   h = x + W_o(attn(rmsnorm(x) W_q, rmsnorm(x) W_k, rmsnorm(x) W_v))
//   x = h + W_down(silu(rmsnorm(h) W_gate) * rmsnorm(h) W_up)
// followed by a final rmsnorm and an untied W_head projection. Weights are
// stored [in, out] so a layer applies as x * W.

#ifndef ILA_MODEL_HPP_
#define ILA_MODEL_HPP_

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ila/tensor.hpp"

namespace ila {

enum class Role : std::uint8_t { kQuery, kKey, kValue, kOutput, kUp, kDown, kGate, kHead };

inline constexpr int kBlockRoles = 7;

std::string role_name(Role role);
Role role_from_name(const std::string& name);

struct LayerId {
  static constexpr int kHeadBlock = -1;

  int block = 0;
  Role role = Role::kQuery;

  static LayerId head() { return LayerId{kHeadBlock, Role::kHead}; }
  bool is_head() const { return block == kHeadBlock; }

  // Blocks in ascending order, then the head; roles in declaration order.
  std::strong_ordering operator<=>(const LayerId& other) const;
  bool operator==(const LayerId& other) const = default;

  std::string str() const;
};

struct ModelConfig {
  int blocks = 4;
  int d_model = 64;
  int heads = 4;
  int d_ffn = 128;
  int vocab = 260;
  int seq_len = 128;
  std::uint64_t seed = 0;

  void validate() const;
  int linear_layer_count() const { return kBlockRoles * blocks + 1; }
  // Architecture identity; the seed is not part of it.
  std::string fingerprint() const;
};

// All linear layers of a config in canonical order.
std::vector<LayerId> enumerate_layers(const ModelConfig& config);
// Position of a layer in enumerate_layers() order.
std::size_t layer_index(const ModelConfig& config, const LayerId& id);
// [in, out] shape of a linear layer.
Shape layer_shape(const ModelConfig& config, const LayerId& id);

struct BlockNorms {
  Tensor attn;
  Tensor ffn;
};

struct ModelParams {
  ModelConfig config;
  Tensor tok_embedding;           // [vocab, d_model]
  Tensor pos_embedding;           // [seq_len, d_model]
  std::vector<BlockNorms> norms;  // per block, [d_model] each
  Tensor final_norm;              // [d_model]
  std::vector<Tensor> linear;     // enumerate_layers() order

  const Tensor& weight(const LayerId& id) const;
  Tensor& weight(const LayerId& id);

  bool bitwise_equal(const ModelParams& other) const;
};

ModelParams init_model(const ModelConfig& config);

struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> tokens;  // [batch, seq] row-major
};

// Tensors the forward graph reads. Callers put tracked tensors here to obtain
// gradients for whatever they parameterize (weights, adapters, gates).
struct WeightView {
  Tensor tok_embedding;
  Tensor pos_embedding;
  std::vector<BlockNorms> norms;
  Tensor final_norm;
  std::vector<Tensor> linear;
};

WeightView view_of(const ModelParams& params);

// Logits [batch*seq, vocab] for a causal forward over `view`.
Tensor forward_view(const ModelConfig& config, const WeightView& view, const TokenBatch& tokens);

class AdapterSet;

// Base forward when `deltas` is null. Otherwise each adapted layer uses
// theta0 + gate * delta; `gates` (aligned with deltas->layers()) may be empty,
// meaning unmasked composition theta0 + delta.
Tensor forward(const ModelParams& params, const AdapterSet* deltas,
               std::span<const double> gates, const TokenBatch& tokens);

}  // namespace ila

#endif  // ILA_MODEL_HPP_
