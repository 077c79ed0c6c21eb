// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/model.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <random>

#include "ila/adapters.hpp"
#include "ila/errors.hpp"
#include "ila/ops.hpp"

namespace ila {
namespace {

constexpr std::array<const char*, 8> kRoleNames = {"W_q",  "W_k",    "W_v",    "W_o",
                                                   "W_up", "W_down", "W_gate", "W_head"};

constexpr std::array<Role, kBlockRoles> kBlockRoleOrder = {
    Role::kQuery, Role::kKey, Role::kValue, Role::kOutput, Role::kUp, Role::kDown, Role::kGate};

Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace

std::string role_name(Role role) { return kRoleNames.at(static_cast<std::size_t>(role)); }

Role role_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kRoleNames.size(); ++i) {
    if (name == kRoleNames[i]) return static_cast<Role>(i);
  }
  throw LookupError("unknown layer role '" + name + "'");
}

std::strong_ordering LayerId::operator<=>(const LayerId& other) const {
  if (is_head() != other.is_head()) return is_head() ? std::strong_ordering::greater
                                                     : std::strong_ordering::less;
  if (auto c = block <=> other.block; c != 0) return c;
  return static_cast<int>(role) <=> static_cast<int>(other.role);
}

std::string LayerId::str() const {
  if (is_head()) return "head." + role_name(role);
  return "block." + std::to_string(block) + "." + role_name(role);
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid model config: " + what);
  };
  require(blocks >= 1, "blocks must be >= 1");
  require(d_model >= 1, "d_model must be >= 1");
  require(heads >= 1, "heads must be >= 1");
  require(d_model % heads == 0, "d_model must be divisible by heads");
  require(d_ffn >= 1, "d_ffn must be >= 1");
  require(vocab >= 1, "vocab must be >= 1");
  require(seq_len >= 1, "seq_len must be >= 1");
}

std::string ModelConfig::fingerprint() const {
  const std::string canon = "blocks=" + std::to_string(blocks) + ";d_model=" +
                            std::to_string(d_model) + ";heads=" + std::to_string(heads) +
                            ";d_ffn=" + std::to_string(d_ffn) + ";vocab=" + std::to_string(vocab) +
                            ";seq_len=" + std::to_string(seq_len);
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<LayerId> enumerate_layers(const ModelConfig& config) {
  std::vector<LayerId> out;
  out.reserve(static_cast<std::size_t>(config.linear_layer_count()));
  for (int b = 0; b < config.blocks; ++b) {
    for (Role r : kBlockRoleOrder) out.push_back(LayerId{b, r});
  }
  out.push_back(LayerId::head());
  return out;
}

std::size_t layer_index(const ModelConfig& config, const LayerId& id) {
  if (id.is_head()) {
    if (id.role != Role::kHead) throw LookupError("head block only holds W_head");
    return static_cast<std::size_t>(kBlockRoles * config.blocks);
  }
  if (id.role == Role::kHead || id.block < 0 || id.block >= config.blocks) {
    throw LookupError("no layer " + id.str() + " in a " + std::to_string(config.blocks) +
                      "-block model");
  }
  return static_cast<std::size_t>(id.block * kBlockRoles + static_cast<int>(id.role));
}

Shape layer_shape(const ModelConfig& config, const LayerId& id) {
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = static_cast<std::size_t>(config.d_ffn);
  switch (id.role) {
    case Role::kQuery:
    case Role::kKey:
    case Role::kValue:
    case Role::kOutput:
      return {d, d};
    case Role::kUp:
    case Role::kGate:
      return {d, f};
    case Role::kDown:
      return {f, d};
    case Role::kHead:
      return {d, static_cast<std::size_t>(config.vocab)};
  }
  throw LookupError("bad role");
}

const Tensor& ModelParams::weight(const LayerId& id) const {
  return linear.at(layer_index(config, id));
}

Tensor& ModelParams::weight(const LayerId& id) { return linear.at(layer_index(config, id)); }

bool ModelParams::bitwise_equal(const ModelParams& other) const {
  if (config.fingerprint() != other.config.fingerprint()) return false;
  if (!tok_embedding.bitwise_equal(other.tok_embedding) ||
      !pos_embedding.bitwise_equal(other.pos_embedding) ||
      !final_norm.bitwise_equal(other.final_norm) || norms.size() != other.norms.size() ||
      linear.size() != other.linear.size()) {
    return false;
  }
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (!norms[i].attn.bitwise_equal(other.norms[i].attn) ||
        !norms[i].ffn.bitwise_equal(other.norms[i].ffn)) {
      return false;
    }
  }
  for (std::size_t i = 0; i < linear.size(); ++i) {
    if (!linear[i].bitwise_equal(other.linear[i])) return false;
  }
  return true;
}

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const auto d = static_cast<std::size_t>(config.d_model);
  const double std_main = 0.02;
  const double std_out = 0.02 / std::sqrt(2.0 * config.blocks);

  ModelParams p;
  p.config = config;
  p.tok_embedding = gaussian({static_cast<std::size_t>(config.vocab), d}, std_main, rng);
  p.pos_embedding = gaussian({static_cast<std::size_t>(config.seq_len), d}, std_main, rng);
  for (int b = 0; b < config.blocks; ++b) {
    p.norms.push_back(BlockNorms{Tensor({d}, 1.0), Tensor({d}, 1.0)});
  }
  p.final_norm = Tensor({d}, 1.0);
  for (const LayerId& id : enumerate_layers(config)) {
    const bool output_proj = id.role == Role::kOutput || id.role == Role::kDown;
    p.linear.push_back(gaussian(layer_shape(config, id), output_proj ? std_out : std_main, rng));
  }
  return p;
}

WeightView view_of(const ModelParams& params) {
  return WeightView{params.tok_embedding, params.pos_embedding, params.norms, params.final_norm,
                    params.linear};
}

Tensor forward_view(const ModelConfig& config, const WeightView& view, const TokenBatch& tokens) {
  if (tokens.tokens.size() != tokens.batch * tokens.seq || tokens.batch == 0 || tokens.seq == 0) {
    throw DimensionError("token batch is not [batch, seq]");
  }
  if (tokens.seq > static_cast<std::size_t>(config.seq_len)) {
    throw ContractError("sequence length " + std::to_string(tokens.seq) + " exceeds seq_len " +
                        std::to_string(config.seq_len));
  }
  for (int t : tokens.tokens) {
    if (t < 0 || t >= config.vocab) {
      throw IndexError("token " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config.vocab));
    }
  }
  std::vector<int> positions(tokens.tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] = static_cast<int>(i % tokens.seq);
  }

  Tensor x = ops::add(ops::embedding(view.tok_embedding, tokens.tokens),
                      ops::embedding(view.pos_embedding, positions));
  const auto heads = static_cast<std::size_t>(config.heads);
  for (int b = 0; b < config.blocks; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * kBlockRoles;
    auto w = [&](Role r) -> const Tensor& { return view.linear[base + static_cast<int>(r)]; };

    Tensor h = ops::rmsnorm(x, view.norms[b].attn);
    Tensor attn = ops::causal_attention(ops::matmul(h, w(Role::kQuery)),
                                        ops::matmul(h, w(Role::kKey)),
                                        ops::matmul(h, w(Role::kValue)), tokens.batch,
                                        tokens.seq, heads);
    x = ops::add(x, ops::matmul(attn, w(Role::kOutput)));

    h = ops::rmsnorm(x, view.norms[b].ffn);
    Tensor gated = ops::mul(ops::silu(ops::matmul(h, w(Role::kGate))), ops::matmul(h, w(Role::kUp)));
    x = ops::add(x, ops::matmul(gated, w(Role::kDown)));
  }
  x = ops::rmsnorm(x, view.final_norm);
  return ops::matmul(x, view.linear.back());
}

Tensor forward(const ModelParams& params, const AdapterSet* deltas, std::span<const double> gates,
               const TokenBatch& tokens) {
  if (deltas == nullptr) return forward_view(params.config, view_of(params), tokens);
  if (!gates.empty() && gates.size() != deltas->size()) {
    throw ContractError("gates cover " + std::to_string(gates.size()) + " layers but " +
                        std::to_string(deltas->size()) + " are adapted");
  }
  WeightView view = view_of(params);
  for (std::size_t i = 0; i < deltas->size(); ++i) {
    const std::size_t idx = layer_index(params.config, deltas->layers()[i]);
    Tensor delta = materialize_delta(*deltas, i);
    view.linear[idx] = gates.empty() ? ops::add(view.linear[idx], delta)
                                     : compose_weight(view.linear[idx], delta, gates[i]);
  }
  return forward_view(params.config, view, tokens);
}

}  // namespace ila
