// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Fine-tuning restricted to a chosen subset of linear layers, plus the
// ablation suite that compares selection strategies.

#ifndef ILA_WORKFLOWS_HPP_
#define ILA_WORKFLOWS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "ila/adapters.hpp"
#include "ila/analysis.hpp"
#include "ila/data.hpp"
#include "ila/ila_core.hpp"

namespace ila {

enum class SelectorKind {
  kAll,
  kIlaTop,           // train the top fraction
  kIlaBottomFrozen,  // freeze the bottom fraction
  kIlaTopFrozen,     // freeze the top fraction
  kRandomFrozen,     // freeze `count` layers drawn with `seed`
  kFirstFrozen,      // freeze the first `count` layers in layer order
  kLastFrozen,
  kGroup,
  kIntersection,  // freeze the common bottom-`count` layers of several rankings
};

enum class GroupPreset { kAtt, kAtt2, kFfn, kAll };

struct LayerSelector {
  SelectorKind kind = SelectorKind::kAll;
  double fraction = 1.0;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  GroupPreset group = GroupPreset::kAll;
  std::vector<LayerRanking> rankings;

  static LayerSelector all();
  static LayerSelector ila_top(LayerRanking ranking, double p);
  static LayerSelector ila_bottom_frozen(LayerRanking ranking, double p);
  static LayerSelector ila_top_frozen(LayerRanking ranking, double p);
  static LayerSelector random_frozen(std::size_t count, std::uint64_t seed);
  static LayerSelector first_frozen(std::size_t count);
  static LayerSelector last_frozen(std::size_t count);
  static LayerSelector group_preset(GroupPreset group);
  static LayerSelector intersection(std::vector<LayerRanking> rankings, std::size_t count);

  // Round-trips through parse_selector, e.g. "ila-top:0.3" or "freeze-random:7:2".
  std::string label() const;
};

// Grammar: all | ila-top:P | freeze-bottom:P | freeze-top:P | freeze-random:K[:SEED]
//        | freeze-first:K | freeze-last:K | group:att|att2|ffn|all | intersection:K
// ILA kinds take rankings[0]; intersection takes all of them.
LayerSelector parse_selector(const std::string& spec, const std::vector<LayerRanking>& rankings = {});

// Number of layers an ILA freeze of fraction p removes: N - ceil((1 - p) N).
std::size_t frozen_count(std::size_t n, double p);

// Trainable layers in layer order.
std::vector<LayerId> resolve(const LayerSelector& selector, const ModelConfig& config);

// lr 2e-3, weight decay 0.1, 650 steps.
OptimizerConfig finetune_optimizer_defaults();

struct FinetuneConfig {
  OptimizerConfig optimizer = finetune_optimizer_defaults();  // max_steps is the fixed step count
  int rank = 16;
  double lora_scale = 0.125;
  std::uint64_t adapter_seed = 0;
  std::uint64_t data_seed = 0;
};

struct FinetuneResult {
  AdapterSet adapters;
  std::vector<LayerId> trainable;
  std::vector<LayerId> frozen;
  Metrics metrics;  // on the probe batches
  int steps = 0;
  double seconds = 0.0;
};

// Adapters are initialized over every layer from adapter_seed and then
// restricted, so a layer starts from the same values under any selector.
// Throws ContractError if a frozen layer's effective weight changes.
FinetuneResult finetune_with_selector(const ModelParams& params, const BatchPlan& plan,
                                      const LayerSelector& selector, AdapterMode mode,
                                      const FinetuneConfig& config);

struct AblationRow {
  std::string selector;
  std::size_t trainable_layers = 0;
  std::size_t frozen_layers = 0;
  Metrics metrics;
  int steps = 0;
  double seconds = 0.0;
};

// all, freeze-bottom:0.25, two random freezes, first and last freezes of the
// same size, and ila-top at 0.1, 0.2 and 0.3.
std::vector<LayerSelector> ablation_selectors(const LayerRanking& ranking,
                                              std::uint64_t random_seed_a = 1,
                                              std::uint64_t random_seed_b = 2);

std::vector<AblationRow> run_ablation_suite(const ModelParams& params, const BatchPlan& plan,
                                            const LayerRanking& ranking, AdapterMode mode,
                                            const FinetuneConfig& config);

// Columns selector, trainable_layers, frozen_layers, eval_loss, token_acc, steps, seconds.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace ila

#endif  // ILA_WORKFLOWS_HPP_
