// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/workflows.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <random>
#include <set>
#include <sstream>

#include "ila/errors.hpp"
#include "ila/format.hpp"

namespace ila {

OptimizerConfig finetune_optimizer_defaults() {
  OptimizerConfig c;
  c.lr = 2e-3;
  c.weight_decay = 0.1;
  c.max_steps = 650;
  return c;
}

namespace {

double parse_fraction(const std::string& text, const std::string& spec) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !(v > 0.0 && v <= 1.0)) {
    throw ConfigError("selector '" + spec + "': fraction must lie in (0, 1]");
  }
  return v;
}

std::uint64_t parse_count(const std::string& text, const std::string& spec) {
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("selector '" + spec + "': '" + text + "' is not a count");
  }
  return v;
}

const LayerRanking& only_ranking(const LayerSelector& s) {
  if (s.rankings.empty()) throw ConfigError("selector " + s.label() + " needs a ranking");
  return s.rankings.front();
}

void check_ranking(const LayerRanking& ranking, const ModelConfig& config) {
  if (ranking.fingerprint() != config.fingerprint()) {
    throw ComparisonError("ranking fingerprint " + ranking.fingerprint() +
                          " does not match model " + config.fingerprint());
  }
  const auto all = enumerate_layers(config);
  if (ranking.layers() != LayerSet(all.begin(), all.end())) {
    throw ComparisonError("ranking does not cover every layer of the model");
  }
}

std::set<Role> group_roles(GroupPreset g) {
  switch (g) {
    case GroupPreset::kAtt:
      return {Role::kQuery, Role::kKey, Role::kValue, Role::kOutput};
    case GroupPreset::kAtt2:
      return {Role::kQuery, Role::kKey, Role::kValue};
    case GroupPreset::kFfn:
      return {Role::kUp, Role::kDown, Role::kGate};
    case GroupPreset::kAll:
      break;
  }
  return {Role::kQuery, Role::kKey,  Role::kValue, Role::kOutput,
          Role::kUp,    Role::kDown, Role::kGate,  Role::kHead};
}

std::string group_name(GroupPreset g) {
  switch (g) {
    case GroupPreset::kAtt:
      return "att";
    case GroupPreset::kAtt2:
      return "att2";
    case GroupPreset::kFfn:
      return "ffn";
    case GroupPreset::kAll:
      break;
  }
  return "all";
}

}  // namespace

LayerSelector LayerSelector::all() { return LayerSelector{}; }

LayerSelector LayerSelector::ila_top(LayerRanking ranking, double p) {
  LayerSelector s;
  s.kind = SelectorKind::kIlaTop;
  s.fraction = p;
  s.rankings.push_back(std::move(ranking));
  return s;
}

LayerSelector LayerSelector::ila_bottom_frozen(LayerRanking ranking, double p) {
  LayerSelector s = ila_top(std::move(ranking), p);
  s.kind = SelectorKind::kIlaBottomFrozen;
  return s;
}

LayerSelector LayerSelector::ila_top_frozen(LayerRanking ranking, double p) {
  LayerSelector s = ila_top(std::move(ranking), p);
  s.kind = SelectorKind::kIlaTopFrozen;
  return s;
}

LayerSelector LayerSelector::random_frozen(std::size_t count, std::uint64_t seed) {
  LayerSelector s;
  s.kind = SelectorKind::kRandomFrozen;
  s.count = count;
  s.seed = seed;
  return s;
}

LayerSelector LayerSelector::first_frozen(std::size_t count) {
  LayerSelector s;
  s.kind = SelectorKind::kFirstFrozen;
  s.count = count;
  return s;
}

LayerSelector LayerSelector::last_frozen(std::size_t count) {
  LayerSelector s = first_frozen(count);
  s.kind = SelectorKind::kLastFrozen;
  return s;
}

LayerSelector LayerSelector::group_preset(GroupPreset group) {
  LayerSelector s;
  s.kind = SelectorKind::kGroup;
  s.group = group;
  return s;
}

LayerSelector LayerSelector::intersection(std::vector<LayerRanking> rankings, std::size_t count) {
  LayerSelector s;
  s.kind = SelectorKind::kIntersection;
  s.count = count;
  s.rankings = std::move(rankings);
  return s;
}

std::string LayerSelector::label() const {
  switch (kind) {
    case SelectorKind::kAll:
      return "all";
    case SelectorKind::kIlaTop:
      return "ila-top:" + shortest(fraction);
    case SelectorKind::kIlaBottomFrozen:
      return "freeze-bottom:" + shortest(fraction);
    case SelectorKind::kIlaTopFrozen:
      return "freeze-top:" + shortest(fraction);
    case SelectorKind::kRandomFrozen:
      return "freeze-random:" + std::to_string(count) + ":" + std::to_string(seed);
    case SelectorKind::kFirstFrozen:
      return "freeze-first:" + std::to_string(count);
    case SelectorKind::kLastFrozen:
      return "freeze-last:" + std::to_string(count);
    case SelectorKind::kGroup:
      return "group:" + group_name(group);
    case SelectorKind::kIntersection:
      return "intersection:" + std::to_string(count);
  }
  return "?";
}

LayerSelector parse_selector(const std::string& spec, const std::vector<LayerRanking>& rankings) {
  std::vector<std::string> parts;
  std::stringstream in(spec);
  for (std::string p; std::getline(in, p, ':');) parts.push_back(p);
  if (parts.empty()) throw ConfigError("empty selector");
  const std::string& head = parts[0];
  auto want = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() < lo || parts.size() > hi) throw ConfigError("malformed selector '" + spec + "'");
  };
  auto ranking = [&] {
    if (rankings.empty()) throw ConfigError("selector '" + spec + "' needs a ranking");
    return rankings.front();
  };
  if (head == "all") {
    want(1, 1);
    return LayerSelector::all();
  }
  if (head == "ila-top" || head == "freeze-bottom" || head == "freeze-top") {
    want(2, 2);
    const double p = parse_fraction(parts[1], spec);
    if (head == "ila-top") return LayerSelector::ila_top(ranking(), p);
    if (head == "freeze-bottom") return LayerSelector::ila_bottom_frozen(ranking(), p);
    return LayerSelector::ila_top_frozen(ranking(), p);
  }
  if (head == "freeze-random") {
    want(2, 3);
    const std::uint64_t seed = parts.size() == 3 ? parse_count(parts[2], spec) : 0;
    return LayerSelector::random_frozen(parse_count(parts[1], spec), seed);
  }
  if (head == "freeze-first" || head == "freeze-last") {
    want(2, 2);
    const auto k = parse_count(parts[1], spec);
    return head == "freeze-first" ? LayerSelector::first_frozen(k) : LayerSelector::last_frozen(k);
  }
  if (head == "group") {
    want(2, 2);
    for (GroupPreset g : {GroupPreset::kAtt, GroupPreset::kAtt2, GroupPreset::kFfn, GroupPreset::kAll}) {
      if (group_name(g) == parts[1]) return LayerSelector::group_preset(g);
    }
    throw ConfigError("unknown group '" + parts[1] + "' (expected att, att2, ffn or all)");
  }
  if (head == "intersection") {
    want(2, 2);
    return LayerSelector::intersection(rankings, parse_count(parts[1], spec));
  }
  throw ConfigError("unknown selector '" + spec + "'");
}

std::size_t frozen_count(std::size_t n, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("fraction must lie in (0, 1], got " + shortest(p));
  return p == 1.0 ? n : n - top_count(n, 1.0 - p);
}

std::vector<LayerId> resolve(const LayerSelector& selector, const ModelConfig& config) {
  const std::vector<LayerId> all = enumerate_layers(config);
  const std::size_t n = all.size();
  LayerSet trainable(all.begin(), all.end());
  auto freeze = [&](const auto& layers) {
    for (const LayerId& id : layers) trainable.erase(id);
  };
  auto check_count = [&] {
    if (selector.count > n) {
      throw ConfigError("cannot freeze " + std::to_string(selector.count) + " of " +
                        std::to_string(n) + " layers");
    }
  };

  switch (selector.kind) {
    case SelectorKind::kAll:
      break;
    case SelectorKind::kIlaTop: {
      const LayerRanking& r = only_ranking(selector);
      check_ranking(r, config);
      trainable = select_top_fraction(r, selector.fraction);
      break;
    }
    case SelectorKind::kIlaBottomFrozen: {
      const LayerRanking& r = only_ranking(selector);
      check_ranking(r, config);
      freeze(select_bottom(r, frozen_count(n, selector.fraction)));
      break;
    }
    case SelectorKind::kIlaTopFrozen: {
      const LayerRanking& r = only_ranking(selector);
      check_ranking(r, config);
      const std::size_t k = frozen_count(n, selector.fraction);
      for (std::size_t i = 0; i < k; ++i) trainable.erase(r.entries()[i].layer);
      break;
    }
    case SelectorKind::kRandomFrozen: {
      check_count();
      std::vector<LayerId> order = all;
      std::mt19937_64 rng(selector.seed);
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(selector.count);
      freeze(order);
      break;
    }
    case SelectorKind::kFirstFrozen:
      check_count();
      freeze(std::vector<LayerId>(all.begin(), all.begin() + static_cast<long>(selector.count)));
      break;
    case SelectorKind::kLastFrozen:
      check_count();
      freeze(std::vector<LayerId>(all.end() - static_cast<long>(selector.count), all.end()));
      break;
    case SelectorKind::kGroup: {
      const std::set<Role> roles = group_roles(selector.group);
      trainable.clear();
      for (const LayerId& id : all) {
        if (roles.count(id.role)) trainable.insert(id);
      }
      break;
    }
    case SelectorKind::kIntersection:
      for (const LayerRanking& r : selector.rankings) check_ranking(r, config);
      freeze(intersect_unimportant(selector.rankings, selector.count));
      break;
  }
  return std::vector<LayerId>(trainable.begin(), trainable.end());
}

FinetuneResult finetune_with_selector(const ModelParams& params, const BatchPlan& plan,
                                      const LayerSelector& selector, AdapterMode mode,
                                      const FinetuneConfig& config) {
  if (plan.train.empty() || plan.probe.empty()) throw ConfigError("fine-tuning needs data");
  config.optimizer.validate();
  const auto start = std::chrono::steady_clock::now();

  FinetuneResult out;
  out.trainable = resolve(selector, params.config);
  const LayerSet keep(out.trainable.begin(), out.trainable.end());
  for (const LayerId& id : enumerate_layers(params.config)) {
    if (!keep.count(id)) out.frozen.push_back(id);
  }

  AdapterSet full = mode == AdapterMode::kLora
                        ? init_lora(params, config.rank, config.lora_scale, config.adapter_seed)
                        : init_fft(params);
  AdapterSet adapters = full.subset(keep);

  if (adapters.size() == 0) {
    out.adapters = std::move(adapters);
    out.metrics = evaluate(params, nullptr, {}, plan.probe);
  } else {
    Trainer trainer(params, std::move(adapters), plan, config.optimizer, config.data_seed, false);
    while (trainer.steps_done() < config.optimizer.max_steps) trainer.step();
    out.steps = trainer.steps_done();
    out.adapters = trainer.adapters();
    out.metrics = evaluate(params, &out.adapters, {}, plan.probe);
  }

  const ModelParams merged = merge_all(params, out.adapters);
  for (const LayerId& id : out.frozen) {
    if (!merged.weight(id).bitwise_equal(params.weight(id))) {
      throw ContractError("frozen layer " + id.str() + " changed during fine-tuning");
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::vector<LayerSelector> ablation_selectors(const LayerRanking& ranking,
                                              std::uint64_t random_seed_a,
                                              std::uint64_t random_seed_b) {
  const std::size_t k = frozen_count(ranking.size(), 0.25);
  return {LayerSelector::all(),
          LayerSelector::ila_bottom_frozen(ranking, 0.25),
          LayerSelector::random_frozen(k, random_seed_a),
          LayerSelector::random_frozen(k, random_seed_b),
          LayerSelector::first_frozen(k),
          LayerSelector::last_frozen(k),
          LayerSelector::ila_top(ranking, 0.1),
          LayerSelector::ila_top(ranking, 0.2),
          LayerSelector::ila_top(ranking, 0.3)};
}

std::vector<AblationRow> run_ablation_suite(const ModelParams& params, const BatchPlan& plan,
                                            const LayerRanking& ranking, AdapterMode mode,
                                            const FinetuneConfig& config) {
  std::vector<AblationRow> rows;
  for (const LayerSelector& s : ablation_selectors(ranking)) {
    FinetuneResult r = finetune_with_selector(params, plan, s, mode, config);
    rows.push_back(AblationRow{s.label(), r.trainable.size(), r.frozen.size(), r.metrics, r.steps,
                               r.seconds});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "selector,trainable_layers,frozen_layers,eval_loss,token_acc,steps,seconds\n";
  for (const AblationRow& r : rows) {
    out << r.selector << ',' << r.trainable_layers << ',' << r.frozen_layers << ','
        << shortest(r.metrics.loss) << ',' << shortest(r.metrics.token_accuracy) << ',' << r.steps
        << ',' << shortest(r.seconds) << '\n';
  }
  return out.str();
}

}  // namespace ila
