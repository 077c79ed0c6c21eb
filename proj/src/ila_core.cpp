// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/ila_core.hpp"

#include <cmath>
#include <cstdlib>
#include <future>
#include <numbers>
#include <string>

#include "ila/ops.hpp"
#include "ila/tensor.hpp"

namespace ila {
namespace {

std::size_t worker_threads() {
  const char* env = std::getenv("ILA_THREADS");
  if (env == nullptr) return 1;
  const long n = std::strtol(env, nullptr, 10);
  return n > 1 ? static_cast<std::size_t>(n) : 1;
}

struct BatchTally {
  double loss_sum = 0.0;  // summed over counted targets
  std::size_t counted = 0;
  std::size_t correct = 0;
};

BatchTally tally(const ModelParams& effective, const Batch& batch) {
  Tensor logits = forward(effective, nullptr, {}, batch.tokens);
  Tensor loss = ops::softmax_cross_entropy(logits, batch.targets);
  BatchTally t;
  const std::size_t v = logits.cols();
  auto x = logits.data();
  for (std::size_t r = 0; r < batch.targets.size(); ++r) {
    const int target = batch.targets[r];
    if (target == ops::kIgnoreTarget) continue;
    ++t.counted;
    const double* row = x.data() + r * v;
    std::size_t best = 0;
    for (std::size_t c = 1; c < v; ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (best == static_cast<std::size_t>(target)) ++t.correct;
  }
  t.loss_sum = loss.item() * static_cast<double>(t.counted);
  return t;
}

void require_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) throw NumericError(what + " is not finite (" + std::to_string(value) + ")");
}

// Gradient of the batch loss with respect to per-layer gate parameters, with
// every weight, delta and auxiliary tensor held constant.
GateGradient gated_gradient(const ModelParams& params, const AdapterSet& adapters,
                            const std::vector<Tensor>& deltas, std::span<const double> values,
                            bool through_sigmoid, const Batch& batch) {
  if (values.size() != adapters.size()) {
    throw ContractError("got " + std::to_string(values.size()) + " gate values for " +
                        std::to_string(adapters.size()) + " adapted layers");
  }
  Tape tape;
  WeightView view = view_of(params);
  std::vector<Tensor> leaves;
  leaves.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t idx = layer_index(params.config, adapters.layers()[i]);
    leaves.push_back(tape.leaf(Tensor::scalar(values[i])));
    Tensor gate = through_sigmoid ? ops::sigmoid(leaves.back()) : leaves.back();
    view.linear[idx] = ops::add(view.linear[idx], ops::mul(gate, deltas[i]));
  }
  Tensor loss = ops::softmax_cross_entropy(forward_view(params.config, view, batch.tokens),
                                           batch.targets);
  Gradients grads = Tape::backward(loss);
  GateGradient out;
  out.loss = loss.item();
  out.grad.reserve(leaves.size());
  for (const Tensor& leaf : leaves) out.grad.push_back(grads.of(leaf).item());
  return out;
}

std::vector<Tensor> materialize_all(const AdapterSet& adapters) {
  std::vector<Tensor> out;
  out.reserve(adapters.size());
  for (std::size_t i = 0; i < adapters.size(); ++i) out.push_back(materialize_delta(adapters, i));
  return out;
}

void descend(ImportanceScores& scores, const GateGradient& g, double step_size, std::size_t batch_id) {
  const std::string where = "stage-2 step " + std::to_string(scores.steps) + " (batch " +
                            std::to_string(batch_id) + ")";
  require_finite(g.loss, "loss at " + where);
  for (std::size_t i = 0; i < g.grad.size(); ++i) {
    require_finite(g.grad[i], "score gradient of " + scores.layers[i].str() + " at " + where);
    scores.scores[i] -= step_size * g.grad[i];
  }
  ++scores.steps;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup ratio must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("AdamW epsilon must be > 0");
  if (max_steps < 1) throw ConfigError("max steps must be >= 1");
}

double OptimizerConfig::rate_at(int step) const {
  const int warmup = static_cast<int>(std::ceil(warmup_ratio * max_steps));
  if (step < warmup) return lr * static_cast<double>(step + 1) / warmup;
  const double span = std::max(1, max_steps - warmup);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void StabilityConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("stability epsilon must be > 0");
  if (window < 1) throw ConfigError("stability window must be >= 1");
  if (probe_interval < 1) throw ConfigError("probe interval must be >= 1");
}

StabilityMonitor::StabilityMonitor(StabilityConfig config) : config_(config) {
  config_.validate();
  if (!config_.relative) epsilon_ = config_.epsilon;
}

bool StabilityMonitor::observe(double probe_loss) {
  require_finite(probe_loss, "probe loss");
  if (history_.empty() && config_.relative) epsilon_ = config_.epsilon * std::abs(probe_loss);
  if (!history_.empty() && !stable_) {
    if (std::abs(probe_loss - history_.back()) < epsilon_) {
      ++consecutive_;
    } else {
      consecutive_ = 0;
    }
    if (consecutive_ >= config_.window) stable_ = true;
  }
  history_.push_back(probe_loss);
  return stable_;
}

OptimizerConfig stage1_defaults(AdapterMode mode) {
  OptimizerConfig c;
  if (mode == AdapterMode::kLora) {
    c.lr = 2e-3;
    c.weight_decay = 2.0;
  } else {
    c.lr = 5e-4;
    c.weight_decay = 0.1;
  }
  return c;
}

void IlaConfig::validate() const {
  stage1.validate();
  stability.validate();
  if (!std::isfinite(s0)) throw ConfigError("initial score must be finite");
  if (stage2_batches < 1) throw ConfigError("stage-2 batch count must be >= 1");
  if (!(stage2_step >= 0.0)) throw ConfigError("stage-2 step size must be >= 0");
}

Metrics evaluate(const ModelParams& params, const AdapterSet* deltas, std::span<const double> gates,
                 const std::vector<Batch>& batches) {
  ModelParams effective = params;
  if (deltas != nullptr) {
    effective = gates.empty() ? merge_all(params, *deltas) : apply_masked(params, *deltas, gates);
  }
  std::vector<BatchTally> tallies(batches.size());
  const std::size_t threads = std::min(worker_threads(), batches.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < batches.size(); ++i) tallies[i] = tally(effective, batches[i]);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < threads; ++w) {
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < batches.size(); i += threads) {
          tallies[i] = tally(effective, batches[i]);
        }
      }));
    }
    for (auto& j : jobs) j.get();
  }
  double loss = 0.0;
  std::size_t counted = 0, correct = 0;
  for (const BatchTally& t : tallies) {
    loss += t.loss_sum;
    counted += t.counted;
    correct += t.correct;
  }
  if (counted == 0) return Metrics{};
  return Metrics{loss / static_cast<double>(counted),
                 static_cast<double>(correct) / static_cast<double>(counted)};
}

AdamW::AdamW(OptimizerConfig config, std::vector<Slot> slots)
    : config_(config), slots_(std::move(slots)) {
  for (const Slot& s : slots_) {
    m_.emplace_back(s.value->size(), 0.0);
    v_.emplace_back(s.value->size(), 0.0);
  }
}

void AdamW::step(std::span<const Tensor> grads, int step_index) {
  if (grads.size() != slots_.size()) throw ContractError("AdamW: one gradient per slot");
  ++t_;
  const double lr = config_.rate_at(step_index);
  const double c1 = 1.0 - std::pow(config_.beta1, t_);
  const double c2 = 1.0 - std::pow(config_.beta2, t_);
  for (std::size_t s = 0; s < slots_.size(); ++s) {
    auto w = slots_[s].value->mutable_data();
    auto g = grads[s].data();
    auto& m = m_[s];
    auto& v = v_[s];
    const double decay = slots_[s].decay ? lr * config_.weight_decay : 0.0;
    std::span<const double> anchor;
    if (slots_[s].decay_anchor != nullptr) anchor = slots_[s].decay_anchor->data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double full = anchor.empty() ? w[i] : anchor[i] + w[i];
      w[i] -= decay * full + lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_eps);
    }
  }
}

Trainer::Trainer(ModelParams params, AdapterSet adapters, const BatchPlan& plan,
                 OptimizerConfig config, std::uint64_t data_seed, bool train_aux)
    : params_(std::move(params)),
      adapters_(std::move(adapters)),
      plan_(&plan),
      config_(config),
      stream_(plan.train, data_seed),
      train_aux_(train_aux) {
  config_.validate();
  check_adapter_shapes(params_, adapters_);
  std::vector<AdamW::Slot> slots;
  for (std::size_t i = 0; i < adapters_.size(); ++i) {
    if (adapters_.mode() == AdapterMode::kLora) {
      slots.push_back({&adapters_.pair(i).b});
      slots.push_back({&adapters_.pair(i).a});
    } else {
      slots.push_back({&adapters_.dense(i), &params_.weight(adapters_.layers()[i])});
    }
  }
  if (train_aux_) {
    slots.push_back({&params_.tok_embedding, nullptr, false});
    slots.push_back({&params_.pos_embedding, nullptr, false});
    for (BlockNorms& n : params_.norms) {
      slots.push_back({&n.attn, nullptr, false});
      slots.push_back({&n.ffn, nullptr, false});
    }
    slots.push_back({&params_.final_norm, nullptr, false});
  }
  optimizer_.emplace(config_, std::move(slots));
}

double Trainer::step() {
  const Batch& batch = stream_.at(static_cast<std::size_t>(steps_));
  std::vector<Tensor> grads;
  double loss_value = 0.0;
  {
    Tape tape;
    WeightView view = view_of(params_);
    std::vector<Tensor> leaves;
    for (std::size_t i = 0; i < adapters_.size(); ++i) {
      const std::size_t idx = layer_index(params_.config, adapters_.layers()[i]);
      Tensor delta;
      if (adapters_.mode() == AdapterMode::kLora) {
        Tensor b = tape.leaf(adapters_.pair(i).b);
        Tensor a = tape.leaf(adapters_.pair(i).a);
        leaves.push_back(b);
        leaves.push_back(a);
        delta = ops::scale(ops::matmul(b, a), adapters_.scale());
      } else {
        delta = tape.leaf(adapters_.dense(i));
        leaves.push_back(delta);
      }
      view.linear[idx] = ops::add(view.linear[idx], delta);
    }
    if (train_aux_) {
      view.tok_embedding = tape.leaf(params_.tok_embedding);
      view.pos_embedding = tape.leaf(params_.pos_embedding);
      leaves.push_back(view.tok_embedding);
      leaves.push_back(view.pos_embedding);
      for (BlockNorms& n : view.norms) {
        n.attn = tape.leaf(n.attn);
        n.ffn = tape.leaf(n.ffn);
        leaves.push_back(n.attn);
        leaves.push_back(n.ffn);
      }
      view.final_norm = tape.leaf(view.final_norm);
      leaves.push_back(view.final_norm);
    }
    Tensor loss = ops::softmax_cross_entropy(forward_view(params_.config, view, batch.tokens),
                                             batch.targets);
    loss_value = loss.item();
    require_finite(loss_value, "training loss at step " + std::to_string(steps_) + " (batch " +
                                   std::to_string(batch.id) + ")");
    Gradients g = Tape::backward(loss);
    grads.reserve(leaves.size());
    for (const Tensor& leaf : leaves) grads.push_back(g.of(leaf));
  }
  optimizer_->step(grads, steps_);
  ++steps_;
  return loss_value;
}

double Trainer::probe_loss() const {
  return evaluate(params_, &adapters_, {}, plan_->probe).loss;
}

StageOneResult train_until_stable(const ModelParams& params, AdapterSet adapters,
                                  const BatchPlan& plan, StabilityMonitor& monitor,
                                  const IlaConfig& config, const StepObserver& observer) {
  config.validate();
  if (plan.probe.empty()) throw ContractError("stability monitoring needs probe batches");
  const bool fft = adapters.mode() == AdapterMode::kFft;
  Trainer trainer(params, std::move(adapters), plan, config.stage1, config.data_seed, fft);

  std::vector<ProbePoint> trace;
  auto probe = [&] {
    const double loss = trainer.probe_loss();
    trace.push_back({trainer.steps_done(), loss});
    return monitor.observe(loss);
  };
  probe();
  while (trainer.steps_done() < config.stage1.max_steps) {
    trainer.step();
    if (observer) observer(trainer.steps_done(), trainer.params(), trainer.adapters());
    if (trainer.steps_done() % config.stability.probe_interval != 0) continue;
    if (probe()) {
      return StageOneResult{trainer.params(), trainer.adapters(), trainer.steps_done(),
                            std::move(trace)};
    }
  }
  throw NotStableError("training did not become stable within " +
                           std::to_string(config.stage1.max_steps) + " steps",
                       std::move(trace));
}

std::vector<double> ImportanceScores::gates() const {
  std::vector<double> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(ops::kernels::sigmoid(s));
  return out;
}

GateGradient score_gradient(const ModelParams& params, const AdapterSet& adapters,
                            std::span<const double> scores, const Batch& batch) {
  return gated_gradient(params, adapters, materialize_all(adapters), scores, true, batch);
}

GateGradient gate_gradient(const ModelParams& params, const AdapterSet& adapters,
                           std::span<const double> gates, const Batch& batch) {
  for (double g : gates) {
    if (!(g >= 0.0 && g <= 1.0)) throw ContractError("gate value " + std::to_string(g) + " outside [0, 1]");
  }
  return gated_gradient(params, adapters, materialize_all(adapters), gates, false, batch);
}

ImportanceScores gate_gradient_step(const ImportanceScores& scores, const ModelParams& params,
                                    const AdapterSet& adapters, const Batch& batch,
                                    double step_size) {
  ImportanceScores out = scores;
  descend(out, score_gradient(params, adapters, scores.scores, batch), step_size, batch.id);
  return out;
}

ImportanceScores learn_importance(const ModelParams& params, const AdapterSet& adapters,
                                  const BatchPlan& plan, const IlaConfig& config) {
  config.validate();
  ImportanceScores scores;
  scores.layers = adapters.layers();
  scores.scores.assign(adapters.size(), config.s0);
  scores.s0 = config.s0;
  scores.step_size = config.stage2_step;

  const std::vector<Tensor> deltas = materialize_all(adapters);
  BatchStream stream(plan.train, config.stage2_seed);
  for (int k = 0; k < config.stage2_batches; ++k) {
    const Batch& batch = stream.at(static_cast<std::size_t>(k));
    descend(scores, gated_gradient(params, adapters, deltas, scores.scores, true, batch),
            config.stage2_step, batch.id);
  }
  return scores;
}

}  // namespace ila
