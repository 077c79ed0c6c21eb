// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage importance learning.
//
// Stage 1 fine-tunes deltas (LoRA pairs, or dense deltas plus embeddings and
// norm gains in FFT mode) with AdamW until a StabilityMonitor reports that the
// probe loss has stopped moving. Stage 2 freezes everything and learns one
// score s_i per adapted layer by plain gradient descent on the loss of the
// gated model theta0 + sigmoid(s_i) * delta_i.

#ifndef ILA_ILA_CORE_HPP_
#define ILA_ILA_CORE_HPP_

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "ila/adapters.hpp"
#include "ila/data.hpp"
#include "ila/errors.hpp"
#include "ila/model.hpp"

namespace ila {

struct OptimizerConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 0.1;
  double warmup_ratio = 0.01;
  double adam_eps = 1e-8;
  int max_steps = 800;  // cosine horizon and hard stop

  void validate() const;
  // Linear warmup over ceil(warmup_ratio * max_steps) steps, then cosine to 0.
  double rate_at(int step) const;
};

// Stage-1 settings per adapter mode. LoRA: lr 2e-3, weight decay 2.0.
// FFT: lr 5e-4, weight decay 0.1 on the full weight.
OptimizerConfig stage1_defaults(AdapterMode mode);

struct StabilityConfig {
  double epsilon = 1e-3;
  bool relative = true;  // epsilon scales with the first probe loss
  int window = 20;
  int probe_interval = 10;  // training steps between probe evaluations

  void validate() const;
};

// Declares stability after `window` consecutive probe-loss deltas below
// epsilon. The first observation is the baseline and produces no delta.
class StabilityMonitor {
 public:
  explicit StabilityMonitor(StabilityConfig config);

  // Returns true once stable (and stays true).
  bool observe(double probe_loss);

  bool stable() const { return stable_; }
  double epsilon() const { return epsilon_; }
  int consecutive() const { return consecutive_; }
  const std::vector<double>& history() const { return history_; }

 private:
  StabilityConfig config_;
  double epsilon_ = std::numeric_limits<double>::quiet_NaN();
  int consecutive_ = 0;
  bool stable_ = false;
  std::vector<double> history_;
};

struct IlaConfig {
  OptimizerConfig stage1 = stage1_defaults(AdapterMode::kLora);
  StabilityConfig stability;
  std::uint64_t data_seed = 0;  // stage-1 batch order
  double s0 = 4.0;
  int stage2_batches = 128;
  double stage2_step = 1e-2;
  std::uint64_t stage2_seed = 0;  // stage-2 batch order

  void validate() const;
};

struct ProbePoint {
  int step = 0;
  double loss = 0.0;
};

struct Metrics {
  double loss = 0.0;
  double token_accuracy = 0.0;
};

// Mean cross-entropy and token accuracy over `batches`, evaluated in parallel
// when ILA_THREADS > 1 and reduced in batch order.
Metrics evaluate(const ModelParams& params, const AdapterSet* deltas,
                 std::span<const double> gates, const std::vector<Batch>& batches);

// AdamW over a fixed list of parameter tensors. Decay is decoupled; a slot
// may carry an anchor so that decay acts on (anchor + value), which is how a
// dense delta decays as the full weight it represents.
class AdamW {
 public:
  struct Slot {
    Tensor* value;
    const Tensor* decay_anchor = nullptr;
    bool decay = true;
  };

  AdamW(OptimizerConfig config, std::vector<Slot> slots);
  void step(std::span<const Tensor> grads, int step_index);

 private:
  OptimizerConfig config_;
  std::vector<Slot> slots_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int t_ = 0;
};

// Stage-1 state machine. LoRA mode trains B and A; FFT mode trains the dense
// deltas and, when train_aux is set, embeddings and norm gains.
class Trainer {
 public:
  Trainer(ModelParams params, AdapterSet adapters, const BatchPlan& plan, OptimizerConfig config,
          std::uint64_t data_seed, bool train_aux);

  // One optimizer update; returns the training-batch loss before the update.
  double step();
  double probe_loss() const;

  int steps_done() const { return steps_; }
  const ModelParams& params() const { return params_; }
  const AdapterSet& adapters() const { return adapters_; }

 private:
  ModelParams params_;
  AdapterSet adapters_;
  const BatchPlan* plan_;
  OptimizerConfig config_;
  BatchStream stream_;
  bool train_aux_;
  std::optional<AdamW> optimizer_;
  int steps_ = 0;
};

class NotStableError : public Error {
 public:
  NotStableError(const std::string& what, std::vector<ProbePoint> trace)
      : Error(ErrorKind::kNotStable, what), trace_(std::move(trace)) {}
  const std::vector<ProbePoint>& trace() const { return trace_; }

 private:
  std::vector<ProbePoint> trace_;
};

struct StageOneResult {
  ModelParams params;  // FFT mode: carries trained embeddings and norms
  AdapterSet adapters;
  int stop_step = 0;
  std::vector<ProbePoint> trace;
};

// Called after every update with the step count and the current state.
using StepObserver = std::function<void(int, const ModelParams&, const AdapterSet&)>;

StageOneResult train_until_stable(const ModelParams& params, AdapterSet adapters,
                                  const BatchPlan& plan, StabilityMonitor& monitor,
                                  const IlaConfig& config, const StepObserver& observer = {});

struct ImportanceScores {
  std::vector<LayerId> layers;
  std::vector<double> scores;
  double s0 = 0.0;
  double step_size = 0.0;
  int steps = 0;

  std::vector<double> gates() const;
};

struct GateGradient {
  double loss = 0.0;
  std::vector<double> grad;  // aligned with adapters.layers()
};

// Loss and d loss / d s_i through gate_i = sigmoid(s_i).
GateGradient score_gradient(const ModelParams& params, const AdapterSet& adapters,
                            std::span<const double> scores, const Batch& batch);

// Loss and d loss / d gamma_i with gates taken directly.
GateGradient gate_gradient(const ModelParams& params, const AdapterSet& adapters,
                           std::span<const double> gates, const Batch& batch);

// s <- s - step_size * grad_s, one batch. Throws NumericError on a non-finite
// loss or gradient.
ImportanceScores gate_gradient_step(const ImportanceScores& scores, const ModelParams& params,
                                    const AdapterSet& adapters, const Batch& batch,
                                    double step_size);

ImportanceScores learn_importance(const ModelParams& params, const AdapterSet& adapters,
                                  const BatchPlan& plan, const IlaConfig& config);

}  // namespace ila

#endif  // ILA_ILA_CORE_HPP_
