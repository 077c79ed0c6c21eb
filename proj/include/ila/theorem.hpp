// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Empirical check of the gate-step stability bound
//
//   || gamma'_t - gamma'_{t+1} ||  <=  beta_g (Q L2 + L1) R eps
//
// where gamma' is one gradient step on the gates from a shared starting gate
// vector, taken at two consecutive stable-phase states theta_t and theta_{t+1}.
// The constants are sampled maxima, i.e. lower bounds on the true constants,
// so a passing check is a failed falsification attempt and not a proof.
//
// A state is a set of per-layer deltas over a fixed base. Q is measured on
// the deltas, and the displacement between states is the delta difference.

#ifndef ILA_THEOREM_HPP_
#define ILA_THEOREM_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ila/adapters.hpp"
#include "ila/data.hpp"
#include "ila/ila_core.hpp"
#include "ila/model.hpp"
#include "json.hpp"

namespace ila {

using LayerVectors = std::vector<std::vector<double>>;  // one flat vector per gated layer

struct WeightGradient {
  double loss = 0.0;
  LayerVectors grad;  // d loss / d effective weight, per gated layer
};

// A loss over gated layers theta = base + gamma * delta_t.
class MaskedObjective {
 public:
  virtual ~MaskedObjective() = default;

  virtual std::size_t state_count() const = 0;
  virtual std::size_t batch_count() const = 0;
  virtual const LayerVectors& delta(std::size_t state) const = 0;

  // Loss on `batch` at base + displacement, with its weight gradient.
  virtual WeightGradient weight_gradient(const LayerVectors& displacement,
                                         std::size_t batch) const = 0;
  // Loss on `batch` at base + gates * delta(state), differentiated in the gates.
  virtual GateGradient gate_gradient(std::size_t state, std::span<const double> gates,
                                     std::size_t batch) const = 0;
  // Expected loss of the ungated state (all gates 1).
  virtual double expected_loss(std::size_t state) const = 0;
};

// The toy transformer with LoRA or dense deltas taken from checkpoints that
// share one base.
class TransformerObjective : public MaskedObjective {
 public:
  TransformerObjective(ModelParams base, std::vector<AdapterSet> states, std::vector<Batch> batches,
                       std::vector<Batch> probe);

  std::size_t state_count() const override { return states_.size(); }
  std::size_t batch_count() const override { return batches_.size(); }
  const LayerVectors& delta(std::size_t state) const override { return deltas_.at(state); }
  WeightGradient weight_gradient(const LayerVectors& displacement, std::size_t batch) const override;
  GateGradient gate_gradient(std::size_t state, std::span<const double> gates,
                             std::size_t batch) const override;
  double expected_loss(std::size_t state) const override;

 private:
  ModelParams base_;
  std::vector<AdapterSet> states_;
  std::vector<LayerVectors> deltas_;
  std::vector<Batch> batches_;
  std::vector<Batch> probe_;
};

// L(theta) = theta^2 / 2 in one dimension, base 0, one gated layer.
class QuadraticObjective : public MaskedObjective {
 public:
  explicit QuadraticObjective(std::vector<double> trajectory);

  std::size_t state_count() const override { return states_.size(); }
  std::size_t batch_count() const override { return 1; }
  const LayerVectors& delta(std::size_t state) const override { return states_.at(state); }
  WeightGradient weight_gradient(const LayerVectors& displacement, std::size_t batch) const override;
  GateGradient gate_gradient(std::size_t state, std::span<const double> gates,
                             std::size_t batch) const override;
  double expected_loss(std::size_t state) const override;

 private:
  std::vector<LayerVectors> states_;
};

struct ConstantEstimates {
  double l1_hat = 0.0;
  double l2_hat = 0.0;
  double q_hat = 0.0;
  double r_hat = 0.0;
  double eps_hat = 0.0;
  double max_displacement = 0.0;  // R_hat * eps_hat without the rounding
  std::size_t l1_samples = 0;
  std::size_t l2_samples = 0;
  std::size_t q_samples = 0;
  std::size_t r_samples = 0;
  std::size_t skipped_pairs = 0;
  std::vector<std::string> warnings;

  double step_bound() const { return max_displacement; }
};

struct EstimationOptions {
  std::size_t batches_per_pair = 2;
  std::size_t perturbations = 2;      // random-direction pairs per sampled point
  double perturbation_radius = 1e-3;  // relative to the point's norm
  std::uint64_t seed = 0;
};

using StatePair = std::pair<std::size_t, std::size_t>;

// Running maxima over `pairs` of consecutive states, evaluated at the shared
// gate vector.
ConstantEstimates estimate_constants(const MaskedObjective& objective,
                                     const std::vector<StatePair>& pairs,
                                     std::span<const double> gates,
                                     const EstimationOptions& options = {});

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;  // lhs / rhs, 0 when both vanish
  bool holds = true;
};

double bound_rhs(const ConstantEstimates& c, double beta_g);

BoundCheck check_gate_step_bound(const MaskedObjective& objective, StatePair pair,
                                 std::span<const double> gates, std::size_t batch, double beta_g,
                                 const ConstantEstimates& estimates);

// The gate-gradient difference splits as
//   <delta_t, g_t - g_{t+1}>  +  <delta_t - delta_{t+1}, g_{t+1}>
// per layer, with g the weight gradient at the gated points.
struct ProofTerms {
  double gradient_gap = 0.0;  // || grad_gamma L_t - grad_gamma L_{t+1} ||
  double term_curvature = 0.0;
  double term_displacement = 0.0;
  double displacement = 0.0;  // || delta_t - delta_{t+1} ||
  double bound_curvature = 0.0;      // Q L2 ||displacement||
  double bound_displacement = 0.0;   // L1 ||displacement||
  double bound_step = 0.0;           // R eps
  double split_residual = 0.0;  // gap between the split and the direct gate gradient
  bool curvature_holds = true;
  bool displacement_term_holds = true;
  bool step_holds = true;
  bool triangle_holds = true;
};

ProofTerms check_proof_intermediates(const MaskedObjective& objective, StatePair pair,
                                     std::span<const double> gates, std::size_t batch,
                                     const ConstantEstimates& estimates);

struct TheoremRow {
  std::size_t step = 0;  // index of the first state of the pair
  bool held_out = false;
  BoundCheck bound;
  ProofTerms terms;
};

struct TheoremReport {
  ConstantEstimates estimates;
  double beta_g = 0.0;
  std::vector<TheoremRow> rows;
  double held_out_rate = 1.0;  // fraction of held-out rows whose bound holds
  double intermediate_rate = 1.0;  // fraction of held-out rows whose proof terms all hold
  bool r_hat_unstable = false;
};

// Estimates the constants on even consecutive pairs (0,1), (2,3), ... and
// checks every pair; odd pairs are reported as held out. With a single pair
// the estimate and the check share it.
TheoremReport verify_theorem(const MaskedObjective& objective, std::span<const double> gates,
                             double beta_g, const EstimationOptions& options = {});

// Columns step, lhs, rhs, ratio, holds.
std::string theorem_report_csv(const TheoremReport& report);
nlohmann::json theorem_summary_json(const TheoremReport& report);

}  // namespace ila

#endif  // ILA_THEOREM_HPP_
