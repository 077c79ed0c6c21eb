// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/theorem.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ila/errors.hpp"
#include "ila/format.hpp"
#include "ila/ops.hpp"

namespace ila {
namespace {

double norm(const LayerVectors& v) {
  double s = 0.0;
  for (const auto& layer : v) {
    for (double x : layer) s += x * x;
  }
  return std::sqrt(s);
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// a + alpha * b, layer by layer.
LayerVectors axpy(const LayerVectors& a, double alpha, const LayerVectors& b) {
  LayerVectors out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += alpha * b[i][j];
  }
  return out;
}

LayerVectors gated(const LayerVectors& delta, std::span<const double> gates) {
  if (gates.size() != delta.size()) {
    throw ContractError("got " + std::to_string(gates.size()) + " gates for " +
                        std::to_string(delta.size()) + " layers");
  }
  LayerVectors out = delta;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (double& x : out[i]) x *= gates[i];
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_finite(const WeightGradient& g) {
  if (!std::isfinite(g.loss) || !std::isfinite(norm(g.grad))) {
    throw NumericError("non-finite loss or weight gradient in theorem check");
  }
}

void require_finite(const GateGradient& g) {
  if (!std::isfinite(g.loss) || !std::isfinite(norm(g.grad))) {
    throw NumericError("non-finite gate gradient in theorem check");
  }
}

void check_pair(const MaskedObjective& objective, StatePair pair) {
  if (pair.first >= objective.state_count() || pair.second >= objective.state_count()) {
    throw LookupError("state pair out of range");
  }
}

}  // namespace

TransformerObjective::TransformerObjective(ModelParams base, std::vector<AdapterSet> states,
                                           std::vector<Batch> batches, std::vector<Batch> probe)
    : base_(std::move(base)),
      states_(std::move(states)),
      batches_(std::move(batches)),
      probe_(std::move(probe)) {
  if (states_.empty()) throw ContractError("no states");
  if (batches_.empty() || probe_.empty()) throw ContractError("theorem checks need batches");
  for (const AdapterSet& s : states_) {
    check_adapter_shapes(base_, s);
    if (s.layers() != states_.front().layers()) {
      throw ContractError("all states must adapt the same layers");
    }
    LayerVectors d;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const Tensor delta = materialize_delta(s, i);
      d.emplace_back(delta.data().begin(), delta.data().end());
    }
    deltas_.push_back(std::move(d));
  }
}

WeightGradient TransformerObjective::weight_gradient(const LayerVectors& displacement,
                                                     std::size_t batch) const {
  const std::vector<LayerId>& layers = states_.front().layers();
  if (displacement.size() != layers.size()) throw ContractError("displacement size mismatch");
  Tape tape;
  WeightView view = view_of(base_);
  std::vector<Tensor> leaves;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::size_t idx = layer_index(base_.config, layers[i]);
    const Tensor& w0 = base_.linear[idx];
    std::vector<double> w(w0.data().begin(), w0.data().end());
    if (displacement[i].size() != w.size()) throw ContractError("displacement size mismatch");
    for (std::size_t j = 0; j < w.size(); ++j) w[j] += displacement[i][j];
    leaves.push_back(tape.leaf(Tensor(w0.shape(), std::move(w))));
    view.linear[idx] = leaves.back();
  }
  const Batch& b = batches_.at(batch);
  Tensor loss = ops::softmax_cross_entropy(forward_view(base_.config, view, b.tokens), b.targets);
  Gradients grads = Tape::backward(loss);
  WeightGradient out;
  out.loss = loss.item();
  for (const Tensor& leaf : leaves) {
    auto g = grads.of(leaf).data();
    out.grad.emplace_back(g.begin(), g.end());
  }
  return out;
}

GateGradient TransformerObjective::gate_gradient(std::size_t state, std::span<const double> gates,
                                                 std::size_t batch) const {
  return ila::gate_gradient(base_, states_.at(state), gates, batches_.at(batch));
}

double TransformerObjective::expected_loss(std::size_t state) const {
  return evaluate(base_, &states_.at(state), {}, probe_).loss;
}

QuadraticObjective::QuadraticObjective(std::vector<double> trajectory) {
  if (trajectory.empty()) throw ContractError("empty trajectory");
  for (double x : trajectory) states_.push_back(LayerVectors{{x}});
}

WeightGradient QuadraticObjective::weight_gradient(const LayerVectors& displacement,
                                                   std::size_t) const {
  const double x = displacement.at(0).at(0);
  return WeightGradient{0.5 * x * x, LayerVectors{{x}}};
}

GateGradient QuadraticObjective::gate_gradient(std::size_t state, std::span<const double> gates,
                                               std::size_t) const {
  const double d = states_.at(state)[0][0];
  const double g = gates[0];
  return GateGradient{0.5 * g * d * g * d, {g * d * d}};
}

double QuadraticObjective::expected_loss(std::size_t state) const {
  const double x = states_.at(state)[0][0];
  return 0.5 * x * x;
}

ConstantEstimates estimate_constants(const MaskedObjective& objective,
                                     const std::vector<StatePair>& pairs,
                                     std::span<const double> gates,
                                     const EstimationOptions& options) {
  if (pairs.empty()) throw ContractError("constant estimation needs at least one state pair");
  if (objective.batch_count() == 0) throw ContractError("constant estimation needs batches");
  ConstantEstimates c;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double max_displacement = 0.0;

  auto quotient_l1 = [&](double num, double den) {
    if (den > 0.0) c.l1_hat = std::max(c.l1_hat, num / den);
    ++c.l1_samples;
  };
  auto quotient_l2 = [&](double num, double den) {
    if (den > 0.0) c.l2_hat = std::max(c.l2_hat, num / den);
    ++c.l2_samples;
  };

  for (std::size_t p = 0; p < pairs.size(); ++p) {
    check_pair(objective, pairs[p]);
    const LayerVectors& da = objective.delta(pairs[p].first);
    const LayerVectors& db = objective.delta(pairs[p].second);
    c.q_hat = std::max({c.q_hat, norm(da), norm(db)});
    c.q_samples += 2;

    const double loss_gap =
        std::abs(objective.expected_loss(pairs[p].second) - objective.expected_loss(pairs[p].first));
    c.eps_hat = std::max(c.eps_hat, loss_gap);
    const double displacement = norm(axpy(db, -1.0, da));
    max_displacement = std::max(max_displacement, displacement);
    ++c.r_samples;

    const LayerVectors xa = gated(da, gates);
    const LayerVectors xb = gated(db, gates);
    const double masked_distance = norm(axpy(xb, -1.0, xa));
    if (displacement == 0.0 || masked_distance == 0.0) {
      ++c.skipped_pairs;
      c.warnings.push_back("states " + std::to_string(pairs[p].first) + " and " +
                           std::to_string(pairs[p].second) +
                           " coincide at the gated point; pair skipped for L1 and L2");
      continue;
    }

    for (std::size_t k = 0; k < options.batches_per_pair; ++k) {
      const std::size_t batch = (p * options.batches_per_pair + k) % objective.batch_count();
      const WeightGradient ga = objective.weight_gradient(xa, batch);
      const WeightGradient gb = objective.weight_gradient(xb, batch);
      require_finite(ga);
      require_finite(gb);
      quotient_l1(std::abs(ga.loss - gb.loss), masked_distance);
      quotient_l1(norm(ga.grad), 1.0);
      quotient_l1(norm(gb.grad), 1.0);
      quotient_l2(norm(axpy(ga.grad, -1.0, gb.grad)), masked_distance);

      const double radius = options.perturbation_radius * std::max(norm(xa), 1.0);
      for (std::size_t j = 0; j < options.perturbations; ++j) {
        LayerVectors u = xa;
        for (auto& layer : u) {
          for (double& x : layer) x = normal(rng);
        }
        const double scale = radius / norm(u);
        const LayerVectors xp = axpy(xa, scale, u);
        const double h = norm(axpy(xp, -1.0, xa));
        const WeightGradient gp = objective.weight_gradient(xp, batch);
        require_finite(gp);
        quotient_l1(std::abs(gp.loss - ga.loss), h);
        quotient_l2(norm(axpy(gp.grad, -1.0, ga.grad)), h);
      }
    }
  }

  c.max_displacement = max_displacement;
  if (max_displacement == 0.0) {
    c.r_hat = 0.0;
  } else if (c.eps_hat == 0.0) {
    c.r_hat = std::numeric_limits<double>::infinity();
    c.warnings.push_back("states moved without changing the expected loss; R is unbounded");
  } else {
    c.r_hat = max_displacement / c.eps_hat;
  }
  return c;
}

double bound_rhs(const ConstantEstimates& c, double beta_g) {
  return beta_g * (c.q_hat * c.l2_hat + c.l1_hat) * c.step_bound();
}

BoundCheck check_gate_step_bound(const MaskedObjective& objective, StatePair pair,
                                 std::span<const double> gates, std::size_t batch, double beta_g,
                                 const ConstantEstimates& estimates) {
  check_pair(objective, pair);
  if (!(beta_g >= 0.0)) throw ConfigError("gate step size must be >= 0");
  const GateGradient ga = objective.gate_gradient(pair.first, gates, batch);
  const GateGradient gb = objective.gate_gradient(pair.second, gates, batch);
  require_finite(ga);
  require_finite(gb);
  std::vector<double> gap(gates.size());
  for (std::size_t i = 0; i < gates.size(); ++i) {
    const double next_a = gates[i] - beta_g * ga.grad[i];
    const double next_b = gates[i] - beta_g * gb.grad[i];
    gap[i] = next_a - next_b;
  }
  BoundCheck out;
  out.lhs = norm(gap);
  out.rhs = bound_rhs(estimates, beta_g);
  out.holds = out.lhs <= out.rhs;
  out.ratio = out.rhs > 0.0 ? out.lhs / out.rhs
                            : (out.lhs == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
  return out;
}

ProofTerms check_proof_intermediates(const MaskedObjective& objective, StatePair pair,
                                     std::span<const double> gates, std::size_t batch,
                                     const ConstantEstimates& estimates) {
  check_pair(objective, pair);
  const LayerVectors& da = objective.delta(pair.first);
  const LayerVectors& db = objective.delta(pair.second);
  const WeightGradient ga = objective.weight_gradient(gated(da, gates), batch);
  const WeightGradient gb = objective.weight_gradient(gated(db, gates), batch);
  require_finite(ga);
  require_finite(gb);
  const GateGradient direct_a = objective.gate_gradient(pair.first, gates, batch);
  const GateGradient direct_b = objective.gate_gradient(pair.second, gates, batch);

  const std::size_t n = da.size();
  std::vector<double> curvature(n), shift(n), split(n), direct(n), residual(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> dg(ga.grad[i].size()), dd(da[i].size());
    for (std::size_t j = 0; j < dg.size(); ++j) {
      dg[j] = ga.grad[i][j] - gb.grad[i][j];
      dd[j] = da[i][j] - db[i][j];
    }
    curvature[i] = dot(da[i], dg);
    shift[i] = dot(dd, gb.grad[i]);
    split[i] = curvature[i] + shift[i];
    direct[i] = direct_a.grad[i] - direct_b.grad[i];
    residual[i] = split[i] - direct[i];
  }

  ProofTerms t;
  t.gradient_gap = norm(direct);
  t.term_curvature = norm(curvature);
  t.term_displacement = norm(shift);
  t.displacement = norm(axpy(da, -1.0, db));
  t.bound_curvature = estimates.q_hat * estimates.l2_hat * t.displacement;
  t.bound_displacement = estimates.l1_hat * t.displacement;
  t.bound_step = estimates.step_bound();
  t.split_residual = norm(residual);
  t.curvature_holds = t.term_curvature <= t.bound_curvature;
  t.displacement_term_holds = t.term_displacement <= t.bound_displacement;
  t.step_holds = t.displacement <= t.bound_step;
  const double sum = t.term_curvature + t.term_displacement;
  t.triangle_holds = norm(split) <= sum * (1.0 + 1e-12);
  return t;
}

TheoremReport verify_theorem(const MaskedObjective& objective, std::span<const double> gates,
                             double beta_g, const EstimationOptions& options) {
  const std::size_t k = objective.state_count();
  if (k < 2) throw ContractError("theorem checks need at least two consecutive states");
  std::vector<StatePair> all, estimation;
  for (std::size_t t = 0; t + 1 < k; ++t) {
    all.push_back({t, t + 1});
    if (t % 2 == 0) estimation.push_back({t, t + 1});
  }
  const bool shared = all.size() == 1;

  TheoremReport report;
  report.beta_g = beta_g;
  report.estimates = estimate_constants(objective, estimation, gates, options);

  std::size_t held = 0, held_ok = 0, held_terms_ok = 0;
  for (std::size_t p = 0; p < all.size(); ++p) {
    TheoremRow row;
    row.step = all[p].first;
    row.held_out = !shared && p % 2 == 1;
    const std::size_t batch = p % objective.batch_count();
    row.bound = check_gate_step_bound(objective, all[p], gates, batch, beta_g, report.estimates);
    row.terms = check_proof_intermediates(objective, all[p], gates, batch, report.estimates);
    if (row.held_out || shared) {
      ++held;
      held_ok += row.bound.holds ? 1 : 0;
      const ProofTerms& t = row.terms;
      held_terms_ok +=
          (t.curvature_holds && t.displacement_term_holds && t.step_holds && t.triangle_holds) ? 1 : 0;
    }
    report.rows.push_back(std::move(row));
  }
  if (held > 0) {
    report.held_out_rate = static_cast<double>(held_ok) / static_cast<double>(held);
    report.intermediate_rate = static_cast<double>(held_terms_ok) / static_cast<double>(held);
  }

  // R estimated separately on the two halves of the estimation pairs.
  if (estimation.size() >= 4) {
    std::vector<double> r(2, 0.0);
    const std::size_t half = estimation.size() / 2;
    for (int w = 0; w < 2; ++w) {
      double disp = 0.0, eps = 0.0;
      for (std::size_t p = w == 0 ? 0 : half; p < (w == 0 ? half : estimation.size()); ++p) {
        const auto [a, b] = estimation[p];
        disp = std::max(disp, norm(axpy(objective.delta(b), -1.0, objective.delta(a))));
        eps = std::max(eps, std::abs(objective.expected_loss(b) - objective.expected_loss(a)));
      }
      r[w] = eps > 0.0 ? disp / eps : 0.0;
    }
    const double lo = std::min(r[0], r[1]), hi = std::max(r[0], r[1]);
    report.r_hat_unstable = hi > 0.0 && (lo == 0.0 || hi / lo > 2.0);
    if (report.r_hat_unstable) {
      report.estimates.warnings.push_back("R estimate differs by more than 2x between windows (" +
                                          shortest(r[0]) + " vs " + shortest(r[1]) + ")");
    }
  }
  return report;
}

std::string theorem_report_csv(const TheoremReport& report) {
  std::ostringstream out;
  out << "step,lhs,rhs,ratio,holds\n";
  for (const TheoremRow& r : report.rows) {
    out << r.step << ',' << shortest(r.bound.lhs) << ',' << shortest(r.bound.rhs) << ','
        << shortest(r.bound.ratio) << ',' << (r.bound.holds ? "true" : "false") << '\n';
  }
  return out.str();
}

nlohmann::json theorem_summary_json(const TheoremReport& report) {
  const ConstantEstimates& c = report.estimates;
  auto finite_or_string = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return "inf";
  };
  nlohmann::json held = nlohmann::json::array();
  for (const TheoremRow& r : report.rows) {
    if (r.held_out) held.push_back(r.step);
  }
  return nlohmann::json{
      {"estimates",
       {{"L1_hat", c.l1_hat},
        {"L2_hat", c.l2_hat},
        {"Q_hat", c.q_hat},
        {"R_hat", finite_or_string(c.r_hat)},
        {"eps_hat", c.eps_hat},
        {"samples",
         {{"L1", c.l1_samples}, {"L2", c.l2_samples}, {"Q", c.q_samples}, {"R", c.r_samples}}},
        {"skipped_pairs", c.skipped_pairs},
        {"kind", "sampled maxima (lower bounds of the true constants)"}}},
      {"beta_g", report.beta_g},
      {"rhs", bound_rhs(c, report.beta_g)},
      {"pairs_checked", report.rows.size()},
      {"held_out_steps", held},
      {"held_out_holding_rate", report.held_out_rate},
      {"intermediate_holding_rate", report.intermediate_rate},
      {"r_hat_unstable", report.r_hat_unstable},
      {"warnings", c.warnings}};
}

}  // namespace ila
