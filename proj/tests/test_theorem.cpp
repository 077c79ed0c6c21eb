// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "ila/errors.hpp"
#include "ila/ila_core.hpp"
#include "ila/theorem.hpp"
#include "support.hpp"

namespace {

using namespace ila;
using namespace ila::testing;

std::vector<double> settling_trajectory(std::size_t n) {
  std::vector<double> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(1.0 + 0.5 * std::pow(0.8, static_cast<double>(i)) * std::cos(i));
  return t;
}

// Exact constants of L = x^2 / 2 on |x| <= Q: gradient bound Q, Hessian 1.
ConstantEstimates analytic_constants(const std::vector<double>& traj) {
  ConstantEstimates c;
  for (double d : traj) c.q_hat = std::max(c.q_hat, std::abs(d));
  c.l1_hat = c.q_hat;
  c.l2_hat = 1.0;
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    c.max_displacement = std::max(c.max_displacement, std::abs(traj[i] - traj[i + 1]));
  }
  c.r_hat = 1.0;
  c.eps_hat = c.max_displacement;
  return c;
}

// Stage-1 states of a tiny LoRA run taken at consecutive steps after it settles.
std::vector<AdapterSet> settled_states(const ModelParams& p, const BatchPlan& plan, std::size_t count) {
  IlaConfig cfg;
  cfg.stage1.max_steps = 200;
  cfg.stage1.lr = 5e-3;
  cfg.stability.window = 4;
  cfg.stability.probe_interval = 5;
  cfg.stability.epsilon = 5e-3;
  std::vector<AdapterSet> states;
  StabilityMonitor m(cfg.stability);
  train_until_stable(p, init_lora(p, 2, 1.0, 1), plan, m, cfg,
                     [&](int, const ModelParams&, const AdapterSet& a) {
                       states.push_back(a);
                       if (states.size() > count) states.erase(states.begin());
                     });
  return states;
}

}  // namespace

TEST_CASE("quadratic fixture satisfies the bound at every step with analytic constants") {
  const auto traj = settling_trajectory(40);
  const QuadraticObjective q(traj);
  const ConstantEstimates c = analytic_constants(traj);
  const double gate = 0.98, beta = 0.1;
  const std::vector<double> gates{gate};
  for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
    const BoundCheck b = check_gate_step_bound(q, {t, t + 1}, gates, 0, beta, c);
    const double a = traj[t], n = traj[t + 1];
    CHECK(b.lhs == doctest::Approx(beta * gate * std::abs(a * a - n * n)).epsilon(1e-12));
    CHECK(b.holds);
    const ProofTerms terms = check_proof_intermediates(q, {t, t + 1}, gates, 0, c);
    CHECK(terms.curvature_holds);
    CHECK(terms.displacement_term_holds);
    CHECK(terms.step_holds);
    CHECK(terms.triangle_holds);
    CHECK(terms.split_residual < 1e-14);
  }
}

TEST_CASE("estimated constants bound the sampled pairs and the report is well formed") {
  const auto traj = settling_trajectory(12);
  const QuadraticObjective q(traj);
  const TheoremReport r = verify_theorem(q, std::vector<double>{0.9}, 0.05);
  CHECK(r.rows.size() == traj.size() - 1);
  for (const TheoremRow& row : r.rows) {
    CHECK(row.held_out == (row.step % 2 == 1));
    if (!row.held_out) CHECK(row.bound.holds);
  }
  CHECK(r.estimates.l1_hat > 0.0);
  CHECK(r.estimates.l2_hat == doctest::Approx(1.0).epsilon(1e-6));
  const auto j = theorem_summary_json(r);
  for (const char* key : {"L1_hat", "L2_hat", "Q_hat", "R_hat", "eps_hat"}) CHECK(j["estimates"].contains(key));
  const std::string csv = theorem_report_csv(r);
  CHECK(csv.rfind("step,lhs,rhs,ratio,holds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(traj.size()));
}

TEST_CASE("a frozen trajectory gives zero gate-step gaps") {
  const QuadraticObjective q(std::vector<double>(5, 0.7));
  const TheoremReport r = verify_theorem(q, std::vector<double>{0.5}, 0.1);
  for (const TheoremRow& row : r.rows) {
    CHECK(row.bound.lhs == 0.0);
    CHECK(row.bound.holds);
  }
  CHECK(r.held_out_rate == 1.0);
  CHECK(r.estimates.skipped_pairs == 2);
}

TEST_CASE("the gradient split reproduces the direct gate-gradient difference on the transformer") {
  const ModelParams p = init_model(tiny_config(1));
  const BatchPlan plan = tiny_plan();
  std::vector<AdapterSet> states = settled_states(p, plan, 5);
  REQUIRE(states.size() == 5);
  const std::size_t n = states.front().size();
  const TransformerObjective obj(p, std::move(states), plan.train, plan.probe);
  const std::vector<double> gates(n, 0.7);
  const ConstantEstimates c = estimate_constants(obj, {{0, 1}, {2, 3}}, gates);
  CHECK(c.l1_samples > 0);
  CHECK(c.warnings.empty());
  for (std::size_t t = 0; t + 1 < 5; ++t) {
    const ProofTerms terms = check_proof_intermediates(obj, {t, t + 1}, gates, 0, c);
    CHECK(terms.split_residual <= 1e-9 * std::max(1.0, terms.gradient_gap));
    CHECK(terms.triangle_holds);
  }
  const TheoremReport r = verify_theorem(obj, gates, 1e-2);
  for (const TheoremRow& row : r.rows) {
    if (!row.held_out) CHECK(row.bound.holds);
  }
}

TEST_CASE("theorem checks validate their inputs") {
  const QuadraticObjective q(std::vector<double>{1.0, 0.5});
  CHECK_THROWS_AS(check_gate_step_bound(q, {0, 5}, std::vector<double>{1.0}, 0, 0.1, {}), Error);
  CHECK_THROWS_AS(check_gate_step_bound(q, {0, 1}, std::vector<double>{1.0}, 0, -1.0, {}), ConfigError);
  CHECK_THROWS_AS(QuadraticObjective(std::vector<double>{}), ContractError);
}
