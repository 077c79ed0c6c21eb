// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "ila/errors.hpp"
#include "ila/ila_core.hpp"
#include "ila/ops.hpp"
#include "support.hpp"

namespace {

using namespace ila;
using namespace ila::testing;

IlaConfig quick_config(int max_steps) {
  IlaConfig c;
  c.stage1.max_steps = max_steps;
  c.stability.window = 3;
  c.stability.probe_interval = 2;
  c.stage2_batches = 6;
  return c;
}

}  // namespace

TEST_CASE("learning-rate schedule warms up linearly then follows a cosine to zero") {
  OptimizerConfig c;
  c.lr = 1.0;
  c.max_steps = 100;
  c.warmup_ratio = 0.05;
  for (int s = 0; s < 5; ++s) CHECK(c.rate_at(s) == doctest::Approx((s + 1) / 5.0));
  CHECK(c.rate_at(5) == doctest::Approx(1.0));
  CHECK(c.rate_at(5 + 95 / 2) == doctest::Approx(0.5 * (1 + std::cos(std::numbers::pi * 47.0 / 95))));
  CHECK(c.rate_at(100) == doctest::Approx(0.0));
  CHECK(c.rate_at(500) == doctest::Approx(0.0));
  for (int s = 5; s < 120; ++s) CHECK(c.rate_at(s + 1) <= c.rate_at(s) + 1e-15);
  c.max_steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("one AdamW step matches the closed form") {
  OptimizerConfig c;
  c.lr = 0.1;
  c.max_steps = 100;
  c.weight_decay = 0.5;
  Tensor w({2}, std::vector<double>{1.0, -2.0});
  const Tensor anchor({2}, std::vector<double>{3.0, 0.0});
  Tensor frozen_decay({1}, std::vector<double>{4.0});
  AdamW opt(c, {{&w, &anchor, true}, {&frozen_decay, nullptr, false}});
  const std::vector<Tensor> grads{Tensor({2}, std::vector<double>{0.5, -0.25}), Tensor({1}, std::vector<double>{2.0})};
  opt.step(grads, 0);
  // Bias correction makes the first Adam direction g / (|g| + eps).
  const double eps = c.adam_eps;
  CHECK(w.at(0) == doctest::Approx(1.0 - 0.1 * 0.5 * (3.0 + 1.0) - 0.1 * 0.5 / (0.5 + eps)).epsilon(1e-12));
  CHECK(w.at(1) == doctest::Approx(-2.0 - 0.1 * 0.5 * (0.0 - 2.0) + 0.1 * 0.25 / (0.25 + eps)).epsilon(1e-12));
  CHECK(frozen_decay.at(0) == doctest::Approx(4.0 - 0.1 * 2.0 / (2.0 + eps)).epsilon(1e-12));
}

TEST_CASE("stability monitor needs a full window of small consecutive deltas") {
  StabilityConfig c;
  c.epsilon = 0.01;
  c.window = 3;
  StabilityMonitor m(c);
  CHECK_FALSE(m.observe(2.0));
  CHECK(m.epsilon() == doctest::Approx(0.02));
  CHECK_FALSE(m.observe(2.01));
  CHECK_FALSE(m.observe(2.0));
  CHECK_FALSE(m.observe(1.9));  // resets
  CHECK(m.consecutive() == 0);
  CHECK_FALSE(m.observe(1.9));
  CHECK_FALSE(m.observe(1.91));
  CHECK(m.observe(1.9));
  CHECK(m.observe(10.0));  // stays stable
  CHECK(m.history().size() == 8);

  StabilityConfig abs = c;
  abs.relative = false;
  StabilityMonitor a(abs);
  a.observe(100.0);
  CHECK(a.epsilon() == 0.01);
  CHECK_THROWS_AS(a.observe(std::numeric_limits<double>::quiet_NaN()), NumericError);
  c.window = 0;
  CHECK_THROWS_AS(StabilityMonitor{c}, ConfigError);
}

TEST_CASE("zero learning rate stabilizes after exactly one window of probes") {
  const ModelParams p = init_model(tiny_config(1));
  const BatchPlan plan = tiny_plan();
  IlaConfig c = quick_config(50);
  c.stage1.lr = 0.0;
  StabilityMonitor m(c.stability);
  const StageOneResult r = train_until_stable(p, init_lora(p, 2, 1.0, 0), plan, m, c);
  CHECK(r.stop_step == c.stability.window * c.stability.probe_interval);
  CHECK(r.trace.size() == static_cast<std::size_t>(c.stability.window + 1));
  CHECK(r.trace.front().step == 0);
}

TEST_CASE("training that cannot settle raises NotStableError with its trace") {
  const ModelParams p = init_model(tiny_config(1));
  const BatchPlan plan = tiny_plan();
  IlaConfig c = quick_config(4);
  c.stability.window = 50;
  StabilityMonitor m(c.stability);
  try {
    train_until_stable(p, init_lora(p, 2, 1.0, 0), plan, m, c);
    FAIL("expected NotStableError");
  } catch (const NotStableError& e) {
    CHECK(e.kind() == ErrorKind::kNotStable);
    CHECK(e.trace().size() == 3);
    CHECK(exit_code_for(e.kind()) == 4);
  }
}

TEST_CASE("stage one is deterministic and the observer sees every step") {
  const ModelParams p = init_model(tiny_config(1));
  const BatchPlan plan = tiny_plan();
  IlaConfig c = quick_config(60);
  c.stability.epsilon = 0.5;
  int seen = 0;
  StabilityMonitor m1(c.stability), m2(c.stability);
  const StageOneResult a = train_until_stable(p, init_lora(p, 2, 1.0, 7), plan, m1, c,
                                              [&](int step, const ModelParams&, const AdapterSet&) {
                                                CHECK(step == ++seen);
                                              });
  const StageOneResult b = train_until_stable(p, init_lora(p, 2, 1.0, 7), plan, m2, c);
  CHECK(seen == a.stop_step);
  CHECK(a.stop_step == b.stop_step);
  CHECK(a.adapters.bitwise_equal(b.adapters));
  CHECK(a.params.bitwise_equal(p));

  StabilityMonitor m3(c.stability);
  const StageOneResult f = train_until_stable(p, init_fft(p), plan, m3, c);
  CHECK_FALSE(f.params.bitwise_equal(p));  // FFT also trains embeddings and norms
}

TEST_CASE("stage two leaves every weight untouched and is reproducible") {
  const ModelParams p = init_model(tiny_config(1));
  const AdapterSet a = random_lora(p, 2, 0.5, 1);
  const ModelParams p_before = p;
  const AdapterSet a_before = a;
  const BatchPlan plan = tiny_plan();
  IlaConfig c = quick_config(10);
  const ImportanceScores s1 = learn_importance(p, a, plan, c);
  const ImportanceScores s2 = learn_importance(p, a, plan, c);
  CHECK(p.bitwise_equal(p_before));
  CHECK(a.bitwise_equal(a_before));
  CHECK(s1.scores == s2.scores);
  CHECK(s1.steps == c.stage2_batches);
  CHECK(s1.layers == a.layers());

  c.stage2_step = 0.0;
  for (double s : learn_importance(p, a, plan, c).scores) CHECK(s == c.s0);
}

TEST_CASE("a gate step is plain gradient descent on the scores") {
  const ModelParams p = init_model(tiny_config(1));
  const AdapterSet a = random_lora(p, 2, 0.5, 2);
  const BatchPlan plan = tiny_plan();
  ImportanceScores s;
  s.layers = a.layers();
  s.scores.assign(a.size(), 1.5);
  const GateGradient g = score_gradient(p, a, s.scores, plan.train[0]);
  const ImportanceScores next = gate_gradient_step(s, p, a, plan.train[0], 0.3);
  for (std::size_t i = 0; i < s.scores.size(); ++i) CHECK(next.scores[i] == 1.5 - 0.3 * g.grad[i]);
  CHECK(next.steps == 1);

  const std::vector<double> gates = s.gates();
  const GateGradient direct = gate_gradient(p, a, gates, plan.train[0]);
  for (std::size_t i = 0; i < gates.size(); ++i) {
    CHECK(g.grad[i] == doctest::Approx(direct.grad[i] * gates[i] * (1 - gates[i])).epsilon(1e-10));
  }
  CHECK_THROWS_AS(gate_gradient(p, a, std::vector<double>(a.size(), 1.5), plan.train[0]), ContractError);
}

TEST_CASE("non-finite scores are reported as numeric failures") {
  const ModelParams p = init_model(tiny_config(1));
  const AdapterSet a = random_lora(p, 2, 0.5, 2);
  const BatchPlan plan = tiny_plan();
  ImportanceScores s;
  s.layers = a.layers();
  s.scores.assign(a.size(), std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(gate_gradient_step(s, p, a, plan.train[0], 0.1), NumericError);
}

TEST_CASE("probe evaluation does not depend on the thread count") {
  const ModelParams p = init_model(tiny_config(1));
  const AdapterSet a = random_lora(p, 2, 0.5, 3);
  const BatchPlan plan = tiny_plan(0, 64);
  setenv("ILA_THREADS", "1", 1);
  const Metrics one = evaluate(p, &a, {}, plan.train);
  setenv("ILA_THREADS", "3", 1);
  const Metrics three = evaluate(p, &a, {}, plan.train);
  unsetenv("ILA_THREADS");
  CHECK(one.loss == three.loss);
  CHECK(one.token_accuracy == three.token_accuracy);
  CHECK(one.token_accuracy >= 0.0);
  CHECK(one.token_accuracy <= 1.0);
}
