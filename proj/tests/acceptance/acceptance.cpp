// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks on the default toy model. Prints one
// PASS/FAIL line per criterion and exits nonzero if any selected criterion
// fails.
//
//   acceptance --cache DIR --prepare     pretrain the shared base model
//   acceptance --cache DIR [--only N]    run criteria (all by default)
//
// Stage-1 runs and rankings are cached under DIR so that criteria run as
// separate processes share them; --prepare clears the cache.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ila/analysis.hpp"
#include "ila/checkpoint.hpp"
#include "ila/data.hpp"
#include "ila/errors.hpp"
#include "ila/format.hpp"
#include "ila/ila_core.hpp"
#include "ila/ops.hpp"
#include "ila/theorem.hpp"
#include "ila/workflows.hpp"
#include "support.hpp"

#ifndef ILA_CLI_PATH
#define ILA_CLI_PATH "ila"
#endif

namespace {

using namespace ila;
using namespace ila::testing;
namespace fs = std::filesystem;

constexpr double kTopFraction = 0.75;
constexpr int kPretrainSteps = 6000;
constexpr std::size_t kTheoremStates = 17;
const std::vector<double> kMilestones{0.01, 0.25, 0.5, 0.75, 1.0};

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_cache;

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---- shared fixtures ----------------------------------------------------------

BatchPlan plan_for(TaskFamily family, std::uint64_t seed) {
  SyntheticTaskSpec spec;
  spec.family = family;
  return make_batches(generate_dataset(spec, 11), 16, static_cast<std::size_t>(ModelConfig{}.seq_len), seed, 8);
}

void prepare_base() {
  fs::remove_all(g_cache);
  fs::create_directories(g_cache);
  const ModelConfig config;
  const ModelParams init = init_model(config);
  SyntheticTaskSpec spec;
  spec.family = TaskFamily::kMix;
  spec.styled = false;
  const BatchPlan plan = make_batches(generate_dataset(spec, 1), 16, static_cast<std::size_t>(config.seq_len), 3, 8);
  OptimizerConfig oc;
  oc.lr = 3e-3;
  oc.weight_decay = 0.0;
  oc.max_steps = kPretrainSteps;
  Trainer trainer(init, init_fft(init), plan, oc, 0, true);
  while (trainer.steps_done() < kPretrainSteps) trainer.step();
  const ModelParams base = merge_all(trainer.params(), trainer.adapters());
  save_checkpoint(g_cache / "base.ilac", base, nullptr, nlohmann::json{{"stage", "pretrain"}});
  std::cout << "pretrained base: probe loss " << fmt(evaluate(base, nullptr, {}, plan.probe).loss) << "\n";
}

const ModelParams& base() {
  static const ModelParams params = [] {
    if (!fs::exists(g_cache / "base.ilac")) {
      throw IoError("missing " + (g_cache / "base.ilac").string() + "; run with --prepare first");
    }
    return load_checkpoint(g_cache / "base.ilac").params;
  }();
  return params;
}

struct StageOne {
  ModelParams params;
  AdapterSet adapters;
  int stop_step = 0;
  std::map<double, AdapterSet> milestones;  // LoRA runs only
  std::vector<AdapterSet> tail;             // last kTheoremStates states, LoRA runs only
};

std::string milestone_file(double f) { return "milestone_" + std::to_string(std::lround(f * 1000)) + ".ilac"; }

StageOne stage_one(TaskFamily family, AdapterMode mode, std::uint64_t seed) {
  const fs::path dir = g_cache / ("stage1_" + family_name(family) + "_" + mode_name(mode) + "_" + std::to_string(seed));
  StageOne out;
  const bool lora = mode == AdapterMode::kLora;
  if (fs::exists(dir / "model.ilac")) {
    Checkpoint c = load_checkpoint(dir / "model.ilac");
    out.params = std::move(c.params);
    out.adapters = std::move(*c.adapters);
    out.stop_step = c.metadata.at("step").get<int>();
    if (lora) {
      for (double f : kMilestones) out.milestones[f] = *load_checkpoint(dir / milestone_file(f)).adapters;
      for (std::size_t i = 0; i < kTheoremStates; ++i) {
        out.tail.push_back(*load_checkpoint(dir / ("tail_" + std::to_string(i) + ".ilac")).adapters);
      }
    }
    return out;
  }

  const BatchPlan plan = plan_for(family, seed);
  IlaConfig ic;
  ic.stage1 = stage1_defaults(mode);
  ic.data_seed = seed;
  const ModelParams& p = base();
  const AdapterSet init = lora ? init_lora(p, 4, 0.5, seed) : init_fft(p);
  std::vector<AdapterSet> history;
  StepObserver observer;
  if (lora) observer = [&](int, const ModelParams&, const AdapterSet& a) { history.push_back(a); };
  StabilityMonitor monitor(ic.stability);
  StageOneResult r = train_until_stable(p, init, plan, monitor, ic, observer);
  out.params = std::move(r.params);
  out.adapters = std::move(r.adapters);
  out.stop_step = r.stop_step;

  fs::create_directories(dir);
  const fs::path tmp = dir / "model.ilac.partial";
  if (lora) {
    for (double f : kMilestones) {
      const int step = std::max(1, static_cast<int>(std::ceil(f * out.stop_step)));
      out.milestones[f] = history.at(static_cast<std::size_t>(step - 1));
      save_checkpoint(dir / milestone_file(f), p, &out.milestones[f], nlohmann::json{{"step", step}});
    }
    const std::size_t first = history.size() - kTheoremStates;
    for (std::size_t i = 0; i < kTheoremStates; ++i) {
      out.tail.push_back(history[first + i]);
      save_checkpoint(dir / ("tail_" + std::to_string(i) + ".ilac"), p, &out.tail.back(),
                      nlohmann::json{{"step", first + i + 1}});
    }
  }
  save_checkpoint(tmp, out.params, &out.adapters, nlohmann::json{{"step", out.stop_step}});
  fs::rename(tmp, dir / "model.ilac");
  std::cout << "  stage 1 " << family_name(family) << "/" << mode_name(mode) << " seed " << seed
            << " stable at step " << out.stop_step << "\n";
  return out;
}

LayerRanking ranking(TaskFamily family, AdapterMode mode, std::uint64_t seed, std::uint64_t stage2_seed,
                     double s0 = 4.0, double milestone = 1.0) {
  const std::string key = family_name(family) + "_" + mode_name(mode) + "_" + std::to_string(seed) + "_" +
                          std::to_string(stage2_seed) + "_" + shortest(s0) + "_" + shortest(milestone);
  const fs::path path = g_cache / ("rank_" + key + ".json");
  if (fs::exists(path)) return load_ranking(path);
  const StageOne s1 = stage_one(family, mode, seed);
  const AdapterSet& deltas = milestone == 1.0 ? s1.adapters : s1.milestones.at(milestone);
  IlaConfig ic;
  ic.s0 = s0;
  ic.stage2_seed = stage2_seed;
  const ImportanceScores scores = learn_importance(s1.params, deltas, plan_for(family, seed), ic);
  const LayerRanking r =
      LayerRanking::from_scores(scores, s1.params.config.fingerprint(), Provenance{family_name(family), stage2_seed, milestone});
  save_ranking(path, r);
  return r;
}

double baseline() {
  static const double b = random_baseline_jaccard(29, kTopFraction);
  return b;
}

double top_jaccard(const LayerRanking& a, const LayerRanking& b) {
  return compare_rankings({a, b}, kTopFraction)[0][1];
}

// ---- criteria -------------------------------------------------------------------

Outcome gradient_correctness() {
  std::mt19937_64 rng(77);
  using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;
  std::size_t cases = 0, failures = 0;
  double worst = 0.0;
  auto check = [&](const OpFn& fn, const std::vector<Tensor>& in) {
    const Tensor weights = random_tensor(fn(in).shape(), rng);
    Tape tape;
    std::vector<Tensor> leaves;
    for (const Tensor& t : in) leaves.push_back(tape.leaf(t));
    const Gradients g = Tape::backward(ops::sum(ops::mul(fn(leaves), weights)));
    for (std::size_t k = 0; k < in.size(); ++k) {
      auto f = [&](const std::vector<double>& x) {
        std::vector<Tensor> moved = in;
        moved[k] = Tensor(in[k].shape(), x);
        return ops::sum(ops::mul(fn(moved), weights)).item();
      };
      const auto span = in[k].data();
      const auto fd = central_difference(f, {span.begin(), span.end()}, 1e-5);
      const auto an = g.of(leaves[k]).data();
      const double err = relative_error({an.begin(), an.end()}, fd);
      worst = std::max(worst, err);
      failures += err < 1e-4 ? 0 : 1;
    }
    ++cases;
  };
  auto dim = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  for (int t = 0; t < 8; ++t) {
    const std::size_t m = dim(1, 16), k = dim(1, 16), n = dim(1, 16);
    check([](auto& x) { return ops::matmul(x[0], x[1]); }, {random_tensor({m, k}, rng), random_tensor({k, n}, rng)});
    check([](auto& x) { return ops::add(x[0], x[1]); }, {random_tensor({m, n}, rng), random_tensor({m, n}, rng)});
    check([](auto& x) { return ops::sub(x[0], x[1]); }, {random_tensor({m, n}, rng), random_tensor({m, n}, rng)});
    check([](auto& x) { return ops::mul(x[0], x[1]); }, {random_tensor({m, n}, rng), random_tensor({m, n}, rng)});
    check([](auto& x) { return ops::mul(x[0], x[1]); }, {Tensor::scalar(0.4), random_tensor({m, n}, rng)});
    check([](auto& x) { return ops::scale(x[0], 1.7); }, {random_tensor({m, n}, rng)});
    check([](auto& x) { return ops::sigmoid(x[0]); }, {random_tensor({m, n}, rng, -4, 4)});
    check([](auto& x) { return ops::silu(x[0]); }, {random_tensor({m, n}, rng, -4, 4)});
    check([](auto& x) { return ops::sum(x[0]); }, {random_tensor({m, n}, rng)});
    check([](auto& x) { return ops::rmsnorm(x[0], x[1]); }, {random_tensor({m, n}, rng), random_tensor({n}, rng, 0.5, 1.5)});
    std::vector<int> targets(m);
    for (int& tg : targets) tg = static_cast<int>(dim(0, n - 1));
    targets[0] = ops::kIgnoreTarget;
    if (m == 1) targets[0] = 0;
    check([targets](auto& x) { return ops::softmax_cross_entropy(x[0], targets); }, {random_tensor({m, n}, rng, -3, 3)});
    std::vector<int> ids(dim(1, 16));
    for (int& id : ids) id = static_cast<int>(dim(0, m - 1));
    check([ids](auto& x) { return ops::embedding(x[0], ids); }, {random_tensor({m, n}, rng)});
    const std::size_t b = dim(1, 3), s = dim(1, 5), h = dim(1, 3), d = h * dim(1, 3);
    check([=](auto& x) { return ops::causal_attention(x[0], x[1], x[2], b, s, h); },
          {random_tensor({b * s, d}, rng), random_tensor({b * s, d}, rng), random_tensor({b * s, d}, rng)});
  }

  const ModelParams& p = base();
  const AdapterSet a = random_lora(p, 4, 0.5, 5);
  const BatchPlan plan = plan_for(TaskFamily::kReverse, 0);
  double worst_gate = 0.0;
  std::size_t gate_cases = 0, gate_failures = 0;
  for (std::size_t bi = 0; bi < 4; ++bi) {
    std::vector<double> scores(a.size());
    for (double& s : scores) s = std::uniform_real_distribution<double>(-2, 4)(rng);
    const Batch& batch = plan.train[bi];
    const GateGradient g = score_gradient(p, a, scores, batch);
    const auto fd = central_difference(
        [&](const std::vector<double>& s) { return score_gradient(p, a, s, batch).loss; }, scores, 1e-5);
    const double err = relative_error(g.grad, fd);
    worst_gate = std::max(worst_gate, err);
    gate_failures += err < 1e-4 ? 0 : 1;
    ++gate_cases;
  }
  const bool pass = failures == 0 && gate_failures == 0 && cases + gate_cases >= 100;
  return {pass, std::to_string(cases) + " op cases (max rel err " + shortest(worst) + "), " + std::to_string(gate_cases) +
                    " score-gradient batches over all 29 layers (max rel err " + shortest(worst_gate) + ")"};
}

Outcome mask_identity() {
  const ModelParams& p = base();
  const BatchPlan plan = plan_for(TaskFamily::kReverse, 0);
  std::size_t checks = 0, ok = 0;
  for (const AdapterSet& a : {random_lora(p, 4, 0.5, 9), [&] {
         AdapterSet f = init_fft(p);
         std::mt19937_64 rng(3);
         for (std::size_t i = 0; i < f.size(); ++i) {
           for (double& x : f.dense(i).mutable_data()) x = std::normal_distribution<double>(0, 0.02)(rng);
         }
         return f;
       }()}) {
    const std::vector<double> ones(a.size(), 1.0), zeros(a.size(), 0.0);
    for (std::size_t b = 0; b < 3; ++b) {
      const TokenBatch& tb = plan.probe[b].tokens;
      ok += forward(p, &a, ones, tb).bitwise_equal(forward(p, &a, {}, tb));
      ok += forward(p, &a, zeros, tb).bitwise_equal(forward(p, nullptr, {}, tb));
      checks += 2;
    }
    ok += apply_masked(p, a, zeros).bitwise_equal(p);
    ok += apply_masked(p, a, ones).bitwise_equal(merge_all(p, a));
    checks += 2;
  }
  return {ok == checks, std::to_string(ok) + "/" + std::to_string(checks) + " bitwise comparisons equal (LoRA and FFT)"};
}

Outcome jaccard_oracle() {
  std::mt19937_64 rng(1234);
  const auto layers = enumerate_layers(ModelConfig{});
  std::size_t equal = 0;
  for (int t = 0; t < 1000; ++t) {
    LayerSet a, b;
    std::set<int> sa, sb;
    const unsigned pa = 1 + rng() % 5, pb = 1 + rng() % 5;
    for (int i = 0; i < 29; ++i) {
      if (rng() % pa == 0) a.insert(layers[i]), sa.insert(i);
      if (rng() % pb == 0) b.insert(layers[i]), sb.insert(i);
    }
    std::size_t inter = 0;
    for (int x : sa) inter += sb.count(x);
    const std::size_t uni = sa.size() + sb.size() - inter;
    const double brute = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    equal += jaccard(a, b) == brute;
  }
  return {equal == 1000, std::to_string(equal) + "/1000 pairs exactly equal"};
}

std::string pairwise(const std::vector<LayerRanking>& rs, double& lowest) {
  const auto m = compare_rankings(rs, kTopFraction);
  std::string s;
  lowest = 1.0;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    for (std::size_t j = i + 1; j < rs.size(); ++j) {
      lowest = std::min(lowest, m[i][j]);
      s += (s.empty() ? "" : " ") + fmt(m[i][j], 3);
    }
  }
  return s;
}

Outcome seed_stability() {
  std::vector<LayerRanking> rs;
  for (std::uint64_t s : {0, 1, 2}) rs.push_back(ranking(TaskFamily::kReverse, AdapterMode::kLora, 0, s));
  double lowest = 0.0;
  const std::string pairs = pairwise(rs, lowest);
  const double bar = baseline() + 0.10;
  return {lowest > bar, "pairwise J " + pairs + " vs threshold " + fmt(bar) + " (baseline " + fmt(baseline()) + ")"};
}

// Per-dataset ranking by mean stage-2 score over stage-1 seeds 0, 1 and 2.
LayerRanking consensus(TaskFamily family) {
  std::map<LayerId, double> total;
  std::string fingerprint;
  for (std::uint64_t seed : {0, 1, 2}) {
    const LayerRanking r = ranking(family, AdapterMode::kLora, seed, 0);
    fingerprint = r.fingerprint();
    for (const RankedLayer& e : r.entries()) total[e.layer] += e.score / 3.0;
  }
  std::vector<RankedLayer> entries;
  for (const auto& [layer, score] : total) entries.push_back({layer, score});
  return LayerRanking(entries, fingerprint, Provenance{family_name(family), 0, 1.0});
}

Outcome cross_dataset() {
  std::string matched;
  for (std::uint64_t seed : {0, 1, 2}) {
    matched += (matched.empty() ? "" : " ") + fmt(top_jaccard(ranking(TaskFamily::kReverse, AdapterMode::kLora, seed, 0),
                                                              ranking(TaskFamily::kSort, AdapterMode::kLora, seed, 0)),
                                                  3);
  }
  const double j = top_jaccard(consensus(TaskFamily::kReverse), consensus(TaskFamily::kSort));
  const double bar = baseline() + 0.10;
  return {j > bar, "J(reverse, sort) " + fmt(j, 3) + " on 3-seed mean scores vs threshold " + fmt(bar) +
                       "; single-seed pairs " + matched};
}

Outcome milestone_ordering() {
  int ties = 0, inversions = 0;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    const LayerRanking full = ranking(TaskFamily::kReverse, AdapterMode::kLora, seed, 0);
    const double early = top_jaccard(ranking(TaskFamily::kReverse, AdapterMode::kLora, seed, 0, 4.0, 0.01), full);
    const double mid = top_jaccard(ranking(TaskFamily::kReverse, AdapterMode::kLora, seed, 0, 4.0, 0.5), full);
    if (mid == early) ++ties;
    if (mid < early) ++inversions;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": J(1%,100%) " +
              fmt(early, 3) + ", J(50%,100%) " + fmt(mid, 3);
  }
  return {inversions == 0 && ties <= 1, detail};
}

Outcome init_robustness() {
  std::vector<LayerRanking> rs;
  for (double s0 : {4.0, 2.0, 1.0}) rs.push_back(ranking(TaskFamily::kReverse, AdapterMode::kLora, 0, 0, s0));
  double lowest = 0.0;
  const std::string pairs = pairwise(rs, lowest);
  const double bar = baseline() + 0.10;
  return {lowest > bar, "s0 in {4,2,1} pairwise J " + pairs + " vs threshold " + fmt(bar)};
}

Outcome lora_vs_fft() {
  const double j = top_jaccard(ranking(TaskFamily::kReverse, AdapterMode::kLora, 0, 0),
                               ranking(TaskFamily::kReverse, AdapterMode::kFft, 0, 0));
  const double bar = baseline() + 0.05;
  return {j > bar, "J(LoRA, FFT) " + fmt(j, 3) + " vs threshold " + fmt(bar)};
}

// Mean probe loss over three fine-tuning seeds, cached per selector label.
double workflow_loss(const std::string& spec) {
  const fs::path path = g_cache / ("workflow_" + spec + ".txt");
  if (fs::exists(path)) {
    std::ifstream in(path);
    double v = 0.0;
    in >> v;
    return v;
  }
  const LayerRanking r = ranking(TaskFamily::kReverse, AdapterMode::kLora, 0, 0);
  const LayerSelector selector = parse_selector(spec, {r});
  double total = 0.0;
  for (std::uint64_t seed : {0, 1, 2}) {
    FinetuneConfig fc;
    fc.adapter_seed = seed;
    fc.data_seed = seed;
    const FinetuneResult res =
        finetune_with_selector(base(), plan_for(TaskFamily::kReverse, seed), selector, AdapterMode::kLora, fc);
    total += res.metrics.loss;
  }
  const double mean = total / 3.0;
  std::ofstream(path) << shortest(mean) << "\n";
  return mean;
}

Outcome freeze_ordering() {
  const double all = workflow_loss("all");
  const double bottom = workflow_loss("freeze-bottom:0.25");
  const double top = workflow_loss("freeze-top:0.25");
  const bool a = bottom <= 1.05 * all;
  const bool b = bottom < top;
  return {a && b, std::string("(a) ") + (a ? "ok" : "violated") + ": freeze-bottom " + fmt(bottom) + " = " +
                      fmt(bottom / all, 3) + "x all-layers " + fmt(all) + " (limit 1.05x); (b) " +
                      (b ? "ok" : "violated") + ": freeze-top " + fmt(top)};
}

Outcome selective_trend() {
  const std::vector<double> fractions{0.1, 0.2, 0.3};
  std::vector<double> losses;
  for (double f : fractions) losses.push_back(workflow_loss("ila-top:" + shortest(f)));
  const double all = workflow_loss("all");
  losses.push_back(all);
  int inversions = 0;
  for (std::size_t i = 0; i + 1 < losses.size(); ++i) inversions += losses[i + 1] > losses[i] ? 1 : 0;
  const bool trend = inversions <= 1;
  const double ratio = losses[2] / all;
  const bool close = ratio <= 1.10;
  return {trend && close, std::string("trend ") + (trend ? "ok" : "violated") + " (" + std::to_string(inversions) +
                              " inversions): top-10% " + fmt(losses[0]) + ", top-20% " + fmt(losses[1]) + ", top-30% " +
                              fmt(losses[2]) + ", all " + fmt(all) + "; top-30%/all " + fmt(ratio, 3) +
                              (close ? " within" : " exceeds") + " 1.10x"};
}

Outcome theorem_falsification() {
  const StageOne s1 = stage_one(TaskFamily::kReverse, AdapterMode::kLora, 0);
  BatchPlan plan = plan_for(TaskFamily::kReverse, 0);
  const std::size_t n = s1.tail.front().size();
  const TransformerObjective obj(s1.params, s1.tail, std::move(plan.train), std::move(plan.probe));
  const std::vector<double> gates(n, ops::kernels::sigmoid(4.0));
  const TheoremReport report = verify_theorem(obj, gates, 1e-2);
  std::size_t held = 0;
  double max_ratio = 0.0;
  for (const TheoremRow& row : report.rows) {
    held += row.held_out;
    max_ratio = std::max(max_ratio, row.bound.ratio);
  }

  std::vector<double> traj;
  for (int i = 0; i < 60; ++i) traj.push_back(0.8 + 0.3 * std::pow(0.9, i) * std::cos(0.7 * i));
  const QuadraticObjective q(traj);
  ConstantEstimates exact;
  for (double d : traj) exact.q_hat = std::max(exact.q_hat, std::abs(d));
  exact.l1_hat = exact.q_hat;
  exact.l2_hat = 1.0;
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    exact.max_displacement = std::max(exact.max_displacement, std::abs(traj[i + 1] - traj[i]));
  }
  std::size_t quad_ok = 0;
  for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
    quad_ok += check_gate_step_bound(q, {t, t + 1}, std::vector<double>{0.95}, 0, 0.1, exact).holds;
  }
  const bool pass = report.held_out_rate >= 0.95 && quad_ok == traj.size() - 1;
  return {pass, "held-out holding rate " + fmt(report.held_out_rate, 3) + " over " + std::to_string(held) +
                    " pairs (max lhs/rhs " + shortest(max_ratio) + ", Q " + shortest(report.estimates.q_hat) + ", L1 " +
                    shortest(report.estimates.l1_hat) + ", L2 " + shortest(report.estimates.l2_hat) +
                    "); quadratic fixture " + std::to_string(quad_ok) + "/" + std::to_string(traj.size() - 1)};
}

int sh(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  const std::string cli = ILA_CLI_PATH;
  const fs::path root = g_cache / "cli";
  fs::remove_all(root);
  const fs::path a = root / "a", b = root / "b";
  const std::string base_path = (g_cache / "base.ilac").string();
  const std::string data = " --synthetic reverse --fixed-clock";
  const std::vector<std::pair<std::string, std::string>> steps{
      {"gen", "gen-data --family sort --size 200 --fixed-clock"},
      {"train", "train" + data + " --base " + base_path + " --seed 3 --stable-checkpoints 3"},
      {"rank0", "rank" + data + " --checkpoint " + (a / "train" / "model.ilac").string() + " --stage2-batches 32"},
      {"rank1", "rank" + data + " --checkpoint " + (a / "train" / "model.ilac").string() + " --stage2-batches 32 --seed 1"},
      {"jaccard", "jaccard " + (a / "rank0" / "ranking.json").string() + " " + (a / "rank1" / "ranking.json").string() +
                      " --fixed-clock"},
      {"finetune", "finetune" + data + " --base " + base_path + " --ranking " + (a / "rank0" / "ranking.json").string() +
                       " --selector ila-top:0.3 --steps 30"},
      {"verify", "verify-theorem" + data + " --checkpoint-dir " + (a / "train").string()},
  };
  std::vector<std::string> problems;
  std::size_t files = 0;
  for (const auto& [name, args] : steps) {
    if (sh(cli + " " + args + " --out " + (a / name).string()) != 0) problems.push_back(name + " failed");
    if (sh(cli + " replay " + (a / name / "manifest.json").string() + " --out " + (b / name).string()) != 0) {
      problems.push_back(name + " replay failed");
      continue;
    }
    for (const auto& entry : fs::directory_iterator(a / name)) {
      ++files;
      const fs::path other = b / name / entry.path().filename();
      if (!fs::exists(other) || read_all(entry.path()) != read_all(other)) {
        problems.push_back(name + "/" + entry.path().filename().string() + " differs");
      }
    }
  }

  const Checkpoint ck = load_checkpoint(a / "train" / "model.ilac");
  save_checkpoint(root / "roundtrip.ilac", ck.params, &*ck.adapters, ck.metadata);
  const Checkpoint again = load_checkpoint(root / "roundtrip.ilac");
  const bool ckpt_ok = again.params.bitwise_equal(ck.params) && again.adapters->bitwise_equal(*ck.adapters) &&
                       read_all(root / "roundtrip.ilac") == read_all(a / "train" / "model.ilac");
  if (!ckpt_ok) problems.push_back("checkpoint round-trip not bitwise");
  const LayerRanking r = load_ranking(a / "rank0" / "ranking.json");
  save_ranking(root / "roundtrip.json", r);
  if (!(load_ranking(root / "roundtrip.json") == r)) problems.push_back("ranking round-trip not exact");

  const std::string good = read_all(a / "train" / "model.ilac");
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < 256 && i < good.size(); ++i) {
    positions.push_back(i);
    positions.push_back(good.size() - 1 - i);
  }
  std::mt19937_64 rng(99);
  for (int i = 0; i < 1500; ++i) positions.push_back(rng() % good.size());
  std::size_t detected = 0;
  for (std::size_t pos : positions) {
    std::string bad = good;
    bad[pos] = static_cast<char>(bad[pos] ^ (1 + rng() % 255));
    {
      std::ofstream out(root / "corrupt.ilac", std::ios::binary | std::ios::trunc);
      out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    try {
      load_checkpoint(root / "corrupt.ilac");
    } catch (const Error&) {
      ++detected;
    }
  }
  if (detected != positions.size()) problems.push_back("undetected corruption");

  std::string detail = std::to_string(files) + " output files replayed byte-identically across " +
                       std::to_string(steps.size()) + " commands; " + std::to_string(detected) + "/" +
                       std::to_string(positions.size()) + " corrupted bytes detected";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)();
};

const std::vector<Criterion> kCriteria{
    {1, "gradient correctness", gradient_correctness},
    {2, "mask identity and zero", mask_identity},
    {3, "jaccard oracle", jaccard_oracle},
    {4, "seed stability", seed_stability},
    {5, "cross-dataset stability", cross_dataset},
    {6, "milestone ordering", milestone_ordering},
    {7, "initialization robustness", init_robustness},
    {8, "LoRA vs FFT agreement", lora_vs_fft},
    {9, "freeze ordering", freeze_ordering},
    {10, "selective-tuning trend", selective_trend},
    {11, "stability bound falsification", theorem_falsification},
    {12, "determinism and serialization", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string cache = "acceptance_cache";
  bool prepare = false;
  std::vector<int> only;
  app.add_option("--cache", cache, "Directory for the base model and cached runs");
  app.add_flag("--prepare", prepare, "Pretrain the base model (clears the cache)");
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  g_cache = fs::absolute(cache);

  try {
    if (prepare) {
      prepare_base();
      if (only.empty()) return 0;
    }
    int failed = 0;
    for (const Criterion& c : kCriteria) {
      if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
      const auto start = std::chrono::steady_clock::now();
      const Outcome o = c.run();
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << " | " << o.detail
                << " | " << fmt(secs, 1) << " s" << std::endl;
      failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "acceptance error: " << e.what() << "\n";
    return 2;
  }
}
