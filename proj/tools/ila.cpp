// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// ila: command-line driver for the train -> rank -> jaccard/finetune/verify
// pipeline. Every command writes manifest.json into its --out directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
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
#include "json.hpp"

#ifndef ILA_VERSION
#define ILA_VERSION "0.1.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int run(const std::vector<std::string>& argv);

std::string timestamp(bool fixed_clock) {
  if (fixed_clock) return "1970-01-01T00:00:00Z";
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct DataFlags {
  std::string synthetic;
  std::string data;
  std::size_t size = 2000;
  std::uint64_t gen_seed = 11;
  std::uint64_t vocab_seed = 7;
  bool unstyled = false;
  std::size_t batch_size = 16;
  std::size_t probe_batches = 8;

  void add(CLI::App* app) {
    app->add_option("--synthetic", synthetic, "Synthetic task family (reverse, uppercase, wrap, sort, mix)");
    app->add_option("--data", data, "Dataset JSONL file");
    app->add_option("--size", size, "Synthetic dataset size");
    app->add_option("--gen-seed", gen_seed, "Synthetic generation seed");
    app->add_option("--vocab-seed", vocab_seed, "Synthetic item alphabet seed");
    app->add_flag("--unstyled", unstyled, "Omit the response style markers");
    app->add_option("--batch-size", batch_size, "Examples per batch");
    app->add_option("--probe-batches", probe_batches, "Held-out probe batches");
  }

  std::vector<ila::InstructionExample> load() const {
    if (synthetic.empty() == data.empty()) {
      throw UsageError("exactly one of --synthetic or --data is required");
    }
    if (!data.empty()) return ila::read_jsonl(data);
    ila::SyntheticTaskSpec spec;
    spec.family = ila::family_from_name(synthetic);
    spec.size = size;
    spec.vocab_seed = vocab_seed;
    spec.styled = !unstyled;
    return ila::generate_dataset(spec, gen_seed);
  }

  std::string name() const {
    if (!data.empty()) return fs::path(data).stem().string();
    return synthetic + (unstyled ? "-unstyled" : "");
  }

  ila::BatchPlan plan(const ila::ModelConfig& config, std::uint64_t seed) const {
    return ila::make_batches(load(), batch_size, static_cast<std::size_t>(config.seq_len), seed,
                             probe_batches);
  }
};

// Shared state of one command invocation.
struct Context {
  std::string command;
  std::vector<std::string> args;  // replayable arguments, --out removed
  CLI::App* app = nullptr;
  fs::path out;
  bool fixed_clock = false;
  std::string started;
  json resolved = json::object();
  json inputs = json::array();
  std::vector<std::string> outputs;

  void prepare() {
    if (out.empty()) throw UsageError("--out is required");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw ila::IoError("cannot create " + out.string() + ": " + ec.message());
    started = timestamp(fixed_clock);
  }

  void input(const std::string& path) { inputs.push_back(path); }

  void write(const std::string& name, const std::string& bytes) {
    ila::write_file_atomic(out / name, bytes);
    outputs.push_back(name);
  }

  void wrote(const std::string& name) { outputs.push_back(name); }

  void finish(const std::string& status = "ok") {
    json options = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      const std::string name = opt->get_name(false, true);
      if (opt == app->get_help_ptr() || name == "--out") continue;
      if (opt->count() > 0) {
        const auto& r = opt->results();
        options[name] = opt->get_expected_max() > 1 ? json(r) : json(r.empty() ? "true" : r.front());
      } else if (opt->get_default_str().empty()) {
        options[name] = nullptr;
      } else {
        options[name] = opt->get_default_str();
      }
    }
    json manifest{{"tool", "ila"},
                  {"version", ILA_VERSION},
                  {"command", command},
                  {"args", args},
                  {"options", options},
                  {"resolved", resolved},
                  {"inputs", inputs},
                  {"outputs", outputs},
                  {"status", status},
                  {"started", started},
                  {"finished", timestamp(fixed_clock)}};
    ila::write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
  }
};

std::string trace_csv(const std::vector<ila::ProbePoint>& trace) {
  std::ostringstream s;
  s << "step,probe_loss\n";
  for (const auto& p : trace) s << p.step << ',' << ila::shortest(p.loss) << '\n';
  return s.str();
}

ila::Checkpoint load_input_checkpoint(Context& ctx, const std::string& path) {
  ctx.input(path);
  return ila::load_checkpoint(path);
}

// ---- pretrain -------------------------------------------------------------

struct PretrainFlags {
  DataFlags data;
  ila::ModelConfig model;
  int steps = 6000;
  double lr = 3e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

void setup_pretrain(CLI::App* app, PretrainFlags& f) {
  f.data.add(app);
  app->add_option("--blocks", f.model.blocks);
  app->add_option("--d-model", f.model.d_model);
  app->add_option("--heads", f.model.heads);
  app->add_option("--d-ffn", f.model.d_ffn);
  app->add_option("--seq-len", f.model.seq_len);
  app->add_option("--model-seed", f.model.seed, "Weight initialization seed");
  app->add_option("--steps", f.steps, "Optimizer steps");
  app->add_option("--lr", f.lr);
  app->add_option("--weight-decay", f.weight_decay);
  app->add_option("--seed", f.seed, "Batching and batch-order seed");
}

void cmd_pretrain(Context& ctx, const PretrainFlags& f) {
  ctx.prepare();
  f.model.validate();
  const ila::ModelParams init = ila::init_model(f.model);
  const ila::BatchPlan plan = f.data.plan(f.model, f.seed);
  ila::OptimizerConfig oc;
  oc.lr = f.lr;
  oc.weight_decay = f.weight_decay;
  oc.max_steps = f.steps;
  ila::Trainer trainer(init, ila::init_fft(init), plan, oc, f.seed, true);
  while (trainer.steps_done() < f.steps) trainer.step();
  const ila::ModelParams base = ila::merge_all(trainer.params(), trainer.adapters());
  const ila::Metrics m = ila::evaluate(base, nullptr, {}, plan.probe);
  ila::save_checkpoint(ctx.out / "base.ilac", base, nullptr,
                       json{{"stage", "pretrain"}, {"step", f.steps}, {"dataset", f.data.name()}});
  ctx.wrote("base.ilac");
  ctx.resolved = {{"probe_loss", m.loss}, {"probe_token_accuracy", m.token_accuracy},
                  {"fingerprint", f.model.fingerprint()}};
  std::cout << "pretrained " << f.steps << " steps, probe loss " << ila::shortest(m.loss) << "\n";
  ctx.finish();
}

// ---- gen-data --------------------------------------------------------------

struct GenFlags {
  std::string family = "reverse";
  std::size_t size = 2000;
  std::uint64_t gen_seed = 11;
  std::uint64_t vocab_seed = 7;
  bool unstyled = false;
};

void setup_gen(CLI::App* app, GenFlags& f) {
  app->add_option("--family", f.family);
  app->add_option("--size", f.size);
  app->add_option("--gen-seed", f.gen_seed);
  app->add_option("--vocab-seed", f.vocab_seed);
  app->add_flag("--unstyled", f.unstyled);
}

void cmd_gen(Context& ctx, const GenFlags& f) {
  ctx.prepare();
  ila::SyntheticTaskSpec spec;
  spec.family = ila::family_from_name(f.family);
  spec.size = f.size;
  spec.vocab_seed = f.vocab_seed;
  spec.styled = !f.unstyled;
  ila::write_jsonl(ctx.out / "dataset.jsonl", ila::generate_dataset(spec, f.gen_seed));
  ctx.wrote("dataset.jsonl");
  ctx.finish();
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
  DataFlags data;
  std::string base;
  ila::ModelConfig model;
  std::string mode = "lora";
  int rank = 4;
  std::optional<double> lora_scale;
  std::optional<double> lr;
  std::optional<double> weight_decay;
  int max_steps = 800;
  double epsilon = 1e-3;
  bool absolute_epsilon = false;
  int window = 20;
  int probe_interval = 10;
  std::uint64_t seed = 0;
  bool milestones = false;
  int stable_checkpoints = 0;
};

void setup_train(CLI::App* app, TrainFlags& f) {
  f.data.add(app);
  app->add_option("--base", f.base, "Base checkpoint (default: fresh initialization)");
  app->add_option("--model-seed", f.model.seed, "Initialization seed without --base");
  app->add_option("--mode", f.mode, "lora or fft");
  app->add_option("--rank", f.rank, "LoRA rank");
  app->add_option("--lora-scale", f.lora_scale, "LoRA scale (default 2/rank)");
  app->add_option("--lr", f.lr, "Stage-1 learning rate (default 2e-3 lora, 5e-4 fft)");
  app->add_option("--weight-decay", f.weight_decay, "Stage-1 weight decay (default 2.0 lora, 0.1 fft)");
  app->add_option("--max-steps", f.max_steps);
  app->add_option("--epsilon", f.epsilon, "Stability threshold, relative to the first probe loss");
  app->add_flag("--absolute-epsilon", f.absolute_epsilon, "Treat --epsilon as an absolute loss delta");
  app->add_option("--window", f.window, "Consecutive stable probes required");
  app->add_option("--probe-interval", f.probe_interval, "Steps between probe evaluations");
  app->add_option("--seed", f.seed, "Batching, batch-order and adapter seed");
  app->add_flag("--milestones", f.milestones, "Also save checkpoints at 1/25/50/75/100% of T");
  app->add_option("--stable-checkpoints", f.stable_checkpoints,
                  "Save the last K per-step states up to T for theorem checks");
}

std::string milestone_name(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "milestone_%03d.ilac", static_cast<int>(std::lround(fraction * 100)));
  return buf;
}

std::string stable_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "stable_%03d.ilac", index);
  return buf;
}

void cmd_train(Context& ctx, const TrainFlags& f) {
  ctx.prepare();
  const ila::AdapterMode mode = ila::mode_from_name(f.mode);
  const bool lora = mode == ila::AdapterMode::kLora;
  ila::ModelParams params;
  if (!f.base.empty()) {
    params = load_input_checkpoint(ctx, f.base).params;
  } else {
    f.model.validate();
    params = ila::init_model(f.model);
  }
  const double scale = f.lora_scale.value_or(2.0 / f.rank);
  if (f.stable_checkpoints < 0) throw ila::ConfigError("--stable-checkpoints must be >= 0");

  ila::IlaConfig ic;
  ic.stage1 = ila::stage1_defaults(mode);
  if (f.lr) ic.stage1.lr = *f.lr;
  if (f.weight_decay) ic.stage1.weight_decay = *f.weight_decay;
  ic.stage1.max_steps = f.max_steps;
  ic.stability.epsilon = f.epsilon;
  ic.stability.relative = !f.absolute_epsilon;
  ic.stability.window = f.window;
  ic.stability.probe_interval = f.probe_interval;
  ic.data_seed = f.seed;
  ctx.resolved = {{"lr", ic.stage1.lr},
                  {"weight_decay", ic.stage1.weight_decay},
                  {"lora_scale", scale},
                  {"fingerprint", params.config.fingerprint()}};

  const ila::BatchPlan plan = f.data.plan(params.config, f.seed);
  const ila::AdapterSet init = lora ? ila::init_lora(params, f.rank, scale, f.seed) : ila::init_fft(params);

  const std::size_t keep = static_cast<std::size_t>(f.stable_checkpoints);
  std::vector<std::pair<int, ila::AdapterSet>> recent;
  std::vector<ila::ModelParams> recent_params;
  ila::StepObserver observer;
  if (keep > 0) {
    observer = [&](int step, const ila::ModelParams& p, const ila::AdapterSet& a) {
      recent.emplace_back(step, a);
      recent_params.push_back(p);
      if (recent.size() > keep) {
        recent.erase(recent.begin());
        recent_params.erase(recent_params.begin());
      }
    };
  }

  ila::StabilityMonitor monitor(ic.stability);
  ila::StageOneResult result;
  try {
    result = ila::train_until_stable(params, init, plan, monitor, ic, observer);
  } catch (const ila::NotStableError& e) {
    ctx.write("trace.csv", trace_csv(e.trace()));
    ctx.finish("not-stable");
    throw;
  }

  const json meta{{"stage", "stage1"},        {"dataset", f.data.name()}, {"seed", f.seed},
                  {"plan_seed", f.seed},       {"mode", f.mode},           {"step", result.stop_step},
                  {"stop_step", result.stop_step}};
  ila::save_checkpoint(ctx.out / "model.ilac", result.params, &result.adapters, meta);
  ctx.wrote("model.ilac");
  ctx.write("trace.csv", trace_csv(result.trace));

  for (std::size_t i = 0; i < recent.size(); ++i) {
    json m = meta;
    m["step"] = recent[i].first;
    ila::save_checkpoint(ctx.out / stable_name(static_cast<int>(i)), recent_params[i],
                         &recent[i].second, m);
    ctx.wrote(stable_name(static_cast<int>(i)));
  }

  if (f.milestones) {
    const int t = result.stop_step;
    const std::vector<double> fractions{0.01, 0.25, 0.5, 0.75, 1.0};
    std::map<int, std::vector<double>> wanted;
    for (double fr : fractions) wanted[std::max(1, static_cast<int>(std::ceil(fr * t)))].push_back(fr);
    auto save = [&](int step, const ila::ModelParams& p, const ila::AdapterSet& a) {
      auto it = wanted.find(step);
      if (it == wanted.end()) return;
      for (double fr : it->second) {
        json m = meta;
        m["step"] = step;
        m["milestone"] = fr;
        ila::save_checkpoint(ctx.out / milestone_name(fr), p, &a, m);
      }
    };
    ila::StabilityMonitor replay_monitor(ic.stability);
    const ila::StageOneResult replay =
        ila::train_until_stable(params, init, plan, replay_monitor, ic, save);
    if (replay.stop_step != t || !replay.adapters.bitwise_equal(result.adapters)) {
      throw ila::ContractError("milestone replay diverged from the original run");
    }
    for (double fr : fractions) ctx.wrote(milestone_name(fr));
  }

  std::cout << "stable at step " << result.stop_step << ", probe loss "
            << ila::shortest(result.trace.back().loss) << "\n";
  ctx.finish();
}

// ---- rank ------------------------------------------------------------------

struct RankFlags {
  DataFlags data;
  std::string checkpoint;
  double s0 = 4.0;
  int stage2_batches = 128;
  double stage2_step = 1e-2;
  std::uint64_t seed = 0;
  std::optional<double> milestone;
  std::string dataset_name;
};

void setup_rank(CLI::App* app, RankFlags& f) {
  f.data.add(app);
  app->add_option("--checkpoint", f.checkpoint, "Stage-1 checkpoint")->required();
  app->add_option("--s0", f.s0, "Initial importance score");
  app->add_option("--stage2-batches", f.stage2_batches);
  app->add_option("--stage2-step", f.stage2_step, "Gate-score gradient step size");
  app->add_option("--seed", f.seed, "Stage-2 batch-order seed");
  app->add_option("--milestone", f.milestone, "Provenance milestone fraction (default from checkpoint)");
  app->add_option("--dataset-name", f.dataset_name, "Provenance dataset name");
}

void cmd_rank(Context& ctx, const RankFlags& f) {
  ctx.prepare();
  const ila::Checkpoint ck = load_input_checkpoint(ctx, f.checkpoint);
  if (!ck.adapters) throw ila::ContractError(f.checkpoint + " carries no adapters to rank");
  const std::uint64_t plan_seed = ck.metadata.value("plan_seed", std::uint64_t{0});
  const ila::BatchPlan plan = f.data.plan(ck.params.config, plan_seed);
  ila::IlaConfig ic;
  ic.s0 = f.s0;
  ic.stage2_batches = f.stage2_batches;
  ic.stage2_step = f.stage2_step;
  ic.stage2_seed = f.seed;
  const ila::ImportanceScores scores = ila::learn_importance(ck.params, *ck.adapters, plan, ic);
  ila::Provenance prov{f.dataset_name.empty() ? f.data.name() : f.dataset_name, f.seed,
                       f.milestone.value_or(ck.metadata.value("milestone", 1.0))};
  const ila::LayerRanking ranking =
      ila::LayerRanking::from_scores(scores, ck.params.config.fingerprint(), prov);
  ila::save_ranking(ctx.out / "ranking.json", ranking);
  ctx.wrote("ranking.json");
  ila::export_heatmap(ranking, ctx.out / "heatmap.csv");
  ctx.wrote("heatmap.csv");
  ctx.resolved = {{"plan_seed", plan_seed}, {"stage2_batches", f.stage2_batches}};
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    const auto& e = ranking.entries()[i];
    std::cout << i + 1 << "\t" << e.layer.str() << "\t" << ila::shortest(e.score) << "\n";
  }
  ctx.finish();
}

// ---- jaccard ---------------------------------------------------------------

struct JaccardFlags {
  std::vector<std::string> rankings;
  double p = 0.75;
};

void setup_jaccard(CLI::App* app, JaccardFlags& f) {
  app->add_option("rankings", f.rankings, "Ranking JSON files")->required()->expected(2, -1);
  app->add_option("--p", f.p, "Top fraction");
}

void cmd_jaccard(Context& ctx, const JaccardFlags& f) {
  ctx.prepare();
  std::vector<ila::LayerRanking> rankings;
  for (const auto& path : f.rankings) {
    ctx.input(path);
    rankings.push_back(ila::load_ranking(path));
  }
  const auto m = ila::compare_rankings(rankings, f.p);
  std::ostringstream csv;
  csv << "ranking";
  for (const auto& path : f.rankings) csv << ',' << path;
  csv << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    csv << f.rankings[i];
    std::cout << f.rankings[i];
    for (double v : m[i]) {
      csv << ',' << ila::shortest(v);
      char buf[16];
      std::snprintf(buf, sizeof(buf), "\t%.3f", v);
      std::cout << buf;
    }
    csv << '\n';
    std::cout << '\n';
  }
  ctx.write("jaccard.csv", csv.str());
  ctx.finish();
}

// ---- finetune ----------------------------------------------------------------

struct FinetuneFlags {
  DataFlags data;
  std::string base;
  std::vector<std::string> rankings;
  std::string selector;
  bool suite = false;
  std::string mode = "lora";
  int steps = 650;
  std::optional<double> lr;
  double weight_decay = 0.1;
  int rank = 16;
  std::optional<double> lora_scale;
  std::uint64_t seed = 0;
};

void setup_finetune(CLI::App* app, FinetuneFlags& f) {
  f.data.add(app);
  app->add_option("--base", f.base, "Base checkpoint")->required();
  app->add_option("--ranking", f.rankings, "Ranking JSON (repeat for intersection)");
  auto* sel = app->add_option("--selector", f.selector, "e.g. all, ila-top:0.3, freeze-bottom:0.25");
  auto* suite = app->add_flag("--suite", f.suite, "Run the nine-selector ablation suite");
  sel->excludes(suite);
  app->add_option("--mode", f.mode, "lora or fft");
  app->add_option("--steps", f.steps, "Fixed optimizer steps");
  app->add_option("--lr", f.lr, "Learning rate (default 2e-3 lora, 5e-4 fft)");
  app->add_option("--weight-decay", f.weight_decay);
  app->add_option("--rank", f.rank, "LoRA rank");
  app->add_option("--lora-scale", f.lora_scale, "LoRA scale (default 2/rank)");
  app->add_option("--seed", f.seed, "Batching, batch-order and adapter seed");
}

void cmd_finetune(Context& ctx, const FinetuneFlags& f) {
  ctx.prepare();
  if (f.selector.empty() && !f.suite) throw UsageError("one of --selector or --suite is required");
  const ila::AdapterMode mode = ila::mode_from_name(f.mode);
  const ila::ModelParams params = load_input_checkpoint(ctx, f.base).params;
  std::vector<ila::LayerRanking> rankings;
  for (const auto& path : f.rankings) {
    ctx.input(path);
    rankings.push_back(ila::load_ranking(path));
  }
  ila::FinetuneConfig fc;
  fc.optimizer.max_steps = f.steps;
  fc.optimizer.lr = f.lr.value_or(mode == ila::AdapterMode::kLora ? 2e-3 : 5e-4);
  fc.optimizer.weight_decay = f.weight_decay;
  fc.rank = f.rank;
  fc.lora_scale = f.lora_scale.value_or(2.0 / f.rank);
  fc.adapter_seed = f.seed;
  fc.data_seed = f.seed;
  ctx.resolved = {{"lr", fc.optimizer.lr}, {"lora_scale", fc.lora_scale}};
  const ila::BatchPlan plan = f.data.plan(params.config, f.seed);

  std::vector<ila::AblationRow> rows;
  if (f.suite) {
    if (rankings.empty()) throw UsageError("--suite needs --ranking");
    rows = ila::run_ablation_suite(params, plan, rankings.front(), mode, fc);
  } else {
    const ila::LayerSelector s = ila::parse_selector(f.selector, rankings);
    const ila::FinetuneResult r = ila::finetune_with_selector(params, plan, s, mode, fc);
    rows.push_back({s.label(), r.trainable.size(), r.frozen.size(), r.metrics, r.steps, r.seconds});
  }
  if (ctx.fixed_clock) {
    for (auto& r : rows) r.seconds = 0.0;
  }
  const std::string csv = ila::ablation_csv(rows);
  ctx.write(f.suite ? "ablation.csv" : "metrics.csv", csv);
  std::cout << csv;
  ctx.finish();
}

// ---- verify-theorem ------------------------------------------------------------

struct VerifyFlags {
  DataFlags data;
  std::string checkpoint_dir;
  double beta_g = 1e-2;
  double s0 = 4.0;
  std::size_t batches_per_pair = 2;
  std::size_t perturbations = 2;
  std::uint64_t seed = 0;
};

void setup_verify(CLI::App* app, VerifyFlags& f) {
  f.data.add(app);
  app->add_option("--checkpoint-dir", f.checkpoint_dir, "Directory of stable_*.ilac states")->required();
  app->add_option("--beta-g", f.beta_g, "Gate gradient step size");
  app->add_option("--s0", f.s0, "Shared initial gates are sigmoid(s0)");
  app->add_option("--batches-per-pair", f.batches_per_pair);
  app->add_option("--perturbations", f.perturbations, "Random perturbation pairs per sampled point");
  app->add_option("--seed", f.seed, "Perturbation seed");
}

void cmd_verify(Context& ctx, const VerifyFlags& f) {
  ctx.prepare();
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(f.checkpoint_dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("stable_", 0) == 0 && entry.path().extension() == ".ilac") files.push_back(entry.path());
  }
  if (ec) throw ila::IoError("cannot list " + f.checkpoint_dir + ": " + ec.message());
  std::sort(files.begin(), files.end());
  if (files.size() < 2) {
    throw ila::ContractError("need at least two stable_*.ilac checkpoints in " + f.checkpoint_dir +
                             ", found " + std::to_string(files.size()));
  }
  std::vector<ila::AdapterSet> states;
  ila::ModelParams base;
  std::uint64_t plan_seed = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    ila::Checkpoint ck = load_input_checkpoint(ctx, files[i].string());
    if (!ck.adapters) throw ila::ContractError(files[i].string() + " carries no adapters");
    if (i == 0) {
      base = ck.params;
      plan_seed = ck.metadata.value("plan_seed", std::uint64_t{0});
    } else if (!ck.params.bitwise_equal(base)) {
      throw ila::ContractError(files[i].string() + " does not share the base of " + files[0].string());
    }
    states.push_back(std::move(*ck.adapters));
  }
  ila::BatchPlan plan = f.data.plan(base.config, plan_seed);
  const std::size_t n_layers = states.front().size();
  ila::TransformerObjective objective(base, std::move(states), std::move(plan.train),
                                      std::move(plan.probe));
  const std::vector<double> gates(n_layers, ila::ops::kernels::sigmoid(f.s0));
  ila::EstimationOptions opt;
  opt.batches_per_pair = f.batches_per_pair;
  opt.perturbations = f.perturbations;
  opt.seed = f.seed;
  const ila::TheoremReport report = ila::verify_theorem(objective, gates, f.beta_g, opt);
  ctx.write("theorem_report.csv", ila::theorem_report_csv(report));
  ctx.write("theorem_summary.json", ila::theorem_summary_json(report).dump(2) + "\n");
  std::cout << "pairs checked " << report.rows.size() << ", held-out holding rate "
            << ila::shortest(report.held_out_rate) << "\n";
  for (const auto& w : report.estimates.warnings) std::cerr << "warning: " << w << "\n";
  ctx.finish();
}

// ---- replay ------------------------------------------------------------------

int cmd_replay(const std::string& manifest_path, const std::string& out) {
  std::ifstream in(manifest_path);
  if (!in) throw ila::IoError("cannot open manifest " + manifest_path);
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw ila::ConfigError("manifest " + manifest_path + " is not valid JSON: " + e.what());
  }
  std::vector<std::string> argv{m.at("command").get<std::string>()};
  for (const auto& a : m.at("args")) argv.push_back(a.get<std::string>());
  argv.push_back("--out");
  argv.push_back(out);
  return run(argv);
}

std::vector<std::string> strip_out(const std::vector<std::string>& args) {
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out") {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) continue;
    kept.push_back(args[i]);
  }
  return kept;
}

int run(const std::vector<std::string>& argv) {
  CLI::App app{"Layer importance learning on a toy transformer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ILA_VERSION);

  Context ctx;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--out", ctx.out, "Output directory");
    sub->add_flag("--fixed-clock", ctx.fixed_clock, "Zero timestamps and wall times");
    sub->option_defaults()->always_capture_default();
  };

  PretrainFlags pretrain;
  GenFlags gen;
  TrainFlags train;
  RankFlags rank;
  JaccardFlags jac;
  FinetuneFlags finetune;
  VerifyFlags verify;
  std::string replay_manifest, replay_out;

  auto* s_pretrain = app.add_subcommand("pretrain", "Train a base model from scratch");
  auto* s_gen = app.add_subcommand("gen-data", "Write a synthetic dataset as JSONL");
  auto* s_train = app.add_subcommand("train", "Stage 1: fine-tune deltas until stable");
  auto* s_rank = app.add_subcommand("rank", "Stage 2: learn layer importance scores");
  auto* s_jac = app.add_subcommand("jaccard", "Pairwise top-p Jaccard of rankings");
  auto* s_ft = app.add_subcommand("finetune", "Fine-tune a selected subset of layers");
  auto* s_verify = app.add_subcommand("verify-theorem", "Check the gate-step stability bound");
  auto* s_replay = app.add_subcommand("replay", "Re-run a command from its manifest");
  for (auto* s : {s_pretrain, s_gen, s_train, s_rank, s_jac, s_ft, s_verify}) common(s);
  setup_pretrain(s_pretrain, pretrain);
  setup_gen(s_gen, gen);
  setup_train(s_train, train);
  setup_rank(s_rank, rank);
  setup_jaccard(s_jac, jac);
  setup_finetune(s_ft, finetune);
  setup_verify(s_verify, verify);
  s_replay->add_option("manifest", replay_manifest, "manifest.json of an earlier run")->required();
  s_replay->add_option("--out", replay_out, "Output directory")->required();

  std::vector<std::string> reversed(argv.rbegin(), argv.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (s_replay->parsed()) return cmd_replay(replay_manifest, replay_out);

  CLI::App* sub = app.get_subcommands().front();
  ctx.command = sub->get_name();
  ctx.app = sub;
  ctx.args = strip_out(std::vector<std::string>(argv.begin() + 1, argv.end()));

  if (sub == s_pretrain) cmd_pretrain(ctx, pretrain);
  if (sub == s_gen) cmd_gen(ctx, gen);
  if (sub == s_train) cmd_train(ctx, train);
  if (sub == s_rank) cmd_rank(ctx, rank);
  if (sub == s_jac) cmd_jaccard(ctx, jac);
  if (sub == s_ft) cmd_finetune(ctx, finetune);
  if (sub == s_verify) cmd_verify(ctx, verify);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  } catch (const ila::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ila::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
