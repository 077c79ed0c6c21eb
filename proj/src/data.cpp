// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

#include "ila/errors.hpp"
#include "ila/ops.hpp"

namespace ila {
namespace {

constexpr TaskFamily kConcreteFamilies[] = {TaskFamily::kReverse, TaskFamily::kUppercase,
                                            TaskFamily::kWrap, TaskFamily::kSort};

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string instruction_verb(TaskFamily f) {
  switch (f) {
    case TaskFamily::kReverse: return "reverse";
    case TaskFamily::kUppercase: return "upper";
    case TaskFamily::kWrap: return "wrap";
    case TaskFamily::kSort: return "sort";
    case TaskFamily::kMix: break;
  }
  throw ContractError("mix is not a concrete family");
}

std::vector<std::string> transform(TaskFamily f, std::vector<std::string> items) {
  switch (f) {
    case TaskFamily::kReverse:
      std::reverse(items.begin(), items.end());
      break;
    case TaskFamily::kUppercase:
      for (auto& s : items) {
        for (char& c : s) c = static_cast<char>(c - 'a' + 'A');
      }
      break;
    case TaskFamily::kWrap:
      for (auto& s : items) s = "(" + s + ")";
      break;
    case TaskFamily::kSort:
      std::sort(items.begin(), items.end());
      break;
    case TaskFamily::kMix:
      throw ContractError("mix is not a concrete family");
  }
  return items;
}

std::vector<std::string> alphabet_for(std::uint64_t vocab_seed) {
  std::vector<char> letters(26);
  std::iota(letters.begin(), letters.end(), 'a');
  std::mt19937_64 rng(vocab_seed);
  std::shuffle(letters.begin(), letters.end(), rng);
  letters.resize(16);
  std::sort(letters.begin(), letters.end());
  std::vector<std::string> out;
  for (char c : letters) out.emplace_back(1, c);
  return out;
}

Batch build_batch(const std::vector<std::vector<int>>& seqs,
                  const std::vector<std::size_t>& response_start, std::size_t id) {
  std::size_t seq = 0;
  for (const auto& s : seqs) seq = std::max(seq, s.size());
  Batch b;
  b.id = id;
  b.tokens.batch = seqs.size();
  b.tokens.seq = seq;
  b.tokens.tokens.assign(seqs.size() * seq, kPad);
  b.targets.assign(seqs.size() * seq, ops::kIgnoreTarget);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    std::copy(seqs[r].begin(), seqs[r].end(), b.tokens.tokens.begin() + static_cast<long>(r * seq));
    for (std::size_t j = response_start[r]; j < seqs[r].size(); ++j) {
      b.targets[r * seq + j - 1] = seqs[r][j];
    }
  }
  return b;
}

}  // namespace

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(c);
  return out;
}

std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= kVocabSize) {
      throw IndexError("token " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(kVocabSize));
    }
    if (id >= 256) continue;  // specials have no byte form
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

std::string family_name(TaskFamily family) {
  switch (family) {
    case TaskFamily::kReverse: return "reverse";
    case TaskFamily::kUppercase: return "uppercase";
    case TaskFamily::kWrap: return "wrap";
    case TaskFamily::kSort: return "sort";
    case TaskFamily::kMix: return "mix";
  }
  return "?";
}

TaskFamily family_from_name(const std::string& name) {
  for (TaskFamily f : {TaskFamily::kReverse, TaskFamily::kUppercase, TaskFamily::kWrap,
                       TaskFamily::kSort, TaskFamily::kMix}) {
    if (family_name(f) == name) return f;
  }
  throw ConfigError("unknown synthetic task '" + name +
                    "' (expected reverse, uppercase, wrap, sort or mix)");
}

std::vector<InstructionExample> generate_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  if (spec.size == 0) throw ConfigError("synthetic dataset size must be > 0");
  if (spec.min_items < 1 || spec.max_items < spec.min_items) {
    throw ConfigError("synthetic item counts must satisfy 1 <= min <= max");
  }
  const std::vector<std::string> alphabet = alphabet_for(spec.vocab_seed);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(spec.min_items, spec.max_items);
  std::uniform_int_distribution<std::size_t> item_dist(0, alphabet.size() - 1);
  std::uniform_int_distribution<std::size_t> family_dist(0, 3);

  std::vector<InstructionExample> out;
  out.reserve(spec.size);
  for (std::size_t i = 0; i < spec.size; ++i) {
    TaskFamily f = spec.family;
    if (f == TaskFamily::kMix) f = kConcreteFamilies[family_dist(rng)];
    std::vector<std::string> items(static_cast<std::size_t>(count_dist(rng)));
    for (auto& s : items) s = alphabet[item_dist(rng)];
    std::string content = join(transform(f, items), " ");
    if (spec.styled) content = spec.style.prefix + content + spec.style.suffix;
    out.push_back({instruction_verb(f) + ": " + join(items, " "), std::move(content)});
  }
  return out;
}

std::vector<InstructionExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<InstructionExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      InstructionExample ex{j.at("instruction").get<std::string>(),
                            j.at("response").get<std::string>()};
      if (ex.instruction.empty() || ex.response.empty()) {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                          ": instruction and response must be non-empty");
      }
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<InstructionExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  for (const auto& ex : examples) {
    out << nlohmann::json{{"instruction", ex.instruction}, {"response", ex.response}}.dump()
        << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

BatchPlan make_batches(const std::vector<InstructionExample>& examples, std::size_t batch_size,
                       std::size_t seq_len, std::uint64_t seed, std::size_t probe_batches) {
  if (batch_size == 0) throw ConfigError("batch size must be > 0");
  std::vector<std::vector<int>> seqs;
  std::vector<std::size_t> starts;
  for (const auto& ex : examples) {
    std::vector<int> s{kBos};
    for (int t : tokenize(ex.instruction)) s.push_back(t);
    s.push_back(kSep);
    const std::size_t start = s.size();
    for (int t : tokenize(ex.response)) s.push_back(t);
    s.push_back(kEos);
    if (s.size() > seq_len) continue;
    seqs.push_back(std::move(s));
    starts.push_back(start);
  }
  if (seqs.empty()) {
    throw ConfigError("every example exceeds seq_len " + std::to_string(seq_len));
  }
  if (seqs.size() < (probe_batches + 1) * batch_size) {
    throw ConfigError("need at least " + std::to_string((probe_batches + 1) * batch_size) +
                      " usable examples for " + std::to_string(probe_batches) +
                      " probe batches plus one training batch, have " +
                      std::to_string(seqs.size()));
  }

  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  BatchPlan plan;
  std::size_t id = 0;
  for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
    const std::size_t end = std::min(order.size(), pos + batch_size);
    std::vector<std::vector<int>> chunk;
    std::vector<std::size_t> chunk_starts;
    for (std::size_t i = pos; i < end; ++i) {
      chunk.push_back(seqs[order[i]]);
      chunk_starts.push_back(starts[order[i]]);
    }
    Batch b = build_batch(chunk, chunk_starts, id++);
    if (plan.probe.size() < probe_batches) {
      plan.probe.push_back(std::move(b));
    } else {
      plan.train.push_back(std::move(b));
    }
  }
  return plan;
}

BatchStream::BatchStream(const std::vector<Batch>& batches, std::uint64_t seed)
    : batches_(&batches), seed_(seed) {
  if (batches.empty()) throw ConfigError("no training batches");
}

const Batch& BatchStream::at(std::size_t step) {
  const std::size_t n = batches_->size();
  const std::size_t epoch = step / n;
  if (epoch != epoch_) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    std::mt19937_64 rng(seed_ * 0x9E3779B97F4A7C15ULL + epoch);
    std::shuffle(order_.begin(), order_.end(), rng);
    epoch_ = epoch;
  }
  return (*batches_)[order_[step % n]];
}

}  // namespace ila
