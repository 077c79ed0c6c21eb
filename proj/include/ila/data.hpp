// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic instruction data, byte-level tokenization and batching.

#ifndef ILA_DATA_HPP_
#define ILA_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ila/model.hpp"

namespace ila {

// Byte-level vocabulary: 0..255 are raw bytes, followed by four specials.
inline constexpr int kPad = 256;
inline constexpr int kBos = 257;
inline constexpr int kSep = 258;
inline constexpr int kEos = 259;
inline constexpr int kVocabSize = 260;

std::vector<int> tokenize(std::string_view text);
std::string detokenize(const std::vector<int>& ids);

struct InstructionExample {
  std::string instruction;
  std::string response;

  bool operator==(const InstructionExample&) const = default;
};

enum class TaskFamily { kReverse, kUppercase, kWrap, kSort, kMix };

std::string family_name(TaskFamily family);
TaskFamily family_from_name(const std::string& name);

// Response formatting shared by every family. The content transformation is
// what a family teaches; the markers are the "style".
struct StyleMarkers {
  std::string prefix = "=> ";
  std::string suffix = " <=";
};

struct SyntheticTaskSpec {
  TaskFamily family = TaskFamily::kReverse;
  std::uint64_t vocab_seed = 7;  // picks the item alphabet
  std::size_t size = 2000;
  StyleMarkers style;
  bool styled = true;  // false: bare content, used for base pretraining
  int min_items = 3;
  int max_items = 6;
};

// Pure function of (spec, seed). Throws ConfigError for size == 0.
std::vector<InstructionExample> generate_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed);

std::vector<InstructionExample> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<InstructionExample>& examples);

// Layout: BOS instruction SEP response EOS PAD... Position j predicts token
// j+1; targets are set only where token j+1 belongs to the response or is the
// EOS, and are ops::kIgnoreTarget elsewhere.
struct Batch {
  std::size_t id = 0;
  TokenBatch tokens;
  std::vector<int> targets;  // [batch*seq]
};

struct BatchPlan {
  std::vector<Batch> probe;  // fixed held-out set, drawn first
  std::vector<Batch> train;
};

// Shuffles with `seed`, drops examples longer than seq_len, reserves
// `probe_batches` batches, and chunks the rest into training batches. Each
// batch is padded to its longest member.
BatchPlan make_batches(const std::vector<InstructionExample>& examples, std::size_t batch_size,
                       std::size_t seq_len, std::uint64_t seed, std::size_t probe_batches = 8);

// Deterministic epoch-shuffled walk over training batches.
class BatchStream {
 public:
  BatchStream(const std::vector<Batch>& batches, std::uint64_t seed);
  const Batch& at(std::size_t step);

 private:
  const std::vector<Batch>* batches_;
  std::uint64_t seed_;
  std::size_t epoch_ = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order_;
};

}  // namespace ila

#endif  // ILA_DATA_HPP_
