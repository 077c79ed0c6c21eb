// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Layer rankings and the overlap statistics computed over them.

#ifndef ILA_ANALYSIS_HPP_
#define ILA_ANALYSIS_HPP_

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ila/ila_core.hpp"
#include "ila/model.hpp"
#include "json.hpp"

namespace ila {

using LayerSet = std::set<LayerId>;

struct Provenance {
  std::string dataset;
  std::uint64_t seed = 0;
  double milestone = 1.0;

  bool operator==(const Provenance&) const = default;
};

struct RankedLayer {
  LayerId layer;
  double score = 0.0;

  bool operator==(const RankedLayer&) const = default;
};

// Entries sorted by descending score, ties by LayerId order.
class LayerRanking {
 public:
  LayerRanking() = default;
  LayerRanking(std::vector<RankedLayer> entries, std::string fingerprint, Provenance provenance);

  static LayerRanking from_scores(const ImportanceScores& scores, std::string fingerprint,
                                  Provenance provenance);

  const std::vector<RankedLayer>& entries() const { return entries_; }
  const std::string& fingerprint() const { return fingerprint_; }
  const Provenance& provenance() const { return provenance_; }
  std::size_t size() const { return entries_.size(); }
  LayerSet layers() const;

  // 0-based position of `layer`; throws LookupError if absent.
  std::size_t rank_of(const LayerId& layer) const;

  bool operator==(const LayerRanking&) const = default;

 private:
  std::vector<RankedLayer> entries_;
  std::string fingerprint_;
  Provenance provenance_;
};

// ceil(p * N) leading entries. Throws ConfigError unless 0 < p <= 1.
LayerSet select_top_fraction(const LayerRanking& ranking, double p);
std::size_t top_count(std::size_t n, double p);

// The last k entries. Throws ConfigError if k > N.
LayerSet select_bottom(const LayerRanking& ranking, std::size_t k);

// |A & B| / |A | B|; two empty sets give 1.0.
double jaccard(const LayerSet& a, const LayerSet& b);

// Pairwise top-p Jaccard matrix. Throws ComparisonError when fingerprints or
// layer universes differ.
std::vector<std::vector<double>> compare_rankings(const std::vector<LayerRanking>& rankings,
                                                  double p);

// Intersection of every ranking's bottom-k set.
LayerSet intersect_unimportant(const std::vector<LayerRanking>& rankings, std::size_t k);

// Mean Jaccard of two independent uniform ceil(p * n)-subsets of n items,
// estimated from `trials` simulated pairs.
double random_baseline_jaccard(std::size_t n, double p, std::size_t trials = 200000,
                               std::uint64_t seed = 0x5eed);

nlohmann::json ranking_to_json(const LayerRanking& ranking);
LayerRanking ranking_from_json(const nlohmann::json& j);
void save_ranking(const std::filesystem::path& path, const LayerRanking& ranking);
LayerRanking load_ranking(const std::filesystem::path& path);

// Columns block, role, score, gate, rank, important; rows in layer order.
std::string heatmap_csv(const LayerRanking& ranking, double important_fraction = 0.75);
void export_heatmap(const LayerRanking& ranking, const std::filesystem::path& path);

}  // namespace ila

#endif  // ILA_ANALYSIS_HPP_
