// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ila/checkpoint.hpp"
#include "ila/errors.hpp"
#include "ila/format.hpp"
#include "ila/ops.hpp"

namespace ila {
namespace {

void check_comparable(const std::vector<LayerRanking>& rankings) {
  for (std::size_t i = 1; i < rankings.size(); ++i) {
    if (rankings[i].fingerprint() != rankings[0].fingerprint()) {
      throw ComparisonError("ranking fingerprints differ: " + rankings[0].fingerprint() + " vs " +
                            rankings[i].fingerprint());
    }
    if (rankings[i].layers() != rankings[0].layers()) {
      throw ComparisonError("rankings cover different layer sets");
    }
  }
}

}  // namespace

LayerRanking::LayerRanking(std::vector<RankedLayer> entries, std::string fingerprint,
                           Provenance provenance)
    : entries_(std::move(entries)),
      fingerprint_(std::move(fingerprint)),
      provenance_(std::move(provenance)) {
  for (const RankedLayer& e : entries_) {
    if (!std::isfinite(e.score)) throw NumericError("non-finite score for " + e.layer.str());
  }
  std::sort(entries_.begin(), entries_.end(), [](const RankedLayer& a, const RankedLayer& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.layer < b.layer;
  });
  if (layers().size() != entries_.size()) throw ContractError("ranking lists a layer twice");
}

LayerRanking LayerRanking::from_scores(const ImportanceScores& scores, std::string fingerprint,
                                       Provenance provenance) {
  if (scores.layers.size() != scores.scores.size()) {
    throw ContractError("one score per layer required");
  }
  std::vector<RankedLayer> entries;
  for (std::size_t i = 0; i < scores.layers.size(); ++i) {
    entries.push_back({scores.layers[i], scores.scores[i]});
  }
  return LayerRanking(std::move(entries), std::move(fingerprint), std::move(provenance));
}

LayerSet LayerRanking::layers() const {
  LayerSet out;
  for (const RankedLayer& e : entries_) out.insert(e.layer);
  return out;
}

std::size_t LayerRanking::rank_of(const LayerId& layer) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].layer == layer) return i;
  }
  throw LookupError("layer " + layer.str() + " is not ranked");
}

std::size_t top_count(std::size_t n, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("fraction must lie in (0, 1], got " + shortest(p));
  // Products within 1e-9 of an integer snap to it (0.3 * 10 is 3, not 4).
  const double raw = p * static_cast<double>(n);
  const double rounded = std::round(raw);
  const double k = std::abs(raw - rounded) < 1e-9 ? rounded : std::ceil(raw);
  return std::min(n, static_cast<std::size_t>(k));
}

LayerSet select_top_fraction(const LayerRanking& ranking, double p) {
  const std::size_t k = top_count(ranking.size(), p);
  LayerSet out;
  for (std::size_t i = 0; i < k; ++i) out.insert(ranking.entries()[i].layer);
  return out;
}

LayerSet select_bottom(const LayerRanking& ranking, std::size_t k) {
  const std::size_t n = ranking.size();
  if (k > n) {
    throw ConfigError("cannot take " + std::to_string(k) + " of " + std::to_string(n) + " layers");
  }
  LayerSet out;
  for (std::size_t i = n - k; i < n; ++i) out.insert(ranking.entries()[i].layer);
  return out;
}

double jaccard(const LayerSet& a, const LayerSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const LayerId& id : a) common += b.count(id);
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

std::vector<std::vector<double>> compare_rankings(const std::vector<LayerRanking>& rankings,
                                                  double p) {
  check_comparable(rankings);
  std::vector<LayerSet> tops;
  for (const LayerRanking& r : rankings) tops.push_back(select_top_fraction(r, p));
  const std::size_t n = rankings.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m[i][j] = m[j][i] = jaccard(tops[i], tops[j]);
  }
  return m;
}

LayerSet intersect_unimportant(const std::vector<LayerRanking>& rankings, std::size_t k) {
  if (rankings.size() < 2) throw ContractError("intersection needs at least two rankings");
  check_comparable(rankings);
  LayerSet out = select_bottom(rankings[0], k);
  for (std::size_t i = 1; i < rankings.size(); ++i) {
    const LayerSet next = select_bottom(rankings[i], k);
    LayerSet kept;
    std::set_intersection(out.begin(), out.end(), next.begin(), next.end(),
                          std::inserter(kept, kept.begin()));
    out = std::move(kept);
  }
  return out;
}

double random_baseline_jaccard(std::size_t n, double p, std::size_t trials, std::uint64_t seed) {
  if (n == 0 || trials == 0) throw ConfigError("baseline needs n > 0 and trials > 0");
  const std::size_t k = top_count(n, p);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> perm(n);
  std::vector<char> in_a(n);
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::fill(in_a.begin(), in_a.end(), 0);
    for (std::size_t i = 0; i < k; ++i) in_a[perm[i]] = 1;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::size_t common = 0;
    for (std::size_t i = 0; i < k; ++i) common += static_cast<std::size_t>(in_a[perm[i]]);
    total += static_cast<double>(common) / static_cast<double>(2 * k - common);
  }
  return total / static_cast<double>(trials);
}

nlohmann::json ranking_to_json(const LayerRanking& ranking) {
  nlohmann::json layers = nlohmann::json::array();
  for (const RankedLayer& e : ranking.entries()) {
    nlohmann::json row;
    if (e.layer.is_head()) {
      row["block"] = "head";
    } else {
      row["block"] = e.layer.block;
    }
    row["role"] = role_name(e.layer.role);
    row["score"] = e.score;
    layers.push_back(std::move(row));
  }
  const Provenance& p = ranking.provenance();
  return nlohmann::json{
      {"fingerprint", ranking.fingerprint()},
      {"provenance", {{"dataset", p.dataset}, {"seed", p.seed}, {"milestone", p.milestone}}},
      {"layers", std::move(layers)}};
}

LayerRanking ranking_from_json(const nlohmann::json& j) {
  try {
    std::vector<RankedLayer> entries;
    for (const auto& row : j.at("layers")) {
      LayerId id;
      id.role = role_from_name(row.at("role").get<std::string>());
      if (row.at("block").is_string()) {
        if (row.at("block").get<std::string>() != "head") throw ConfigError("bad block name");
        id.block = LayerId::kHeadBlock;
      } else {
        id.block = row.at("block").get<int>();
      }
      if (id.is_head() != (id.role == Role::kHead)) {
        throw ConfigError("role " + role_name(id.role) + " does not match its block");
      }
      entries.push_back({id, row.at("score").get<double>()});
    }
    const auto& prov = j.at("provenance");
    Provenance p{prov.at("dataset").get<std::string>(), prov.at("seed").get<std::uint64_t>(),
                 prov.at("milestone").get<double>()};
    return LayerRanking(std::move(entries), j.at("fingerprint").get<std::string>(), std::move(p));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed ranking JSON: ") + e.what());
  }
}

void save_ranking(const std::filesystem::path& path, const LayerRanking& ranking) {
  write_file_atomic(path, ranking_to_json(ranking).dump(2) + "\n");
}

LayerRanking load_ranking(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ranking " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("ranking " + path.string() + " is not valid JSON: " + e.what());
  }
  return ranking_from_json(j);
}

std::string heatmap_csv(const LayerRanking& ranking, double important_fraction) {
  const LayerSet important = select_top_fraction(ranking, important_fraction);
  std::vector<RankedLayer> rows = ranking.entries();
  std::sort(rows.begin(), rows.end(),
            [](const RankedLayer& a, const RankedLayer& b) { return a.layer < b.layer; });
  std::ostringstream out;
  out << "block,role,score,gate,rank,important\n";
  for (const RankedLayer& r : rows) {
    out << (r.layer.is_head() ? std::string("head") : std::to_string(r.layer.block)) << ','
        << role_name(r.layer.role) << ',' << shortest(r.score) << ','
        << shortest(ops::kernels::sigmoid(r.score)) << ',' << ranking.rank_of(r.layer) + 1 << ','
        << (important.count(r.layer) ? 1 : 0) << '\n';
  }
  return out.str();
}

void export_heatmap(const LayerRanking& ranking, const std::filesystem::path& path) {
  write_file_atomic(path, heatmap_csv(ranking));
}

}  // namespace ila
