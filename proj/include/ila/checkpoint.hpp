// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint format (all integers little-endian):
//
//   header   "ILAC" | u32 version | u32 record count | u64 total file bytes
//   record   u32 name length | name bytes | u8 dtype | u32 ndims | u64 dims...
//            | payload (f64 little-endian row-major, or raw bytes)
//   trailer  u32 CRC-32 of every preceding byte
//
// dtype 1 is float64, dtype 2 is UTF-8 bytes (used for the "__meta__" JSON
// record). Record names are unique.

#ifndef ILA_CHECKPOINT_HPP_
#define ILA_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>

#include "ila/adapters.hpp"
#include "ila/model.hpp"
#include "json.hpp"

namespace ila {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::optional<AdapterSet> adapters;
  // Always carries "fingerprint" and "config"; callers add e.g. "step".
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const AdapterSet* adapters, nlohmann::json metadata = nlohmann::json::object());

Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Writes `bytes` to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace ila

#endif  // ILA_CHECKPOINT_HPP_
