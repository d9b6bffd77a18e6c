// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtprop/bsn.hpp"
#include "mtprop/dataset.hpp"
#include "mtprop/meanteacher.hpp"

namespace mtprop::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;

/// FNV-1a 64-bit, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(const void* data, std::size_t size);
std::string hash_json(const json& j);
/// Hash over every feature value and interval of the dataset.
std::string dataset_hash(const Dataset& dataset);

// Config <-> JSON. Missing keys take defaults; unknown keys raise ConfigError.
json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const json& j);
json to_json(const SamplerConfig& c);
SamplerConfig sampler_config_from_json(const json& j);
json to_json(const WarpConfig& c);
WarpConfig warp_config_from_json(const json& j);
json to_json(const mt::TrainConfig& c);
/// Keys absent from `j` keep their value from `base`.
mt::TrainConfig train_config_from_json(const json& j, const mt::TrainConfig& base = {});
json to_json(const bsn::ProposalConfig& c);
bsn::ProposalConfig proposal_config_from_json(const json& j);

json read_json(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Writes meta.json, <id>.bin (little-endian float64, row-major T x D) and
/// <id>.json (intervals) per video.
void save_dataset(const Dataset& dataset, const fs::path& dir);
Dataset load_dataset(const fs::path& dir);

/// Binary tensor file: magic "MTPCKPT1", u32 version, u32 count, then per
/// tensor u32 name length, name bytes, u32 rank, u64 dims, float64 values.
struct NamedTensor {
  std::string name;
  nn::Tensor tensor;
};
void write_tensors(const fs::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const fs::path& path);

/// checkpoint.bin + checkpoint.json (topology, hyperparameters, step, seed).
void save_checkpoint(const mt::TrainerState& state, const fs::path& dir, const json& extra = json::object());
mt::TrainerState load_checkpoint(const fs::path& dir);

/// One JSON object per line with the documented proposal fields.
std::string proposals_jsonl(const std::vector<std::string>& video_ids,
                            const std::vector<std::vector<bsn::Proposal>>& proposals);

/// Fails if `dir` exists and is non-empty unless `force`; creates it otherwise.
void prepare_output_dir(const fs::path& dir, bool force);

}  // namespace mtprop::io
