#pragma once

// A checkpoint is a pair of files: <name>.bin holds every parameter in
// registration order, <name>.json holds the run config, training state and
// the SHA-256 of the .bin file.
//
//   .bin layout (little-endian): "CMCKPT01", u64 count, then per parameter
//   u32 name length, name bytes, u32 rank, i32 dims[rank], f64 values.

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "cloudmamba/model/network.hpp"
#include "cloudmamba/pipeline/config.hpp"

namespace cloudmamba::pipeline {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& file);

// Writes <base>.bin and <base>.json. `meta` is stored in the sidecar next to
// the config, format tag and digest.
void save_checkpoint(const std::filesystem::path& base, const nn::ParameterStore& params, const RunConfig& cfg,
                     const nlohmann::json& meta);

struct LoadedModel {
  RunConfig config;
  nlohmann::json meta;
  std::unique_ptr<model::CloudMambaNet> net;
};

// Accepts the .bin, the .json or the extension-less base path. When
// `expected` is given, differing model fields raise CheckpointMismatch
// naming each field. A digest mismatch or a parameter with an unexpected
// name or shape raises CheckpointMismatch too.
LoadedModel load_checkpoint(const std::filesystem::path& path, const model::ModelConfig* expected = nullptr);

// Copies values into an existing store; names and shapes must match.
void read_parameters(const std::filesystem::path& bin, nn::ParameterStore& params);

}  // namespace cloudmamba::pipeline
