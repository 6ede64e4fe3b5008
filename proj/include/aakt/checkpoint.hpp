#pragma once

// Checkpoint container:
//
//   "AAKTCKPT"  u32 version  u32 header_bytes  header (JSON model config)
//   u32 tensor_count, then per tensor:
//   u32 name_bytes  name  u32 rows  u32 cols  rows*cols float32
//
// All integers and floats little-endian; tensors row-major.

#include <filesystem>
#include <string>
#include <string_view>

#include "aakt/model.hpp"

namespace aakt {

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams<float>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace aakt
