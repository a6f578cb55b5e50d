#pragma once

// Binary model checkpoints:
//   "FLARECKP" | u32 version | u64 header length | JSON header | payload
// The header echoes the model config and lists every tensor with its shape
// and byte offset into the payload; payload values are little-endian IEEE
// floats in the header's dtype. See docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "flare/model.hpp"

namespace flare {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const std::filesystem::path& path, const FlareModel<T>& model,
                     const nlohmann::json& meta = nlohmann::json::object());

struct CheckpointHeader {
  ModelConfig config;
  std::string dtype;  // "f32" or "f64"
  nlohmann::json meta;
  nlohmann::json raw;
};

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Loads into precision T, converting from the stored dtype when needed.
template <class T>
FlareModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointHeader* header = nullptr);

}  // namespace flare
