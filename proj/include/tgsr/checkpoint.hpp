#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "tgsr/config.hpp"
#include "tgsr/text_encoder.hpp"

namespace tgsr {

inline constexpr int kCheckpointFormatVersion = 1;

/// Named float32 tensors plus everything needed to rebuild the modules.
///
/// On disk a checkpoint is a directory holding meta.json and weights.bin.
/// weights.bin is the magic "TGSRWTS1", a u32 record count, then per tensor:
/// u32 name length, name bytes, u8 dtype (0 = float32), u32 rank, u32 dims,
/// and the little-endian float32 payload. meta.json carries the crc32 of
/// weights.bin, the format version, step, kind, vocabulary and config.
struct Checkpoint {
    std::map<std::string, torch::Tensor> tensors;
    Vocabulary vocab;
    TrainConfig config;
    std::int64_t step = 0;
    std::string kind;  // "encoders" or "tgsr"
    int format_version = kCheckpointFormatVersion;
    nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Copies a module's parameters and buffers under "prefix.".
void store_module(Checkpoint& checkpoint, const std::string& prefix, const torch::nn::Module& module);
/// Loads "prefix." tensors into the module; every parameter must be present with a matching shape.
void restore_module(const Checkpoint& checkpoint, const std::string& prefix, torch::nn::Module& module);

/// Order-sensitive crc32 over a module's parameters (freeze checks, determinism tests).
std::uint32_t module_checksum(const torch::nn::Module& module);

}  // namespace tgsr
