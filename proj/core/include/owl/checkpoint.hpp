#pragma once

#include <filesystem>
#include <string>

#include "owl/model.hpp"

namespace owl {

// Binary checkpoint layout (all integers u32 little-endian, all values
// IEEE-754 binary64 little-endian):
//
//   magic "OWLM" | version | layers | heads | dim | vocab
//   | mlp_dim | feature_dim | visual_slots | max_seq | tensor_count
//   then per tensor: name_len | name bytes | rows | cols | rows*cols values
//
// Tensors appear in ModelParams::named_tensors() order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::string& bytes);

// Writes `path` atomically plus a JSON manifest at `path` + ".json".
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

// FNV-1a of the serialized bytes, hex encoded. Equals file_fingerprint() of a
// saved checkpoint.
std::string params_fingerprint(const ModelParams& params);

}  // namespace owl
