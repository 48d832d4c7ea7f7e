#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adanat/smallnet.hpp"

namespace adanat {

// Binary layout, all integers and reals little-endian:
//   magic "ADANATCK" | u32 version | u32 n_meta | n_meta x (u32 len, key, u32 len, value)
//   | u32 n_nets | per net: u32 cond_dim, u32 n_layers, n_layers x (u32 kind, in, out, act, zero_init),
//     u64 n_params, n_params x f64
using CheckpointMeta = std::map<std::string, std::string>;

inline constexpr char kCheckpointMagic[9] = "ADANATCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<SmallNet> nets;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Throws MissingArtifactError if the file is absent or malformed.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace adanat
