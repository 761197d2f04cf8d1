#pragma once

// Binary checkpoints.
//
// Layout (all integers little-endian):
//   "MPCKPT\0\0"  u32 version  u32 section count
//   per section: u32 name length, name, u8 type, u64 rows, u64 cols,
//                u64 offset (from file start), u64 byte length
//   section payloads
//   u32 CRC-32 of every preceding byte
//
// Section types: 0 learnable f64 array, 1 constant f64 array, 2 u64, 3 text.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaplast/autodiff/tensor.hpp"
#include "metaplast/harness/config.hpp"
#include "metaplast/harness/optimizer.hpp"

namespace metaplast::harness {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;  // canonical to_text() of the training config
  ad::ParamSet params;
  OptimizerState optimizer;
  std::string rng_state;  // textual std::mt19937_64 state of the episode-seed stream
  std::uint64_t update = 0;  // outer updates completed

  TrainConfig config() const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metaplast::harness
