#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "neurofuse/cnn/network.hpp"

namespace neurofuse::cnn {

struct CheckpointInfo {
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string modality;  // "mri", "pet" or "fused"
};

struct Checkpoint {
  Network<float> network;
  CheckpointInfo info;
};

/// Layout: 8-byte magic "NFCKPT01", little-endian uint64 header length, JSON
/// header (architecture, input dims, classes, seed, epoch, modality, blocks),
/// then every parameter as little-endian float32 in declaration order.
void save_checkpoint(const std::filesystem::path& path, const Network<float>& net, const CheckpointInfo& info);

/// Throws IoError, BadMagic, ParseError, TruncatedData.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace neurofuse::cnn
