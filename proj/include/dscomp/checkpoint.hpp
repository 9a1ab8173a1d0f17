#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dscomp/diffusion.hpp"
#include "dscomp/image_io.hpp"

namespace dscomp {

/// On-disk layout: 8-byte magic "DSCKPT01", little-endian uint64 header
/// length, a JSON header, then the raw little-endian float32 blob. The header
/// holds the model spec, free-form string metadata and one index entry per
/// tensor (name, shape, byte offset into the blob, precision).
struct CheckpointInfo {
  ModelSpec spec;
  std::map<std::string, std::string> metadata;
};

void save_checkpoint(const std::filesystem::path& path, CompositionModel& model,
                     const std::map<std::string, std::string>& metadata = {});

/// Rebuilds the model from the stored spec and overwrites every parameter.
/// Throws IoError on a malformed file, a missing tensor or a shape mismatch.
CompositionModel load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace dscomp
