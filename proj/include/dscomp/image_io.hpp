#pragma once

#include <filesystem>
#include <stdexcept>

#include "dscomp/tensor.hpp"

namespace dscomp {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PPM (P6) to a [3 x H x W] tensor of 0..255 values, and back.
/// Writing rounds and clamps.
Tensor32 read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor32& img);

/// Binary PGM (P5) to [1 x H x W] of 0..255 values, and back.
Tensor32 read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor32& img);

/// Masks stored as PGM with values 0/255; in memory 0/1. Reading thresholds at 128.
Tensor32 read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Tensor32& mask);

}  // namespace dscomp
