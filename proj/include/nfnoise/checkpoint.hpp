#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "nfnoise/tensor.hpp"

namespace nfnoise::inline NFNOISE_ABI {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, little-endian: "NFCK", u32 version, u32 count, then per
// tensor: u16 name length, name bytes, u8 rank, u32 dims, f32 values.

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
/// Throws DataError on a missing file, bad magic, version or truncation.
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace nfnoise::inline NFNOISE_ABI
