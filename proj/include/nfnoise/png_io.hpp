#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nfnoise/real.hpp"

namespace nfnoise::inline NFNOISE_ABI {

/// 8-bit RGB image stored as planes [3,H,W].
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> planes;
};

/// Reads any PNG as 8-bit RGB (gray is replicated, alpha dropped, 16-bit
/// reduced). Throws DataError.
RgbImage read_png(const std::filesystem::path& path);
/// Throws DataError when the file cannot be written.
void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace nfnoise::inline NFNOISE_ABI
