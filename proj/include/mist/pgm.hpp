#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace mist {

/// Raw contents of a binary (P5) PGM.
struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint32_t maxval = 255;
  std::vector<std::uint16_t> samples;  // row-major
};

/// Reads 8-bit or 16-bit (big-endian) P5 files. Throws IoError naming the file.
PgmImage read_pgm(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const PgmImage& image);

/// Quantizes [0,1] values (clamped) to maxval with round-half-up.
PgmImage to_pgm(const std::vector<float>& pixels, std::size_t width, std::size_t height, std::uint32_t maxval);

}  // namespace mist
