#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "ssmsnake/grid.hpp"

namespace ssmsnake {

using Image8 = Grid<std::uint8_t>;

// Binary PGM (P5), maxval 255.
void write_pgm(const std::filesystem::path& path, const Image8& img);
void write_pgm(std::ostream& out, const Image8& img);
Image8 read_pgm(const std::filesystem::path& path);

// Rounds half-up and clamps to [0,255].
Image8 quantize_u8(const RealGrid& g);

}  // namespace ssmsnake
