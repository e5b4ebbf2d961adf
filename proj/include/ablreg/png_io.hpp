// 8-bit PNG export of rendered views and PNG input for frame sequences.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ablreg/volume.hpp"

namespace ablreg {

/// Encodes an 8-bit image with 1 (gray) or 4 (RGBA) channels.
std::string encode_png(const std::vector<std::uint8_t>& pixels, int width, int height, int channels);
void write_png(const std::string& path, const std::vector<std::uint8_t>& pixels, int width, int height,
               int channels);

/// Reads any PNG as 8-bit gray scaled to [0, 1].
Image2D read_png_gray(const std::string& path, double spacing_x = 1.0, double spacing_y = 1.0);

}  // namespace ablreg
