#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace inspex {

/// Minimal 8-bit grayscale PNG writer (zlib-deflated, one IDAT chunk).
void write_png_gray8(const std::string& path, const uint8_t* pixels, int width, int height);

/// Binary PGM (P5) fallback.
void write_pgm_gray8(const std::string& path, const uint8_t* pixels, int width, int height);

} // namespace inspex
