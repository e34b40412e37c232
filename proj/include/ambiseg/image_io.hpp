#pragma once

#include <string>

#include "ambiseg/raster.hpp"

namespace ambiseg::io {

/// 8-bit PNG, grayscale for 1-channel rasters and RGB for 3-channel ones.
/// Values are clamped to [0,1] and rounded to the nearest level.
void write_png(const Raster& r, const std::string& path);
Raster read_png(const std::string& path);

/// Binary mask as 0 / 255 grayscale.
void write_mask(const Mask& m, const std::string& path);
/// Grayscale read binarized with the >= 128 rule.
Mask read_mask(const std::string& path);

/// 64-bit FNV-1a over a byte string, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);
std::string file_hash(const std::string& path);
std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace ambiseg::io
