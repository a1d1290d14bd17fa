#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pillsort/imaging.hpp"

namespace pillsort {

// 8-bit PNG, gray or RGB. Palette/alpha/16-bit inputs are converted on read.
RasterImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RasterImage& img);

// Masks are 8-bit gray PNGs, 0 = background, 255 = foreground. On read any
// nonzero sample is foreground, so 1-bit masks load as well.
BinaryMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);

// Baseline JPEG encode/decode through libjpeg; quality in 1..100.
std::vector<std::uint8_t> encode_jpeg(const RasterImage& img, int quality);
RasterImage decode_jpeg(const std::vector<std::uint8_t>& bytes);

}  // namespace pillsort
