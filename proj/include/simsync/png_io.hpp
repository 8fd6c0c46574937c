#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace simsync {

struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0;   // 1 (gray) or 4 (RGBA)
    int bit_depth = 8;  // 8 or 16
    // Row-major samples exactly as stored; 16-bit samples are big-endian pairs.
    std::vector<std::uint8_t> bytes;
};

void write_png(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
               std::span<const std::uint8_t> samples);
// 16-bit grayscale from host integers.
void write_png_gray16(const std::filesystem::path& path, int width, int height, std::span<const std::uint16_t> values);
PngImage read_png(const std::filesystem::path& path);

}  // namespace simsync
