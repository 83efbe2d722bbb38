#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ocular {

// 8-bit raster, grayscale (1 channel) or RGB (3 channels), row-major with
// channels interleaved as stored in P5/P6 files.
struct ImageBuffer {
    int width = 0, height = 0, channels = 1;
    std::vector<uint8_t> pixels;

    uint8_t& at(int y, int x, int c = 0) {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
    uint8_t at(int y, int x, int c = 0) const {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
};

// Binary PGM (P5) / PPM (P6), maxval 255 only. The reader accepts comment
// lines and arbitrary whitespace in the header, per the format family.
ImageBuffer read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const ImageBuffer& image);

}  // namespace ocular
