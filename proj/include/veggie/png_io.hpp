// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace veggie::png {

struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1 (gray) or 3 (rgb)
    std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

/// Encodes an 8-bit grayscale or RGB image. Deterministic byte output.
std::vector<std::uint8_t> encode(const Image& img);

/// Decodes bit-depth-8 PNGs of color type 0 (gray) or 2 (rgb), filters 0-4.
Image decode(const std::vector<std::uint8_t>& bytes);

void write_file(const std::string& path, const Image& img);
Image read_file(const std::string& path);

}  // namespace veggie::png
