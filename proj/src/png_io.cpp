// SPDX-License-Identifier: Apache-2.0
#include "veggie/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "veggie/errors.hpp"

namespace veggie::png {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    std::uint32_t crc = crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, crc);
}

std::vector<std::uint8_t> zlib_compress(const std::vector<std::uint8_t>& in) {
    uLongf bound = compressBound(static_cast<uLong>(in.size()));
    std::vector<std::uint8_t> out(bound);
    if (compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6) != Z_OK)
        throw IoError("zlib compress failed");
    out.resize(bound);
    return out;
}

std::vector<std::uint8_t> zlib_decompress(const std::uint8_t* in, size_t len, size_t expect) {
    std::vector<std::uint8_t> out(expect);
    uLongf dlen = static_cast<uLongf>(expect);
    int rc = uncompress(out.data(), &dlen, in, static_cast<uLong>(len));
    if (rc != Z_OK || dlen != expect) throw IoError("zlib decompress failed");
    return out;
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

const std::uint8_t kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace

std::vector<std::uint8_t> encode(const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw IoError("png encode: channels must be 1 or 3");
    if (img.pixels.size() != static_cast<size_t>(img.height) * img.width * img.channels)
        throw IoError("png encode: pixel buffer size mismatch");
    std::vector<std::uint8_t> out(kSig, kSig + 8);

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);           // color type
    ihdr.push_back(0);                                   // compression
    ihdr.push_back(0);                                   // filter method
    ihdr.push_back(0);                                   // no interlace
    put_chunk(out, "IHDR", ihdr);

    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter type none on every scanline
        raw.insert(raw.end(), img.pixels.begin() + y * stride,
                   img.pixels.begin() + (y + 1) * stride);
    }
    put_chunk(out, "IDAT", zlib_compress(raw));
    put_chunk(out, "IEND", {});
    return out;
}

Image decode(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
        throw IoError("png decode: bad signature");
    size_t pos = 8;
    Image img;
    std::vector<std::uint8_t> idat;
    while (pos + 12 <= bytes.size()) {
        std::uint32_t len = get_u32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw IoError("png decode: truncated chunk");
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const std::uint8_t* data = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("png decode: bad IHDR");
            img.width = static_cast<int>(get_u32(data));
            img.height = static_cast<int>(get_u32(data + 4));
            int depth = data[8], color = data[9];
            if (depth != 8 || (color != 0 && color != 2) || data[12] != 0)
                throw IoError("png decode: unsupported format");
            img.channels = (color == 0) ? 1 : 3;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (img.width <= 0 || img.height <= 0) throw IoError("png decode: missing IHDR");
    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    const size_t expect = (stride + 1) * img.height;
    std::vector<std::uint8_t> raw = zlib_decompress(idat.data(), idat.size(), expect);

    img.pixels.resize(stride * img.height);
    const int bpp = img.channels;
    for (int y = 0; y < img.height; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = &raw[y * (stride + 1) + 1];
        std::uint8_t* cur = &img.pixels[y * stride];
        const std::uint8_t* up = (y > 0) ? &img.pixels[(y - 1) * stride] : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            int a = (x >= static_cast<size_t>(bpp)) ? cur[x - bpp] : 0;
            int b = up ? up[x] : 0;
            int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw IoError("png decode: bad filter type");
            }
            cur[x] = static_cast<std::uint8_t>(v & 0xff);
        }
    }
    return img;
}

void write_file(const std::string& path, const Image& img) {
    std::vector<std::uint8_t> bytes = encode(img);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

Image read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode(bytes);
}

}  // namespace veggie::png
