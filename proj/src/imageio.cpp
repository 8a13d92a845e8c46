#include "inspex/imageio.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "inspex/errors.hpp"

namespace inspex {

namespace {

void append_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    append_u32_be(out, static_cast<uint32_t>(payload.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc =
        static_cast<uint32_t>(crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
    append_u32_be(out, crc);
}

} // namespace

void write_png_gray8(const std::string& path, const uint8_t* pixels, int width, int height) {
    if (width <= 0 || height <= 0) throw UsageError("write_png_gray8: empty image");

    // Filter byte 0 (None) per scanline.
    std::vector<uint8_t> raw(static_cast<size_t>(height) * (static_cast<size_t>(width) + 1));
    for (int y = 0; y < height; ++y) {
        uint8_t* row = raw.data() + static_cast<size_t>(y) * (static_cast<size_t>(width) + 1);
        row[0] = 0;
        std::memcpy(row + 1, pixels + static_cast<size_t>(y) * static_cast<size_t>(width),
                    static_cast<size_t>(width));
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> deflated(bound);
    if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                  Z_DEFAULT_COMPRESSION) != Z_OK) {
        throw IoError(path + ": deflate failed");
    }
    deflated.resize(bound);

    std::vector<uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<uint8_t> ihdr;
    append_u32_be(ihdr, static_cast<uint32_t>(width));
    append_u32_be(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(0); // grayscale
    ihdr.push_back(0); // compression
    ihdr.push_back(0); // filter
    ihdr.push_back(0); // no interlace
    append_chunk(png, "IHDR", ihdr);
    append_chunk(png, "IDAT", deflated);
    append_chunk(png, "IEND", {});

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    if (!out) throw IoError(path + ": write failed");
}

void write_pgm_gray8(const std::string& path, const uint8_t* pixels, int width, int height) {
    if (width <= 0 || height <= 0) throw UsageError("write_pgm_gray8: empty image");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels),
              static_cast<std::streamsize>(static_cast<size_t>(width) * static_cast<size_t>(height)));
    if (!out) throw IoError(path + ": write failed");
}

} // namespace inspex
