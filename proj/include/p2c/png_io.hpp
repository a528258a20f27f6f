#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

namespace p2c {

// Interleaved 8-bit image. channels: 1 = gray, 3 = rgb.
struct Image8 {
    int h = 0, w = 0, channels = 0;
    std::vector<std::uint8_t> px;

    std::uint8_t at(int y, int x, int c = 0) const {
        return px[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
    std::uint8_t& at(int y, int x, int c = 0) {
        return px[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
};

namespace pngdetail {

inline void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

inline std::uint32_t read_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void write_chunk(std::ofstream& f, const char type[4], const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> head;
    put_u32(head, static_cast<std::uint32_t>(data.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, body.data(), static_cast<uInt>(body.size())));
    std::vector<std::uint8_t> tail;
    put_u32(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

inline std::vector<std::uint8_t> zlib_compress(const std::vector<std::uint8_t>& in) {
    uLongf bound = ::compressBound(static_cast<uLong>(in.size()));
    std::vector<std::uint8_t> out(bound);
    if (::compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6) != Z_OK)
        throw std::runtime_error("png: zlib compression failed");
    out.resize(bound);
    return out;
}

inline std::vector<std::uint8_t> zlib_decompress(const std::vector<std::uint8_t>& in,
                                                 std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf dst_len = static_cast<uLongf>(expected);
    int rc = ::uncompress(out.data(), &dst_len, in.data(), static_cast<uLong>(in.size()));
    if (rc != Z_OK || dst_len != expected)
        throw std::runtime_error("png: zlib decompression failed");
    return out;
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace pngdetail

inline void png_write(const std::string& path, const Image8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("png_write: 1 or 3 channels supported");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png_write: cannot open " + path);
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(img.w));
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);                                    // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);            // gray / truecolor
    ihdr.push_back(0); ihdr.push_back(0); ihdr.push_back(0);
    pngdetail::write_chunk(f, "IHDR", ihdr);

    std::size_t stride = static_cast<std::size_t>(img.w) * img.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y) {
        raw.push_back(0); // filter: none
        const std::uint8_t* row = img.px.data() + static_cast<std::size_t>(y) * stride;
        raw.insert(raw.end(), row, row + stride);
    }
    pngdetail::write_chunk(f, "IDAT", pngdetail::zlib_compress(raw));
    pngdetail::write_chunk(f, "IEND", {});
    if (!f) throw std::runtime_error("png_write: write failed for " + path);
}

inline Image8 png_read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png_read: cannot open " + path);
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (data.size() < 8 || std::memcmp(data.data(), sig, 8) != 0)
        throw std::runtime_error("png_read: not a PNG file: " + path);

    int w = 0, h = 0, bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    while (pos + 8 <= data.size()) {
        std::uint32_t len = pngdetail::read_u32(&data[pos]);
        if (pos + 12 + len > data.size()) throw std::runtime_error("png_read: truncated chunk");
        std::string type(reinterpret_cast<const char*>(&data[pos + 4]), 4);
        const std::uint8_t* body = &data[pos + 8];
        if (type == "IHDR") {
            w = static_cast<int>(pngdetail::read_u32(body));
            h = static_cast<int>(pngdetail::read_u32(body + 4));
            bit_depth = body[8];
            color_type = body[9];
            interlace = body[12];
        } else if (type == "IDAT") {
            idat.insert(idat.end(), body, body + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw std::runtime_error("png_read: missing IHDR: " + path);
    if (bit_depth != 8) throw std::runtime_error("png_read: only 8-bit supported: " + path);
    if (interlace != 0) throw std::runtime_error("png_read: interlaced PNG not supported: " + path);
    int src_channels = 0;
    switch (color_type) {
        case 0: src_channels = 1; break; // gray
        case 2: src_channels = 3; break; // rgb
        case 4: src_channels = 2; break; // gray + alpha
        case 6: src_channels = 4; break; // rgba
        default: throw std::runtime_error("png_read: palette PNG not supported: " + path);
    }

    std::size_t stride = static_cast<std::size_t>(w) * src_channels;
    std::vector<std::uint8_t> raw =
        pngdetail::zlib_decompress(idat, (stride + 1) * static_cast<std::size_t>(h));

    // unfilter in place into `flat`
    std::vector<std::uint8_t> flat(stride * static_cast<std::size_t>(h));
    int bpp = src_channels;
    for (int y = 0; y < h; ++y) {
        std::uint8_t filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
        const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1;
        std::uint8_t* dst = flat.data() + static_cast<std::size_t>(y) * stride;
        const std::uint8_t* prev = y > 0 ? flat.data() + static_cast<std::size_t>(y - 1) * stride : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
            int b = prev ? prev[i] : 0;
            int c = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - bpp] : 0;
            int x = src[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += pngdetail::paeth(a, b, c); break;
                default: throw std::runtime_error("png_read: bad filter byte");
            }
            dst[i] = static_cast<std::uint8_t>(x & 0xFF);
        }
    }

    // collapse alpha, keep gray as gray and color as rgb
    Image8 img;
    img.h = h;
    img.w = w;
    img.channels = (src_channels <= 2) ? 1 : 3;
    img.px.resize(static_cast<std::size_t>(h) * w * img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::uint8_t* s = flat.data() + (static_cast<std::size_t>(y) * w + x) * src_channels;
            std::uint8_t* d = img.px.data() + (static_cast<std::size_t>(y) * w + x) * img.channels;
            for (int c = 0; c < img.channels; ++c) d[c] = s[c];
        }
    return img;
}

} // namespace p2c
