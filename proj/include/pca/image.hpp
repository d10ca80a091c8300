#pragma once

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pca/tensor.hpp"

namespace pca::image {

/// Interleaved 8-bit RGB rows, top to bottom.
struct ImageU8 {
    int h = 0;
    int w = 0;
    std::vector<unsigned char> rgb;  // h*w*3 bytes

    static ImageU8 blank(int h, int w, unsigned char value = 0) {
        ImageU8 img;
        img.h = h;
        img.w = w;
        img.rgb.assign(static_cast<std::size_t>(h) * w * 3, value);
        return img;
    }

    unsigned char& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    unsigned char at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
};

/// (1,h,w,3) floats in [0,1].
inline Tensor<float> to_float(const ImageU8& img) {
    Tensor<float> t(Shape(1, img.h, img.w, 3));
    for (std::size_t i = 0; i < img.rgb.size(); ++i) t[i] = static_cast<float>(img.rgb[i]) / 255.0f;
    return t;
}

inline ImageU8 from_float(const Tensor<float>& t) {
    const Shape& s = t.shape();
    if (s.n != 1 || s.c != 3) throw std::invalid_argument("from_float: need (1,h,w,3), got " + s.str());
    ImageU8 img = ImageU8::blank(s.h, s.w);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, t[i]));
        img.rgb[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    return img;
}

// --- PPM (binary P6, maxval 255) ---

inline void write_ppm(const std::string& path, const ImageU8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!out) throw std::runtime_error("write_ppm: short write to " + path);
}

inline ImageU8 read_ppm_stream(std::istream& in, const std::string& path) {
    auto next_token = [&in, &path]() {
        std::string tok;
        int ch = in.get();
        // whitespace and '#' comments precede each header token
        while (ch != EOF) {
            if (ch == '#') {
                while (ch != EOF && ch != '\n') ch = in.get();
            } else if (std::isspace(ch)) {
                ch = in.get();
            } else {
                break;
            }
        }
        while (ch != EOF && !std::isspace(ch)) {
            tok.push_back(static_cast<char>(ch));
            ch = in.get();
        }
        if (tok.empty()) throw std::runtime_error("read_ppm: truncated header in " + path);
        return tok;
    };

    if (next_token() != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w < 1 || h < 1) throw std::runtime_error("read_ppm: bad dimensions in " + path);
    if (maxval != 255) throw std::runtime_error("read_ppm: only maxval 255 supported: " + path);

    ImageU8 img = ImageU8::blank(h, w);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
        throw std::runtime_error("read_ppm: truncated pixel data in " + path);
    return img;
}

// --- PNG (8-bit RGB, non-interlaced) ---

namespace detail {

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

inline std::uint32_t get_be32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline void put_chunk(std::vector<unsigned char>& out, const char type[4], const std::vector<unsigned char>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size())));
    put_be32(out, crc);
}

inline unsigned char paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<unsigned char>(a);
    if (pb <= pc) return static_cast<unsigned char>(b);
    return static_cast<unsigned char>(c);
}

}  // namespace detail

inline void write_png(const std::string& path, const ImageU8& img) {
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(img.h) * (1 + 3 * static_cast<std::size_t>(img.w)));
    for (int y = 0; y < img.h; ++y) {
        raw.push_back(0);  // filter: none
        const unsigned char* row = img.rgb.data() + static_cast<std::size_t>(y) * img.w * 3;
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(img.w) * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png: deflate failed for " + path);
    comp.resize(comp_len);

    std::vector<unsigned char> out{137, 'P', 'N', 'G', 13, 10, 26, 10};
    std::vector<unsigned char> ihdr;
    detail::put_be32(ihdr, static_cast<std::uint32_t>(img.w));
    detail::put_be32(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);  // deflate
    ihdr.push_back(0);  // adaptive filters
    ihdr.push_back(0);  // no interlace
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", comp);
    detail::put_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_png: short write to " + path);
}

inline ImageU8 read_png_bytes(const std::vector<unsigned char>& bytes, const std::string& path) {
    static const unsigned char sig[8] = {137, 'P', 'N', 'G', 13, 10, 26, 10};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("read_png: bad signature in " + path);

    int w = 0, h = 0;
    std::vector<unsigned char> idat;
    std::size_t pos = 8;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= bytes.size() && !saw_iend) {
        const std::uint32_t len = detail::get_be32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("read_png: truncated chunk in " + path);
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const unsigned char* data = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error("read_png: bad IHDR in " + path);
            w = static_cast<int>(detail::get_be32(data));
            h = static_cast<int>(detail::get_be32(data + 4));
            if (data[8] != 8 || data[9] != 2 || data[12] != 0)
                throw std::runtime_error("read_png: only 8-bit non-interlaced RGB supported: " + path);
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || w < 1 || h < 1 || idat.empty()) throw std::runtime_error("read_png: missing data in " + path);

    const std::size_t stride = 3 * static_cast<std::size_t>(w);
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (1 + stride));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("read_png: inflate failed for " + path);

    ImageU8 img = ImageU8::blank(h, w);
    std::vector<unsigned char> prev(stride, 0);
    for (int y = 0; y < h; ++y) {
        const unsigned char filter = raw[static_cast<std::size_t>(y) * (1 + stride)];
        const unsigned char* src = &raw[static_cast<std::size_t>(y) * (1 + stride) + 1];
        unsigned char* dst = img.rgb.data() + static_cast<std::size_t>(y) * stride;
        for (std::size_t i = 0; i < stride; ++i) {
            const int left = i >= 3 ? dst[i - 3] : 0;
            const int up = prev[i];
            const int upleft = i >= 3 ? prev[i - 3] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += detail::paeth(left, up, upleft); break;
                default: throw std::runtime_error("read_png: unknown filter in " + path);
            }
            dst[i] = static_cast<unsigned char>(v & 0xff);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return img;
}

/// Reads PPM (P6) or PNG, dispatching on the magic bytes.
inline ImageU8 read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_image: cannot open " + path);
    const int m0 = in.get(), m1 = in.get();
    in.seekg(0);
    if (m0 == 'P' && m1 == '6') return read_ppm_stream(in, path);
    if (m0 == 137 && m1 == 'P') {
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return read_png_bytes(bytes, path);
    }
    throw std::runtime_error("read_image: unrecognized format in " + path);
}

inline void write_image(const std::string& path, const ImageU8& img) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0) {
        write_png(path, img);
    } else {
        write_ppm(path, img);
    }
}

}  // namespace pca::image
