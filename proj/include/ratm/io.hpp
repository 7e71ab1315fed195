#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "bbox.hpp"
#include "tensor.hpp"

namespace ratm {

// FNV-1a over file bytes; used as the dataset content hash in run manifests.
inline std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("hash_file: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (n < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Binary 8-bit PGM. Values clamped from [0,1].
inline void write_pgm(const std::string& path, const Tensor& image) {
    if (image.rank() != 2) throw std::runtime_error("write_pgm: rank-2 image required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
    out << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
    for (double v : image.data) {
        double c = std::clamp(v, 0.0, 1.0);
        out.put(static_cast<char>(static_cast<int>(c * 255.0 + 0.5)));
    }
}

// 1-px box outline at full intensity, clipped to the image.
inline void burn_box(Tensor& image, const BBox& b) {
    long rows = static_cast<long>(image.rows()), cols = static_cast<long>(image.cols());
    long x0 = std::clamp(std::lround(b.x_min), 0L, cols - 1);
    long x1 = std::clamp(std::lround(b.x_max), 0L, cols - 1);
    long y0 = std::clamp(std::lround(b.y_min), 0L, rows - 1);
    long y1 = std::clamp(std::lround(b.y_max), 0L, rows - 1);
    for (long x = x0; x <= x1; ++x) {
        image.at(static_cast<std::size_t>(y0), static_cast<std::size_t>(x)) = 1.0;
        image.at(static_cast<std::size_t>(y1), static_cast<std::size_t>(x)) = 1.0;
    }
    for (long y = y0; y <= y1; ++y) {
        image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x0)) = 1.0;
        image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x1)) = 1.0;
    }
}

}  // namespace ratm
