#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "mp/tensor.hpp"

namespace mp {

// Binary PPM (P6, maxval 255). Tensors are [1,3,H,W] in [0,1]; values are
// quantized with round-half-up so write/read round trips are bit-exact on
// already-quantized data.
inline void write_ppm(const std::string& path, const Tensor& image) {
    require(image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 3,
            "write_ppm: image must be [1,3,H,W]");
    if (!image.all_finite()) throw NumericError("write_ppm: non-finite pixel values");
    const int H = image.dim(2), W = image.dim(3);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_ppm: cannot open " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    std::string buf;
    buf.reserve(static_cast<size_t>(3) * H * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = clampf(image.at(0, c, y, x), 0.f, 1.f);
                buf.push_back(static_cast<char>(
                    static_cast<unsigned char>(std::floor(v * 255.f + 0.5f))));
            }
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw FormatError("write_ppm: short write to " + path);
}

inline Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_ppm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw FormatError("read_ppm: " + path + ": expected P6, got " + magic);
    auto next_token = [&]() -> long {
        // skip whitespace and '#' comment lines between header fields
        for (;;) {
            const int ch = f.peek();
            if (ch == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(ch)) {
                f.get();
            } else {
                break;
            }
        }
        long v;
        if (!(f >> v)) throw FormatError("read_ppm: " + path + ": truncated header");
        return v;
    };
    const long W = next_token(), H = next_token(), maxval = next_token();
    if (W <= 0 || H <= 0) throw FormatError("read_ppm: " + path + ": bad dimensions");
    if (maxval != 255)
        throw FormatError("read_ppm: " + path + ": only maxval 255 is supported, got " +
                          std::to_string(maxval));
    f.get();  // single whitespace after maxval
    std::string buf(static_cast<size_t>(3) * W * H, '\0');
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size()))
        throw FormatError("read_ppm: " + path + ": truncated pixel data");
    Tensor img({1, 3, static_cast<int>(H), static_cast<int>(W)});
    size_t i = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(0, c, y, x) =
                    static_cast<float>(static_cast<unsigned char>(buf[i++])) / 255.f;
    return img;
}

}  // namespace mp
