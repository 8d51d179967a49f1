#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "crowdflow/error.hpp"
#include "crowdflow/tensor.hpp"

namespace crowdflow {

// Minimal PNG reader: 8-bit depth, color types gray / RGB / gray+alpha /
// RGBA, non-interlaced. That covers pre-extracted video frames; anything
// fancier is rejected with a clear message.

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;                  // 1, 2, 3 or 4
  std::vector<unsigned char> pixels; // row-major, interleaved
};

namespace detail {

inline std::uint32_t be32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline std::vector<unsigned char> zlib_inflate(const std::vector<unsigned char>& in,
                                               std::size_t expected) {
  std::vector<unsigned char> out(expected);
  uLongf out_len = static_cast<uLongf>(expected);
  const int rc = ::uncompress(out.data(), &out_len, in.data(), static_cast<uLong>(in.size()));
  if (rc != Z_OK || out_len != expected) throw IoError("PNG: zlib inflate failed");
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

inline PngImage read_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<unsigned char> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
    throw IoError(path + ": not a PNG file");

  PngImage img;
  int bit_depth = 0, color_type = -1;
  std::vector<unsigned char> idat;
  std::size_t pos = 8;
  while (pos + 8 <= file.size()) {
    const std::uint32_t len = detail::be32(&file[pos]);
    if (pos + 12 + len > file.size()) throw IoError(path + ": truncated PNG chunk");
    const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
    const unsigned char* data = &file[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError(path + ": bad IHDR");
      img.width = static_cast<int>(detail::be32(data));
      img.height = static_cast<int>(detail::be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw IoError(path + ": interlaced PNG not supported");
      if (bit_depth != 8) throw IoError(path + ": only 8-bit PNG supported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (img.width < 1 || img.height < 1) throw IoError(path + ": missing IHDR");
  switch (color_type) {
    case 0: img.channels = 1; break;
    case 2: img.channels = 3; break;
    case 4: img.channels = 2; break;
    case 6: img.channels = 4; break;
    default: throw IoError(path + ": unsupported PNG color type");
  }

  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  const std::size_t raw_len = (stride + 1) * static_cast<std::size_t>(img.height);
  const auto raw = detail::zlib_inflate(idat, raw_len);

  img.pixels.resize(stride * static_cast<std::size_t>(img.height));
  const int bpp = img.channels;  // bytes per pixel at 8-bit depth
  for (int y = 0; y < img.height; ++y) {
    const unsigned char filter = raw[(stride + 1) * static_cast<std::size_t>(y)];
    const unsigned char* src = &raw[(stride + 1) * static_cast<std::size_t>(y) + 1];
    unsigned char* cur = &img.pixels[stride * static_cast<std::size_t>(y)];
    const unsigned char* up = y > 0 ? &img.pixels[stride * static_cast<std::size_t>(y - 1)] : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw IoError(path + ": bad PNG filter byte");
      }
      cur[i] = static_cast<unsigned char>(v & 0xff);
    }
  }
  return img;
}

// Grayscale [0,1] frame; RGB collapses with luma weights 0.299/0.587/0.114.
template <typename S>
Tensor<S> png_to_frame(const PngImage& img) {
  Tensor<S> t({1, img.height, img.width});
  const std::int64_t n = static_cast<std::int64_t>(img.height) * img.width;
  for (std::int64_t i = 0; i < n; ++i) {
    const unsigned char* px = &img.pixels[static_cast<std::size_t>(i) * img.channels];
    double g;
    if (img.channels >= 3)
      g = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    else
      g = px[0];
    t.data()[i] = static_cast<S>(g / 255.0);
  }
  return t;
}

}  // namespace crowdflow
