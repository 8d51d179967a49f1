#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "crowdflow/error.hpp"
#include "crowdflow/tensor.hpp"

namespace crowdflow {

// Binary tensor file, little-endian throughout:
//   magic "CFTN" | u8 precision (4|8) | u8 rank | rank x u32 extents | raw values
//
// Used for density maps, predictions, perspective maps and checkpoint payloads.

namespace detail {

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("unexpected end of stream reading u32");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char first;
  std::memcpy(&first, &probe, 1);
  return first == 1;
}

template <typename V>
void write_values_le(std::ostream& os, const V* values, std::int64_t n) {
  if (host_is_little_endian()) {
    os.write(reinterpret_cast<const char*>(values), n * static_cast<std::int64_t>(sizeof(V)));
    return;
  }
  for (std::int64_t i = 0; i < n; ++i) {
    unsigned char bytes[sizeof(V)];
    std::memcpy(bytes, &values[i], sizeof(V));
    for (std::size_t b = sizeof(V); b-- > 0;) os.put(static_cast<char>(bytes[sizeof(V) - 1 - b]));
  }
}

template <typename V>
void read_values_le(std::istream& is, V* values, std::int64_t n) {
  is.read(reinterpret_cast<char*>(values), n * static_cast<std::int64_t>(sizeof(V)));
  if (!is) throw IoError("unexpected end of stream reading tensor values");
  if (!host_is_little_endian()) {
    for (std::int64_t i = 0; i < n; ++i) {
      unsigned char bytes[sizeof(V)];
      std::memcpy(bytes, &values[i], sizeof(V));
      for (std::size_t b = 0; b < sizeof(V) / 2; ++b) std::swap(bytes[b], bytes[sizeof(V) - 1 - b]);
      std::memcpy(&values[i], bytes, sizeof(V));
    }
  }
}

}  // namespace detail

template <typename S>
void write_tensor(std::ostream& os, const Tensor<S>& t) {
  static_assert(sizeof(S) == 4 || sizeof(S) == 8, "CFTN stores f32 or f64");
  os.write("CFTN", 4);
  os.put(static_cast<char>(sizeof(S)));
  os.put(static_cast<char>(t.rank()));
  for (int a = 0; a < t.rank(); ++a) detail::write_u32le(os, static_cast<std::uint32_t>(t.extent(a)));
  detail::write_values_le(os, t.data(), t.size());
  if (!os) throw IoError("tensor write failed");
}

// Reads into the requested precision, converting if the file differs.
template <typename S>
Tensor<S> read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CFTN", 4) != 0) throw IoError("not a CFTN tensor stream");
  const int precision = is.get();
  const int rank = is.get();
  if (precision != 4 && precision != 8) throw IoError("CFTN: bad precision tag");
  if (rank < 1 || rank > 8) throw IoError("CFTN: bad rank");
  Shape shape(static_cast<std::size_t>(rank));
  for (int a = 0; a < rank; ++a) shape[static_cast<std::size_t>(a)] = static_cast<int>(detail::read_u32le(is));
  const std::int64_t n = shape_size(shape);
  if (precision == static_cast<int>(sizeof(S))) {
    Tensor<S> t(shape);
    detail::read_values_le(is, t.data(), n);
    return t;
  }
  if (precision == 4) {
    Tensor<float> t(shape);
    detail::read_values_le(is, t.data(), n);
    return t.template cast<S>();
  }
  Tensor<double> t(shape);
  detail::read_values_le(is, t.data(), n);
  return t.template cast<S>();
}

template <typename S>
void save_tensor(const std::string& path, const Tensor<S>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  write_tensor(os, t);
}

template <typename S>
Tensor<S> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_tensor<S>(is);
}

// ---- PGM (P2 ascii / P5 binary), maxval up to 65535 ----
//
// Frames are scaled to [0,1] on load. ROI masks threshold at maxval/2;
// perspective maps take the raw integer value as pixels-per-metre.

struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint16_t> pixels;  // row-major
};

namespace detail {

inline int next_pgm_token(std::istream& is) {
  // skips whitespace and '#' comments
  int c = is.get();
  while (is) {
    if (c == '#') {
      while (is && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (!is) throw IoError("PGM: truncated header");
  int v = 0;
  bool any = false;
  while (is && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw IoError("PGM: expected integer in header");
  return v;
}

}  // namespace detail

inline PgmImage read_pgm(std::istream& is) {
  char m0 = static_cast<char>(is.get());
  char m1 = static_cast<char>(is.get());
  if (!is || m0 != 'P' || (m1 != '2' && m1 != '5')) throw IoError("not a PGM (P2/P5) stream");
  const bool binary = m1 == '5';
  PgmImage img;
  img.width = detail::next_pgm_token(is);
  img.height = detail::next_pgm_token(is);
  img.maxval = detail::next_pgm_token(is);
  if (img.width < 1 || img.height < 1 || img.maxval < 1 || img.maxval > 65535)
    throw IoError("PGM: bad dimensions or maxval");
  const std::int64_t n = static_cast<std::int64_t>(img.width) * img.height;
  img.pixels.resize(static_cast<std::size_t>(n));
  if (binary) {
    if (img.maxval < 256) {
      std::vector<unsigned char> raw(static_cast<std::size_t>(n));
      is.read(reinterpret_cast<char*>(raw.data()), n);
      if (!is) throw IoError("PGM: truncated pixel data");
      for (std::int64_t i = 0; i < n; ++i) img.pixels[static_cast<std::size_t>(i)] = raw[static_cast<std::size_t>(i)];
    } else {
      // P5 with maxval > 255 is two bytes per sample, most significant first
      std::vector<unsigned char> raw(static_cast<std::size_t>(2 * n));
      is.read(reinterpret_cast<char*>(raw.data()), 2 * n);
      if (!is) throw IoError("PGM: truncated pixel data");
      for (std::int64_t i = 0; i < n; ++i)
        img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(
            (raw[static_cast<std::size_t>(2 * i)] << 8) | raw[static_cast<std::size_t>(2 * i + 1)]);
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i)
      img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(detail::next_pgm_token(is));
  }
  return img;
}

inline PgmImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  try {
    return read_pgm(is);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

// 8-bit binary PGM; values clamped to [0,1] then quantized.
template <typename S>
void write_pgm(const std::string& path, const Tensor<S>& frame) {
  if (frame.rank() != 3 || frame.extent(0) != 1) throw DimensionError("write_pgm: expected [1,H,W]");
  const int h = frame.extent(1), w = frame.extent(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
    double v = static_cast<double>(frame.data()[i]);
    v = v < 0 ? 0 : (v > 1 ? 1 : v);
    raw[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v * 255.0 + 0.5);
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("PGM write failed: " + path);
}

template <typename S>
Tensor<S> pgm_to_frame(const PgmImage& img) {
  Tensor<S> t({1, img.height, img.width});
  const double inv = 1.0 / img.maxval;
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    t.data()[i] = static_cast<S>(img.pixels[i] * inv);
  return t;
}

}  // namespace crowdflow
