#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include "muvi/errors.hpp"
#include "muvi/io.hpp"

namespace muvi {

/// Row-major RGB8 image.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // 3 bytes per pixel

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t* at(int y, int x) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int y, int x) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  }

  void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::uint8_t* p = at(y, x);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

namespace detail {

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
  const std::uint32_t len = static_cast<std::uint32_t>(payload.size());
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((len >> (8 * i)) & 0xff));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((crc >> (8 * i)) & 0xff));
}

/// Deterministic zlib stream (fixed level, no timestamps in the format).
inline std::vector<std::uint8_t> zlib_compress(const std::vector<std::uint8_t>& in) {
  uLongf bound = compressBound(static_cast<uLong>(in.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), Z_DEFAULT_COMPRESSION) != Z_OK)
    throw IoError("zlib compression failed");
  out.resize(bound);
  return out;
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.height < 1 || img.width < 1) throw IoError("empty image");
  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr(13);
  const auto be32 = [](std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>((v >> (8 * (3 - i))) & 0xff);
  };
  be32(ihdr.data(), static_cast<std::uint32_t>(img.width));
  be32(ihdr.data() + 4, static_cast<std::uint32_t>(img.height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // color type: truecolor
  ihdr[10] = 0;  // compression
  ihdr[11] = 0;  // filter
  ihdr[12] = 0;  // interlace
  detail::png_chunk(out, "IHDR", ihdr);
  std::vector<std::uint8_t> scanlines;
  scanlines.reserve(static_cast<std::size_t>(img.height) * (1 + static_cast<std::size_t>(img.width) * 3));
  for (int y = 0; y < img.height; ++y) {
    scanlines.push_back(0);  // filter type: none
    const std::uint8_t* row = img.at(y, 0);
    scanlines.insert(scanlines.end(), row, row + static_cast<std::size_t>(img.width) * 3);
  }
  detail::png_chunk(out, "IDAT", detail::zlib_compress(scanlines));
  detail::png_chunk(out, "IEND", {});
  detail::write_file_bytes(path, out);
}

}  // namespace muvi
