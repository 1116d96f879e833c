#pragma once

// Binary PGM/PPM raster I/O (8- or 16-bit). Simple, inspectable, diffable.

#include <fstream>

#include "mcafu/config.hpp"
#include "mcafu/tensor.hpp"

namespace mcafu {

struct RasterImage {
  int64_t h = 0, w = 0, c = 1;  // c: 1 (PGM) or 3 (PPM)
  int maxval = 255;
  std::vector<uint16_t> px;  // row-major, interleaved channels

  uint16_t& at(int64_t y, int64_t x, int64_t ch) { return px[(y * w + x) * c + ch]; }
  uint16_t at(int64_t y, int64_t x, int64_t ch) const { return px[(y * w + x) * c + ch]; }
};

namespace pnm_detail {
inline int next_token(std::istream& f, std::string& tok) {
  tok.clear();
  int ch;
  while ((ch = f.get()) != EOF) {
    if (ch == '#') {
      while ((ch = f.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return 1;
      continue;
    }
    tok.push_back(char(ch));
  }
  return tok.empty() ? 0 : 1;
}
}  // namespace pnm_detail

inline RasterImage read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open image: " + path);
  std::string tok;
  if (!pnm_detail::next_token(f, tok) || (tok != "P5" && tok != "P6"))
    throw DataError("unsupported raster format (want binary PGM/PPM): " + path);
  RasterImage img;
  img.c = tok == "P6" ? 3 : 1;
  auto read_int = [&](const char* what) {
    if (!pnm_detail::next_token(f, tok)) throw DataError(std::string("truncated header (") + what + "): " + path);
    return std::stoll(tok);
  };
  img.w = read_int("width");
  img.h = read_int("height");
  img.maxval = int(read_int("maxval"));
  if (img.w <= 0 || img.h <= 0 || img.maxval <= 0 || img.maxval > 65535)
    throw DataError("bad raster header: " + path);
  size_t n = size_t(img.w) * size_t(img.h) * size_t(img.c);
  img.px.resize(n);
  if (img.maxval < 256) {
    std::vector<unsigned char> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n));
    if (!f) throw DataError("truncated pixel data: " + path);
    for (size_t i = 0; i < n; ++i) img.px[i] = buf[i];
  } else {
    std::vector<unsigned char> buf(n * 2);
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 2));
    if (!f) throw DataError("truncated pixel data: " + path);
    for (size_t i = 0; i < n; ++i)
      img.px[i] = uint16_t((buf[2 * i] << 8) | buf[2 * i + 1]);  // big-endian per netpbm
  }
  return img;
}

inline void write_pnm(const std::string& path, const RasterImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write image: " + path);
  f << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n" << img.maxval << "\n";
  size_t n = img.px.size();
  if (img.maxval < 256) {
    std::vector<unsigned char> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = (unsigned char)(img.px[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(n));
  } else {
    std::vector<unsigned char> buf(n * 2);
    for (size_t i = 0; i < n; ++i) {
      buf[2 * i] = (unsigned char)(img.px[i] >> 8);
      buf[2 * i + 1] = (unsigned char)(img.px[i] & 0xff);
    }
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(n * 2));
  }
  if (!f) throw DataError("write failed: " + path);
}

}  // namespace mcafu
