#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "uistyler/errors.hpp"

namespace uistyler {

// Grayscale image, values in [0,1], row-major.
struct Image {
  int h = 0, w = 0;
  std::vector<float> px;

  float& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
  static Image filled(int h, int w, float v) { return {h, w, std::vector<float>(static_cast<size_t>(h) * w, v)}; }
};

// Binary mask, values in {0,1}.
struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> px;

  uint8_t& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }
  long area() const {
    long n = 0;
    for (auto v : px) n += v;
    return n;
  }
};

// Planar CHW float image, the exchange format at model boundaries.
struct PlanarImage {
  int c = 0, h = 0, w = 0;
  std::vector<float> data;
};

inline PlanarImage replicate3(const Image& g) {
  PlanarImage p{3, g.h, g.w, {}};
  p.data.resize(static_cast<size_t>(3) * g.h * g.w);
  for (int k = 0; k < 3; ++k)
    std::copy(g.px.begin(), g.px.end(), p.data.begin() + static_cast<size_t>(k) * g.h * g.w);
  return p;
}

inline Image to_gray(const PlanarImage& p) {
  Image g{p.h, p.w, std::vector<float>(static_cast<size_t>(p.h) * p.w, 0.f)};
  const size_t hw = g.px.size();
  for (int k = 0; k < p.c; ++k)
    for (size_t i = 0; i < hw; ++i) g.px[i] += p.data[static_cast<size_t>(k) * hw + i];
  for (auto& v : g.px) v /= static_cast<float>(p.c);
  return g;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5), maxval 255.
//
// Writer emits exactly: "P5\n<width> <height>\n255\n" followed by
// width*height raw bytes, row-major. The reader accepts standard PGM
// whitespace and '#' comments in the header.
// ---------------------------------------------------------------------------

namespace pgm {

struct Raw {
  int w = 0, h = 0;
  std::vector<uint8_t> bytes;
};

inline void write(const std::string& path, const Raw& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("pgm: cannot open for write: " + path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
  if (!f) throw IoError("pgm: write failed: " + path);
}

inline Raw read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("pgm: cannot open: " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  size_t pos = 0;
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("pgm: " + what + " at byte " + std::to_string(pos) + " in " + path);
  };
  auto skip_space = [&] {
    while (pos < buf.size()) {
      if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
        ++pos;
      } else if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
      throw fail("expected integer");
    long v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      v = v * 10 + (buf[pos] - '0');
      ++pos;
    }
    return v;
  };

  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') throw fail("missing P5 magic");
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w <= 0 || h <= 0) throw fail("non-positive dimensions");
  if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval));
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    throw fail("expected single whitespace after maxval");
  ++pos;
  const size_t need = static_cast<size_t>(w) * static_cast<size_t>(h);
  if (buf.size() - pos < need) {
    pos = buf.size();
    throw fail("truncated pixel data, need " + std::to_string(need) + " bytes");
  }
  Raw out{static_cast<int>(w), static_cast<int>(h), {}};
  out.bytes.assign(buf.begin() + static_cast<long>(pos), buf.begin() + static_cast<long>(pos) + static_cast<long>(need));
  return out;
}

}  // namespace pgm

inline void write_image_pgm(const std::string& path, const Image& img) {
  pgm::Raw raw{img.w, img.h, {}};
  raw.bytes.resize(img.px.size());
  for (size_t i = 0; i < img.px.size(); ++i) {
    const float v = std::clamp(img.px[i], 0.f, 1.f);
    raw.bytes[i] = static_cast<uint8_t>(std::lround(v * 255.f));
  }
  pgm::write(path, raw);
}

inline Image read_image_pgm(const std::string& path) {
  pgm::Raw raw = pgm::read(path);
  Image img{raw.h, raw.w, std::vector<float>(raw.bytes.size())};
  for (size_t i = 0; i < raw.bytes.size(); ++i) img.px[i] = raw.bytes[i] / 255.f;
  return img;
}

inline void write_mask_pgm(const std::string& path, const Mask& m) {
  pgm::Raw raw{m.w, m.h, {}};
  raw.bytes.resize(m.px.size());
  for (size_t i = 0; i < m.px.size(); ++i) raw.bytes[i] = m.px[i] ? 255 : 0;
  pgm::write(path, raw);
}

inline Mask read_mask_pgm(const std::string& path) {
  pgm::Raw raw = pgm::read(path);
  Mask m{raw.h, raw.w, std::vector<uint8_t>(raw.bytes.size())};
  for (size_t i = 0; i < raw.bytes.size(); ++i) m.px[i] = raw.bytes[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace uistyler
