#ifndef DIPS_IMAGE_IO_HPP
#define DIPS_IMAGE_IO_HPP

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dips/core.hpp"

namespace dips {

namespace detail {

inline int pnm_token(std::istream& in) {
  // skips whitespace and '#' comments
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      in.unget();
      int val = 0;
      in >> val;
      return val;
    }
    c = in.get();
  }
  throw InvalidInputError("pnm: truncated header");
}

}  // namespace detail

// PPM (P6, 8-bit) for RGB images; values mapped to [0,1].
inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("write_ppm: cannot open " + path);
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.width()) * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.plane(c).at(y, x), 0.0, 1.0);
        row[static_cast<size_t>(x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw InvalidInputError("write_ppm: write failed for " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("read_ppm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in >> m0 >> m1;
  if (m0 != 'P' || m1 != '6') throw InvalidInputError("read_ppm: not a P6 file: " + path);
  int w = detail::pnm_token(in);
  int h = detail::pnm_token(in);
  int maxv = detail::pnm_token(in);
  if (w <= 0 || h <= 0 || maxv != 255) throw InvalidInputError("read_ppm: bad header in " + path);
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw InvalidInputError("read_ppm: truncated pixel data in " + path);
  Image img(h, w);
  size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.r.at(y, x) = buf[i++] / 255.0;
      img.g.at(y, x) = buf[i++] / 255.0;
      img.b.at(y, x) = buf[i++] / 255.0;
    }
  return img;
}

// PGM (P5) single-channel. 16-bit big-endian for maxval 65535, else 8-bit.
// Values mapped to [0,1]; 16-bit is the lossless format used for
// localization maps.
inline void write_pgm16(const std::string& path, const GridD& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("write_pgm16: cannot open " + path);
  out << "P5\n" << g.w << " " << g.h << "\n65535\n";
  std::vector<unsigned char> row(static_cast<size_t>(g.w) * 2);
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      double v = std::clamp(g.at(y, x), 0.0, 1.0);
      unsigned int q = static_cast<unsigned int>(std::lround(v * 65535.0));
      row[static_cast<size_t>(x) * 2] = static_cast<unsigned char>(q >> 8);
      row[static_cast<size_t>(x) * 2 + 1] = static_cast<unsigned char>(q & 0xff);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw InvalidInputError("write_pgm16: write failed for " + path);
}

inline void write_pgm8(const std::string& path, const GridD& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInputError("write_pgm8: cannot open " + path);
  out << "P5\n" << g.w << " " << g.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(g.w));
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x)
      row[static_cast<size_t>(x)] =
          static_cast<unsigned char>(std::lround(std::clamp(g.at(y, x), 0.0, 1.0) * 255.0));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw InvalidInputError("write_pgm8: write failed for " + path);
}

inline GridD read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("read_pgm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in >> m0 >> m1;
  if (m0 != 'P' || m1 != '5') throw InvalidInputError("read_pgm: not a P5 file: " + path);
  int w = detail::pnm_token(in);
  int h = detail::pnm_token(in);
  int maxv = detail::pnm_token(in);
  if (w <= 0 || h <= 0 || (maxv != 255 && maxv != 65535))
    throw InvalidInputError("read_pgm: bad header in " + path);
  in.get();
  GridD g(h, w);
  if (maxv == 255) {
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw InvalidInputError("read_pgm: truncated pixel data in " + path);
    for (size_t i = 0; i < buf.size(); ++i) g.v[i] = buf[i] / 255.0;
  } else {
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 2);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw InvalidInputError("read_pgm: truncated pixel data in " + path);
    for (size_t i = 0; i < g.size(); ++i)
      g.v[i] = ((buf[2 * i] << 8) | buf[2 * i + 1]) / 65535.0;
  }
  return g;
}

}  // namespace dips

#endif  // DIPS_IMAGE_IO_HPP
