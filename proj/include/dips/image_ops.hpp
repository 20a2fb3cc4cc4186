#ifndef DIPS_IMAGE_OPS_HPP
#define DIPS_IMAGE_OPS_HPP

#include "dips/core.hpp"

namespace dips {

// Bilinear resampling with half-pixel centers (align_corners = false).
inline GridD bilinear_resize(const GridD& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw InvalidParameterError("bilinear_resize: bad output size");
  GridD dst(out_h, out_w);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int ya = std::clamp(y0, 0, src.h - 1);
    int yb = std::clamp(y0 + 1, 0, src.h - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int xa = std::clamp(x0, 0, src.w - 1);
      int xb = std::clamp(x0 + 1, 0, src.w - 1);
      dst.at(y, x) = (1 - wy) * ((1 - wx) * src.at(ya, xa) + wx * src.at(ya, xb)) +
                     wy * ((1 - wx) * src.at(yb, xa) + wx * src.at(yb, xb));
    }
  }
  return dst;
}

inline Image bilinear_resize(const Image& src, int out_h, int out_w) {
  Image dst;
  dst.r = bilinear_resize(src.r, out_h, out_w);
  dst.g = bilinear_resize(src.g, out_h, out_w);
  dst.b = bilinear_resize(src.b, out_h, out_w);
  return dst;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) throw InvalidParameterError("gaussian_kernel: sigma must be positive");
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& x : k) x /= sum;
  return k;
}

// index into [0,n) with symmetric reflection (edge pixel repeated):
// -1 -> 0, -2 -> 1, n -> n-1, ...
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// Separable Gaussian blur, kernel radius ceil(3*sigma), reflect padding.
inline GridD gaussian_blur(const GridD& src, double sigma) {
  std::vector<double> k = gaussian_kernel(sigma);
  int radius = (static_cast<int>(k.size()) - 1) / 2;
  GridD tmp(src.h, src.w), dst(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * src.at(y, reflect_index(x + i, src.w));
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * tmp.at(reflect_index(y + i, src.h), x);
      dst.at(y, x) = acc;
    }
  return dst;
}

inline Image gaussian_blur(const Image& src, double sigma) {
  Image dst;
  dst.r = gaussian_blur(src.r, sigma);
  dst.g = gaussian_blur(src.g, sigma);
  dst.b = gaussian_blur(src.b, sigma);
  return dst;
}

// Maps to [0,1]; a constant grid maps to all zeros.
inline GridD minmax_normalize(const GridD& src) {
  double lo = src.v[0], hi = src.v[0];
  for (double x : src.v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  GridD dst(src.h, src.w);
  if (hi <= lo) return dst;
  double inv = 1.0 / (hi - lo);
  for (size_t i = 0; i < src.size(); ++i) dst.v[i] = (src.v[i] - lo) * inv;
  return dst;
}

template <typename T>
inline Grid<T> crop(const Grid<T>& src, const Box& box) {
  require_valid_box(box, src.w, src.h, "crop");
  Grid<T> dst(box.height(), box.width());
  for (int y = 0; y < dst.h; ++y)
    for (int x = 0; x < dst.w; ++x) dst.at(y, x) = src.at(box.y0 + y, box.x0 + x);
  return dst;
}

inline Image crop(const Image& src, const Box& box) {
  Image dst;
  dst.r = crop(src.r, box);
  dst.g = crop(src.g, box);
  dst.b = crop(src.b, box);
  return dst;
}

template <typename T>
inline Grid<T> hflip(const Grid<T>& src) {
  Grid<T> dst(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) dst.at(y, x) = src.at(y, src.w - 1 - x);
  return dst;
}

inline Image hflip(const Image& src) {
  Image dst;
  dst.r = hflip(src.r);
  dst.g = hflip(src.g);
  dst.b = hflip(src.b);
  return dst;
}

}  // namespace dips

#endif  // DIPS_IMAGE_OPS_HPP
