#ifndef DIPS_LOCALIZATION_MAP_HPP
#define DIPS_LOCALIZATION_MAP_HPP

#include "dips/core.hpp"

namespace dips {

// Two-channel per-pixel softmax output of the localization network:
// fg + bg = 1 pixel-wise.
struct LocalizationMap {
  GridD fg;  // M1
  GridD bg;  // M2

  LocalizationMap() = default;
  LocalizationMap(int h, int w) : fg(h, w, 0.5), bg(h, w, 0.5) {}

  int height() const { return fg.h; }
  int width() const { return fg.w; }

  void validate(double tol = 1e-5) const {
    if (!fg.same_shape(bg)) throw InvalidInputError("LocalizationMap: channel shape mismatch");
    for (size_t i = 0; i < fg.size(); ++i) {
      if (fg.v[i] < -tol || fg.v[i] > 1.0 + tol || bg.v[i] < -tol || bg.v[i] > 1.0 + tol)
        throw InvalidInputError("LocalizationMap: values out of [0,1]");
      if (std::abs(fg.v[i] + bg.v[i] - 1.0) > tol)
        throw InvalidInputError("LocalizationMap: channels do not sum to 1");
    }
  }
};

}  // namespace dips

#endif  // DIPS_LOCALIZATION_MAP_HPP
