#ifndef DIPS_HARVEST_HPP
#define DIPS_HARVEST_HPP

#include <optional>

#include "dips/backbone.hpp"
#include "dips/image_ops.hpp"

namespace dips {

// Otsu threshold over a 256-bin histogram of the min-max-normalized map.
// Returns the threshold in the map's original units; binarize with
// value >= threshold. nullopt signals a constant (degenerate) map, which the
// caller treats as a single whole-map region.
inline std::optional<double> otsu_threshold(const GridD& map) {
  if (map.size() == 0) throw InvalidInputError("otsu_threshold: empty map");
  if (!all_finite(map)) throw InvalidInputError("otsu_threshold: non-finite values");
  double lo = map.v[0], hi = map.v[0];
  for (double x : map.v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi <= lo) return std::nullopt;

  constexpr int kBins = 256;
  std::vector<long long> hist(kBins, 0);
  double inv = kBins / (hi - lo);
  for (double x : map.v) {
    int bin = std::min(kBins - 1, static_cast<int>((x - lo) * inv));
    ++hist[static_cast<size_t>(bin)];
  }
  long long total = static_cast<long long>(map.size());
  double total_sum = 0.0;
  for (int i = 0; i < kBins; ++i) total_sum += static_cast<double>(i) * hist[static_cast<size_t>(i)];

  // split after bin k: class 0 = bins [0..k], class 1 = bins [k+1..255];
  // smallest maximizing k wins ties
  long long w0 = 0;
  double sum0 = 0.0;
  double best_var = -1.0;
  int best_k = 0;
  for (int k = 0; k < kBins - 1; ++k) {
    w0 += hist[static_cast<size_t>(k)];
    sum0 += static_cast<double>(k) * hist[static_cast<size_t>(k)];
    long long w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    double mu0 = sum0 / w0;
    double mu1 = (total_sum - sum0) / w1;
    double var = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best_k = k;
    }
  }
  return lo + (hi - lo) * (best_k + 1) / kBins;
}

struct Region {
  GridU8 mask;  // full-size, 1 inside the component
  Box box;      // tight, half-open
  int area = 0;
};

// 8-connected components with area >= min_size, ordered by
// (area desc, y0 asc, x0 asc).
inline std::vector<Region> connected_regions(const GridU8& binary, int min_size) {
  if (min_size < 1) throw InvalidParameterError("connected_regions: min_size must be >= 1");
  const int h = binary.h, w = binary.w;
  std::vector<Region> out;
  GridU8 seen(h, w, 0);
  std::vector<int> stack;
  for (int sy = 0; sy < h; ++sy)
    for (int sx = 0; sx < w; ++sx) {
      if (!binary.at(sy, sx) || seen.at(sy, sx)) continue;
      Region reg;
      reg.mask = GridU8(h, w, 0);
      reg.box = Box{sx, sy, sx + 1, sy + 1};
      seen.at(sy, sx) = 1;
      stack.push_back(sy * w + sx);
      while (!stack.empty()) {
        int idx = stack.back();
        stack.pop_back();
        int y = idx / w, x = idx % w;
        reg.mask.v[static_cast<size_t>(idx)] = 1;
        ++reg.area;
        reg.box.x0 = std::min(reg.box.x0, x);
        reg.box.y0 = std::min(reg.box.y0, y);
        reg.box.x1 = std::max(reg.box.x1, x + 1);
        reg.box.y1 = std::max(reg.box.y1, y + 1);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            if (!binary.at(ny, nx) || seen.at(ny, nx)) continue;
            seen.at(ny, nx) = 1;
            stack.push_back(ny * w + nx);
          }
      }
      if (reg.area >= min_size) out.push_back(std::move(reg));
    }
  std::sort(out.begin(), out.end(), [](const Region& a, const Region& b) {
    if (a.area != b.area) return a.area > b.area;
    if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
    return a.box.x0 < b.box.x0;
  });
  return out;
}

// Pixels inside the box are copied from the input bit for bit; everything
// else comes from the Gaussian-blurred image.
inline Image blur_outside_box(const Image& image, const Box& box, double blur_sigma) {
  require_valid_box(box, image.width(), image.height(), "blur_outside_box");
  if (box.x0 == 0 && box.y0 == 0 && box.x1 == image.width() && box.y1 == image.height())
    return image;
  Image out = gaussian_blur(image, blur_sigma);
  for (int c = 0; c < 3; ++c)
    for (int y = box.y0; y < box.y1; ++y)
      for (int x = box.x0; x < box.x1; ++x) out.plane(c).at(y, x) = image.plane(c).at(y, x);
  return out;
}

struct Proposal {
  int map_index = 0;
  Box box;
  GridU8 region_mask;
  long long area_px = 0;
  double score = 0.0;
};

struct HarvestConfig {
  int min_region_px = 16;  // S_m
  int top_p = 3;           // P
  double min_score = 0.2;
  double blur_sigma = 5.0;
  uint64_t rng_seed = 0;

  void validate() const {
    if (top_p < 1) throw InvalidParameterError("HarvestConfig: top_p must be >= 1");
    if (min_region_px < 1) throw InvalidParameterError("HarvestConfig: min_region_px must be >= 1");
    if (!(blur_sigma > 0)) throw InvalidParameterError("HarvestConfig: blur_sigma must be > 0");
    if (min_score < 0.0 || min_score > 1.0)
      throw InvalidParameterError("HarvestConfig: min_score must be in [0,1]");
  }
};

struct HarvestResult {
  Proposal selected;
  std::vector<Proposal> top_p;
  bool used_fallback = false;
  int degenerate_maps = 0;
};

// Binarize every stack map, pull connected regions, score each region's
// background-blurred image with the frozen classifier, keep the best P, then
// draw one survivor uniformly from cfg.rng_seed's stream. When nothing clears
// min_score, the whole image becomes the lone proposal (fallback).
inline HarvestResult harvest_proposals(const Image& image, const AttentionStack& stack,
                                       int class_index, const HarvestConfig& cfg,
                                       const Classifier& classifier) {
  cfg.validate();
  const int h = image.height(), w = image.width();
  if (stack.maps.empty() || stack.maps.front().h != h || stack.maps.front().w != w)
    throw InvalidInputError("harvest_proposals: stack does not match image shape");

  HarvestResult result;
  // the blurred background is box independent; composite per box
  Image blurred = gaussian_blur(image, cfg.blur_sigma);
  auto score_box = [&](const Box& box) {
    Image candidate = blurred;
    for (int c = 0; c < 3; ++c)
      for (int y = box.y0; y < box.y1; ++y)
        for (int x = box.x0; x < box.x1; ++x)
          candidate.plane(c).at(y, x) = image.plane(c).at(y, x);
    return classifier.classify(candidate, class_index);
  };

  std::vector<Proposal> all;
  for (int mi = 0; mi < stack.num_maps(); ++mi) {
    const GridD& map = stack.maps[static_cast<size_t>(mi)];
    std::optional<double> thr = otsu_threshold(map);
    std::vector<Region> regions;
    if (!thr.has_value()) {
      ++result.degenerate_maps;
      Region whole;
      whole.mask = GridU8(h, w, 1);
      whole.box = Box{0, 0, w, h};
      whole.area = h * w;
      regions.push_back(std::move(whole));
    } else {
      GridU8 binary(h, w, 0);
      for (size_t i = 0; i < map.size(); ++i) binary.v[i] = map.v[i] >= *thr ? 1 : 0;
      regions = connected_regions(binary, cfg.min_region_px);
    }
    for (Region& reg : regions) {
      Proposal p;
      p.map_index = mi;
      p.box = reg.box;
      p.region_mask = std::move(reg.mask);
      p.area_px = reg.area;
      p.score = score_box(p.box);
      all.push_back(std::move(p));
    }
  }

  std::vector<Proposal> kept;
  for (Proposal& p : all)
    if (p.score >= cfg.min_score) kept.push_back(std::move(p));
  std::sort(kept.begin(), kept.end(), [](const Proposal& a, const Proposal& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.map_index != b.map_index) return a.map_index < b.map_index;
    if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
    return a.box.x0 < b.box.x0;
  });
  if (kept.size() > static_cast<size_t>(cfg.top_p)) kept.resize(static_cast<size_t>(cfg.top_p));

  if (kept.empty()) {
    result.used_fallback = true;
    Proposal whole;
    whole.map_index = 0;
    whole.box = Box{0, 0, w, h};
    whole.region_mask = GridU8(h, w, 1);
    whole.area_px = static_cast<long long>(h) * w;
    whole.score = classifier.classify(image, class_index);
    result.selected = whole;
    result.top_p = {std::move(whole)};
    return result;
  }

  Rng rng(cfg.rng_seed);
  result.selected = kept[rng.index(kept.size())];
  result.top_p = std::move(kept);
  return result;
}

}  // namespace dips

#endif  // DIPS_HARVEST_HPP
