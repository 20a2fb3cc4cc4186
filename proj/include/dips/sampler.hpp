#ifndef DIPS_SAMPLER_HPP
#define DIPS_SAMPLER_HPP

#include "dips/harvest.hpp"

namespace dips {

struct SamplerConfig {
  double fg_top_frac = 0.3;  // n+
  double bg_top_frac = 0.3;  // n-
  int fg_count = 30;
  int bg_count = 30;
  uint64_t rng_seed = 0;

  void validate() const {
    if (!(fg_top_frac > 0.0 && fg_top_frac <= 1.0))
      throw InvalidParameterError("SamplerConfig: fg_top_frac must be in (0,1]");
    if (!(bg_top_frac > 0.0 && bg_top_frac <= 1.0))
      throw InvalidParameterError("SamplerConfig: bg_top_frac must be in (0,1]");
    if (fg_count < 0 || bg_count < 0)
      throw InvalidParameterError("SamplerConfig: counts must be >= 0");
  }
};

constexpr int8_t kLabelBackground = 0;
constexpr int8_t kLabelForeground = 1;
constexpr int8_t kLabelIgnore = -1;

struct PseudoLabelMap {
  Grid<int8_t> labels;  // FG=1, BG=0, IGNORE=-1
  std::vector<PixelCoord> fg_pixels;
  std::vector<PixelCoord> bg_pixels;
  bool fg_clipped = false;
  bool bg_clipped = false;
  bool fg_uniform_fallback = false;  // all in-box activations were zero
};

namespace detail {

// indices sorted by activation, ties broken by row-major index for
// deterministic top-fraction cutoffs
inline std::vector<int> order_by_activation(const std::vector<int>& idx, const GridD& map,
                                            bool descending) {
  std::vector<int> out = idx;
  std::sort(out.begin(), out.end(), [&](int a, int b) {
    double va = map.v[static_cast<size_t>(a)], vb = map.v[static_cast<size_t>(b)];
    if (va != vb) return descending ? va > vb : va < vb;
    return a < b;
  });
  return out;
}

inline size_t pool_size(double frac, size_t n) {
  if (n == 0) return 0;
  return std::min(n, std::max<size_t>(1, static_cast<size_t>(std::ceil(frac * static_cast<double>(n)))));
}

// draw `count` distinct items, probability proportional to weight
// (renormalized after every draw); zero total weight degrades to uniform
inline std::vector<int> weighted_sample_without_replacement(std::vector<int> pool,
                                                            std::vector<double> weight, int count,
                                                            Rng& rng) {
  std::vector<int> picked;
  double total = 0.0;
  for (double w : weight) total += w;
  while (static_cast<int>(picked.size()) < count && !pool.empty()) {
    size_t chosen = 0;
    if (total > 0.0) {
      double r = rng.unit() * total;
      double acc = 0.0;
      chosen = pool.size() - 1;
      for (size_t i = 0; i < pool.size(); ++i) {
        acc += weight[i];
        if (r < acc) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = rng.index(pool.size());
    }
    picked.push_back(pool[chosen]);
    total -= weight[chosen];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(chosen));
    weight.erase(weight.begin() + static_cast<std::ptrdiff_t>(chosen));
  }
  return picked;
}

}  // namespace detail

struct ForegroundSample {
  std::vector<PixelCoord> pixels;
  bool clipped = false;
  bool uniform_fallback = false;
};

// Pool = top fg_top_frac of in-box pixels by activation; fg_count draws
// without replacement with probability proportional to activation. A zero
// in-box map degrades to uniform draws over the whole box.
inline ForegroundSample sample_foreground(const GridD& attn_map, const Box& box,
                                          const SamplerConfig& cfg) {
  cfg.validate();
  require_valid_box(box, attn_map.w, attn_map.h, "sample_foreground");
  for (double v : attn_map.v)
    if (!std::isfinite(v) || v < 0.0)
      throw InvalidInputError("sample_foreground: activations must be finite and >= 0");

  std::vector<int> box_idx;
  box_idx.reserve(static_cast<size_t>(box.area()));
  double box_total = 0.0;
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) {
      box_idx.push_back(y * attn_map.w + x);
      box_total += attn_map.at(y, x);
    }

  ForegroundSample out;
  Rng rng(cfg.rng_seed);
  std::vector<int> pool;
  std::vector<double> weight;
  if (box_total <= 0.0) {
    out.uniform_fallback = true;
    pool = box_idx;
    weight.assign(pool.size(), 1.0);
  } else {
    std::vector<int> ordered = detail::order_by_activation(box_idx, attn_map, true);
    size_t n = detail::pool_size(cfg.fg_top_frac, ordered.size());
    pool.assign(ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(n));
    weight.reserve(n);
    for (int idx : pool) weight.push_back(attn_map.v[static_cast<size_t>(idx)]);
  }
  if (static_cast<size_t>(cfg.fg_count) > pool.size()) out.clipped = true;
  std::vector<int> picked = detail::weighted_sample_without_replacement(
      std::move(pool), std::move(weight), cfg.fg_count, rng);
  for (int idx : picked) out.pixels.push_back(PixelCoord{idx % attn_map.w, idx / attn_map.w});
  return out;
}

struct BackgroundSample {
  std::vector<PixelCoord> pixels;
  bool clipped = false;
};

// Pool = lowest bg_top_frac of all image pixels by activation; bg_count
// uniform draws without replacement.
inline BackgroundSample sample_background(const GridD& attn_map, const SamplerConfig& cfg,
                                          const std::vector<PixelCoord>& excluded = {}) {
  cfg.validate();
  for (double v : attn_map.v)
    if (!std::isfinite(v) || v < 0.0)
      throw InvalidInputError("sample_background: activations must be finite and >= 0");

  std::vector<int> all_idx(attn_map.size());
  for (size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = static_cast<int>(i);
  std::vector<int> ordered = detail::order_by_activation(all_idx, attn_map, false);
  size_t n = detail::pool_size(cfg.bg_top_frac, ordered.size());

  std::vector<uint8_t> banned(attn_map.size(), 0);
  for (const PixelCoord& p : excluded) banned[static_cast<size_t>(p.y) * attn_map.w + p.x] = 1;

  std::vector<int> pool;
  pool.reserve(n);
  for (size_t i = 0; i < n; ++i)
    if (!banned[static_cast<size_t>(ordered[i])]) pool.push_back(ordered[i]);

  BackgroundSample out;
  Rng rng(hash_combine(cfg.rng_seed, 0x62675f706f6f6cULL));  // separate stream from fg draws
  if (static_cast<size_t>(cfg.bg_count) > pool.size()) out.clipped = true;
  std::vector<double> weight(pool.size(), 1.0);
  std::vector<int> picked = detail::weighted_sample_without_replacement(
      std::move(pool), std::move(weight), cfg.bg_count, rng);
  for (int idx : picked) out.pixels.push_back(PixelCoord{idx % attn_map.w, idx / attn_map.w});
  return out;
}

// Foreground then background sampling from the selected proposal's map;
// foreground pixels are excluded from the background pool, so the sets never
// collide.
inline PseudoLabelMap build_pseudo_labels(const GridD& attn_map, const Proposal& proposal,
                                          const SamplerConfig& cfg) {
  ForegroundSample fg = sample_foreground(attn_map, proposal.box, cfg);
  BackgroundSample bg = sample_background(attn_map, cfg, fg.pixels);

  PseudoLabelMap out;
  out.labels = Grid<int8_t>(attn_map.h, attn_map.w, kLabelIgnore);
  out.fg_pixels = std::move(fg.pixels);
  out.bg_pixels = std::move(bg.pixels);
  out.fg_clipped = fg.clipped;
  out.bg_clipped = bg.clipped;
  out.fg_uniform_fallback = fg.uniform_fallback;
  for (const PixelCoord& p : out.fg_pixels) out.labels.at(p.y, p.x) = kLabelForeground;
  for (const PixelCoord& p : out.bg_pixels) out.labels.at(p.y, p.x) = kLabelBackground;
  return out;
}

}  // namespace dips

#endif  // DIPS_SAMPLER_HPP
