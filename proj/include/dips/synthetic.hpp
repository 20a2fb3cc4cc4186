#ifndef DIPS_SYNTHETIC_HPP
#define DIPS_SYNTHETIC_HPP

#include "dips/backbone.hpp"
#include "dips/image_ops.hpp"

namespace dips {

// Deterministic stand-in for the frozen transformer + classifier pair. Each
// class has a saturated signature color; shapes painted in that color are
// detectable from pixels alone, so the provider and classifier stay pure
// functions of the image. Gaussian blur mixes signature colors into the
// background, which is what makes background-blurred proposals scoreable.
struct SyntheticWorldConfig {
  int num_classes = 5;
  double sigma_match = 0.08;      // color-kernel bandwidth
  double nominal_area_frac = 0.10;  // reference object area, fraction of image
  double logit_gain = 2.0;
  double clip_eps = 0.05;
  double temperature = 0.25;      // sharpening softmax temperature
  int num_heads = 6;              // backbone heads; last distractor_maps are off-object
  int distractor_maps = 1;
  double noise_sigma = 0.02;      // additive attention noise
  double head_blur_sigma = 1.2;
  double shape_detect_threshold = 0.5;
  int min_region_px = 16;
  double subregion_min_frac = 0.55;  // sub-region radius range, fraction of extent
  double subregion_max_frac = 1.0;
  uint64_t seed = 17;

  void validate() const {
    if (num_classes < 2) throw InvalidParameterError("synthetic: num_classes must be >= 2");
    if (num_heads < 1) throw InvalidParameterError("synthetic: num_heads must be >= 1");
    if (distractor_maps < 0 || distractor_maps >= num_heads)
      throw InvalidParameterError("synthetic: distractor_maps out of range");
    if (!(temperature > 0)) throw InvalidParameterError("synthetic: temperature must be > 0");
  }
};

struct Rgb {
  double r, g, b;
};

inline Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  return Rgb{r + (v - c), g + (v - c), b + (v - c)};
}

// Saturated hue-wheel signature for class k. Backgrounds are near-gray, so
// every signature keeps a wide color margin from non-object pixels.
inline Rgb class_signature(int k, int num_classes) {
  return hsv_to_rgb(static_cast<double>(k) / num_classes, 0.85, 0.95);
}

namespace detail {

inline double match_kernel(const Image& img, int y, int x, const Rgb& sig, double sigma) {
  double dr = img.r.at(y, x) - sig.r;
  double dg = img.g.at(y, x) - sig.g;
  double db = img.b.at(y, x) - sig.b;
  return std::exp(-0.5 * (dr * dr + dg * dg + db * db) / (sigma * sigma));
}

// per-class Gaussian color-match maps; the basis for both classifier scores
// and detected shape regions
inline std::vector<GridD> match_maps(const Image& img, const SyntheticWorldConfig& cfg) {
  std::vector<GridD> maps;
  maps.reserve(static_cast<size_t>(cfg.num_classes));
  for (int k = 0; k < cfg.num_classes; ++k) {
    Rgb sig = class_signature(k, cfg.num_classes);
    GridD m(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) m.at(y, x) = match_kernel(img, y, x, sig, cfg.sigma_match);
    maps.push_back(std::move(m));
  }
  return maps;
}

struct DetectedRegion {
  std::vector<int> pixels;  // row-major indices
  Box box;
  int area = 0;
};

inline std::vector<DetectedRegion> detect_shape_regions(const std::vector<GridD>& match,
                                                        const SyntheticWorldConfig& cfg) {
  const int h = match[0].h, w = match[0].w;
  GridU8 fg(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double best = 0.0;
      for (const GridD& m : match) best = std::max(best, m.at(y, x));
      fg.at(y, x) = best > cfg.shape_detect_threshold ? 1 : 0;
    }
  std::vector<DetectedRegion> regions;
  std::vector<int> stack;
  GridU8 seen(h, w, 0);
  for (int sy = 0; sy < h; ++sy)
    for (int sx = 0; sx < w; ++sx) {
      if (!fg.at(sy, sx) || seen.at(sy, sx)) continue;
      DetectedRegion reg;
      reg.box = Box{sx, sy, sx + 1, sy + 1};
      stack.push_back(sy * w + sx);
      seen.at(sy, sx) = 1;
      while (!stack.empty()) {
        int idx = stack.back();
        stack.pop_back();
        reg.pixels.push_back(idx);
        int y = idx / w, x = idx % w;
        reg.box.x0 = std::min(reg.box.x0, x);
        reg.box.y0 = std::min(reg.box.y0, y);
        reg.box.x1 = std::max(reg.box.x1, x + 1);
        reg.box.y1 = std::max(reg.box.y1, y + 1);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            if (!fg.at(ny, nx) || seen.at(ny, nx)) continue;
            seen.at(ny, nx) = 1;
            stack.push_back(ny * w + nx);
          }
      }
      reg.area = static_cast<int>(reg.pixels.size());
      if (reg.area >= cfg.min_region_px) regions.push_back(std::move(reg));
    }
  std::sort(regions.begin(), regions.end(), [](const DetectedRegion& a, const DetectedRegion& b) {
    if (a.area != b.area) return a.area > b.area;
    if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
    return a.box.x0 < b.box.x0;
  });
  return regions;
}

}  // namespace detail

class SyntheticClassifier : public Classifier {
 public:
  explicit SyntheticClassifier(const SyntheticWorldConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

  int num_classes() const override { return cfg_.num_classes; }

  // visible-pixel fraction per class, before clipping
  std::vector<double> visibility_fractions(const Image& image) const {
    std::vector<GridD> match = detail::match_maps(image, cfg_);
    double ref_area = cfg_.nominal_area_frac * image.height() * image.width();
    std::vector<double> frac(static_cast<size_t>(cfg_.num_classes), 0.0);
    for (int k = 0; k < cfg_.num_classes; ++k) {
      double s = 0.0;
      for (double m : match[static_cast<size_t>(k)].v) s += m;
      frac[static_cast<size_t>(k)] = s / ref_area;
    }
    return frac;
  }

  ClassifierOutput classify_full(const Image& image) const override {
    std::vector<double> frac = visibility_fractions(image);
    ClassifierOutput out;
    out.logits.resize(frac.size());
    for (size_t k = 0; k < frac.size(); ++k)
      out.logits[k] = cfg_.logit_gain * std::clamp(frac[k], cfg_.clip_eps, 1.0 - cfg_.clip_eps);
    out.probabilities = softmax_with_temperature(out.logits, cfg_.temperature);
    return out;
  }

  InputGrad cross_entropy_input_grad(const Image& image, int class_index) const override {
    if (class_index < 0 || class_index >= cfg_.num_classes)
      throw InvalidInputError("cross_entropy_input_grad: class index out of range");
    std::vector<GridD> match = detail::match_maps(image, cfg_);
    double ref_area = cfg_.nominal_area_frac * image.height() * image.width();
    std::vector<double> frac(static_cast<size_t>(cfg_.num_classes), 0.0);
    for (int k = 0; k < cfg_.num_classes; ++k) {
      double s = 0.0;
      for (double m : match[static_cast<size_t>(k)].v) s += m;
      frac[static_cast<size_t>(k)] = s / ref_area;
    }
    std::vector<double> logits(frac.size());
    for (size_t k = 0; k < frac.size(); ++k)
      logits[k] = cfg_.logit_gain * std::clamp(frac[k], cfg_.clip_eps, 1.0 - cfg_.clip_eps);
    std::vector<double> p = softmax_with_temperature(logits, cfg_.temperature);

    InputGrad out;
    out.loss = -std::log(std::max(p[static_cast<size_t>(class_index)], 1e-300));
    out.d_image = Image(image.height(), image.width());
    double sig2 = cfg_.sigma_match * cfg_.sigma_match;
    for (int k = 0; k < cfg_.num_classes; ++k) {
      // chain: dL/ds_k = (p_k - 1[k=y])/tau, clipped fractions pass no gradient
      bool interior = frac[static_cast<size_t>(k)] > cfg_.clip_eps &&
                      frac[static_cast<size_t>(k)] < 1.0 - cfg_.clip_eps;
      if (!interior) continue;
      double wk = cfg_.logit_gain * (p[static_cast<size_t>(k)] - (k == class_index ? 1.0 : 0.0)) /
                  cfg_.temperature / ref_area;
      if (wk == 0.0) continue;
      Rgb sig = class_signature(k, cfg_.num_classes);
      const GridD& m = match[static_cast<size_t>(k)];
      for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) {
          double scale = wk * m.at(y, x) / sig2;
          out.d_image.r.at(y, x) += scale * (sig.r - image.r.at(y, x));
          out.d_image.g.at(y, x) += scale * (sig.g - image.g.at(y, x));
          out.d_image.b.at(y, x) += scale * (sig.b - image.b.at(y, x));
        }
    }
    return out;
  }

  uint64_t weights_hash() const override { return hash_world_config(cfg_); }

  static uint64_t hash_world_config(const SyntheticWorldConfig& cfg) {
    std::vector<double> blob = {static_cast<double>(cfg.num_classes), cfg.sigma_match,
                                cfg.nominal_area_frac, cfg.logit_gain, cfg.clip_eps,
                                cfg.temperature, static_cast<double>(cfg.num_heads),
                                static_cast<double>(cfg.distractor_maps), cfg.noise_sigma,
                                cfg.head_blur_sigma, cfg.shape_detect_threshold,
                                static_cast<double>(cfg.min_region_px), cfg.subregion_min_frac,
                                cfg.subregion_max_frac, static_cast<double>(cfg.seed)};
    for (int k = 0; k < cfg.num_classes; ++k) {
      Rgb c = class_signature(k, cfg.num_classes);
      blob.push_back(c.r);
      blob.push_back(c.g);
      blob.push_back(c.b);
    }
    return hash_span(blob);
  }

  const SyntheticWorldConfig& config() const { return cfg_; }

 private:
  SyntheticWorldConfig cfg_;
};

// Class-agnostic attention maps built from detected shape regions: the first
// num_heads - distractor_maps heads cover random sub-regions of the largest
// detected region, the rest cover off-object areas. All randomness comes from
// a per-image seed, so identical images give identical stacks.
class SyntheticAttentionProvider : public AttentionProvider {
 public:
  explicit SyntheticAttentionProvider(const SyntheticWorldConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
  }

  std::vector<GridD> all_head_maps(const Image& image) const override {
    const int h = image.height(), w = image.width();
    std::vector<GridD> match = detail::match_maps(image, cfg_);
    std::vector<detail::DetectedRegion> regions = detail::detect_shape_regions(match, cfg_);
    Rng rng(hash_combine(cfg_.seed, hash_image(image)));

    std::vector<GridD> heads;
    heads.reserve(static_cast<size_t>(cfg_.num_heads));
    int object_heads = cfg_.num_heads - cfg_.distractor_maps;
    for (int j = 0; j < cfg_.num_heads; ++j) {
      GridD indicator(h, w, 0.0);
      if (j < object_heads && !regions.empty()) {
        mark_subregion(regions.front(), w, rng, indicator);
      } else if (j >= object_heads && regions.size() > 1) {
        // distractor head locks onto a secondary object
        const detail::DetectedRegion& reg = regions[1 + rng.index(regions.size() - 1)];
        for (int idx : reg.pixels) indicator.v[static_cast<size_t>(idx)] = 1.0;
      } else {
        mark_background_disk(regions, h, w, rng, indicator);
      }
      GridD m = gaussian_blur(indicator, cfg_.head_blur_sigma);
      if (cfg_.noise_sigma > 0)
        for (double& x : m.v) x = std::max(0.0, x + rng.normal(0.0, cfg_.noise_sigma));
      heads.push_back(std::move(m));
    }
    return heads;
  }

  AttentionStack attention_stack(const Image& image) const override {
    std::vector<GridD> heads = all_head_maps(image);
    AttentionStack stack;
    int selected = std::min(4, cfg_.num_heads);
    for (int j = 0; j < selected; ++j) {
      stack.maps.push_back(heads[static_cast<size_t>(j)]);
      stack.source_ids.push_back("head" + std::to_string(j));
    }
    GridD avg(image.height(), image.width(), 0.0);
    for (const GridD& m : heads)
      for (size_t i = 0; i < avg.size(); ++i) avg.v[i] += m.v[i];
    for (double& x : avg.v) x /= static_cast<double>(heads.size());
    stack.maps.push_back(std::move(avg));
    stack.source_ids.push_back("avg");
    return stack;
  }

  uint64_t weights_hash() const override { return SyntheticClassifier::hash_world_config(cfg_); }

  const SyntheticWorldConfig& config() const { return cfg_; }

 private:
  void mark_subregion(const detail::DetectedRegion& reg, int w, Rng& rng, GridD& out) const {
    int anchor = reg.pixels[rng.index(reg.pixels.size())];
    double ax = anchor % w, ay = anchor / w;
    double extent = 0.5 * std::max(reg.box.width(), reg.box.height());
    double radius = rng.uniform(cfg_.subregion_min_frac, cfg_.subregion_max_frac) * 2.0 * extent;
    bool any = false;
    for (int idx : reg.pixels) {
      double dx = idx % w - ax, dy = idx / w - ay;
      if (dx * dx + dy * dy <= radius * radius) {
        out.v[static_cast<size_t>(idx)] = 1.0;
        any = true;
      }
    }
    if (!any) out.v[static_cast<size_t>(anchor)] = 1.0;
  }

  void mark_background_disk(const std::vector<detail::DetectedRegion>& regions, int h, int w,
                            Rng& rng, GridD& out) const {
    GridU8 occupied(h, w, 0);
    for (const detail::DetectedRegion& reg : regions)
      for (int idx : reg.pixels) occupied.v[static_cast<size_t>(idx)] = 1;
    int cx = 0, cy = 0;
    for (int tries = 0; tries < 64; ++tries) {
      cx = static_cast<int>(rng.index(static_cast<size_t>(w)));
      cy = static_cast<int>(rng.index(static_cast<size_t>(h)));
      if (!occupied.at(cy, cx)) break;
    }
    int radius = std::max(2, std::min(h, w) / 10);
    for (int y = std::max(0, cy - radius); y < std::min(h, cy + radius + 1); ++y)
      for (int x = std::max(0, cx - radius); x < std::min(w, cx + radius + 1); ++x) {
        int dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= radius * radius && !occupied.at(y, x)) out.at(y, x) = 1.0;
      }
  }

  SyntheticWorldConfig cfg_;
};

}  // namespace dips

#endif  // DIPS_SYNTHETIC_HPP
