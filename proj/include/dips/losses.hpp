#ifndef DIPS_LOSSES_HPP
#define DIPS_LOSSES_HPP

#include "dips/backbone.hpp"
#include "dips/localization_map.hpp"
#include "dips/sampler.hpp"

namespace dips {

struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_cpa = 1.0;
  double lambda_crf = 2e-9;

  void validate() const {
    if (lambda_cls < 0.0 || lambda_cls > 1.0)
      throw InvalidParameterError("LossWeights: lambda_cls must be in [0,1]");
    if (lambda_cpa < 0.0 || lambda_cpa > 1.0)
      throw InvalidParameterError("LossWeights: lambda_cpa must be in [0,1]");
    if (lambda_crf < 0.0) throw InvalidParameterError("LossWeights: lambda_crf must be >= 0");
  }
};

struct AffinityParams {
  double sigma_xy = 15.0;   // pixels
  double sigma_rgb = 0.1;   // color units, channels in [0,1]
  int dense_max_px = 1024;  // auto mode: dense up to this pixel count

  void validate() const {
    if (!(sigma_xy > 0) || !(sigma_rgb > 0))
      throw InvalidParameterError("AffinityParams: bandwidths must be positive");
  }
};

// probability clamp for -log terms
constexpr double kProbClamp = 1e-7;

struct PartialCrossEntropyResult {
  double value = 0.0;
  GridD d_fg, d_bg;
  int labeled = 0;
};

// Mean over labeled pixels of -log M_label(r); IGNORE pixels contribute
// nothing. Throws when no pixel is labeled.
inline PartialCrossEntropyResult partial_cross_entropy_grad(const LocalizationMap& M,
                                                            const PseudoLabelMap& labels) {
  if (labels.labels.h != M.fg.h || labels.labels.w != M.fg.w || !M.fg.same_shape(M.bg))
    throw InvalidInputError("partial_cross_entropy: shape mismatch");
  int labeled = 0;
  for (int8_t l : labels.labels.v)
    if (l != kLabelIgnore) ++labeled;
  if (labeled == 0)
    throw UndefinedLossError("partial_cross_entropy: no labeled pixels");

  PartialCrossEntropyResult out;
  out.labeled = labeled;
  out.d_fg = GridD(M.height(), M.width(), 0.0);
  out.d_bg = GridD(M.height(), M.width(), 0.0);
  double inv_n = 1.0 / labeled;
  for (int y = 0; y < M.height(); ++y)
    for (int x = 0; x < M.width(); ++x) {
      int8_t l = labels.labels.at(y, x);
      if (l == kLabelIgnore) continue;
      const GridD& chan = l == kLabelForeground ? M.fg : M.bg;
      GridD& grad = l == kLabelForeground ? out.d_fg : out.d_bg;
      double p = chan.at(y, x);
      double clamped = std::max(p, kProbClamp);
      out.value -= std::log(clamped) * inv_n;
      if (p > kProbClamp) grad.at(y, x) = -inv_n / clamped;
    }
  return out;
}

inline double partial_cross_entropy(const LocalizationMap& M, const PseudoLabelMap& labels) {
  return partial_cross_entropy_grad(M, labels).value;
}

enum class CrfMode { kAuto, kDense, kDownsampled4 };

struct CrfResult {
  double value = 0.0;
  GridD d_fg, d_bg;
  CrfMode mode_used = CrfMode::kDense;
};

namespace detail {

// L = sum_i M_i^T A (1 - M_i), A(p,q) = exp(-|pos|^2/(2 s_xy^2)
// - |rgb|^2/(2 s_rgb^2)) for p != q. Gradient per channel: A·1 - 2 A·M_i.
inline CrfResult crf_dense(const Image& image, const LocalizationMap& M,
                           const AffinityParams& params) {
  const int h = image.height(), w = image.width();
  const size_t n = static_cast<size_t>(h) * w;
  const double inv_xy = 1.0 / (2.0 * params.sigma_xy * params.sigma_xy);
  const double inv_rgb = 1.0 / (2.0 * params.sigma_rgb * params.sigma_rgb);

  std::vector<double> a_row_sum(n, 0.0), a_fg(n, 0.0), a_bg(n, 0.0);
  const double* r = image.r.v.data();
  const double* g = image.g.v.data();
  const double* b = image.b.v.data();
  const double* mf = M.fg.v.data();
  const double* mb = M.bg.v.data();
  for (size_t p = 0; p < n; ++p) {
    int py = static_cast<int>(p) / w, px = static_cast<int>(p) % w;
    for (size_t q = p + 1; q < n; ++q) {
      int qy = static_cast<int>(q) / w, qx = static_cast<int>(q) % w;
      double dx = px - qx, dy = py - qy;
      double dr = r[p] - r[q], dg = g[p] - g[q], db = b[p] - b[q];
      double a = std::exp(-(dx * dx + dy * dy) * inv_xy -
                          (dr * dr + dg * dg + db * db) * inv_rgb);
      a_row_sum[p] += a;
      a_row_sum[q] += a;
      a_fg[p] += a * mf[q];
      a_fg[q] += a * mf[p];
      a_bg[p] += a * mb[q];
      a_bg[q] += a * mb[p];
    }
  }

  CrfResult out;
  out.mode_used = CrfMode::kDense;
  out.d_fg = GridD(h, w, 0.0);
  out.d_bg = GridD(h, w, 0.0);
  for (size_t p = 0; p < n; ++p) {
    out.value += mf[p] * (a_row_sum[p] - a_fg[p]) + mb[p] * (a_row_sum[p] - a_bg[p]);
    out.d_fg.v[p] = a_row_sum[p] - 2.0 * a_fg[p];
    out.d_bg.v[p] = a_row_sum[p] - 2.0 * a_bg[p];
  }
  return out;
}

inline GridD avg_pool4(const GridD& src) {
  int ch = (src.h + 3) / 4, cw = (src.w + 3) / 4;
  GridD dst(ch, cw, 0.0);
  for (int cy = 0; cy < ch; ++cy)
    for (int cx = 0; cx < cw; ++cx) {
      int y1 = std::min(src.h, cy * 4 + 4), x1 = std::min(src.w, cx * 4 + 4);
      double acc = 0.0;
      int cnt = 0;
      for (int y = cy * 4; y < y1; ++y)
        for (int x = cx * 4; x < x1; ++x) {
          acc += src.at(y, x);
          ++cnt;
        }
      dst.at(cy, cx) = acc / cnt;
    }
  return dst;
}

inline void unpool4_accumulate(const GridD& coarse_grad, GridD& fine_grad) {
  for (int y = 0; y < fine_grad.h; ++y)
    for (int x = 0; x < fine_grad.w; ++x) {
      int cy = y / 4, cx = x / 4;
      int y1 = std::min(fine_grad.h, cy * 4 + 4), x1 = std::min(fine_grad.w, cx * 4 + 4);
      int cnt = (y1 - cy * 4) * (x1 - cx * 4);
      fine_grad.at(y, x) = coarse_grad.at(cy, cx) / cnt;
    }
}

// 4x average-pooled approximation of the dense loss: bandwidth shrinks with
// the grid, the value is scaled by the lost pair count (16^2) to stay on the
// dense scale.
inline CrfResult crf_downsampled4(const Image& image, const LocalizationMap& M,
                                  const AffinityParams& params) {
  Image small;
  small.r = avg_pool4(image.r);
  small.g = avg_pool4(image.g);
  small.b = avg_pool4(image.b);
  LocalizationMap m_small;
  m_small.fg = avg_pool4(M.fg);
  m_small.bg = avg_pool4(M.bg);
  AffinityParams coarse = params;
  coarse.sigma_xy = params.sigma_xy / 4.0;
  CrfResult inner = crf_dense(small, m_small, coarse);

  constexpr double kScale = 256.0;  // (4*4)^2 pair-count ratio
  CrfResult out;
  out.mode_used = CrfMode::kDownsampled4;
  out.value = inner.value * kScale;
  for (double& v : inner.d_fg.v) v *= kScale;
  for (double& v : inner.d_bg.v) v *= kScale;
  out.d_fg = GridD(image.height(), image.width(), 0.0);
  out.d_bg = GridD(image.height(), image.width(), 0.0);
  unpool4_accumulate(inner.d_fg, out.d_fg);
  unpool4_accumulate(inner.d_bg, out.d_bg);
  return out;
}

}  // namespace detail

inline CrfResult crf_loss_grad(const Image& image, const LocalizationMap& M,
                               const AffinityParams& params, CrfMode mode = CrfMode::kAuto) {
  params.validate();
  if (image.height() != M.height() || image.width() != M.width())
    throw InvalidInputError("crf_loss: image and map shape mismatch");
  if (mode == CrfMode::kAuto)
    mode = static_cast<long long>(image.height()) * image.width() <= params.dense_max_px
               ? CrfMode::kDense
               : CrfMode::kDownsampled4;
  return mode == CrfMode::kDense ? detail::crf_dense(image, M, params)
                                 : detail::crf_downsampled4(image, M, params);
}

inline double crf_loss(const Image& image, const LocalizationMap& M, const AffinityParams& params,
                       CrfMode mode = CrfMode::kAuto) {
  return crf_loss_grad(image, M, params, mode).value;
}

struct ClassifierAlignmentResult {
  double value = 0.0;
  GridD d_fg;  // gradient w.r.t. M1 only
};

// Cross-entropy of the frozen classifier on the foreground-masked image
// x (.) M1; the gradient reaches M1 through the mask product only.
inline ClassifierAlignmentResult classifier_alignment_loss_grad(const Image& image, const GridD& m1,
                                                                int class_index,
                                                                const Classifier& classifier) {
  if (image.height() != m1.h || image.width() != m1.w)
    throw InvalidInputError("classifier_alignment_loss: shape mismatch");
  Image masked(image.height(), image.width());
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < m1.size(); ++i) masked.plane(c).v[i] = image.plane(c).v[i] * m1.v[i];

  Classifier::InputGrad ig = classifier.cross_entropy_input_grad(masked, class_index);
  ClassifierAlignmentResult out;
  out.value = ig.loss;
  out.d_fg = GridD(m1.h, m1.w, 0.0);
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < m1.size(); ++i)
      out.d_fg.v[i] += image.plane(c).v[i] * ig.d_image.plane(c).v[i];
  return out;
}

inline double classifier_alignment_loss(const Image& image, const GridD& m1, int class_index,
                                        const Classifier& classifier) {
  return classifier_alignment_loss_grad(image, m1, class_index, classifier).value;
}

struct LossTerms {
  double cls = 0.0;
  double cpa = 0.0;
  double crf = 0.0;
};

struct TotalLoss {
  double total = 0.0;
  LossTerms terms;       // raw values, for logging and ablation
  LossTerms weighted;
};

inline TotalLoss total_loss(const LossTerms& terms, const LossWeights& w) {
  w.validate();
  auto check = [](double v, const char* name) {
    if (std::isnan(v))
      throw TrainingAbortError(std::string("total_loss: NaN in term ") + name);
    if (!std::isfinite(v))
      throw TrainingAbortError(std::string("total_loss: non-finite term ") + name);
  };
  check(terms.cls, "L_CLS");
  check(terms.cpa, "L_CPA");
  check(terms.crf, "L_CRF");
  TotalLoss out;
  out.terms = terms;
  out.weighted = LossTerms{w.lambda_cls * terms.cls, w.lambda_cpa * terms.cpa,
                           w.lambda_crf * terms.crf};
  out.total = out.weighted.cls + out.weighted.cpa + out.weighted.crf;
  return out;
}

}  // namespace dips

#endif  // DIPS_LOSSES_HPP
