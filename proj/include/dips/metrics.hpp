#ifndef DIPS_METRICS_HPP
#define DIPS_METRICS_HPP

#include <fstream>
#include <iomanip>

#include "dips/harvest.hpp"

namespace dips {

// One evaluation image. Boxes use the half-open pixel convention everywhere.
struct EvalRecord {
  std::string image_id;
  std::vector<Box> gt_boxes;
  std::optional<GridU8> gt_mask;
  GridD pred_map;                    // values in [0,1]
  std::vector<double> class_scores;  // optional, needed for top-k accuracy
  int true_class = -1;

  void validate() const {
    if (gt_boxes.empty() && !gt_mask.has_value())
      throw InvalidInputError("EvalRecord " + image_id + ": needs gt boxes or a mask");
    for (double v : pred_map.v)
      if (!(v >= 0.0 && v <= 1.0))
        throw InvalidInputError("EvalRecord " + image_id + ": pred_map outside [0,1]");
  }
};

inline void require_nonzero_box(const Box& b, const char* who) {
  if (b.area() <= 0) throw InvalidInputError(std::string(who) + ": zero-area box");
}

inline double iou(const Box& a, const Box& b) {
  require_nonzero_box(a, "iou");
  require_nonzero_box(b, "iou");
  double inter = static_cast<double>(intersect(a, b).area());
  return inter / (static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter);
}

// intersection over the predicted box
inline double iop(const Box& pred, const Box& gt) {
  require_nonzero_box(pred, "iop");
  require_nonzero_box(gt, "iop");
  return static_cast<double>(intersect(pred, gt).area()) / static_cast<double>(pred.area());
}

// intersection over the annotated (ground-truth) box
inline double ioa(const Box& pred, const Box& gt) {
  require_nonzero_box(pred, "ioa");
  require_nonzero_box(gt, "ioa");
  return static_cast<double>(intersect(pred, gt).area()) / static_cast<double>(gt.area());
}

// intersection over one ground-truth box, used per box for multi-instance
// error
inline double iog(const Box& pred, const Box& gt) {
  require_nonzero_box(pred, "iog");
  require_nonzero_box(gt, "iog");
  return static_cast<double>(intersect(pred, gt).area()) / static_cast<double>(gt.area());
}

// Binarize at tau (value >= tau is foreground) and return the largest
// connected component's tight box. multi_box returns every component's box.
inline std::vector<Box> map_to_boxes(const GridD& pred_map, double tau, bool multi_box = false) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidParameterError("map_to_boxes: tau must be in [0,1]");
  GridU8 binary(pred_map.h, pred_map.w, 0);
  for (size_t i = 0; i < pred_map.size(); ++i) binary.v[i] = pred_map.v[i] >= tau ? 1 : 0;
  std::vector<Region> regions = connected_regions(binary, 1);
  std::vector<Box> boxes;
  for (const Region& r : regions) {
    boxes.push_back(r.box);
    if (!multi_box) break;  // regions are sorted largest first
  }
  return boxes;
}

// 100 evenly spaced thresholds covering [0,1]
inline std::vector<double> default_threshold_grid() {
  std::vector<double> taus(100);
  for (int i = 0; i < 100; ++i) taus[static_cast<size_t>(i)] = i / 99.0;
  return taus;
}

inline bool record_hit_at(const EvalRecord& rec, double tau, double delta) {
  std::vector<Box> boxes = map_to_boxes(rec.pred_map, tau);
  if (boxes.empty()) return false;
  for (const Box& gt : rec.gt_boxes)
    if (iou(boxes.front(), gt) >= delta) return true;
  return false;
}

inline double box_acc_at(const std::vector<EvalRecord>& records, double delta, double tau) {
  if (records.empty()) throw InvalidInputError("box_acc_at: no records");
  int hits = 0;
  for (const EvalRecord& rec : records) hits += record_hit_at(rec, tau, delta) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

struct ThresholdSweep {
  std::vector<double> thresholds;
  std::vector<double> values;

  void validate() const {
    for (size_t i = 1; i < thresholds.size(); ++i)
      if (!(thresholds[i] > thresholds[i - 1]))
        throw InvalidInputError("ThresholdSweep: thresholds must be strictly increasing");
    for (double v : values)
      if (!std::isfinite(v)) throw InvalidInputError("ThresholdSweep: non-finite value");
  }
};

inline ThresholdSweep box_acc_sweep(const std::vector<EvalRecord>& records, double delta,
                                    std::vector<double> taus = default_threshold_grid()) {
  ThresholdSweep sweep;
  sweep.thresholds = std::move(taus);
  sweep.values.reserve(sweep.thresholds.size());
  for (double tau : sweep.thresholds) sweep.values.push_back(box_acc_at(records, delta, tau));
  return sweep;
}

// best-over-threshold box accuracy at IoU delta
inline double max_box_acc(const std::vector<EvalRecord>& records, double delta,
                          const std::vector<double>& taus = default_threshold_grid()) {
  double best = 0.0;
  for (double tau : taus) best = std::max(best, box_acc_at(records, delta, tau));
  return best;
}

// mean of MaxBoxAcc over delta in {0.3, 0.5, 0.7}
inline double new_max_box_acc(const std::vector<EvalRecord>& records,
                              const std::vector<double>& taus = default_threshold_grid()) {
  return (max_box_acc(records, 0.3, taus) + max_box_acc(records, 0.5, taus) +
          max_box_acc(records, 0.7, taus)) /
         3.0;
}

// threshold attaining the best accuracy at the given delta; accuracy ties go
// to the largest tau, which keeps boxes tight on near-binary maps
inline double best_threshold(const std::vector<EvalRecord>& records, double delta,
                             const std::vector<double>& taus = default_threshold_grid()) {
  double best_acc = -1.0, best_tau = 0.0;
  for (double tau : taus) {
    double acc = box_acc_at(records, delta, tau);
    if (acc >= best_acc) {
      best_acc = acc;
      best_tau = tau;
    }
  }
  return best_tau;
}

// Pixel-wise average precision: rank every pixel of the dataset by predicted
// value and integrate precision over recall increments (step integration, so
// the worst ranking scores exactly the foreground base rate).
inline double pxap(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw InvalidInputError("pxap: no records");
  std::vector<std::pair<double, uint8_t>> pooled;
  size_t total_fg = 0;
  for (const EvalRecord& rec : records) {
    if (!rec.gt_mask.has_value())
      throw InvalidInputError("pxap: record " + rec.image_id + " has no gt mask");
    if (rec.gt_mask->h != rec.pred_map.h || rec.gt_mask->w != rec.pred_map.w)
      throw InvalidInputError("pxap: mask/map shape mismatch for " + rec.image_id);
    for (size_t i = 0; i < rec.pred_map.size(); ++i) {
      uint8_t fg = rec.gt_mask->v[i] ? 1 : 0;
      pooled.emplace_back(rec.pred_map.v[i], fg);
      total_fg += fg;
    }
  }
  if (total_fg == 0) return 0.0;
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  double ap = 0.0;
  double prev_recall = 0.0;
  size_t tp = 0, predicted = 0;
  size_t i = 0;
  while (i < pooled.size()) {
    size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) {
      tp += pooled[j].second;
      ++predicted;
      ++j;
    }
    double precision = static_cast<double>(tp) / static_cast<double>(predicted);
    double recall = static_cast<double>(tp) / static_cast<double>(total_fg);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

// top-k classification AND IoU >= 0.5 at the box-accuracy-optimal threshold
inline double topk_loc_acc(const std::vector<EvalRecord>& records, int k,
                           const std::vector<double>& taus = default_threshold_grid()) {
  if (records.empty()) throw InvalidInputError("topk_loc_acc: no records");
  if (k < 1) throw InvalidParameterError("topk_loc_acc: k must be >= 1");
  double tau = best_threshold(records, 0.5, taus);
  int hits = 0;
  for (const EvalRecord& rec : records) {
    if (rec.class_scores.empty())
      throw InvalidInputError("topk_loc_acc: record " + rec.image_id + " has no class scores");
    std::vector<int> order(rec.class_scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      double sa = rec.class_scores[static_cast<size_t>(a)];
      double sb = rec.class_scores[static_cast<size_t>(b)];
      return sa != sb ? sa > sb : a < b;
    });
    bool class_ok = false;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(order.size())); ++i)
      if (order[static_cast<size_t>(i)] == rec.true_class) class_ok = true;
    if (class_ok && record_hit_at(rec, tau, 0.5)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

struct ErrorDissection {
  double lpe = 0.0;  // localization part error: IoP > 0.5
  double lme = 0.0;  // localization more error: IoA > 0.7
  double mie = 0.0;  // multi-instance error: >= 2 gt boxes with IoG > 0.3
  double wrong = 0.0;
};

// Dissects wrongly localized records (best IoU < 0.5) at the
// box-accuracy-optimal threshold; rates are over all records and the
// categories are not mutually exclusive.
inline ErrorDissection error_dissection(const std::vector<EvalRecord>& records,
                                        const std::vector<double>& taus = default_threshold_grid()) {
  if (records.empty()) throw InvalidInputError("error_dissection: no records");
  double tau = best_threshold(records, 0.5, taus);
  ErrorDissection out;
  for (const EvalRecord& rec : records) {
    std::vector<Box> boxes = map_to_boxes(rec.pred_map, tau);
    double best_iou = 0.0;
    const Box* best_gt = nullptr;
    if (!boxes.empty())
      for (const Box& gt : rec.gt_boxes) {
        double v = iou(boxes.front(), gt);
        if (v > best_iou || best_gt == nullptr) {
          best_iou = v;
          best_gt = &gt;
        }
      }
    if (best_iou >= 0.5) continue;
    out.wrong += 1.0;
    if (boxes.empty() || best_gt == nullptr) continue;
    if (iop(boxes.front(), *best_gt) > 0.5) out.lpe += 1.0;
    if (ioa(boxes.front(), *best_gt) > 0.7) out.lme += 1.0;
    int covered = 0;
    for (const Box& gt : rec.gt_boxes)
      if (iog(boxes.front(), gt) > 0.3) ++covered;
    if (covered >= 2) out.mie += 1.0;
  }
  double n = static_cast<double>(records.size());
  out.lpe /= n;
  out.lme /= n;
  out.mie /= n;
  out.wrong /= n;
  return out;
}

enum class SweepMetric { kBoxAcc30, kBoxAcc50, kBoxAcc70 };

inline const char* sweep_metric_name(SweepMetric m) {
  switch (m) {
    case SweepMetric::kBoxAcc30: return "boxacc_iou30";
    case SweepMetric::kBoxAcc50: return "boxacc_iou50";
    case SweepMetric::kBoxAcc70: return "boxacc_iou70";
  }
  return "unknown";
}

inline ThresholdSweep threshold_sweep(const std::vector<EvalRecord>& records, SweepMetric metric,
                                      std::vector<double> taus = default_threshold_grid()) {
  double delta = metric == SweepMetric::kBoxAcc30 ? 0.3
               : metric == SweepMetric::kBoxAcc50 ? 0.5
                                                  : 0.7;
  return box_acc_sweep(records, delta, std::move(taus));
}

// value at tau / best-over-threshold value: near 1 for threshold-insensitive
// (near-binary) maps, small for blobby maps
inline double flatness_statistic(const std::vector<EvalRecord>& records, double delta,
                                 double tau = 0.7,
                                 const std::vector<double>& taus = default_threshold_grid()) {
  double peak = max_box_acc(records, delta, taus);
  if (peak <= 0.0) return 0.0;
  return box_acc_at(records, delta, tau) / peak;
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<std::pair<std::string, double>>& rows) {
  std::ofstream out(path);
  if (!out) throw InvalidInputError("write_metrics_csv: cannot open " + path);
  out << "metric,value\n";
  out << std::setprecision(10) << std::fixed;
  for (const auto& [name, value] : rows) out << name << "," << value << "\n";
}

inline void write_sweep_csv(const std::string& path, const std::string& metric_name,
                            const ThresholdSweep& sweep) {
  std::ofstream out(path);
  if (!out) throw InvalidInputError("write_sweep_csv: cannot open " + path);
  out << "threshold," << metric_name << "\n";
  out << std::setprecision(10) << std::fixed;
  for (size_t i = 0; i < sweep.thresholds.size(); ++i)
    out << sweep.thresholds[i] << "," << sweep.values[i] << "\n";
}

}  // namespace dips

#endif  // DIPS_METRICS_HPP
