#include <catch2/catch.hpp>

#include <filesystem>
#include <set>

#include "dips/metrics.hpp"
#include "oracles.hpp"

using namespace dips;

namespace {

EvalRecord record_from_mask(const std::string& id, const GridU8& mask, const GridD& pred) {
  EvalRecord rec;
  rec.image_id = id;
  rec.gt_mask = mask;
  rec.pred_map = pred;
  bool any = false;
  for (uint8_t v : mask.v) any |= v != 0;
  if (any) {
    Box b{mask.w, mask.h, 0, 0};
    for (int y = 0; y < mask.h; ++y)
      for (int x = 0; x < mask.w; ++x)
        if (mask.at(y, x)) {
          b.x0 = std::min(b.x0, x);
          b.y0 = std::min(b.y0, y);
          b.x1 = std::max(b.x1, x + 1);
          b.y1 = std::max(b.y1, y + 1);
        }
    rec.gt_boxes = {b};
  }
  return rec;
}

GridU8 block_mask(int n, const Box& b) {
  GridU8 m(n, n, 0);
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x) m.at(y, x) = 1;
  return m;
}

GridD mask_to_map(const GridU8& m) {
  GridD g(m.h, m.w, 0.0);
  for (size_t i = 0; i < m.size(); ++i) g.v[i] = m.v[i] ? 1.0 : 0.0;
  return g;
}

}  // namespace

TEST_CASE("box overlap statistics") {
  SECTION("identical boxes score 1 in every variant") {
    Box b{3, 4, 9, 11};
    REQUIRE(iou(b, b) == 1.0);
    REQUIRE(iop(b, b) == 1.0);
    REQUIRE(ioa(b, b) == 1.0);
    REQUIRE(iog(b, b) == 1.0);
  }
  SECTION("the worked 10x10 vs shifted example") {
    Box a{0, 0, 10, 10}, b{5, 5, 15, 15};
    REQUIRE(iou(a, b) == Approx(25.0 / 175.0));
    REQUIRE(iop(a, b) == Approx(0.25));
    REQUIRE(ioa(a, b) == Approx(0.25));
  }
  SECTION("disjoint boxes score 0 in every variant") {
    Box a{0, 0, 4, 4}, b{6, 6, 9, 9};
    REQUIRE(iou(a, b) == 0.0);
    REQUIRE(iop(a, b) == 0.0);
    REQUIRE(ioa(a, b) == 0.0);
    REQUIRE(iog(a, b) == 0.0);
  }
  SECTION("zero-area boxes are rejected") {
    Box a{0, 0, 4, 4}, zero{2, 2, 2, 5};
    REQUIRE_THROWS_AS(iou(a, zero), InvalidInputError);
    REQUIRE_THROWS_AS(iop(zero, a), InvalidInputError);
  }
  SECTION("iou matches pixel counting on random boxes") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      auto rand_box = [&]() {
        int x0 = static_cast<int>(rng.index(12)), y0 = static_cast<int>(rng.index(12));
        return Box{x0, y0, x0 + 1 + static_cast<int>(rng.index(8)),
                   y0 + 1 + static_cast<int>(rng.index(8))};
      };
      Box a = rand_box(), b = rand_box();
      REQUIRE(iou(a, b) == Approx(oracle::iou_pixels(a, b, 24, 24)).margin(1e-12));
    }
  }
}

TEST_CASE("map_to_boxes fixtures") {
  SECTION("an exact binary mask recovers the tight box") {
    GridU8 mask = block_mask(8, Box{2, 3, 6, 7});
    std::vector<Box> boxes = map_to_boxes(mask_to_map(mask), 0.5);
    REQUIRE(boxes.size() == 1);
    REQUIRE(boxes[0] == Box{2, 3, 6, 7});
  }
  SECTION("a constant sub-threshold map yields nothing") {
    GridD g(6, 6, 0.3);
    REQUIRE(map_to_boxes(g, 0.5).empty());
  }
  SECTION("the larger of two blobs wins") {
    GridD g(12, 12, 0.0);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 10; ++x) g.at(y, x) = 0.9;  // area 50
    for (int y = 8; y < 12; ++y)
      for (int x = 7; x < 12; ++x) g.at(y, x) = 0.9;  // area 20
    std::vector<Box> boxes = map_to_boxes(g, 0.5);
    REQUIRE(boxes.size() == 1);
    REQUIRE(boxes[0] == Box{0, 0, 10, 5});
    std::vector<Box> all = map_to_boxes(g, 0.5, true);
    REQUIRE(all.size() == 2);
  }
  SECTION("tau bounds are validated") {
    GridD g(4, 4, 0.5);
    REQUIRE_THROWS_AS(map_to_boxes(g, 1.5), InvalidParameterError);
  }
}

TEST_CASE("max_box_acc fixtures") {
  const int n = 16;
  SECTION("perfect maps reach 1.0 and all-zero maps reach 0.0") {
    std::vector<EvalRecord> perfect, zero;
    Rng rng(9);
    for (int i = 0; i < 4; ++i) {
      Box b{2 + static_cast<int>(rng.index(4)), 3, 10, 12};
      GridU8 mask = block_mask(n, b);
      perfect.push_back(record_from_mask("p" + std::to_string(i), mask, mask_to_map(mask)));
      zero.push_back(record_from_mask("z" + std::to_string(i), mask, GridD(n, n, 0.0)));
    }
    REQUIRE(new_max_box_acc(perfect) == 1.0);
    REQUIRE(max_box_acc(perfect, 0.7) == 1.0);
    REQUIRE(new_max_box_acc(zero) == 0.0);
  }

  SECTION("hand-crafted per-delta hit pattern {1, 2/3, 1/3} averages to 2/3") {
    // per-record IoU against gt: 0.45, 0.5, 1.0 -> hits 3/3, 2/3, 1/3 at
    // deltas 0.3, 0.5, 0.7
    struct Case {
      Box gt, pred;
      double target_iou;
    };
    std::vector<Case> cases = {
        {Box{0, 0, 4, 5}, Box{0, 0, 3, 3}, 0.45},  // inter 9, union 20
        {Box{0, 0, 4, 4}, Box{0, 1, 4, 3}, 0.5},   // inter 8, union 16
        {Box{2, 2, 6, 6}, Box{2, 2, 6, 6}, 1.0},
    };
    std::vector<EvalRecord> recs;
    for (size_t i = 0; i < cases.size(); ++i) {
      REQUIRE(iou(cases[i].pred, cases[i].gt) == Approx(cases[i].target_iou).margin(1e-9));
      EvalRecord rec;
      rec.image_id = "h" + std::to_string(i);
      rec.gt_boxes = {cases[i].gt};
      rec.pred_map = mask_to_map(block_mask(8, cases[i].pred));
      rec.gt_mask = block_mask(8, cases[i].gt);
      recs.push_back(std::move(rec));
    }
    REQUIRE(max_box_acc(recs, 0.3) == Approx(1.0));
    REQUIRE(max_box_acc(recs, 0.5) == Approx(2.0 / 3.0));
    REQUIRE(max_box_acc(recs, 0.7) == Approx(1.0 / 3.0));
    REQUIRE(new_max_box_acc(recs) == Approx(2.0 / 3.0));
  }

  SECTION("matches the brute-force oracle on random small fixtures") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<EvalRecord> recs;
      int n_rec = 1 + static_cast<int>(rng.index(5));
      std::vector<double> taus = default_threshold_grid();
      for (int r = 0; r < n_rec; ++r) {
        int sz = 4 + static_cast<int>(rng.index(5));
        GridD pred(sz, sz);
        for (double& v : pred.v) v = rng.unit();
        for (double v : pred.v) taus.push_back(v);
        GridU8 mask(sz, sz, 0);
        int bx = static_cast<int>(rng.index(static_cast<size_t>(sz - 2)));
        int by = static_cast<int>(rng.index(static_cast<size_t>(sz - 2)));
        for (int y = by; y < std::min(sz, by + 3); ++y)
          for (int x = bx; x < std::min(sz, bx + 3); ++x) mask.at(y, x) = 1;
        recs.push_back(record_from_mask("r" + std::to_string(r), mask, pred));
      }
      std::sort(taus.begin(), taus.end());
      taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
      for (double delta : {0.3, 0.5, 0.7}) {
        double fast = max_box_acc(recs, delta, taus);
        double slow = oracle::max_box_acc_brute(recs, delta, taus);
        REQUIRE(fast == slow);
      }
    }
  }

  SECTION("non-increasing in delta") {
    Rng rng(33);
    std::vector<EvalRecord> recs;
    for (int r = 0; r < 4; ++r) {
      GridD pred(10, 10);
      for (double& v : pred.v) v = rng.unit();
      recs.push_back(record_from_mask("m" + std::to_string(r), block_mask(10, Box{2, 2, 7, 8}),
                                      pred));
    }
    double prev = 1.1;
    for (double delta : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      double acc = max_box_acc(recs, delta);
      REQUIRE(acc <= prev);
      prev = acc;
    }
  }
}

TEST_CASE("pxap fixtures") {
  const int n = 8;
  GridU8 mask = block_mask(n, Box{1, 2, 5, 6});

  SECTION("a perfect ranking scores 1") {
    std::vector<EvalRecord> recs = {record_from_mask("a", mask, mask_to_map(mask))};
    REQUIRE(pxap(recs) == Approx(1.0));
  }

  SECTION("the inverted ranking scores the foreground base rate") {
    GridD inverted(n, n);
    for (size_t i = 0; i < inverted.size(); ++i) inverted.v[i] = mask.v[i] ? 0.0 : 1.0;
    std::vector<EvalRecord> recs = {record_from_mask("a", mask, inverted)};
    double base_rate = 16.0 / 64.0;
    REQUIRE(pxap(recs) == Approx(base_rate).margin(1e-12));
    REQUIRE(pxap(recs) == Approx(oracle::pxap_brute(recs)).margin(1e-12));
  }

  SECTION("random maps match the exhaustive sweep oracle") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<EvalRecord> recs;
      for (int r = 0; r < 2; ++r) {
        GridD pred(4, 4);
        for (double& v : pred.v) v = rng.index(6) / 5.0;  // duplicated values on purpose
        GridU8 m(4, 4, 0);
        for (uint8_t& v : m.v) v = rng.unit() < 0.4 ? 1 : 0;
        recs.push_back(record_from_mask("x" + std::to_string(r), m, pred));
        recs.back().gt_boxes = {Box{0, 0, 4, 4}};  // ensure validity when mask is empty
      }
      REQUIRE(pxap(recs) == Approx(oracle::pxap_brute(recs)).margin(1e-12));
    }
  }

  SECTION("invariant under strictly monotone rescaling") {
    Rng rng(43);
    std::vector<EvalRecord> recs;
    GridD pred(n, n);
    for (double& v : pred.v) v = rng.unit();
    recs.push_back(record_from_mask("a", mask, pred));
    double before = pxap(recs);
    for (double& v : recs[0].pred_map.v) v = v * v * 0.5 + 0.1 * v;  // monotone on [0,1]
    // renormalize into [0,1]
    double hi = *std::max_element(recs[0].pred_map.v.begin(), recs[0].pred_map.v.end());
    for (double& v : recs[0].pred_map.v) v /= hi;
    REQUIRE(pxap(recs) == Approx(before).margin(1e-12));
  }

  SECTION("records without masks are rejected") {
    EvalRecord rec;
    rec.image_id = "nomask";
    rec.gt_boxes = {Box{0, 0, 2, 2}};
    rec.pred_map = GridD(4, 4, 0.5);
    std::vector<EvalRecord> recs = {rec};
    REQUIRE_THROWS_AS(pxap(recs), InvalidInputError);
  }
}

TEST_CASE("metrics are invariant under record reordering") {
  Rng rng(51);
  std::vector<EvalRecord> recs;
  for (int r = 0; r < 5; ++r) {
    GridD pred(8, 8);
    for (double& v : pred.v) v = rng.unit();
    GridU8 mask = block_mask(8, Box{1 + r % 3, 2, 6, 7});
    recs.push_back(record_from_mask("o" + std::to_string(r), mask, pred));
  }
  double p1 = pxap(recs), b1 = new_max_box_acc(recs);
  std::reverse(recs.begin(), recs.end());
  REQUIRE(pxap(recs) == p1);
  REQUIRE(new_max_box_acc(recs) == b1);
}

TEST_CASE("top-k localization accuracy") {
  const int n = 8;
  GridU8 mask = block_mask(n, Box{2, 2, 6, 6});
  auto make = [&](bool good_map, std::vector<double> scores, int true_class) {
    EvalRecord rec = record_from_mask("t", mask, good_map ? mask_to_map(mask) : GridD(n, n, 0.0));
    rec.class_scores = std::move(scores);
    rec.true_class = true_class;
    return rec;
  };

  SECTION("perfect scores and maps reach 1.0") {
    std::vector<EvalRecord> recs = {make(true, {0.1, 0.8, 0.1}, 1),
                                    make(true, {0.9, 0.05, 0.05}, 0)};
    REQUIRE(topk_loc_acc(recs, 1) == 1.0);
    REQUIRE(topk_loc_acc(recs, 5) == 1.0);
  }
  SECTION("wrong top-1 but right top-5 decouple") {
    std::vector<EvalRecord> recs = {make(true, {0.5, 0.3, 0.2}, 1)};
    REQUIRE(topk_loc_acc(recs, 1) == 0.0);
    REQUIRE(topk_loc_acc(recs, 5) == 1.0);
  }
  SECTION("mixed four-record fixture matches the hand count") {
    std::vector<EvalRecord> recs = {
        make(true, {0.7, 0.2, 0.1}, 0),   // class ok, map ok
        make(true, {0.2, 0.7, 0.1}, 0),   // class top2, map ok
        make(false, {0.7, 0.2, 0.1}, 0),  // class ok, map empty
        make(true, {0.1, 0.2, 0.7}, 0),   // class top3, map ok
    };
    REQUIRE(topk_loc_acc(recs, 1) == Approx(0.25));
    REQUIRE(topk_loc_acc(recs, 2) == Approx(0.5));
    REQUIRE(topk_loc_acc(recs, 3) == Approx(0.75));
  }
}

TEST_CASE("error dissection fixtures") {
  const int n = 20;

  SECTION("a small box strictly inside the gt counts as LPE, not LME") {
    EvalRecord rec;
    rec.image_id = "lpe";
    rec.gt_boxes = {Box{2, 2, 12, 12}};  // area 100
    // pred box inside the gt at 40% of its area: 40 px
    GridU8 pm = block_mask(n, Box{3, 3, 11, 8});  // 8x5 = 40
    rec.pred_map = mask_to_map(pm);
    rec.gt_mask = block_mask(n, rec.gt_boxes[0]);
    // IoU = 40/100 = 0.4 < 0.5 wrong; IoP = 1 > 0.5; IoA = 0.4 < 0.7
    std::vector<EvalRecord> recs = {rec};
    ErrorDissection e = error_dissection(recs);
    REQUIRE(e.wrong == 1.0);
    REQUIRE(e.lpe == 1.0);
    REQUIRE(e.lme == 0.0);
    REQUIRE(e.mie == 0.0);
  }

  SECTION("a 3x-size box containing the gt counts as LME") {
    EvalRecord rec;
    rec.image_id = "lme";
    rec.gt_boxes = {Box{8, 8, 12, 12}};  // 16 px
    GridU8 pm = block_mask(n, Box{5, 5, 13, 11});  // 48 px, contains gt
    rec.pred_map = mask_to_map(pm);
    rec.gt_mask = block_mask(n, rec.gt_boxes[0]);
    // IoU = 16/48 = 1/3 < 0.5; IoA = 1 > 0.7; IoP = 1/3 < 0.5
    std::vector<EvalRecord> recs = {rec};
    ErrorDissection e = error_dissection(recs);
    REQUIRE(e.wrong == 1.0);
    REQUIRE(e.lme == 1.0);
    REQUIRE(e.lpe == 0.0);
  }

  SECTION("a box straddling two gt instances counts as MIE") {
    EvalRecord rec;
    rec.image_id = "mie";
    rec.gt_boxes = {Box{1, 1, 6, 6}, Box{10, 1, 15, 6}};
    GridU8 pm = block_mask(n, Box{2, 2, 14, 5});
    rec.pred_map = mask_to_map(pm);
    rec.gt_mask = block_mask(n, rec.gt_boxes[0]);
    std::vector<EvalRecord> recs = {rec};
    ErrorDissection e = error_dissection(recs);
    REQUIRE(e.wrong == 1.0);
    REQUIRE(e.mie == 1.0);
  }

  SECTION("all-correct localizations have zero error rates") {
    GridU8 mask = block_mask(n, Box{4, 4, 12, 14});
    std::vector<EvalRecord> recs = {record_from_mask("ok", mask, mask_to_map(mask))};
    ErrorDissection e = error_dissection(recs);
    REQUIRE(e.wrong == 0.0);
    REQUIRE(e.lpe == 0.0);
    REQUIRE(e.lme == 0.0);
    REQUIRE(e.mie == 0.0);
  }
}

TEST_CASE("threshold sweeps") {
  const int n = 12;
  GridU8 mask = block_mask(n, Box{3, 3, 9, 9});

  SECTION("binary maps give a step function with one plateau") {
    std::vector<EvalRecord> recs = {record_from_mask("b", mask, mask_to_map(mask))};
    ThresholdSweep sweep = threshold_sweep(recs, SweepMetric::kBoxAcc50);
    sweep.validate();
    // all thresholds in (0,1] hit the same box; only tau=0 may differ
    std::set<double> distinct(sweep.values.begin(), sweep.values.end());
    REQUIRE(distinct.size() <= 2);
    REQUIRE(sweep.values.back() == 1.0);
  }

  SECTION("superlevel boxes shrink as tau rises on graded maps") {
    GridD graded(n, n, 0.0);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double dx = x - 5.5, dy = y - 5.5;
        graded.at(y, x) = std::exp(-(dx * dx + dy * dy) / 18.0);
      }
    long long prev_area = static_cast<long long>(n) * n;
    for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      std::vector<Box> boxes = map_to_boxes(graded, tau);
      long long area = boxes.empty() ? 0 : boxes[0].area();
      REQUIRE(area <= prev_area);
      prev_area = area;
    }
  }

  SECTION("flatness statistic separates near-binary from blobby maps") {
    // near-binary prediction: the mask itself
    std::vector<EvalRecord> crisp = {record_from_mask("crisp", mask, mask_to_map(mask))};
    // blobby prediction: gaussian bump whose high superlevel sets collapse
    // to the peak, the classic CAM failure mode
    GridD blob(n, n, 0.0);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double dx = x - 5.5, dy = y - 5.5;
        blob.at(y, x) = std::exp(-(dx * dx + dy * dy) / 8.0);
      }
    std::vector<EvalRecord> blobby = {record_from_mask("blob", mask, blob)};
    double crisp_flat = flatness_statistic(crisp, 0.5);
    double blob_flat = flatness_statistic(blobby, 0.5);
    INFO("crisp=" << crisp_flat << " blobby=" << blob_flat);
    REQUIRE(crisp_flat > blob_flat);
    REQUIRE(crisp_flat >= 0.75);
  }
}

TEST_CASE("csv writers emit the documented shapes") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "dips_metrics_csv";
  fs::create_directories(dir);
  write_metrics_csv((dir / "metrics.csv").string(), {{"pxap", 0.91}, {"newmaxboxacc", 0.88}});
  std::ifstream in(dir / "metrics.csv");
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "metric,value");
  std::getline(in, line);
  REQUIRE(line.rfind("pxap,", 0) == 0);

  ThresholdSweep sweep;
  sweep.thresholds = {0.0, 0.5, 1.0};
  sweep.values = {1.0, 0.5, 0.0};
  write_sweep_csv((dir / "sweep_boxacc_iou50.csv").string(), "boxacc_iou50", sweep);
  std::ifstream sin(dir / "sweep_boxacc_iou50.csv");
  std::getline(sin, line);
  REQUIRE(line == "threshold,boxacc_iou50");
  fs::remove_all(dir);
}
