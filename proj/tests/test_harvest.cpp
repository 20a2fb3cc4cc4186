#include <catch2/catch.hpp>

#include "dips/dataset.hpp"
#include "dips/harvest.hpp"
#include "dips/synthetic.hpp"
#include "oracles.hpp"

using namespace dips;

TEST_CASE("otsu threshold on stated fixtures") {
  SECTION("constant map is degenerate") {
    GridD flat(6, 6, 0.42);
    REQUIRE_FALSE(otsu_threshold(flat).has_value());
  }
  SECTION("two-level map splits strictly between the levels") {
    GridD g(4, 8);
    for (size_t i = 0; i < g.size(); ++i) g.v[i] = i % 2 == 0 ? 0.1 : 0.9;
    auto thr = otsu_threshold(g);
    REQUIRE(thr.has_value());
    REQUIRE(*thr > 0.1);
    REQUIRE(*thr < 0.9);
    REQUIRE(*thr == *oracle::otsu_brute(g));
  }
  SECTION("bimodal gaussian mixture lands between the modes") {
    Rng rng(31);
    GridD g(20, 20);
    for (size_t i = 0; i < g.size(); ++i)
      g.v[i] = std::clamp(rng.normal(i % 2 == 0 ? 0.2 : 0.8, 0.05), 0.0, 1.0);
    auto thr = otsu_threshold(g);
    REQUIRE(thr.has_value());
    REQUIRE(*thr > 0.35);
    REQUIRE(*thr < 0.65);
    REQUIRE(*thr == *oracle::otsu_brute(g));
  }
  SECTION("non-finite input is rejected") {
    GridD g(2, 2, 0.5);
    g.v[1] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(otsu_threshold(g), InvalidInputError);
  }
}

TEST_CASE("otsu matches the brute-force oracle on random fixtures") {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    int h = 2 + static_cast<int>(rng.index(7));
    int w = 2 + static_cast<int>(rng.index(7));
    GridD g(h, w);
    for (double& v : g.v) v = rng.uniform(-2.0, 5.0);
    auto fast = otsu_threshold(g);
    auto slow = oracle::otsu_brute(g);
    REQUIRE(fast.has_value() == slow.has_value());
    if (fast) REQUIRE(*fast == *slow);
  }
}

TEST_CASE("connected regions on stated fixtures") {
  SECTION("all-zero grid yields nothing") {
    REQUIRE(connected_regions(GridU8(5, 5, 0), 1).empty());
  }
  SECTION("two 3x3 blocks survive S_m=5 and die at S_m=10") {
    GridU8 g(10, 10, 0);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        g.at(y, x) = 1;
        g.at(y + 6, x + 6) = 1;
      }
    std::vector<Region> regs = connected_regions(g, 5);
    REQUIRE(regs.size() == 2);
    REQUIRE(regs[0].area == 9);
    REQUIRE(regs[1].area == 9);
    REQUIRE(regs[0].box == Box{0, 0, 3, 3});  // area tie broken by y0
    REQUIRE(regs[1].box == Box{6, 6, 9, 9});
    REQUIRE(connected_regions(g, 10).empty());
  }
  SECTION("diagonal pixels connect (8-connectivity)") {
    GridU8 g(4, 4, 0);
    g.at(0, 0) = 1;
    g.at(1, 1) = 1;
    g.at(2, 2) = 1;
    REQUIRE(connected_regions(g, 1).size() == 1);
  }
}

TEST_CASE("connected regions match the flood-fill oracle on random grids") {
  Rng rng(13);
  for (int trial = 0; trial < 60; ++trial) {
    int h = 2 + static_cast<int>(rng.index(7));
    int w = 2 + static_cast<int>(rng.index(7));
    GridU8 g(h, w, 0);
    for (uint8_t& v : g.v) v = rng.unit() < 0.45 ? 1 : 0;
    int min_size = 1 + static_cast<int>(rng.index(4));
    std::vector<Region> fast = connected_regions(g, min_size);
    std::vector<oracle::BruteRegion> slow = oracle::regions_brute(g, min_size);
    REQUIRE(fast.size() == slow.size());
    for (size_t i = 0; i < fast.size(); ++i) {
      REQUIRE(fast[i].area == slow[i].area);
      REQUIRE(fast[i].box == slow[i].box);
      for (int idx : slow[i].pixels) REQUIRE(fast[i].mask.v[static_cast<size_t>(idx)] == 1);
    }
  }
}

TEST_CASE("bounding boxes tightly enclose their region masks") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    GridU8 g(8, 8, 0);
    for (uint8_t& v : g.v) v = rng.unit() < 0.4 ? 1 : 0;
    for (const Region& reg : connected_regions(g, 1)) {
      // every box edge must touch a foreground pixel
      bool touch_left = false, touch_right = false, touch_top = false, touch_bottom = false;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          if (!reg.mask.at(y, x)) continue;
          REQUIRE(reg.box.contains(x, y));
          touch_left |= x == reg.box.x0;
          touch_right |= x == reg.box.x1 - 1;
          touch_top |= y == reg.box.y0;
          touch_bottom |= y == reg.box.y1 - 1;
        }
      REQUIRE(touch_left);
      REQUIRE(touch_right);
      REQUIRE(touch_top);
      REQUIRE(touch_bottom);
    }
  }
}

TEST_CASE("blur_outside_box contract") {
  Rng rng(23);
  Image img(9, 9);
  for (int c = 0; c < 3; ++c)
    for (double& v : img.plane(c).v) v = rng.unit();

  SECTION("whole-image box returns the input unchanged") {
    Image out = blur_outside_box(img, Box{0, 0, 9, 9}, 1.5);
    REQUIRE(out == img);
  }
  SECTION("constant image is a blur fixed point") {
    Image flat(9, 9, 0.6);
    Image out = blur_outside_box(flat, Box{2, 2, 5, 5}, 1.5);
    for (int c = 0; c < 3; ++c)
      for (double v : out.plane(c).v) REQUIRE(v == Approx(0.6).margin(1e-12));
  }
  SECTION("inside pixels are bit-identical, outside pixels are blurred") {
    Image impulse(9, 9, 0.0);
    impulse.r.at(7, 7) = 1.0;
    Box box{1, 1, 4, 4};
    Image out = blur_outside_box(impulse, box, 1.0);
    GridD expected = oracle::blur_brute(impulse.r, 1.0);
    double outside_max = 0.0;
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x) {
        if (box.contains(x, y)) {
          REQUIRE(out.r.at(y, x) == impulse.r.at(y, x));
        } else {
          REQUIRE(out.r.at(y, x) == Approx(expected.at(y, x)).margin(1e-12));
          outside_max = std::max(outside_max, out.r.at(y, x));
        }
      }
    REQUIRE(outside_max < 1.0);  // strictly below the impulse peak
  }
  SECTION("invalid boxes are rejected") {
    REQUIRE_THROWS_AS(blur_outside_box(img, Box{3, 3, 3, 5}, 1.0), InvalidInputError);
    REQUIRE_THROWS_AS(blur_outside_box(img, Box{0, 0, 10, 9}, 1.0), InvalidInputError);
  }
}

namespace {

// classifier whose scores are scripted per candidate image
class ScriptedClassifier : public Classifier {
 public:
  explicit ScriptedClassifier(std::function<double(const Image&)> score, int k = 3)
      : score_(std::move(score)), k_(k) {}
  int num_classes() const override { return k_; }
  ClassifierOutput classify_full(const Image& image) const override {
    ClassifierOutput out;
    double s = score_(image);
    out.probabilities.assign(static_cast<size_t>(k_), (1.0 - s) / (k_ - 1));
    out.probabilities[0] = s;
    out.logits.assign(static_cast<size_t>(k_), 0.0);
    return out;
  }
  InputGrad cross_entropy_input_grad(const Image&, int) const override {
    throw InvalidInputError("not used");
  }
  uint64_t weights_hash() const override { return 1; }

 private:
  std::function<double(const Image&)> score_;
  int k_;
};

}  // namespace

TEST_CASE("harvest_proposals selection logic") {
  const int n = 32;
  HarvestConfig cfg;
  cfg.min_region_px = 4;
  cfg.top_p = 2;
  cfg.min_score = 0.2;
  cfg.blur_sigma = 2.0;
  cfg.rng_seed = 5;

  Image img(n, n, 0.5);
  AttentionStack stack;

  SECTION("a single surviving region is always selected") {
    GridD map(n, n, 0.0);
    for (int y = 4; y < 10; ++y)
      for (int x = 6; x < 12; ++x) map.at(y, x) = 1.0;
    stack.maps = {map};
    stack.source_ids = {"head0"};
    ScriptedClassifier clf([](const Image&) { return 0.9; });
    for (uint64_t seed = 0; seed < 5; ++seed) {
      cfg.rng_seed = seed;
      HarvestResult r = harvest_proposals(img, stack, 0, cfg, clf);
      REQUIRE_FALSE(r.used_fallback);
      REQUIRE(r.top_p.size() == 1);
      REQUIRE(r.selected.box == Box{6, 4, 12, 10});
      REQUIRE(r.selected.score == Approx(0.9));
    }
  }

  SECTION("scores 0.9/0.8/0.1 with P=2 keep the top two") {
    GridD map(n, n, 0.0);
    Box boxes[3] = {Box{2, 2, 8, 8}, Box{12, 2, 18, 8}, Box{22, 2, 28, 8}};
    for (const Box& b : boxes)
      for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) map.at(y, x) = 1.0;
    stack.maps = {map};
    stack.source_ids = {"head0"};
    Image marked = img;
    // an unblurred center pixel tells the scripted classifier which box it is
    marked.r.at(5, 5) = 1.0;
    marked.r.at(5, 15) = 1.0;
    marked.r.at(5, 25) = 1.0;
    ScriptedClassifier clf([&](const Image& candidate) {
      if (candidate.r.at(5, 5) == 1.0) return 0.9;
      if (candidate.r.at(5, 15) == 1.0) return 0.8;
      return 0.1;
    });
    HarvestResult r = harvest_proposals(marked, stack, 0, cfg, clf);
    REQUIRE(r.top_p.size() == 2);
    REQUIRE(r.top_p[0].score == Approx(0.9));
    REQUIRE(r.top_p[1].score == Approx(0.8));
    REQUIRE(r.top_p[0].box == boxes[0]);
    REQUIRE(r.top_p[1].box == boxes[1]);
    bool selected_ok = r.selected.box == boxes[0] || r.selected.box == boxes[1];
    REQUIRE(selected_ok);
  }

  SECTION("no survivors fall back to the whole image") {
    GridD map(n, n, 0.0);
    for (int y = 4; y < 10; ++y)
      for (int x = 6; x < 12; ++x) map.at(y, x) = 1.0;
    stack.maps = {map};
    stack.source_ids = {"head0"};
    ScriptedClassifier clf([](const Image&) { return 0.05; });
    HarvestResult r = harvest_proposals(img, stack, 0, cfg, clf);
    REQUIRE(r.used_fallback);
    REQUIRE(r.selected.box == Box{0, 0, n, n});
  }

  SECTION("constant maps count as degenerate and cover the whole image") {
    stack.maps = {GridD(n, n, 0.7)};
    stack.source_ids = {"head0"};
    ScriptedClassifier clf([](const Image&) { return 0.9; });
    HarvestResult r = harvest_proposals(img, stack, 0, cfg, clf);
    REQUIRE(r.degenerate_maps == 1);
    REQUIRE(r.selected.box == Box{0, 0, n, n});
  }

  SECTION("harvest is deterministic in (image, stack, seed)") {
    GridD map(n, n, 0.0);
    for (int y = 4; y < 20; ++y)
      for (int x = 6; x < 22; ++x) map.at(y, x) = (x + y) % 5 * 0.2;
    stack.maps = {map};
    stack.source_ids = {"head0"};
    ScriptedClassifier clf([](const Image& c) { return 0.3 + 0.4 * c.r.at(8, 8); });
    HarvestResult a = harvest_proposals(img, stack, 0, cfg, clf);
    HarvestResult b = harvest_proposals(img, stack, 0, cfg, clf);
    REQUIRE(a.selected.box == b.selected.box);
    REQUIRE(a.selected.map_index == b.selected.map_index);
    REQUIRE(a.top_p.size() == b.top_p.size());
  }
}

TEST_CASE("top_p is sorted non-increasing and respects min_score") {
  const int n = 24;
  Image img(n, n, 0.4);
  GridD m1(n, n, 0.0), m2(n, n, 0.0);
  for (int y = 2; y < 8; ++y)
    for (int x = 2; x < 8; ++x) m1.at(y, x) = 1.0;
  for (int y = 14; y < 22; ++y)
    for (int x = 14; x < 22; ++x) m2.at(y, x) = 1.0;
  AttentionStack stack;
  stack.maps = {m1, m2};
  stack.source_ids = {"head0", "head1"};

  ScriptedClassifier clf([&](const Image& c) {
    // hash visible content into a stable pseudo-score
    return 0.15 + 0.8 * (static_cast<double>(hash_image(c) % 1000) / 1000.0);
  });
  HarvestConfig cfg;
  cfg.min_region_px = 4;
  cfg.top_p = 3;
  cfg.min_score = 0.3;
  cfg.blur_sigma = 1.5;
  HarvestResult r = harvest_proposals(img, stack, 0, cfg, clf);
  REQUIRE(r.top_p.size() <= 3);
  for (size_t i = 1; i < r.top_p.size(); ++i)
    REQUIRE(r.top_p[i - 1].score >= r.top_p[i].score);
  if (!r.used_fallback)
    for (const Proposal& p : r.top_p) REQUIRE(p.score >= cfg.min_score);
}

TEST_CASE("harvest recovers the synthetic target box") {
  SyntheticWorldConfig world;
  world.num_classes = 5;
  SyntheticAttentionProvider provider(world);
  SyntheticClassifier clf(world);
  SyntheticDatasetSpec spec;
  spec.image_size = 64;
  spec.num_classes = 5;
  spec.max_distractors = 2;

  HarvestConfig cfg;
  cfg.min_region_px = static_cast<int>(0.01 * 64 * 64);
  cfg.top_p = 3;
  cfg.min_score = 1.0 / 5;
  cfg.blur_sigma = 8.0;

  int hits = 0;
  const int trials = 100;
  for (int i = 0; i < trials; ++i) {
    GeneratedSample s = generate_sample(spec, i % 5, derive_seed(777, i, 0));
    AttentionStack stack = provider.attention_stack(s.image);
    cfg.rng_seed = derive_seed(42, i, 0);
    HarvestResult r = harvest_proposals(s.image, stack, s.class_index, cfg, clf);
    if (!r.used_fallback && iou(r.selected.box, s.box) >= 0.5) ++hits;
  }
  INFO("hits = " << hits << "/" << trials);
  REQUIRE(hits >= 90);
}
