#include <catch2/catch.hpp>

#include <set>

#include "dips/dataset.hpp"
#include "dips/sampler.hpp"
#include "oracles.hpp"

using namespace dips;

namespace {

Proposal box_proposal(const Box& b, int h, int w) {
  Proposal p;
  p.box = b;
  p.region_mask = GridU8(h, w, 0);
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x) p.region_mask.at(y, x) = 1;
  p.area_px = b.area();
  return p;
}

}  // namespace

TEST_CASE("foreground sampling fixture cases") {
  SECTION("a one-pixel pool always returns that pixel") {
    GridD map(4, 4, 0.0);
    map.at(1, 2) = 1.0;
    SamplerConfig cfg;
    cfg.fg_top_frac = 1.0 / 16.0;  // pool of exactly one pixel over the box below
    cfg.fg_count = 1;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      cfg.rng_seed = seed;
      ForegroundSample s = sample_foreground(map, Box{0, 0, 4, 4}, cfg);
      REQUIRE(s.pixels.size() == 1);
      REQUIRE(s.pixels[0] == PixelCoord{2, 1});
    }
  }

  SECTION("fg_count equal to the pool size exhausts the pool") {
    GridD map(3, 3, 0.0);
    map.at(0, 0) = 0.5;
    map.at(1, 1) = 0.9;
    map.at(2, 2) = 0.1;
    SamplerConfig cfg;
    cfg.fg_top_frac = 3.0 / 9.0;
    cfg.fg_count = 3;
    cfg.rng_seed = 3;
    ForegroundSample s = sample_foreground(map, Box{0, 0, 3, 3}, cfg);
    std::set<PixelCoord> got(s.pixels.begin(), s.pixels.end());
    std::set<PixelCoord> expect = {{0, 0}, {1, 1}, {2, 2}};
    REQUIRE(got == expect);
    REQUIRE_FALSE(s.clipped);
  }

  SECTION("a zero in-box map degrades to a logged uniform draw over the box") {
    GridD map(6, 6, 0.0);
    SamplerConfig cfg;
    cfg.fg_top_frac = 0.5;
    cfg.fg_count = 4;
    cfg.rng_seed = 9;
    ForegroundSample s = sample_foreground(map, Box{1, 1, 5, 5}, cfg);
    REQUIRE(s.uniform_fallback);
    REQUIRE(s.pixels.size() == 4);
    for (const PixelCoord& p : s.pixels) {
      REQUIRE(p.x >= 1);
      REQUIRE(p.x < 5);
      REQUIRE(p.y >= 1);
      REQUIRE(p.y < 5);
    }
  }

  SECTION("requests beyond the pool clip and flag") {
    GridD map(2, 2, 1.0);
    SamplerConfig cfg;
    cfg.fg_top_frac = 0.5;
    cfg.fg_count = 10;
    cfg.rng_seed = 1;
    ForegroundSample s = sample_foreground(map, Box{0, 0, 2, 2}, cfg);
    REQUIRE(s.clipped);
    REQUIRE(s.pixels.size() == 2);
  }
}

TEST_CASE("foreground draws follow the multinomial law") {
  SECTION("two-pixel pool at odds 9:1") {
    GridD map(1, 4, 0.0);
    map.at(0, 0) = 0.9;
    map.at(0, 1) = 0.1;
    SamplerConfig cfg;
    cfg.fg_top_frac = 1.0;
    cfg.fg_count = 1;
    int first = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      cfg.rng_seed = derive_seed(100, i, 0);
      ForegroundSample s = sample_foreground(map, Box{0, 0, 2, 1}, cfg);
      if (s.pixels[0] == PixelCoord{0, 0}) ++first;
    }
    double freq = static_cast<double>(first) / draws;
    REQUIRE(freq == Approx(0.9).margin(0.02));
  }

  SECTION("chi-square over a 16-pixel weighted pool") {
    GridD map(4, 4);
    Rng wrng(55);
    for (double& v : map.v) v = 0.1 + wrng.unit();
    double total = 0.0;
    for (double v : map.v) total += v;
    SamplerConfig cfg;
    cfg.fg_top_frac = 1.0;
    cfg.fg_count = 1;
    std::vector<long long> observed(16, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      cfg.rng_seed = derive_seed(200, i, 0);
      ForegroundSample s = sample_foreground(map, Box{0, 0, 4, 4}, cfg);
      observed[static_cast<size_t>(s.pixels[0].y * 4 + s.pixels[0].x)] += 1;
    }
    std::vector<double> expected;
    for (double v : map.v) expected.push_back(draws * v / total);
    double stat = oracle::chi2_statistic(observed, expected);
    INFO("chi2 = " << stat << " vs q99 = " << oracle::chi2_q99(15));
    REQUIRE(stat < oracle::chi2_q99(15));  // p > 0.01
  }
}

TEST_CASE("background sampling fixture cases") {
  SECTION("a single zero pixel with the smallest pool is always picked") {
    GridD map(4, 4, 0.8);
    map.at(3, 1) = 0.0;
    SamplerConfig cfg;
    cfg.bg_top_frac = 1.0 / 16.0;
    cfg.bg_count = 1;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      cfg.rng_seed = seed;
      BackgroundSample s = sample_background(map, cfg);
      REQUIRE(s.pixels.size() == 1);
      REQUIRE(s.pixels[0] == PixelCoord{1, 3});
    }
  }

  SECTION("uniform law over the whole image on a constant map") {
    GridD map(4, 4, 0.5);
    SamplerConfig cfg;
    cfg.bg_top_frac = 1.0;
    cfg.bg_count = 1;
    std::vector<long long> observed(16, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      cfg.rng_seed = derive_seed(300, i, 0);
      BackgroundSample s = sample_background(map, cfg);
      observed[static_cast<size_t>(s.pixels[0].y * 4 + s.pixels[0].x)] += 1;
    }
    std::vector<double> expected(16, draws / 16.0);
    double stat = oracle::chi2_statistic(observed, expected);
    INFO("chi2 = " << stat << " vs q99 = " << oracle::chi2_q99(15));
    REQUIRE(stat < oracle::chi2_q99(15));
  }

  SECTION("low pool never intersects the in-box top pool when fractions allow") {
    // high activations concentrated in the box, zeros outside
    GridD map(8, 8, 0.0);
    Box box{2, 2, 6, 6};
    Rng rng(77);
    for (int y = box.y0; y < box.y1; ++y)
      for (int x = box.x0; x < box.x1; ++x) map.at(y, x) = 0.5 + 0.5 * rng.unit();
    SamplerConfig cfg;
    cfg.fg_top_frac = 0.5;
    cfg.bg_top_frac = 0.5;
    cfg.fg_count = 8;
    cfg.bg_count = 8;
    for (uint64_t seed = 0; seed < 20; ++seed) {
      cfg.rng_seed = seed;
      ForegroundSample fg = sample_foreground(map, box, cfg);
      BackgroundSample bg = sample_background(map, cfg);
      std::set<PixelCoord> fg_set(fg.pixels.begin(), fg.pixels.end());
      for (const PixelCoord& p : bg.pixels) REQUIRE(fg_set.count(p) == 0);
    }
  }
}

TEST_CASE("build_pseudo_labels composition") {
  const int n = 16;
  GridD map(n, n, 0.0);
  Box box{4, 4, 12, 12};
  Rng rng(5);
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) map.at(y, x) = 0.3 + 0.7 * rng.unit();
  Proposal prop = box_proposal(box, n, n);

  SECTION("zero counts label everything IGNORE") {
    SamplerConfig cfg;
    cfg.fg_count = 0;
    cfg.bg_count = 0;
    PseudoLabelMap labels = build_pseudo_labels(map, prop, cfg);
    for (int8_t l : labels.labels.v) REQUIRE(l == kLabelIgnore);
    REQUIRE(labels.fg_pixels.empty());
    REQUIRE(labels.bg_pixels.empty());
  }

  SECTION("invariants: disjoint sets, fg inside the box, counts honored") {
    SamplerConfig cfg;
    cfg.fg_count = 10;
    cfg.bg_count = 12;
    for (uint64_t seed = 0; seed < 25; ++seed) {
      cfg.rng_seed = seed;
      PseudoLabelMap labels = build_pseudo_labels(map, prop, cfg);
      REQUIRE(labels.fg_pixels.size() == 10);
      REQUIRE(labels.bg_pixels.size() == 12);
      std::set<PixelCoord> fg(labels.fg_pixels.begin(), labels.fg_pixels.end());
      std::set<PixelCoord> bg(labels.bg_pixels.begin(), labels.bg_pixels.end());
      REQUIRE(fg.size() == 10);
      REQUIRE(bg.size() == 12);
      for (const PixelCoord& p : fg) {
        REQUIRE(bg.count(p) == 0);
        REQUIRE(prop.box.contains(p.x, p.y));
        REQUIRE(labels.labels.at(p.y, p.x) == kLabelForeground);
      }
      for (const PixelCoord& p : bg) REQUIRE(labels.labels.at(p.y, p.x) == kLabelBackground);
      size_t labeled = 0;
      for (int8_t l : labels.labels.v)
        if (l != kLabelIgnore) ++labeled;
      REQUIRE(labeled == 22);
    }
  }

  SECTION("same seed reproduces the same labels, fresh seeds move them") {
    SamplerConfig cfg;
    cfg.fg_count = 6;
    cfg.bg_count = 6;
    cfg.rng_seed = 42;
    PseudoLabelMap a = build_pseudo_labels(map, prop, cfg);
    PseudoLabelMap b = build_pseudo_labels(map, prop, cfg);
    REQUIRE(a.labels.v == b.labels.v);

    int different = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
      cfg.rng_seed = seed;
      PseudoLabelMap x = build_pseudo_labels(map, prop, cfg);
      cfg.rng_seed = seed + 1000;
      PseudoLabelMap y = build_pseudo_labels(map, prop, cfg);
      if (x.labels.v != y.labels.v) ++different;
    }
    REQUIRE(different >= 99);  // non-static pseudo-labels across iterations
  }
}

TEST_CASE("pseudo-labels from synthetic attention stay on the object") {
  SyntheticWorldConfig world;
  world.num_classes = 5;
  SyntheticAttentionProvider provider(world);
  SyntheticDatasetSpec spec;
  spec.image_size = 64;
  spec.num_classes = 5;
  spec.max_distractors = 1;

  SamplerConfig cfg;
  cfg.fg_top_frac = 0.3;
  cfg.bg_top_frac = 0.3;
  cfg.fg_count = 20;
  cfg.bg_count = 20;

  long long fg_total = 0, fg_inside = 0;
  for (int i = 0; i < 100; ++i) {
    GeneratedSample s = generate_sample(spec, i % 5, derive_seed(909, i, 0));
    AttentionStack stack = provider.attention_stack(s.image);
    // head 0 is an object map by construction; its otsu box approximates the
    // object, which is what the harvester would hand the sampler
    const GridD& map = stack.maps[0];
    GridU8 binary(map.h, map.w, 0);
    double thr = *otsu_threshold(map);
    for (size_t j = 0; j < map.size(); ++j) binary.v[j] = map.v[j] >= thr ? 1 : 0;
    std::vector<Region> regions = connected_regions(binary, 8);
    REQUIRE_FALSE(regions.empty());
    Proposal prop;
    prop.box = regions.front().box;
    prop.region_mask = regions.front().mask;
    cfg.rng_seed = derive_seed(11, i, 0);
    PseudoLabelMap labels = build_pseudo_labels(map, prop, cfg);
    for (const PixelCoord& p : labels.fg_pixels) {
      ++fg_total;
      fg_inside += s.mask.at(p.y, p.x) ? 1 : 0;
    }
  }
  double frac = static_cast<double>(fg_inside) / static_cast<double>(fg_total);
  INFO("fg pixels inside gt mask: " << frac);
  REQUIRE(frac >= 0.95);
}

TEST_CASE("sampler validation errors") {
  GridD map(4, 4, 0.5);
  SamplerConfig cfg;
  cfg.fg_top_frac = 0.0;
  REQUIRE_THROWS_AS(sample_foreground(map, Box{0, 0, 4, 4}, cfg), InvalidParameterError);
  cfg.fg_top_frac = 0.5;
  map.v[3] = -0.25;
  REQUIRE_THROWS_AS(sample_foreground(map, Box{0, 0, 4, 4}, cfg), InvalidInputError);
  REQUIRE_THROWS_AS(sample_background(map, cfg), InvalidInputError);
}
