#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>

#include "dips/dataset.hpp"

using namespace dips;
namespace fs = std::filesystem;

namespace {

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

SyntheticDatasetSpec small_spec() {
  SyntheticDatasetSpec spec;
  spec.num_images = 40;
  spec.image_size = 64;
  spec.num_classes = 5;
  spec.train_frac = 0.5;
  spec.val_frac = 0.25;
  spec.seed = 321;
  return spec;
}

}  // namespace

TEST_CASE("generation is deterministic for a fixed seed") {
  fs::path root = fs::temp_directory_path() / "dips_ds_det";
  fs::remove_all(root);
  SyntheticDatasetSpec spec = small_spec();
  spec.num_images = 12;

  GeneratedDataset a = generate_synthetic_dataset(spec, (root / "a").string());
  GeneratedDataset b = generate_synthetic_dataset(spec, (root / "b").string());
  REQUIRE(file_bytes(a.train_manifest) == file_bytes(b.train_manifest));
  REQUIRE(file_bytes(a.test_manifest) == file_bytes(b.test_manifest));
  REQUIRE(file_bytes(fs::path(a.root) / "images" / "img_00003.ppm") ==
          file_bytes(fs::path(b.root) / "images" / "img_00003.ppm"));

  SECTION("existing non-empty target is refused without force") {
    REQUIRE_THROWS_AS(generate_synthetic_dataset(spec, (root / "a").string()), InvalidInputError);
    REQUIRE_NOTHROW(generate_synthetic_dataset(spec, (root / "a").string(), true));
  }
  fs::remove_all(root);
}

TEST_CASE("class histogram is balanced by construction") {
  fs::path root = fs::temp_directory_path() / "dips_ds_hist";
  fs::remove_all(root);
  SyntheticDatasetSpec spec = small_spec();
  spec.num_images = 100;
  GeneratedDataset ds = generate_synthetic_dataset(spec, root.string());

  std::vector<int> counts(static_cast<size_t>(spec.num_classes), 0);
  for (const std::string& manifest : {ds.train_manifest, ds.val_manifest, ds.test_manifest})
    for (const ManifestEntry& e : read_manifest(manifest))
      counts[static_cast<size_t>(e.class_index)] += 1;
  double expected = 100.0 / spec.num_classes;
  for (int c : counts) {
    REQUIRE(c >= expected * 0.8);
    REQUIRE(c <= expected * 1.2);
  }
  fs::remove_all(root);
}

TEST_CASE("every gt box tightly encloses its mask") {
  fs::path root = fs::temp_directory_path() / "dips_ds_tight";
  fs::remove_all(root);
  SyntheticDatasetSpec spec = small_spec();
  GeneratedDataset ds = generate_synthetic_dataset(spec, root.string());

  int checked = 0;
  for (const ManifestEntry& e : read_manifest(ds.train_manifest)) {
    GridU8 mask = load_mask(e.mask_path);
    Box tight{mask.w, mask.h, 0, 0};
    long long area = 0;
    for (int y = 0; y < mask.h; ++y)
      for (int x = 0; x < mask.w; ++x)
        if (mask.at(y, x)) {
          ++area;
          tight.x0 = std::min(tight.x0, x);
          tight.y0 = std::min(tight.y0, y);
          tight.x1 = std::max(tight.x1, x + 1);
          tight.y1 = std::max(tight.y1, y + 1);
        }
    REQUIRE(area > 0);
    REQUIRE(tight == e.box);
    ++checked;
  }
  REQUIRE(checked == 20);
  fs::remove_all(root);
}

TEST_CASE("target is the largest object and distractors carry other classes") {
  SyntheticDatasetSpec spec = small_spec();
  spec.max_distractors = 2;
  for (int i = 0; i < 10; ++i) {
    GeneratedSample s = generate_sample(spec, i % 5, derive_seed(5150, i, 0));
    long long target_area = 0;
    for (uint8_t v : s.mask.v) target_area += v;
    // nominal bounds from the generator ranges
    double nominal = spec.nominal_area_frac * 64 * 64;
    REQUIRE(target_area > 0.5 * nominal);
    REQUIRE(target_area < 1.4 * nominal);
  }
}

TEST_CASE("manifest round trip and id derivation") {
  fs::path root = fs::temp_directory_path() / "dips_ds_manifest";
  fs::remove_all(root);
  SyntheticDatasetSpec spec = small_spec();
  spec.num_images = 8;
  GeneratedDataset ds = generate_synthetic_dataset(spec, root.string());
  std::vector<ManifestEntry> entries = read_manifest(ds.train_manifest);
  REQUIRE(entries.size() == 4);
  for (const ManifestEntry& e : entries) {
    REQUIRE(fs::exists(e.image_path));
    REQUIRE(fs::exists(e.mask_path));
    REQUIRE(e.image_id.rfind("img_", 0) == 0);
    Image img = read_ppm(e.image_path);
    REQUIRE(img.height() == 64);
    REQUIRE(img.width() == 64);
  }
  fs::remove_all(root);
}

TEST_CASE("augmentation geometry maps original pixels to crop coordinates") {
  SyntheticDatasetSpec spec = small_spec();
  GeneratedSample s = generate_sample(spec, 1, 42);
  AugmentConfig cfg;
  cfg.resize_to = 72;
  cfg.crop_to = 64;

  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    AugmentedSample aug = augment(s.image, cfg, rng);
    REQUIRE(aug.image.height() == 64);
    REQUIRE(aug.image.width() == 64);
    // a surviving mapped point keeps roughly the same color (bilinear blur
    // aside); check on strongly colored target pixels
    int tested = 0;
    for (int y = s.box.y0 + 2; y < s.box.y1 - 2 && tested < 5; y += 3)
      for (int x = s.box.x0 + 2; x < s.box.x1 - 2 && tested < 5; x += 3) {
        if (!s.mask.at(y, x)) continue;
        auto mapped = aug.transform.map_point(x, y);
        if (!mapped) continue;
        double d = std::abs(aug.image.r.at(mapped->y, mapped->x) - s.image.r.at(y, x)) +
                   std::abs(aug.image.g.at(mapped->y, mapped->x) - s.image.g.at(y, x)) +
                   std::abs(aug.image.b.at(mapped->y, mapped->x) - s.image.b.at(y, x));
        REQUIRE(d < 0.35);
        ++tested;
      }
    REQUIRE(tested > 0);
  }

  SECTION("disabled augmentation is the identity") {
    AugmentConfig off;
    off.enabled = false;
    Rng r2(1);
    AugmentedSample aug = augment(s.image, off, r2);
    REQUIRE(aug.image == s.image);
    auto mapped = aug.transform.map_point(10, 20);
    REQUIRE(mapped.has_value());
    REQUIRE(*mapped == PixelCoord{10, 20});
  }
}
