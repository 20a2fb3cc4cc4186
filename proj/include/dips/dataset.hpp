#ifndef DIPS_DATASET_HPP
#define DIPS_DATASET_HPP

#include <filesystem>
#include <optional>

#include "dips/image_io.hpp"
#include "dips/image_ops.hpp"
#include "dips/synthetic.hpp"

namespace dips {

namespace fs = std::filesystem;

struct SyntheticDatasetSpec {
  int num_images = 700;
  int image_size = 64;
  int num_classes = 5;
  double train_frac = 0.72;
  double val_frac = 0.14;  // remainder is the test split
  int max_distractors = 2;
  double background_lo = 0.25;
  double background_hi = 0.65;
  double pixel_noise = 0.02;
  double target_area_lo = 0.65;  // of the nominal object area
  double target_area_hi = 1.10;
  double distractor_area_lo = 0.15;
  double distractor_area_hi = 0.30;
  double nominal_area_frac = 0.10;  // must match the synthetic world config
  uint64_t seed = 1234;

  void validate() const {
    if (num_images < 1 || image_size < 16) throw InvalidParameterError("dataset spec: too small");
    if (num_classes < 2 || num_classes > 32)
      throw InvalidParameterError("dataset spec: num_classes out of range");
    if (train_frac <= 0 || val_frac < 0 || train_frac + val_frac >= 1.0)
      throw InvalidParameterError("dataset spec: bad split fractions");
  }
};

struct ManifestEntry {
  std::string image_path;  // resolved absolute path
  std::string image_id;    // file stem
  int class_index = 0;
  Box box;
  std::string mask_path;  // empty when absent
};

namespace detail {

enum class ShapeKind { kCircle, kSquare, kTriangle, kRing, kCross };

inline ShapeKind shape_for_class(int k) { return static_cast<ShapeKind>(k % 5); }

// rasterize a shape of roughly the requested area centered at (cx, cy)
inline void rasterize_shape(GridU8& mask, ShapeKind kind, double cx, double cy, double area) {
  auto paint = [&](int x, int y) {
    if (x >= 0 && x < mask.w && y >= 0 && y < mask.h) mask.at(y, x) = 1;
  };
  switch (kind) {
    case ShapeKind::kCircle: {
      double r = std::sqrt(area / M_PI);
      for (int y = static_cast<int>(cy - r); y <= static_cast<int>(cy + r) + 1; ++y)
        for (int x = static_cast<int>(cx - r); x <= static_cast<int>(cx + r) + 1; ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) paint(x, y);
      break;
    }
    case ShapeKind::kSquare: {
      double half = std::sqrt(area) / 2.0;
      for (int y = static_cast<int>(cy - half); y <= static_cast<int>(cy + half); ++y)
        for (int x = static_cast<int>(cx - half); x <= static_cast<int>(cx + half); ++x) paint(x, y);
      break;
    }
    case ShapeKind::kTriangle: {
      // upward isoceles, width == height
      double side = std::sqrt(2.0 * area);
      double top = cy - side / 2.0, bottom = cy + side / 2.0;
      for (int y = static_cast<int>(top); y <= static_cast<int>(bottom); ++y) {
        double t = (y - top) / std::max(1e-9, bottom - top);
        double half_w = t * side / 2.0;
        for (int x = static_cast<int>(cx - half_w); x <= static_cast<int>(cx + half_w); ++x)
          paint(x, y);
      }
      break;
    }
    case ShapeKind::kRing: {
      double r_out = std::sqrt(area / (M_PI * (1.0 - 0.55 * 0.55)));
      double r_in = 0.55 * r_out;
      for (int y = static_cast<int>(cy - r_out); y <= static_cast<int>(cy + r_out) + 1; ++y)
        for (int x = static_cast<int>(cx - r_out); x <= static_cast<int>(cx + r_out) + 1; ++x) {
          double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          if (d2 <= r_out * r_out && d2 >= r_in * r_in) paint(x, y);
        }
      break;
    }
    case ShapeKind::kCross: {
      double s = std::sqrt(area / (5.0 / 9.0));
      double arm = s / 6.0, half = s / 2.0;
      for (int y = static_cast<int>(cy - half); y <= static_cast<int>(cy + half); ++y)
        for (int x = static_cast<int>(cx - half); x <= static_cast<int>(cx + half); ++x) {
          bool horiz = std::abs(y - cy) <= arm;
          bool vert = std::abs(x - cx) <= arm;
          if (horiz || vert) paint(x, y);
        }
      break;
    }
  }
}

inline Box tight_box(const GridU8& mask) {
  Box b{mask.w, mask.h, 0, 0};
  bool any = false;
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x)
      if (mask.at(y, x)) {
        any = true;
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
      }
  if (!any) throw InvalidInputError("tight_box: empty mask");
  return b;
}

// smooth grayscale texture: coarse noise grid upsampled bilinearly
inline GridD background_texture(int size, double lo, double hi, Rng& rng) {
  GridD coarse(8, 8);
  for (double& v : coarse.v) v = rng.uniform(lo, hi);
  return bilinear_resize(coarse, size, size);
}

}  // namespace detail

struct GeneratedSample {
  Image image;
  GridU8 mask;  // target shape only
  Box box;
  int class_index = 0;
};

// One synthetic image: gray textured background, one target shape of the
// labeled class (always the largest object), and up to max_distractors
// smaller shapes of other classes, all painted in class signature colors.
inline GeneratedSample generate_sample(const SyntheticDatasetSpec& spec, int class_index,
                                       uint64_t sample_seed) {
  Rng rng(sample_seed);
  const int n = spec.image_size;
  const double nominal = spec.nominal_area_frac * n * n;

  GeneratedSample out;
  out.class_index = class_index;
  GridD bg = detail::background_texture(n, spec.background_lo, spec.background_hi, rng);
  out.image = Image(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double v = bg.at(y, x);
      out.image.r.at(y, x) = v;
      out.image.g.at(y, x) = v;
      out.image.b.at(y, x) = v;
    }

  auto paint_shape = [&](int cls, double area, const GridU8& occupied,
                         GridU8& shape_mask) -> bool {
    double extent = std::sqrt(area) * 1.3;  // over-estimate to keep margins
    int margin = static_cast<int>(extent / 2.0) + 2;
    if (2 * margin >= n) return false;
    for (int tries = 0; tries < 64; ++tries) {
      double cx = rng.uniform(margin, n - margin);
      double cy = rng.uniform(margin, n - margin);
      GridU8 candidate(n, n, 0);
      detail::rasterize_shape(candidate, detail::shape_for_class(cls), cx, cy, area);
      bool clash = false;
      for (size_t i = 0; i < candidate.size() && !clash; ++i)
        if (candidate.v[i] && occupied.v[i]) clash = true;
      if (clash) continue;
      shape_mask = std::move(candidate);
      Rgb sig = class_signature(cls, spec.num_classes);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (shape_mask.at(y, x)) {
            out.image.r.at(y, x) = sig.r;
            out.image.g.at(y, x) = sig.g;
            out.image.b.at(y, x) = sig.b;
          }
      return true;
    }
    return false;
  };

  // target first; dilate its footprint so distractors keep their distance
  double target_area = rng.uniform(spec.target_area_lo, spec.target_area_hi) * nominal;
  GridU8 none(n, n, 0);
  if (!paint_shape(class_index, target_area, none, out.mask))
    throw InvalidInputError("generate_sample: could not place target shape");
  GridU8 occupied(n, n, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (out.mask.at(y, x))
        for (int dy = -2; dy <= 2; ++dy)
          for (int dx = -2; dx <= 2; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < n && xx >= 0 && xx < n) occupied.at(yy, xx) = 1;
          }

  int distractors = static_cast<int>(rng.index(static_cast<size_t>(spec.max_distractors + 1)));
  for (int d = 0; d < distractors; ++d) {
    int other = (class_index + 1 +
                 static_cast<int>(rng.index(static_cast<size_t>(spec.num_classes - 1)))) %
                spec.num_classes;
    double area = rng.uniform(spec.distractor_area_lo, spec.distractor_area_hi) * nominal;
    GridU8 dmask;
    if (paint_shape(other, area, occupied, dmask))
      for (size_t i = 0; i < dmask.size(); ++i)
        if (dmask.v[i]) occupied.v[i] = 1;
  }

  if (spec.pixel_noise > 0)
    for (int c = 0; c < 3; ++c)
      for (double& v : out.image.plane(c).v)
        v = std::clamp(v + rng.normal(0.0, spec.pixel_noise), 0.0, 1.0);

  out.box = detail::tight_box(out.mask);
  return out;
}

inline std::string manifest_line(const ManifestEntry& e) {
  std::string line = e.image_path + " " + std::to_string(e.class_index) + " " +
                     std::to_string(e.box.x0) + " " + std::to_string(e.box.y0) + " " +
                     std::to_string(e.box.x1) + " " + std::to_string(e.box.y1);
  if (!e.mask_path.empty()) line += " " + e.mask_path;
  return line;
}

// One record per line: image path, class index, box coords (x0 y0 x1 y1),
// optional mask path. Paths are stored relative to the manifest.
inline std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw InvalidInputError("read_manifest: cannot open " + manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string img, mask;
    if (!(ss >> img >> e.class_index >> e.box.x0 >> e.box.y0 >> e.box.x1 >> e.box.y1))
      throw InvalidInputError("read_manifest: malformed line: " + line);
    ss >> mask;
    e.image_path = (base / img).string();
    e.image_id = fs::path(img).stem().string();
    if (!mask.empty()) e.mask_path = (base / mask).string();
    out.push_back(std::move(e));
  }
  return out;
}

inline GridU8 load_mask(const std::string& path) {
  GridD g = read_pgm(path);
  GridU8 m(g.h, g.w, 0);
  for (size_t i = 0; i < g.size(); ++i) m.v[i] = g.v[i] > 0.5 ? 1 : 0;
  return m;
}

struct GeneratedDataset {
  std::string root;
  std::string train_manifest, val_manifest, test_manifest;
};

// Writes images/, masks/ and per-split manifests under out_dir. Classes are
// assigned round-robin, so the histogram is balanced by construction.
inline GeneratedDataset generate_synthetic_dataset(const SyntheticDatasetSpec& spec,
                                                   const std::string& out_dir,
                                                   bool force = false) {
  spec.validate();
  fs::path root(out_dir);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force)
      throw InvalidInputError("generate_synthetic_dataset: " + out_dir +
                              " exists and is not empty (use force)");
    fs::remove_all(root);
  }
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");

  int n_train = static_cast<int>(std::lround(spec.train_frac * spec.num_images));
  int n_val = static_cast<int>(std::lround(spec.val_frac * spec.num_images));

  std::ofstream train_out(root / "train.txt"), val_out(root / "val.txt"),
      test_out(root / "test.txt");
  for (int i = 0; i < spec.num_images; ++i) {
    int cls = i % spec.num_classes;
    GeneratedSample sample = generate_sample(spec, cls, derive_seed(spec.seed, i, 0));
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d", i);
    std::string img_rel = std::string("images/") + name + ".ppm";
    std::string mask_rel = std::string("masks/") + name + ".pgm";
    write_ppm((root / img_rel).string(), sample.image);
    GridD mask_g(sample.mask.h, sample.mask.w, 0.0);
    for (size_t j = 0; j < mask_g.size(); ++j) mask_g.v[j] = sample.mask.v[j] ? 1.0 : 0.0;
    write_pgm8((root / mask_rel).string(), mask_g);

    ManifestEntry e;
    e.image_path = img_rel;
    e.class_index = cls;
    e.box = sample.box;
    e.mask_path = mask_rel;
    std::ofstream& out = i < n_train ? train_out : (i < n_train + n_val ? val_out : test_out);
    out << manifest_line(e) << "\n";
  }

  std::ofstream meta(root / "dataset.meta");
  meta << "num_classes=" << spec.num_classes << "\n";
  meta << "image_size=" << spec.image_size << "\n";
  meta << "num_images=" << spec.num_images << "\n";
  meta << "seed=" << spec.seed << "\n";

  GeneratedDataset out;
  out.root = root.string();
  out.train_manifest = (root / "train.txt").string();
  out.val_manifest = (root / "val.txt").string();
  out.test_manifest = (root / "test.txt").string();
  return out;
}

// --- training-time augmentation -----------------------------------------

struct AugmentConfig {
  bool enabled = true;
  int resize_to = 72;
  int crop_to = 64;
  bool hflip = true;
};

struct AugmentTransform {
  bool enabled = false;
  int src_size = 0, resize_to = 0, crop_to = 0;
  int offset_x = 0, offset_y = 0;
  bool flipped = false;

  // original-image pixel -> augmented-image pixel, if it survives the crop
  std::optional<PixelCoord> map_point(int x, int y) const {
    if (!enabled) return PixelCoord{x, y};
    double scale = static_cast<double>(resize_to) / src_size;
    int rx = static_cast<int>(std::floor((x + 0.5) * scale));
    int ry = static_cast<int>(std::floor((y + 0.5) * scale));
    rx -= offset_x;
    ry -= offset_y;
    if (rx < 0 || rx >= crop_to || ry < 0 || ry >= crop_to) return std::nullopt;
    if (flipped) rx = crop_to - 1 - rx;
    return PixelCoord{rx, ry};
  }
};

struct AugmentedSample {
  Image image;
  AugmentTransform transform;
};

inline AugmentedSample augment(const Image& src, const AugmentConfig& cfg, Rng& rng) {
  AugmentedSample out;
  if (!cfg.enabled) {
    out.image = src;
    out.transform.enabled = false;
    return out;
  }
  if (cfg.crop_to > cfg.resize_to)
    throw InvalidParameterError("augment: crop_to must not exceed resize_to");
  Image resized = bilinear_resize(src, cfg.resize_to, cfg.resize_to);
  int span = cfg.resize_to - cfg.crop_to;
  int ox = span > 0 ? static_cast<int>(rng.index(static_cast<size_t>(span + 1))) : 0;
  int oy = span > 0 ? static_cast<int>(rng.index(static_cast<size_t>(span + 1))) : 0;
  Image cropped = crop(resized, Box{ox, oy, ox + cfg.crop_to, oy + cfg.crop_to});
  bool flip = cfg.hflip && rng.coin();
  out.image = flip ? hflip(cropped) : cropped;
  out.transform.enabled = true;
  out.transform.src_size = src.width();
  out.transform.resize_to = cfg.resize_to;
  out.transform.crop_to = cfg.crop_to;
  out.transform.offset_x = ox;
  out.transform.offset_y = oy;
  out.transform.flipped = flip;
  return out;
}

}  // namespace dips

#endif  // DIPS_DATASET_HPP
