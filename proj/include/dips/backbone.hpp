#ifndef DIPS_BACKBONE_HPP
#define DIPS_BACKBONE_HPP

#include <atomic>
#include <memory>

#include "dips/core.hpp"

namespace dips {

struct BackboneConfig {
  int patch_size_px = 8;
  int num_blocks = 4;
  int embed_dim = 64;
  int num_heads = 6;
  int input_w = 64;
  int input_h = 64;
  double temperature = 1.0;

  int patches_x() const { return input_w / patch_size_px; }
  int patches_y() const { return input_h / patch_size_px; }
  int num_patches() const { return patches_x() * patches_y(); }

  void validate() const {
    if (patch_size_px <= 0 || num_blocks <= 0 || embed_dim <= 0)
      throw InvalidParameterError("BackboneConfig: dimensions must be positive");
    if (num_heads < 1) throw InvalidParameterError("BackboneConfig: num_heads must be >= 1");
    if (!(temperature > 0)) throw InvalidParameterError("BackboneConfig: temperature must be > 0");
    if (input_w % patch_size_px != 0 || input_h % patch_size_px != 0)
      throw InvalidParameterError("BackboneConfig: input size must be a multiple of patch size");
  }
};

// Selected per-head maps plus the average over all backbone heads, each at
// image resolution. The average is over every head, not just the selected
// ones.
struct AttentionStack {
  std::vector<GridD> maps;
  std::vector<std::string> source_ids;

  int num_maps() const { return static_cast<int>(maps.size()); }

  void validate() const {
    if (maps.empty()) throw InvalidInputError("AttentionStack: empty");
    if (maps.size() != source_ids.size())
      throw InvalidInputError("AttentionStack: ids do not match maps");
    for (const GridD& m : maps) {
      if (!m.same_shape(maps.front()))
        throw InvalidInputError("AttentionStack: maps differ in shape");
      for (double x : m.v)
        if (!std::isfinite(x) || x < 0.0)
          throw InvalidInputError("AttentionStack: values must be finite and >= 0");
    }
  }
};

// Eq-style temperature softmax: p_k = exp(s_k/tau) / sum_j exp(s_j/tau),
// computed with max subtraction so large logits do not overflow.
inline std::vector<double> softmax_with_temperature(const std::vector<double>& s, double tau) {
  if (!(tau > 0)) throw InvalidParameterError("softmax_with_temperature: tau must be > 0");
  if (s.empty()) throw InvalidInputError("softmax_with_temperature: empty input");
  double hi = s[0];
  for (double x : s) {
    if (!std::isfinite(x)) throw InvalidInputError("softmax_with_temperature: non-finite input");
    hi = std::max(hi, x);
  }
  std::vector<double> p(s.size());
  double sum = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    p[i] = std::exp((s[i] - hi) / tau);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

struct ClassifierOutput {
  std::vector<double> logits;
  std::vector<double> probabilities;

  int num_classes() const { return static_cast<int>(logits.size()); }

  void validate() const {
    double sum = 0.0;
    for (double p : probabilities) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidInputError("ClassifierOutput: p out of [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw InvalidInputError("ClassifierOutput: probabilities do not sum to 1");
  }
};

// Frozen attention source. Constructions are counted so tests can assert the
// inference path never builds one.
class AttentionProvider {
 public:
  AttentionProvider() { constructed_count_fetch_add(); }
  virtual ~AttentionProvider() = default;

  virtual AttentionStack attention_stack(const Image& image) const = 0;
  // every backbone head at image resolution, for stack-average checks
  virtual std::vector<GridD> all_head_maps(const Image& image) const = 0;
  virtual uint64_t weights_hash() const = 0;

  static uint64_t constructed_count() { return counter().load(); }

 private:
  static std::atomic<uint64_t>& counter() {
    static std::atomic<uint64_t> c{0};
    return c;
  }
  static void constructed_count_fetch_add() { counter().fetch_add(1); }
};

// Frozen classifier. classify() is p[class] of the tempered softmax; the
// input-gradient entry point backs the classifier alignment loss.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual int num_classes() const = 0;
  virtual ClassifierOutput classify_full(const Image& image) const = 0;
  virtual uint64_t weights_hash() const = 0;

  double classify(const Image& image, int class_index) const {
    if (class_index < 0 || class_index >= num_classes())
      throw InvalidInputError("classify: class index out of range");
    return classify_full(image).probabilities[static_cast<size_t>(class_index)];
  }

  // cross-entropy -log p[y] and its gradient w.r.t. every input pixel/channel
  struct InputGrad {
    double loss = 0.0;
    Image d_image;
  };
  virtual InputGrad cross_entropy_input_grad(const Image& image, int class_index) const = 0;
};

}  // namespace dips

#endif  // DIPS_BACKBONE_HPP
