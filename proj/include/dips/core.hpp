#ifndef DIPS_CORE_HPP
#define DIPS_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace dips {

class InvalidInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class InvalidParameterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class UndefinedLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class TrainingAbortError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major 2-D grid.
template <typename T>
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Grid() = default;
  Grid(int h_, int w_, T fill = T{}) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  T& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  const T& at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  size_t size() const { return v.size(); }
  bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }
  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  bool operator==(const Grid& o) const { return h == o.h && w == o.w && v == o.v; }
};

using GridD = Grid<double>;
using GridU8 = Grid<uint8_t>;

// Planar RGB image, channels in [0,1].
struct Image {
  GridD r, g, b;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : r(h, w, fill), g(h, w, fill), b(h, w, fill) {}

  int height() const { return r.h; }
  int width() const { return r.w; }
  GridD& plane(int c) { return c == 0 ? r : (c == 1 ? g : b); }
  const GridD& plane(int c) const { return c == 0 ? r : (c == 1 ? g : b); }

  bool operator==(const Image& o) const { return r == o.r && g == o.g && b == o.b; }
};

struct PixelCoord {
  int x = 0;
  int y = 0;
  bool operator==(const PixelCoord& o) const { return x == o.x && y == o.y; }
  bool operator<(const PixelCoord& o) const { return y != o.y ? y < o.y : x < o.x; }
};

// Axis-aligned pixel box, half-open: covers x in [x0,x1), y in [y0,y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const {
    return width() <= 0 || height() <= 0 ? 0 : static_cast<long long>(width()) * height();
  }
  bool empty() const { return area() == 0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const Box& o) const {
    return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
  }
};

inline Box intersect(const Box& a, const Box& b) {
  Box r{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  if (r.x1 <= r.x0 || r.y1 <= r.y0) return Box{0, 0, 0, 0};
  return r;
}

inline void require_valid_box(const Box& b, int w, int h, const char* who) {
  if (b.x0 < 0 || b.y0 < 0 || b.x1 > w || b.y1 > h || b.x0 >= b.x1 || b.y0 >= b.y1)
    throw InvalidInputError(std::string(who) + ": invalid box [" + std::to_string(b.x0) + "," +
                            std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
                            std::to_string(b.y1) + ") for " + std::to_string(w) + "x" +
                            std::to_string(h));
}

// --- hashing / seeding -------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t hash_string(const std::string& s) { return fnv1a(s.data(), s.size()); }

template <typename T>
inline uint64_t hash_span(const std::vector<T>& v, uint64_t seed = 0xcbf29ce484222325ULL) {
  return fnv1a(v.data(), v.size() * sizeof(T), seed);
}

inline uint64_t hash_image(const Image& img) {
  uint64_t h = hash_span(img.r.v);
  h = hash_span(img.g.v, h);
  h = hash_span(img.b.v, h);
  return h;
}

// Seed for per-item work: independent of iteration order so parallel and
// serial runs agree.
inline uint64_t derive_seed(uint64_t global_seed, uint64_t item_id, uint64_t epoch) {
  return hash_combine(hash_combine(global_seed, item_id), epoch);
}

// --- deterministic RNG --------------------------------------------------
// splitmix64 stream with hand-rolled distributions; std:: distributions are
// implementation-defined and would break bit-reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  // uniform in [0,1)
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * unit(); }

  // uniform integer in [0, n)
  size_t index(size_t n) {
    if (n == 0) throw InvalidParameterError("Rng::index: n must be positive");
    return static_cast<size_t>(unit() * static_cast<double>(n)) % n;
  }

  int range(int lo, int hi) {  // inclusive ends
    return lo + static_cast<int>(index(static_cast<size_t>(hi - lo + 1)));
  }

  bool coin() { return (next_u64() & 1ULL) != 0; }

  double normal(double mean = 0.0, double sigma = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + sigma * spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = unit();
    } while (u1 <= 1e-300);
    u2 = unit();
    double m = std::sqrt(-2.0 * std::log(u1));
    spare_ = m * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return mean + sigma * m * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[index(i)]);
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) {
    state_ = s;
    have_spare_ = false;
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline bool all_finite(const GridD& g) {
  for (double x : g.v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace dips

#endif  // DIPS_CORE_HPP
