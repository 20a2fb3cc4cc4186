#ifndef DIPS_MODEL_HPP
#define DIPS_MODEL_HPP

#include <Eigen/Dense>
#include <fstream>

#include "dips/localization_map.hpp"

namespace dips {

struct ModelConfig {
  int encoder_depth = 4;
  int base_channels = 32;
  int input_w = 64;
  int input_h = 64;
  bool skip_connections = true;  // the decoder always concatenates encoder features
  uint64_t init_seed = 42;

  void validate() const {
    if (encoder_depth < 1) throw InvalidParameterError("ModelConfig: encoder_depth must be >= 1");
    if (base_channels < 1) throw InvalidParameterError("ModelConfig: base_channels must be >= 1");
    int stride = 1 << encoder_depth;
    if (input_w % stride != 0 || input_h % stride != 0)
      throw InvalidParameterError("ModelConfig: input size must be divisible by 2^encoder_depth");
    if (!skip_connections)
      throw InvalidParameterError("ModelConfig: skip_connections is always true");
  }

  bool operator==(const ModelConfig& o) const {
    return encoder_depth == o.encoder_depth && base_channels == o.base_channels &&
           input_w == o.input_w && input_h == o.input_h;
  }
};

namespace nn {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.f) {}
  float& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  float at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  size_t size() const { return v.size(); }
  size_t plane() const { return static_cast<size_t>(h) * w; }
};

struct Param {
  std::string name;
  std::vector<float> w;
  std::vector<float> grad;
  std::vector<float> m;  // optimizer slot 1 (momentum / adam m)
  std::vector<float> v2;  // optimizer slot 2 (adam v)

  void init_state() {
    grad.assign(w.size(), 0.f);
    m.assign(w.size(), 0.f);
    v2.assign(w.size(), 0.f);
  }
};

// Weight layout [cout][cin][ky][kx]; square kernel, stride 1,
// pad = kernel/2 with zeros.
struct Conv {
  int in_c = 0, out_c = 0, kernel = 3;
  size_t w_idx = 0, b_idx = 0;  // indices into the model's param table
  // cached for backward
  std::vector<float> col;
  int cached_h = 0, cached_w = 0;

  int k2() const { return kernel * kernel; }

  void im2col(const Tensor& x, std::vector<float>& out) const {
    const int pad = kernel / 2;
    const size_t n = x.plane();
    out.assign(static_cast<size_t>(in_c) * k2() * n, 0.f);
    for (int ci = 0; ci < in_c; ++ci)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) {
          float* dst = out.data() + (static_cast<size_t>(ci) * k2() + ky * kernel + kx) * n;
          for (int y = 0; y < x.h; ++y) {
            int sy = y + ky - pad;
            if (sy < 0 || sy >= x.h) continue;
            int x_lo = std::max(0, pad - kx), x_hi = std::min(x.w, x.w + pad - kx);
            const float* src = x.v.data() + (static_cast<size_t>(ci) * x.h + sy) * x.w;
            for (int xx = x_lo; xx < x_hi; ++xx) dst[y * x.w + xx] = src[xx + kx - pad];
          }
        }
  }

  Tensor forward(const Tensor& x, std::vector<Param>& params, bool train) {
    Tensor y(out_c, x.h, x.w);
    const size_t n = x.plane();
    const int k = in_c * k2();
    CMapM wmat(params[w_idx].w.data(), out_c, k);
    MapM ymat(y.v.data(), out_c, static_cast<Eigen::Index>(n));
    if (kernel == 1) {
      CMapM xmat(x.v.data(), in_c, static_cast<Eigen::Index>(n));
      ymat.noalias() = wmat * xmat;
    } else {
      std::vector<float>& buf = col;
      im2col(x, buf);
      CMapM cmat(buf.data(), k, static_cast<Eigen::Index>(n));
      ymat.noalias() = wmat * cmat;
      if (!train) col.clear();
    }
    const std::vector<float>& bias = params[b_idx].w;
    for (int co = 0; co < out_c; ++co) {
      float b = bias[static_cast<size_t>(co)];
      float* row = y.v.data() + static_cast<size_t>(co) * n;
      for (size_t i = 0; i < n; ++i) row[i] += b;
    }
    cached_h = x.h;
    cached_w = x.w;
    return y;
  }

  // returns dX; accumulates dW, db. `x` is the forward input (needed for 1x1).
  Tensor backward(const Tensor& dy, const Tensor& x, std::vector<Param>& params) {
    const size_t n = dy.plane();
    const int k = in_c * k2();
    CMapM dymat(dy.v.data(), out_c, static_cast<Eigen::Index>(n));
    MapM dwmat(params[w_idx].grad.data(), out_c, k);
    std::vector<float>& db = params[b_idx].grad;
    for (int co = 0; co < out_c; ++co) {
      const float* row = dy.v.data() + static_cast<size_t>(co) * n;
      float acc = 0.f;
      for (size_t i = 0; i < n; ++i) acc += row[i];
      db[static_cast<size_t>(co)] += acc;
    }
    Tensor dx(in_c, dy.h, dy.w);
    CMapM wmat(params[w_idx].w.data(), out_c, k);
    if (kernel == 1) {
      CMapM xmat(x.v.data(), in_c, static_cast<Eigen::Index>(n));
      dwmat.noalias() += dymat * xmat.transpose();
      MapM dxmat(dx.v.data(), in_c, static_cast<Eigen::Index>(n));
      dxmat.noalias() = wmat.transpose() * dymat;
    } else {
      CMapM cmat(col.data(), k, static_cast<Eigen::Index>(n));
      dwmat.noalias() += dymat * cmat.transpose();
      MatRM dcol = wmat.transpose() * dymat;  // k x n
      const int pad = kernel / 2;
      for (int ci = 0; ci < in_c; ++ci)
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const float* src = dcol.data() + (static_cast<size_t>(ci) * k2() + ky * kernel + kx) * n;
            for (int y = 0; y < dy.h; ++y) {
              int sy = y + ky - pad;
              if (sy < 0 || sy >= dy.h) continue;
              int x_lo = std::max(0, pad - kx), x_hi = std::min(dy.w, dy.w + pad - kx);
              float* dst = dx.v.data() + (static_cast<size_t>(ci) * dy.h + sy) * dy.w;
              for (int xx = x_lo; xx < x_hi; ++xx) dst[xx + kx - pad] += src[y * dy.w + xx];
            }
          }
    }
    return dx;
  }
};

inline void relu_inplace(Tensor& t) {
  for (float& x : t.v) x = x > 0.f ? x : 0.f;
}

inline Tensor relu_backward(const Tensor& dy, const Tensor& y) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.size(); ++i)
    if (y.v[i] <= 0.f) dx.v[i] = 0.f;
  return dx;
}

inline Tensor maxpool2(const Tensor& x, std::vector<int>& argmax) {
  Tensor y(x.c, x.h / 2, x.w / 2);
  argmax.resize(y.size());
  for (int c = 0; c < x.c; ++c)
    for (int oy = 0; oy < y.h; ++oy)
      for (int ox = 0; ox < y.w; ++ox) {
        int best = -1;
        float bv = -std::numeric_limits<float>::infinity();
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int idx = (c * x.h + oy * 2 + dy) * x.w + ox * 2 + dx;
            if (x.v[static_cast<size_t>(idx)] > bv) {
              bv = x.v[static_cast<size_t>(idx)];
              best = idx;
            }
          }
        size_t oidx = (static_cast<size_t>(c) * y.h + oy) * y.w + ox;
        y.v[oidx] = bv;
        argmax[oidx] = best;
      }
  return y;
}

inline Tensor maxpool2_backward(const Tensor& dy, const std::vector<int>& argmax, int in_h,
                                int in_w) {
  Tensor dx(dy.c, in_h, in_w);
  for (size_t i = 0; i < dy.size(); ++i) dx.v[static_cast<size_t>(argmax[i])] += dy.v[i];
  return dx;
}

inline Tensor upsample2_nearest(const Tensor& x) {
  Tensor y(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c)
    for (int oy = 0; oy < y.h; ++oy) {
      const float* src = x.v.data() + (static_cast<size_t>(c) * x.h + oy / 2) * x.w;
      float* dst = y.v.data() + (static_cast<size_t>(c) * y.h + oy) * y.w;
      for (int ox = 0; ox < y.w; ++ox) dst[ox] = src[ox / 2];
    }
  return y;
}

inline Tensor upsample2_backward(const Tensor& dy) {
  Tensor dx(dy.c, dy.h / 2, dy.w / 2);
  for (int c = 0; c < dy.c; ++c)
    for (int y = 0; y < dy.h; ++y)
      for (int x = 0; x < dy.w; ++x)
        dx.at(c, y / 2, x / 2) += dy.at(c, y, x);
  return dx;
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
  Tensor y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return y;
}

}  // namespace nn

// U-Net style encoder-decoder with skip connections and a 2-channel softmax
// head at full input resolution.
class LocalizationModel {
 public:
  explicit LocalizationModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build();
    init_weights();
  }

  const ModelConfig& config() const { return cfg_; }

  size_t parameter_count() const {
    size_t n = 0;
    for (const nn::Param& p : params_) n += p.w.size();
    return n;
  }

  std::vector<nn::Param>& params() { return params_; }
  const std::vector<nn::Param>& params() const { return params_; }

  uint64_t weights_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const nn::Param& p : params_) h = hash_span(p.w, h);
    return h;
  }

  void zero_grad() {
    for (nn::Param& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.f);
  }

  LocalizationMap forward(const Image& image) { return run_forward(image, false); }
  LocalizationMap forward_train(const Image& image) { return run_forward(image, true); }

  // dM from the loss, shapes HxW; accumulates parameter gradients
  void backward(const GridD& d_fg, const GridD& d_bg) {
    if (!trained_pass_) throw InvalidInputError("backward: no cached forward_train pass");
    const int h = cfg_.input_h, w = cfg_.input_w;
    if (d_fg.h != h || d_fg.w != w || d_bg.h != h || d_bg.w != w)
      throw InvalidInputError("backward: gradient shape mismatch");

    // softmax backward: ds_i = p_i (dM_i - sum_j p_j dM_j)
    nn::Tensor ds(2, h, w);
    const size_t n = static_cast<size_t>(h) * w;
    for (size_t i = 0; i < n; ++i) {
      double p1 = softmax_out_.v[i];
      double p2 = softmax_out_.v[n + i];
      double g1 = d_fg.v[i], g2 = d_bg.v[i];
      double dot = p1 * g1 + p2 * g2;
      ds.v[i] = static_cast<float>(p1 * (g1 - dot));
      ds.v[n + i] = static_cast<float>(p2 * (g2 - dot));
    }

    nn::Tensor d = head_.backward(ds, dec_out_.back(), params_);
    for (int i = cfg_.encoder_depth - 1; i >= 0; --i) {
      DecStage& st = dec_[static_cast<size_t>(i)];
      d = nn::relu_backward(d, dec_out_[static_cast<size_t>(i)]);
      d = st.merge.backward(d, st.concat_in, params_);
      // split concat gradient: first half -> upsampled path, second -> skip
      nn::Tensor d_up(st.up_out.c, d.h, d.w), d_skip(st.up_out.c, d.h, d.w);
      std::copy(d.v.begin(), d.v.begin() + static_cast<std::ptrdiff_t>(d_up.size()), d_up.v.begin());
      std::copy(d.v.begin() + static_cast<std::ptrdiff_t>(d_up.size()), d.v.end(),
                d_skip.v.begin());
      // dec_[i] consumes the skip from encoder stage depth-1-i
      skip_grad_[static_cast<size_t>(cfg_.encoder_depth - 1 - i)] = std::move(d_skip);
      d_up = nn::relu_backward(d_up, st.up_out);
      d_up = st.project.backward(d_up, st.up_in, params_);
      d = nn::upsample2_backward(d_up);
    }
    d = nn::relu_backward(d, bott_out_);
    d = bottleneck_.backward(d, bott_in_, params_);
    for (int s = cfg_.encoder_depth - 1; s >= 0; --s) {
      auto& st = enc_[static_cast<size_t>(s)];
      d = nn::maxpool2_backward(d, st.pool_argmax, st.pre_pool.h, st.pre_pool.w);
      for (size_t i = 0; i < d.size(); ++i) d.v[i] += skip_grad_[static_cast<size_t>(s)].v[i];
      d = nn::relu_backward(d, st.pre_pool);
      d = st.conv.backward(d, st.conv_in, params_);
    }
    trained_pass_ = false;
  }

  // --- checkpointing ------------------------------------------------------

  static constexpr uint32_t kCheckpointVersion = 1;
  static constexpr char kCheckpointMagic[9] = "DIPSCKP1";

  struct TrainState {
    std::string optimizer_type = "adam";
    int64_t adam_t = 0;
    int epoch = 0;
    double best_val_metric = 0.0;
    std::vector<std::pair<std::string, uint64_t>> rng_states;
  };

  void save(const std::string& path) const { save(path, TrainState{}); }

  void save(const std::string& path, const TrainState& state) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("save: cannot open " + path);
    out.write(kCheckpointMagic, 8);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<uint32_t>(cfg_.encoder_depth));
    write_u32(out, static_cast<uint32_t>(cfg_.base_channels));
    write_u32(out, static_cast<uint32_t>(cfg_.input_w));
    write_u32(out, static_cast<uint32_t>(cfg_.input_h));
    write_u64(out, cfg_.init_seed);
    write_str(out, state.optimizer_type);
    write_u64(out, static_cast<uint64_t>(state.adam_t));
    write_u32(out, static_cast<uint32_t>(state.epoch));
    out.write(reinterpret_cast<const char*>(&state.best_val_metric), sizeof(double));
    write_u32(out, static_cast<uint32_t>(state.rng_states.size()));
    for (const auto& [name, s] : state.rng_states) {
      write_str(out, name);
      write_u64(out, s);
    }
    write_u32(out, static_cast<uint32_t>(params_.size()));
    for (const nn::Param& p : params_) {
      write_str(out, p.name);
      write_u64(out, p.w.size());
      write_floats(out, p.w);
      write_floats(out, p.m);
      write_floats(out, p.v2);
    }
    if (!out) throw CheckpointError("save: write failed for " + path);
  }

  static std::pair<LocalizationModel, TrainState> load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("load: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
      throw CheckpointError("load: bad magic in " + path);
    if (read_u32(in) != kCheckpointVersion)
      throw CheckpointError("load: unsupported checkpoint version in " + path);
    ModelConfig cfg;
    cfg.encoder_depth = static_cast<int>(read_u32(in));
    cfg.base_channels = static_cast<int>(read_u32(in));
    cfg.input_w = static_cast<int>(read_u32(in));
    cfg.input_h = static_cast<int>(read_u32(in));
    cfg.init_seed = read_u64(in);
    TrainState state;
    state.optimizer_type = read_str(in);
    state.adam_t = static_cast<int64_t>(read_u64(in));
    state.epoch = static_cast<int>(read_u32(in));
    in.read(reinterpret_cast<char*>(&state.best_val_metric), sizeof(double));
    uint32_t n_rng = read_u32(in);
    for (uint32_t i = 0; i < n_rng; ++i) {
      std::string name = read_str(in);
      state.rng_states.emplace_back(name, read_u64(in));
    }
    LocalizationModel model(cfg);
    uint32_t n_params = read_u32(in);
    if (n_params != model.params_.size())
      throw CheckpointError("load: parameter table mismatch in " + path);
    for (nn::Param& p : model.params_) {
      std::string name = read_str(in);
      uint64_t sz = read_u64(in);
      if (name != p.name || sz != p.w.size())
        throw CheckpointError("load: checkpoint does not match model config (param " + name + ")");
      read_floats(in, p.w);
      read_floats(in, p.m);
      read_floats(in, p.v2);
    }
    if (!in) throw CheckpointError("load: truncated checkpoint " + path);
    return {std::move(model), std::move(state)};
  }

 private:
  struct EncStage {
    nn::Conv conv;
    nn::Tensor conv_in, pre_pool;
    std::vector<int> pool_argmax;
  };
  struct DecStage {
    nn::Conv project;  // 1x1 after nearest upsample
    nn::Conv merge;    // 3x3 after skip concat
    nn::Tensor up_in, up_out, concat_in;
  };

  size_t add_param(const std::string& name, size_t n) {
    nn::Param p;
    p.name = name;
    p.w.assign(n, 0.f);
    p.init_state();
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  nn::Conv make_conv(const std::string& name, int in_c, int out_c, int kernel) {
    nn::Conv c;
    c.in_c = in_c;
    c.out_c = out_c;
    c.kernel = kernel;
    c.w_idx = add_param(name + ".w", static_cast<size_t>(out_c) * in_c * kernel * kernel);
    c.b_idx = add_param(name + ".b", static_cast<size_t>(out_c));
    return c;
  }

  void build() {
    int ch = cfg_.base_channels;
    int in_c = 3;
    for (int s = 0; s < cfg_.encoder_depth; ++s) {
      EncStage st;
      st.conv = make_conv("enc" + std::to_string(s), in_c, ch << s, 3);
      enc_.push_back(std::move(st));
      in_c = ch << s;
    }
    bottleneck_ = make_conv("bottleneck", in_c, ch << cfg_.encoder_depth, 3);
    for (int s = cfg_.encoder_depth - 1; s >= 0; --s) {
      DecStage st;
      st.project = make_conv("dec" + std::to_string(s) + ".project", ch << (s + 1), ch << s, 1);
      st.merge = make_conv("dec" + std::to_string(s) + ".merge", (ch << s) * 2, ch << s, 3);
      dec_.push_back(std::move(st));
    }
    head_ = make_conv("head", ch, 2, 1);
    skip_grad_.resize(static_cast<size_t>(cfg_.encoder_depth));
  }

  void init_weights() {
    Rng rng(cfg_.init_seed);
    for (nn::Param& p : params_) {
      if (p.name.size() >= 2 && p.name.substr(p.name.size() - 2) == ".b") continue;  // biases 0
      // fan-in scaled normal
      size_t fan_in = 0;
      for (const auto* conv : conv_list())
        if (params_[conv->w_idx].name == p.name)
          fan_in = static_cast<size_t>(conv->in_c) * conv->kernel * conv->kernel;
      double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in == 0 ? p.w.size() : fan_in));
      for (float& x : p.w) x = static_cast<float>(rng.normal(0.0, std_dev));
    }
  }

  std::vector<const nn::Conv*> conv_list() const {
    std::vector<const nn::Conv*> cs;
    for (const EncStage& st : enc_) cs.push_back(&st.conv);
    cs.push_back(&bottleneck_);
    for (const DecStage& st : dec_) {
      cs.push_back(&st.project);
      cs.push_back(&st.merge);
    }
    cs.push_back(&head_);
    return cs;
  }

  LocalizationMap run_forward(const Image& image, bool train) {
    if (image.height() != cfg_.input_h || image.width() != cfg_.input_w)
      throw InvalidInputError("forward: image does not match ModelConfig input size");
    nn::Tensor x(3, cfg_.input_h, cfg_.input_w);
    for (int c = 0; c < 3; ++c)
      for (size_t i = 0; i < image.plane(c).size(); ++i)
        x.v[static_cast<size_t>(c) * x.plane() + i] = static_cast<float>(image.plane(c).v[i]);

    std::vector<nn::Tensor> skips;
    for (auto& st : enc_) {
      if (train) st.conv_in = x;
      nn::Tensor y = st.conv.forward(x, params_, train);
      nn::relu_inplace(y);
      skips.push_back(y);
      if (train) st.pre_pool = y;
      x = nn::maxpool2(y, st.pool_argmax);
    }
    if (train) bott_in_ = x;
    x = bottleneck_.forward(x, params_, train);
    nn::relu_inplace(x);
    if (train) bott_out_ = x;

    if (train) dec_out_.clear();
    for (size_t i = 0; i < dec_.size(); ++i) {
      DecStage& st = dec_[i];
      nn::Tensor up = nn::upsample2_nearest(x);
      if (train) st.up_in = up;
      nn::Tensor proj = st.project.forward(up, params_, train);
      nn::relu_inplace(proj);
      if (train) st.up_out = proj;
      nn::Tensor cat = nn::concat(proj, skips[dec_.size() - 1 - i]);
      if (train) st.concat_in = cat;
      x = st.merge.forward(cat, params_, train);
      nn::relu_inplace(x);
      if (train) dec_out_.push_back(x);
    }

    nn::Tensor logits = head_.forward(x, params_, train);

    const size_t n = x.plane();
    softmax_out_ = nn::Tensor(2, cfg_.input_h, cfg_.input_w);
    LocalizationMap out(cfg_.input_h, cfg_.input_w);
    for (size_t i = 0; i < n; ++i) {
      float a = logits.v[i], b = logits.v[n + i];
      float hi = std::max(a, b);
      float ea = std::exp(a - hi), eb = std::exp(b - hi);
      float inv = 1.f / (ea + eb);
      softmax_out_.v[i] = ea * inv;
      softmax_out_.v[n + i] = eb * inv;
      out.fg.v[i] = ea * inv;
      out.bg.v[i] = eb * inv;
    }
    trained_pass_ = train;
    return out;
  }

  static void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_u64(std::ostream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static void write_floats(std::ostream& out, const std::vector<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  static uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  static uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  static std::string read_str(std::istream& in) {
    uint32_t n = read_u32(in);
    if (n > (1u << 20)) throw CheckpointError("load: corrupt string length");
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
  }
  static void read_floats(std::istream& in, std::vector<float>& v) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
  }

  ModelConfig cfg_;
  std::vector<nn::Param> params_;
  std::vector<EncStage> enc_;
  nn::Conv bottleneck_;
  std::vector<DecStage> dec_;
  nn::Conv head_;

  nn::Tensor bott_in_, bott_out_;
  std::vector<nn::Tensor> dec_out_;
  std::vector<nn::Tensor> skip_grad_;
  nn::Tensor softmax_out_;
  bool trained_pass_ = false;
};

struct OptimizerConfig {
  std::string type = "adam";  // adam | sgd
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void validate() const {
    if (type != "adam" && type != "sgd")
      throw InvalidParameterError("OptimizerConfig: type must be adam or sgd");
    if (!(lr > 0)) throw InvalidParameterError("OptimizerConfig: lr must be > 0");
  }
};

// Updates exactly the model's parameter table; tracks the step count for
// Adam bias correction.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, LocalizationModel& model) : cfg_(cfg), model_(&model) {
    cfg_.validate();
    for (const nn::Param& p : model.params()) owned_.push_back(&p);
  }

  void step(double lr_scale = 1.0) {
    std::vector<nn::Param>& params = model_->params();
    check_ownership(params);
    double lr = cfg_.lr * lr_scale;
    if (cfg_.type == "sgd") {
      for (nn::Param& p : params)
        for (size_t i = 0; i < p.w.size(); ++i) {
          p.m[i] = static_cast<float>(cfg_.momentum * p.m[i] + p.grad[i]);
          p.w[i] -= static_cast<float>(lr * p.m[i]);
        }
      return;
    }
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (nn::Param& p : params)
      for (size_t i = 0; i < p.w.size(); ++i) {
        p.m[i] = static_cast<float>(cfg_.beta1 * p.m[i] + (1.0 - cfg_.beta1) * p.grad[i]);
        p.v2[i] = static_cast<float>(cfg_.beta2 * p.v2[i] +
                                     (1.0 - cfg_.beta2) * static_cast<double>(p.grad[i]) * p.grad[i]);
        double mhat = p.m[i] / bc1;
        double vhat = p.v2[i] / bc2;
        p.w[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  // the trainer must update the localization network's parameters and
  // nothing else; catches accidental re-binding of the model
  void check_ownership(const std::vector<nn::Param>& params) const {
    if (params.size() != owned_.size())
      throw TrainingAbortError("Optimizer: parameter set changed since construction");
    for (size_t i = 0; i < params.size(); ++i)
      if (&params[i] != owned_[i])
        throw TrainingAbortError("Optimizer: parameter identity mismatch");
  }

  OptimizerConfig cfg_;
  LocalizationModel* model_;
  std::vector<const nn::Param*> owned_;
  int64_t t_ = 0;
};

}  // namespace dips

#endif  // DIPS_MODEL_HPP
