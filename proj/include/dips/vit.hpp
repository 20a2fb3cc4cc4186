#ifndef DIPS_VIT_HPP
#define DIPS_VIT_HPP

#include <Eigen/Dense>
#include <fstream>
#include <memory>

#include "dips/backbone.hpp"
#include "dips/image_ops.hpp"

namespace dips {

// Frozen ViT adapter: patch embedding + pre-norm transformer blocks + linear
// head. Checkpoints are raw named float32 arrays (format below); published
// self-supervised weights are converted offline into this layout. Inference
// and input-gradient backprop only; parameters never change.
//
// Checkpoint layout ("DIPSVIT1"): u32 version, i32 patch,depth,dim,heads,
// mlp_hidden,num_classes,grid_h,grid_w, then named arrays
// (u32 name_len, name, u64 count, f32 data[count]) in declaration order.

struct ViTConfig {
  int patch_size = 8;
  int depth = 4;
  int dim = 64;
  int heads = 4;
  int mlp_hidden = 256;
  int num_classes = 5;
  int grid_h = 8;
  int grid_w = 8;

  int tokens() const { return grid_h * grid_w + 1; }
  int head_dim() const { return dim / heads; }

  void validate() const {
    if (patch_size < 1 || depth < 1 || dim < 1 || heads < 1 || mlp_hidden < 1 ||
        num_classes < 1 || grid_h < 1 || grid_w < 1)
      throw ConfigError("ViTConfig: dimensions must be positive");
    if (dim % heads != 0) throw ConfigError("ViTConfig: dim must divide by heads");
  }
};

namespace vit_detail {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

constexpr double kLnEps = 1e-6;

struct LayerNormCache {
  Mat xhat;
  Vec inv_sigma;
};

inline Mat layer_norm(const Mat& x, const Vec& gamma, const Vec& beta, LayerNormCache* cache) {
  Mat y(x.rows(), x.cols());
  if (cache) {
    cache->xhat.resize(x.rows(), x.cols());
    cache->inv_sigma.resize(x.rows());
  }
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + kLnEps);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double xhat = (x(r, c) - mu) * inv;
      if (cache) cache->xhat(r, c) = xhat;
      y(r, c) = gamma(c) * xhat + beta(c);
    }
    if (cache) cache->inv_sigma(r) = inv;
  }
  return y;
}

inline Mat layer_norm_backward(const Mat& dy, const Vec& gamma, const LayerNormCache& cache) {
  Mat dx(dy.rows(), dy.cols());
  const double n = static_cast<double>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (Eigen::Index c = 0; c < dy.cols(); ++c) {
      double dxhat = dy(r, c) * gamma(c);
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * cache.xhat(r, c);
    }
    for (Eigen::Index c = 0; c < dy.cols(); ++c) {
      double dxhat = dy(r, c) * gamma(c);
      dx(r, c) = cache.inv_sigma(r) *
                 (dxhat - sum_dxhat / n - cache.xhat(r, c) * sum_dxhat_xhat / n);
    }
  }
  return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / M_SQRT2)); }

inline double gelu_grad(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x / M_SQRT2));
  double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

}  // namespace vit_detail

class ViTModel {
 public:
  using Mat = vit_detail::Mat;
  using Vec = Eigen::VectorXd;

  struct BlockWeights {
    Vec ln1_g, ln1_b, ln2_g, ln2_b;
    Mat qkv_w;   // (3*dim) x dim
    Vec qkv_b;
    Mat proj_w;  // dim x dim
    Vec proj_b;
    Mat fc1_w;   // hidden x dim
    Vec fc1_b;
    Mat fc2_w;   // dim x hidden
    Vec fc2_b;
  };

  ViTConfig cfg;
  Mat patch_embed_w;  // dim x (3*S*S)
  Vec patch_embed_b;
  Vec cls_token;
  Mat pos_embed;  // tokens x dim
  std::vector<BlockWeights> blocks;
  Vec norm_g, norm_b;
  Mat head_w;  // classes x dim
  Vec head_b;

  static ViTModel random_init(const ViTConfig& cfg, uint64_t seed) {
    cfg.validate();
    ViTModel m;
    m.cfg = cfg;
    Rng rng(seed);
    auto mat = [&](Eigen::Index r, Eigen::Index c, double scale) {
      Mat out(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) out(i, j) = rng.normal(0.0, scale);
      return out;
    };
    auto vec = [&](Eigen::Index n, double scale) {
      Vec out(n);
      for (Eigen::Index i = 0; i < n; ++i) out(i) = rng.normal(0.0, scale);
      return out;
    };
    int d = cfg.dim, patch_in = 3 * cfg.patch_size * cfg.patch_size;
    m.patch_embed_w = mat(d, patch_in, 1.0 / std::sqrt(patch_in));
    m.patch_embed_b = Vec::Zero(d);
    m.cls_token = vec(d, 0.02);
    m.pos_embed = mat(cfg.tokens(), d, 0.02);
    for (int i = 0; i < cfg.depth; ++i) {
      BlockWeights b;
      b.ln1_g = Vec::Ones(d);
      b.ln1_b = Vec::Zero(d);
      b.ln2_g = Vec::Ones(d);
      b.ln2_b = Vec::Zero(d);
      b.qkv_w = mat(3 * d, d, 1.0 / std::sqrt(d));
      b.qkv_b = Vec::Zero(3 * d);
      b.proj_w = mat(d, d, 1.0 / std::sqrt(d));
      b.proj_b = Vec::Zero(d);
      b.fc1_w = mat(cfg.mlp_hidden, d, 1.0 / std::sqrt(d));
      b.fc1_b = Vec::Zero(cfg.mlp_hidden);
      b.fc2_w = mat(d, cfg.mlp_hidden, 1.0 / std::sqrt(cfg.mlp_hidden));
      b.fc2_b = Vec::Zero(d);
      m.blocks.push_back(std::move(b));
    }
    m.norm_g = Vec::Ones(d);
    m.norm_b = Vec::Zero(d);
    m.head_w = mat(cfg.num_classes, d, 1.0 / std::sqrt(d));
    m.head_b = Vec::Zero(cfg.num_classes);
    return m;
  }

  struct BlockCache {
    Mat x_in;
    vit_detail::LayerNormCache ln1, ln2;
    Mat h1;                 // post-LN1 tokens
    std::vector<Mat> attn;  // per head, tokens x tokens
    std::vector<Mat> q, k, v;
    Mat attn_concat;  // tokens x dim, before proj
    Mat x_mid;        // after attention residual
    Mat h2;           // post-LN2
    Mat fc1_pre;      // tokens x hidden, before gelu
    Mat fc1_act;
  };

  struct ForwardCache {
    Mat patches;  // N x (3*S*S)
    Mat x_final;
    vit_detail::LayerNormCache ln_final;
    std::vector<BlockCache> blocks;
  };

  struct ForwardResult {
    std::vector<double> logits;
    std::vector<Mat> last_attn;  // per head, tokens x tokens (softmaxed)
  };

  ForwardResult forward(const Image& image, ForwardCache* cache = nullptr) const {
    check_image(image);
    const int S = cfg.patch_size, n_patches = cfg.grid_h * cfg.grid_w, d = cfg.dim;
    Mat patches(n_patches, 3 * S * S);
    for (int py = 0; py < cfg.grid_h; ++py)
      for (int px = 0; px < cfg.grid_w; ++px) {
        int p = py * cfg.grid_w + px;
        int col = 0;
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
              patches(p, col++) = image.plane(c).at(py * S + y, px * S + x);
      }
    if (cache) cache->patches = patches;

    Mat x(cfg.tokens(), d);
    x.row(0) = cls_token.transpose();
    x.bottomRows(n_patches) = patches * patch_embed_w.transpose();
    for (int p = 0; p < n_patches; ++p) x.row(p + 1) += patch_embed_b.transpose();
    x += pos_embed;

    std::vector<Mat> last_attn;
    if (cache) cache->blocks.resize(blocks.size());
    for (size_t bi = 0; bi < blocks.size(); ++bi) {
      BlockCache* bc = cache ? &cache->blocks[bi] : nullptr;
      x = run_block(x, blocks[bi], bc, bi + 1 == blocks.size() ? &last_attn : nullptr);
    }

    vit_detail::LayerNormCache ln_final_local;
    Mat xn = vit_detail::layer_norm(x, norm_g, norm_b,
                                    cache ? &cache->ln_final : &ln_final_local);
    if (cache) cache->x_final = x;

    Vec cls_feat = xn.row(0).transpose();
    Vec logits = head_w * cls_feat + head_b;
    ForwardResult out;
    out.logits.assign(logits.data(), logits.data() + logits.size());
    out.last_attn = std::move(last_attn);
    return out;
  }

  // gradient of -log softmax_tau(logits)[y] w.r.t. every input pixel
  Classifier::InputGrad input_gradient(const Image& image, int class_index, double tau) const {
    ForwardCache cache;
    ForwardResult fwd = forward(image, &cache);
    std::vector<double> p = softmax_with_temperature(fwd.logits, tau);

    Classifier::InputGrad out;
    out.loss = -std::log(std::max(p[static_cast<size_t>(class_index)], 1e-300));
    Vec dlogits(cfg.num_classes);
    for (int k = 0; k < cfg.num_classes; ++k)
      dlogits(k) = (p[static_cast<size_t>(k)] - (k == class_index ? 1.0 : 0.0)) / tau;

    Mat dxn = Mat::Zero(cfg.tokens(), cfg.dim);
    dxn.row(0) = (head_w.transpose() * dlogits).transpose();
    Mat dx = vit_detail::layer_norm_backward(dxn, norm_g, cache.ln_final);

    for (size_t bi = blocks.size(); bi-- > 0;)
      dx = block_backward(dx, blocks[bi], cache.blocks[bi]);

    // remove pos embed (constant), push patch rows through the embedding
    Mat dpatches = dx.bottomRows(cfg.grid_h * cfg.grid_w) * patch_embed_w;
    out.d_image = Image(image.height(), image.width());
    const int S = cfg.patch_size;
    for (int py = 0; py < cfg.grid_h; ++py)
      for (int px = 0; px < cfg.grid_w; ++px) {
        int patch = py * cfg.grid_w + px;
        int col = 0;
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
              out.d_image.plane(c).at(py * S + y, px * S + x) = dpatches(patch, col++);
      }
    return out;
  }

  uint64_t weights_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_mat = [&h](const Mat& m) { h = fnv1a(m.data(), sizeof(double) * m.size(), h); };
    auto mix_vec = [&h](const Vec& v) { h = fnv1a(v.data(), sizeof(double) * v.size(), h); };
    mix_mat(patch_embed_w);
    mix_vec(patch_embed_b);
    mix_vec(cls_token);
    mix_mat(pos_embed);
    for (const BlockWeights& b : blocks) {
      mix_vec(b.ln1_g); mix_vec(b.ln1_b);
      mix_mat(b.qkv_w); mix_vec(b.qkv_b);
      mix_mat(b.proj_w); mix_vec(b.proj_b);
      mix_vec(b.ln2_g); mix_vec(b.ln2_b);
      mix_mat(b.fc1_w); mix_vec(b.fc1_b);
      mix_mat(b.fc2_w); mix_vec(b.fc2_b);
    }
    mix_vec(norm_g);
    mix_vec(norm_b);
    mix_mat(head_w);
    mix_vec(head_b);
    return h;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("vit save: cannot open " + path);
    out.write("DIPSVIT1", 8);
    uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    int32_t dims[8] = {cfg.patch_size, cfg.depth, cfg.dim, cfg.heads,
                       cfg.mlp_hidden, cfg.num_classes, cfg.grid_h, cfg.grid_w};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    auto wmat = [&](const std::string& name, const Mat& m) { write_array(out, name, m.data(), static_cast<size_t>(m.size())); };
    auto wvec = [&](const std::string& name, const Vec& v) { write_array(out, name, v.data(), static_cast<size_t>(v.size())); };
    wmat("patch_embed.w", patch_embed_w);
    wvec("patch_embed.b", patch_embed_b);
    wvec("cls_token", cls_token);
    wmat("pos_embed", pos_embed);
    for (size_t i = 0; i < blocks.size(); ++i) {
      std::string p = "block" + std::to_string(i) + ".";
      const BlockWeights& b = blocks[i];
      wvec(p + "ln1.g", b.ln1_g); wvec(p + "ln1.b", b.ln1_b);
      wmat(p + "qkv.w", b.qkv_w); wvec(p + "qkv.b", b.qkv_b);
      wmat(p + "proj.w", b.proj_w); wvec(p + "proj.b", b.proj_b);
      wvec(p + "ln2.g", b.ln2_g); wvec(p + "ln2.b", b.ln2_b);
      wmat(p + "fc1.w", b.fc1_w); wvec(p + "fc1.b", b.fc1_b);
      wmat(p + "fc2.w", b.fc2_w); wvec(p + "fc2.b", b.fc2_b);
    }
    wvec("norm.g", norm_g);
    wvec("norm.b", norm_b);
    wmat("head.w", head_w);
    wvec("head.b", head_b);
    if (!out) throw ConfigError("vit save: write failed for " + path);
  }

  static ViTModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("vit checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "DIPSVIT1", 8) != 0)
      throw ConfigError("vit checkpoint: bad magic in " + path);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw ConfigError("vit checkpoint: unsupported version in " + path);
    int32_t dims[8];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    ViTConfig cfg;
    cfg.patch_size = dims[0];
    cfg.depth = dims[1];
    cfg.dim = dims[2];
    cfg.heads = dims[3];
    cfg.mlp_hidden = dims[4];
    cfg.num_classes = dims[5];
    cfg.grid_h = dims[6];
    cfg.grid_w = dims[7];
    cfg.validate();

    ViTModel m;
    m.cfg = cfg;
    int d = cfg.dim, patch_in = 3 * cfg.patch_size * cfg.patch_size;
    auto rmat = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
      Mat out(r, c);
      read_array(in, path, name, out.data(), static_cast<size_t>(out.size()));
      return out;
    };
    auto rvec = [&](const std::string& name, Eigen::Index n) {
      Vec out(n);
      read_array(in, path, name, out.data(), static_cast<size_t>(out.size()));
      return out;
    };
    m.patch_embed_w = rmat("patch_embed.w", d, patch_in);
    m.patch_embed_b = rvec("patch_embed.b", d);
    m.cls_token = rvec("cls_token", d);
    m.pos_embed = rmat("pos_embed", cfg.tokens(), d);
    for (int i = 0; i < cfg.depth; ++i) {
      std::string p = "block" + std::to_string(i) + ".";
      BlockWeights b;
      b.ln1_g = rvec(p + "ln1.g", d);
      b.ln1_b = rvec(p + "ln1.b", d);
      b.qkv_w = rmat(p + "qkv.w", 3 * d, d);
      b.qkv_b = rvec(p + "qkv.b", 3 * d);
      b.proj_w = rmat(p + "proj.w", d, d);
      b.proj_b = rvec(p + "proj.b", d);
      b.ln2_g = rvec(p + "ln2.g", d);
      b.ln2_b = rvec(p + "ln2.b", d);
      b.fc1_w = rmat(p + "fc1.w", cfg.mlp_hidden, d);
      b.fc1_b = rvec(p + "fc1.b", cfg.mlp_hidden);
      b.fc2_w = rmat(p + "fc2.w", d, cfg.mlp_hidden);
      b.fc2_b = rvec(p + "fc2.b", d);
      m.blocks.push_back(std::move(b));
    }
    m.norm_g = rvec("norm.g", d);
    m.norm_b = rvec("norm.b", d);
    m.head_w = rmat("head.w", cfg.num_classes, d);
    m.head_b = rvec("head.b", cfg.num_classes);
    return m;
  }

  void check_image(const Image& image) const {
    if (image.height() != cfg.grid_h * cfg.patch_size ||
        image.width() != cfg.grid_w * cfg.patch_size)
      throw InvalidInputError("vit: image shape does not match checkpoint patch grid");
  }

 private:
  Mat run_block(const Mat& x, const BlockWeights& b, BlockCache* bc,
                std::vector<Mat>* attn_out) const {
    const int T = cfg.tokens(), dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (bc) bc->x_in = x;

    vit_detail::LayerNormCache ln1_local;
    Mat h1 = vit_detail::layer_norm(x, b.ln1_g, b.ln1_b, bc ? &bc->ln1 : &ln1_local);
    if (bc) bc->h1 = h1;

    Mat qkv = h1 * b.qkv_w.transpose();
    for (int t = 0; t < T; ++t) qkv.row(t) += b.qkv_b.transpose();

    Mat concat(T, cfg.dim);
    if (bc) {
      bc->attn.resize(static_cast<size_t>(cfg.heads));
      bc->q.resize(static_cast<size_t>(cfg.heads));
      bc->k.resize(static_cast<size_t>(cfg.heads));
      bc->v.resize(static_cast<size_t>(cfg.heads));
    }
    for (int hd = 0; hd < cfg.heads; ++hd) {
      Mat q = qkv.middleCols(hd * dh, dh);
      Mat k = qkv.middleCols(cfg.dim + hd * dh, dh);
      Mat v = qkv.middleCols(2 * cfg.dim + hd * dh, dh);
      Mat scores = q * k.transpose() * scale;
      Mat attn(T, T);
      for (int t = 0; t < T; ++t) {
        double hi = scores.row(t).maxCoeff();
        double sum = 0.0;
        for (int u = 0; u < T; ++u) {
          attn(t, u) = std::exp(scores(t, u) - hi);
          sum += attn(t, u);
        }
        attn.row(t) /= sum;
      }
      concat.middleCols(hd * dh, dh) = attn * v;
      if (attn_out) attn_out->push_back(attn);
      if (bc) {
        bc->attn[static_cast<size_t>(hd)] = std::move(attn);
        bc->q[static_cast<size_t>(hd)] = std::move(q);
        bc->k[static_cast<size_t>(hd)] = std::move(k);
        bc->v[static_cast<size_t>(hd)] = std::move(v);
      }
    }
    if (bc) bc->attn_concat = concat;

    Mat x_mid = x + concat * b.proj_w.transpose();
    for (int t = 0; t < T; ++t) x_mid.row(t) += b.proj_b.transpose();
    if (bc) bc->x_mid = x_mid;

    vit_detail::LayerNormCache ln2_local;
    Mat h2 = vit_detail::layer_norm(x_mid, b.ln2_g, b.ln2_b, bc ? &bc->ln2 : &ln2_local);
    if (bc) bc->h2 = h2;
    Mat fc1 = h2 * b.fc1_w.transpose();
    for (int t = 0; t < T; ++t) fc1.row(t) += b.fc1_b.transpose();
    if (bc) bc->fc1_pre = fc1;
    Mat act(fc1.rows(), fc1.cols());
    for (Eigen::Index i = 0; i < fc1.rows(); ++i)
      for (Eigen::Index j = 0; j < fc1.cols(); ++j) act(i, j) = vit_detail::gelu(fc1(i, j));
    if (bc) bc->fc1_act = act;
    Mat out = x_mid + act * b.fc2_w.transpose();
    for (int t = 0; t < T; ++t) out.row(t) += b.fc2_b.transpose();
    return out;
  }

  Mat block_backward(const Mat& dout, const BlockWeights& b, const BlockCache& bc) const {
    const int T = cfg.tokens(), dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // MLP branch
    Mat dact = dout * b.fc2_w;
    Mat dfc1(dact.rows(), dact.cols());
    for (Eigen::Index i = 0; i < dact.rows(); ++i)
      for (Eigen::Index j = 0; j < dact.cols(); ++j)
        dfc1(i, j) = dact(i, j) * vit_detail::gelu_grad(bc.fc1_pre(i, j));
    Mat dh2 = dfc1 * b.fc1_w;
    Mat dx_mid = dout + vit_detail::layer_norm_backward(dh2, b.ln2_g, bc.ln2);

    // attention branch
    Mat dconcat = dx_mid * b.proj_w;
    Mat dqkv = Mat::Zero(T, 3 * cfg.dim);
    for (int hd = 0; hd < cfg.heads; ++hd) {
      const Mat& attn = bc.attn[static_cast<size_t>(hd)];
      const Mat& q = bc.q[static_cast<size_t>(hd)];
      const Mat& k = bc.k[static_cast<size_t>(hd)];
      const Mat& v = bc.v[static_cast<size_t>(hd)];
      Mat dhead = dconcat.middleCols(hd * dh, dh);
      Mat dattn = dhead * v.transpose();
      Mat dv = attn.transpose() * dhead;
      Mat dscores(T, T);
      for (int t = 0; t < T; ++t) {
        double dot = attn.row(t).dot(dattn.row(t));
        for (int u = 0; u < T; ++u) dscores(t, u) = attn(t, u) * (dattn(t, u) - dot);
      }
      Mat dq = dscores * k * scale;
      Mat dk = dscores.transpose() * q * scale;
      dqkv.middleCols(hd * dh, dh) = dq;
      dqkv.middleCols(cfg.dim + hd * dh, dh) = dk;
      dqkv.middleCols(2 * cfg.dim + hd * dh, dh) = dv;
    }
    Mat dh1 = dqkv * b.qkv_w;
    return dx_mid + vit_detail::layer_norm_backward(dh1, b.ln1_g, bc.ln1);
  }

  static void write_array(std::ostream& out, const std::string& name, const double* data,
                          size_t n) {
    uint32_t len = static_cast<uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(name.data(), len);
    uint64_t count = n;
    out.write(reinterpret_cast<const char*>(&count), 8);
    std::vector<float> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(n * sizeof(float)));
  }

  static void read_array(std::istream& in, const std::string& path, const std::string& expect,
                         double* data, size_t n) {
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in || len > 4096) throw ConfigError("vit checkpoint: corrupt array header in " + path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 8);
    if (!in || name != expect || count != n)
      throw ConfigError("vit checkpoint: expected array " + expect + " (" + std::to_string(n) +
                        " values), found " + name + " (" + std::to_string(count) + ") in " + path);
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw ConfigError("vit checkpoint: truncated array " + expect + " in " + path);
    for (size_t i = 0; i < n; ++i) data[i] = buf[i];
  }
};

// CLS-row attention of the last block per head, upsampled bilinearly to
// image resolution: the common reading of self-supervised ViT saliency.
class ViTAttentionProvider : public AttentionProvider {
 public:
  ViTAttentionProvider(std::shared_ptr<const ViTModel> model, int num_selected = 4)
      : model_(std::move(model)), num_selected_(num_selected) {
    if (!model_) throw ConfigError("ViTAttentionProvider: null model");
  }

  std::vector<GridD> all_head_maps(const Image& image) const override {
    ViTModel::ForwardResult fwd = model_->forward(image);
    std::vector<GridD> maps;
    for (const auto& attn : fwd.last_attn)
      maps.push_back(cls_row_to_map(attn, image.height(), image.width()));
    return maps;
  }

  AttentionStack attention_stack(const Image& image) const override {
    ViTModel::ForwardResult fwd = model_->forward(image);
    const ViTConfig& c = model_->cfg;
    AttentionStack stack;
    int selected = std::min(num_selected_, c.heads);
    for (int hd = 0; hd < selected; ++hd) {
      stack.maps.push_back(cls_row_to_map(fwd.last_attn[static_cast<size_t>(hd)], image.height(),
                                          image.width()));
      stack.source_ids.push_back("head" + std::to_string(hd));
    }
    // average over every head at the patch grid, then one upsample; bilinear
    // resampling is linear, so this equals the mean of the upsampled maps
    GridD avg_grid(c.grid_h, c.grid_w, 0.0);
    for (const auto& attn : fwd.last_attn)
      for (int p = 0; p < c.grid_h * c.grid_w; ++p)
        avg_grid.v[static_cast<size_t>(p)] += attn(0, p + 1);
    for (double& v : avg_grid.v) v /= static_cast<double>(fwd.last_attn.size());
    stack.maps.push_back(bilinear_resize(avg_grid, image.height(), image.width()));
    stack.source_ids.push_back("avg");
    return stack;
  }

  uint64_t weights_hash() const override { return model_->weights_hash(); }

 private:
  GridD cls_row_to_map(const ViTModel::Mat& attn, int out_h, int out_w) const {
    const ViTConfig& c = model_->cfg;
    GridD grid(c.grid_h, c.grid_w);
    for (int p = 0; p < c.grid_h * c.grid_w; ++p) grid.v[static_cast<size_t>(p)] = attn(0, p + 1);
    return bilinear_resize(grid, out_h, out_w);
  }

  std::shared_ptr<const ViTModel> model_;
  int num_selected_;
};

class ViTClassifier : public Classifier {
 public:
  ViTClassifier(std::shared_ptr<const ViTModel> model, double temperature = 1.0)
      : model_(std::move(model)), tau_(temperature) {
    if (!model_) throw ConfigError("ViTClassifier: null model");
    if (!(tau_ > 0)) throw InvalidParameterError("ViTClassifier: temperature must be > 0");
  }

  int num_classes() const override { return model_->cfg.num_classes; }

  ClassifierOutput classify_full(const Image& image) const override {
    ViTModel::ForwardResult fwd = model_->forward(image);
    ClassifierOutput out;
    out.logits = fwd.logits;
    out.probabilities = softmax_with_temperature(out.logits, tau_);
    return out;
  }

  InputGrad cross_entropy_input_grad(const Image& image, int class_index) const override {
    if (class_index < 0 || class_index >= num_classes())
      throw InvalidInputError("cross_entropy_input_grad: class index out of range");
    return model_->input_gradient(image, class_index, tau_);
  }

  uint64_t weights_hash() const override { return model_->weights_hash(); }

 private:
  std::shared_ptr<const ViTModel> model_;
  double tau_;
};

}  // namespace dips

#endif  // DIPS_VIT_HPP
