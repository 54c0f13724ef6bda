#ifndef CRLAB_MODEL_HPP_
#define CRLAB_MODEL_HPP_

// A GPT-2-style decoder: learned positional embeddings, pre-LayerNorm
// residual blocks, tanh-GELU MLP, output head tied to the token embedding.
// The masked objective reuses the same network with full (bidirectional)
// attention. Parameters live in one flat buffer so the optimizer, the
// checkpoint writer and the gradient checker can treat them uniformly.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crlab/error.hpp"
#include "crlab/rng.hpp"
#include "crlab/tokenizer.hpp"

namespace crlab {

enum class Objective { causal, masked };
enum class DType { f32, f64 };

inline std::string_view to_string(Objective o) {
  return o == Objective::causal ? "causal" : "masked";
}
inline Objective parse_objective(std::string_view s) {
  if (s == "causal") return Objective::causal;
  if (s == "masked") return Objective::masked;
  throw ValidationError("unknown objective '" + std::string(s) + "'");
}
inline std::string_view to_string(DType d) {
  return d == DType::f32 ? "f32" : "f64";
}
inline DType parse_dtype(std::string_view s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw ValidationError("unknown dtype '" + std::string(s) + "'");
}

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t context_length = 128;
  std::size_t vocab_size = kDefaultVocabSize;
  Objective objective = Objective::causal;
  std::uint64_t init_seed = 42;
  DType dtype = DType::f32;

  void validate() const {
    if (n_layers < 1) throw ValidationError("n_layers must be >= 1");
    if (n_heads < 1) throw ValidationError("n_heads must be >= 1");
    if (d_model < 1 || d_ff < 1)
      throw ValidationError("d_model and d_ff must be >= 1");
    if (d_model % n_heads != 0)
      throw ValidationError("d_model (" + std::to_string(d_model) +
                            ") must be divisible by n_heads (" +
                            std::to_string(n_heads) + ")");
    if (context_length < 2) throw ValidationError("context_length must be >= 2");
    if (vocab_size < 256) throw ValidationError("vocab_size must be >= 256");
  }

  bool operator==(const ModelConfig&) const = default;
};

// V*d + C*d + L*(4d^2 + 2*d*f + 9d + f) + 2d
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  return c.vocab_size * d + c.context_length * d +
         c.n_layers * (4 * d * d + 2 * d * f + 9 * d + f) + 2 * d;
}

struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

struct ParamLayout {
  struct Layer {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, attn_w, attn_b;
    std::size_t ln2_g, ln2_b, fc_w, fc_b, mlp_w, mlp_b;
  };

  std::vector<TensorSlot> slots;
  std::size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0;
  std::vector<Layer> layers;
  std::size_t total = 0;

  explicit ParamLayout(const ModelConfig& c) {
    const std::size_t d = c.d_model, f = c.d_ff;
    wte = add("wte", c.vocab_size, d);
    wpe = add("wpe", c.context_length, d);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string p = "h" + std::to_string(l) + ".";
      Layer L{};
      L.ln1_g = add(p + "ln_1.g", 1, d);
      L.ln1_b = add(p + "ln_1.b", 1, d);
      L.qkv_w = add(p + "attn.c_attn.w", d, 3 * d);
      L.qkv_b = add(p + "attn.c_attn.b", 1, 3 * d);
      L.attn_w = add(p + "attn.c_proj.w", d, d);
      L.attn_b = add(p + "attn.c_proj.b", 1, d);
      L.ln2_g = add(p + "ln_2.g", 1, d);
      L.ln2_b = add(p + "ln_2.b", 1, d);
      L.fc_w = add(p + "mlp.c_fc.w", d, f);
      L.fc_b = add(p + "mlp.c_fc.b", 1, f);
      L.mlp_w = add(p + "mlp.c_proj.w", f, d);
      L.mlp_b = add(p + "mlp.c_proj.b", 1, d);
      layers.push_back(L);
    }
    lnf_g = add("ln_f.g", 1, d);
    lnf_b = add("ln_f.b", 1, d);
  }

  // Name of the tensor containing flat index i.
  const TensorSlot& slot_of(std::size_t i) const {
    for (const auto& s : slots)
      if (i >= s.offset && i < s.offset + s.size()) return s;
    return slots.back();
  }

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    slots.push_back({std::move(name), total, rows, cols});
    total += rows * cols;
    return slots.size() - 1;
  }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Per-position training target; kIgnore positions contribute nothing.
inline constexpr std::int64_t kIgnore = -1;

template <typename T>
struct ForwardResult {
  RowMatrix<T> logits;               // (length, vocab)
  std::vector<RowMatrix<T>> hidden;  // n_layers + 1 entries of (length, d)
};

template <typename T>
class Transformer {
 public:
  using Mat = RowMatrix<T>;
  // Aligned so Eigen's vectorized reductions take the same path every run.
  using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;

  explicit Transformer(const ModelConfig& config)
      : config_((config.validate(), config)), layout_(config) {
    params_.assign(layout_.total, T(0));
    initialize();
  }

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }

  CMapMat tensor(std::size_t slot) const { return view(params_, slot); }
  MapMat tensor(std::size_t slot) { return view(params_, slot); }

  // Forward pass that keeps every activation needed by backward().
  struct Cache;

  // `key_valid` (optional) excludes padding positions as attention keys.
  void forward(std::span<const TokenId> ids, Cache& cache,
               std::span<const std::uint8_t> key_valid = {}) const;

  ForwardResult<T> forward(std::span<const TokenId> ids,
                           std::span<const std::uint8_t> key_valid = {}) const {
    Cache cache;
    forward(ids, cache, key_valid);
    ForwardResult<T> r;
    r.logits = std::move(cache.logits);
    r.hidden.reserve(config_.n_layers + 1);
    r.hidden.push_back(std::move(cache.x0));
    for (auto& layer : cache.layers) r.hidden.push_back(std::move(layer.x_out));
    return r;
  }

  // Accumulates scale * d(loss)/d(params) into `grad`, given dL/dlogits.
  void backward(const Cache& cache, const Mat& dlogits, std::span<T> grad,
                T scale = T(1)) const;

 private:
  static MapMat view(Buffer& buf, const ParamLayout& layout,
                     std::size_t slot) {
    const auto& s = layout.slots[slot];
    return MapMat(buf.data() + s.offset, s.rows, s.cols);
  }
  MapMat view(Buffer& buf, std::size_t slot) const {
    return view(buf, layout_, slot);
  }
  CMapMat view(const Buffer& buf, std::size_t slot) const {
    const auto& s = layout_.slots[slot];
    return CMapMat(buf.data() + s.offset, s.rows, s.cols);
  }
  MapMat grad_view(std::span<T> grad, std::size_t slot) const {
    const auto& s = layout_.slots[slot];
    return MapMat(grad.data() + s.offset, s.rows, s.cols);
  }

  void initialize();

  ModelConfig config_;
  ParamLayout layout_;
  Buffer params_;
};

template <typename T>
struct Transformer<T>::Cache {
  struct Layer {
    Mat x_in;
    Mat ln1_xhat, h1;
    ColVector<T> ln1_rstd;
    Mat qkv;
    std::vector<Mat> probs;  // per head, (length, length)
    Mat attn;                // concatenated head outputs
    Mat x_mid;
    Mat ln2_xhat, h2;
    ColVector<T> ln2_rstd;
    Mat fc, act;
    Mat x_out;
  };
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> key_valid;
  Mat x0;
  std::vector<Layer> layers;
  Mat lnf_xhat, hf;
  ColVector<T> lnf_rstd;
  Mat logits;
};

namespace nn {

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
void layernorm_forward(const RowMatrix<T>& x, const Eigen::Map<const RowMatrix<T>>& g,
                       const Eigen::Map<const RowMatrix<T>>& b, RowMatrix<T>& xhat,
                       RowMatrix<T>& y, ColVector<T>& rstd) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  y.resize(n, d);
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    const T r = T(1) / std::sqrt(var + T(kLayerNormEps));
    rstd(i) = r;
    xhat.row(i) = (x.row(i).array() - mean) * r;
  }
  y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
}

// Returns dx; accumulates dg, db.
template <typename T>
RowMatrix<T> layernorm_backward(const RowMatrix<T>& dy, const RowMatrix<T>& xhat,
                                const ColVector<T>& rstd,
                                const Eigen::Map<const RowMatrix<T>>& g,
                                Eigen::Map<RowMatrix<T>> dg,
                                Eigen::Map<RowMatrix<T>> db, T scale) {
  dg.row(0) += scale * (dy.array() * xhat.array()).colwise().sum().matrix().eval();
  db.row(0) += scale * dy.colwise().sum().eval();
  RowMatrix<T> dxhat = dy.array().rowwise() * g.row(0).array();
  const auto d = static_cast<T>(dy.cols());
  RowMatrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).sum() / d;
    const T m2 = (dxhat.row(i).array() * xhat.row(i).array()).sum() / d;
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

template <typename T>
T gelu(T x) {
  const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  const T th = std::tanh(u);
  const T du = T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

// Whole-matrix versions; Eigen vectorizes tanh.
template <typename T>
RowMatrix<T> gelu(const RowMatrix<T>& x) {
  const auto a = x.array();
  const auto th = (T(kGeluC) * (a + T(kGeluA) * a.cube())).tanh().eval();
  return (T(0.5) * a * (T(1) + th)).matrix();
}

template <typename T>
RowMatrix<T> gelu_grad(const RowMatrix<T>& x) {
  const auto a = x.array();
  const auto th = (T(kGeluC) * (a + T(kGeluA) * a.cube())).tanh().eval();
  const auto du = T(kGeluC) * (T(1) + T(3 * kGeluA) * a.square());
  return (T(0.5) * (T(1) + th) + T(0.5) * a * (T(1) - th.square()) * du).matrix();
}

}  // namespace nn

template <typename T>
void Transformer<T>::initialize() {
  Xoshiro256 rng(derive_seed(config_.init_seed, 0x1A17ULL));
  const double std = 0.02;
  const double resid_std =
      0.02 / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
  auto fill_normal = [&](std::size_t slot, double s) {
    auto m = view(params_, slot);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = static_cast<T>(s * rng.normal());
  };
  auto fill_const = [&](std::size_t slot, T v) { view(params_, slot).setConstant(v); };

  fill_normal(layout_.wte, std);
  fill_normal(layout_.wpe, std);
  for (const auto& L : layout_.layers) {
    fill_const(L.ln1_g, T(1));
    fill_const(L.ln1_b, T(0));
    fill_normal(L.qkv_w, std);
    fill_const(L.qkv_b, T(0));
    fill_normal(L.attn_w, resid_std);
    fill_const(L.attn_b, T(0));
    fill_const(L.ln2_g, T(1));
    fill_const(L.ln2_b, T(0));
    fill_normal(L.fc_w, std);
    fill_const(L.fc_b, T(0));
    fill_normal(L.mlp_w, resid_std);
    fill_const(L.mlp_b, T(0));
  }
  fill_const(layout_.lnf_g, T(1));
  fill_const(layout_.lnf_b, T(0));
}

template <typename T>
void Transformer<T>::forward(std::span<const TokenId> ids, Cache& cache,
                             std::span<const std::uint8_t> key_valid) const {
  const std::size_t n = ids.size();
  const std::size_t d = config_.d_model;
  const std::size_t H = config_.n_heads;
  const std::size_t hd = d / H;
  if (n == 0) throw ValidationError("forward needs at least one token");
  if (n > config_.context_length)
    throw ValidationError("sequence of " + std::to_string(n) +
                          " tokens exceeds context_length " +
                          std::to_string(config_.context_length));
  if (!key_valid.empty() && key_valid.size() != n)
    throw ValidationError("key mask length does not match the sequence");
  for (TokenId id : ids)
    if (id >= config_.vocab_size)
      throw ValidationError("token id " + std::to_string(id) +
                            " >= vocab_size " +
                            std::to_string(config_.vocab_size));

  cache.ids.assign(ids.begin(), ids.end());
  cache.key_valid.assign(n, 1);
  if (!key_valid.empty()) cache.key_valid.assign(key_valid.begin(), key_valid.end());

  const auto wte = view(params_, layout_.wte);
  const auto wpe = view(params_, layout_.wpe);
  cache.x0.resize(n, d);
  for (std::size_t t = 0; t < n; ++t)
    cache.x0.row(t) = wte.row(ids[t]) + wpe.row(t);

  const bool causal = config_.objective == Objective::causal;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  cache.layers.resize(config_.n_layers);
  const Mat* x = &cache.x0;
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const auto& L = layout_.layers[l];
    auto& C = cache.layers[l];
    C.x_in = *x;
    nn::layernorm_forward<T>(C.x_in, view(params_, L.ln1_g), view(params_, L.ln1_b),
                             C.ln1_xhat, C.h1, C.ln1_rstd);
    C.qkv.noalias() = C.h1 * view(params_, L.qkv_w);
    C.qkv.rowwise() += view(params_, L.qkv_b).row(0);

    C.probs.resize(H);
    C.attn.resize(n, d);
    for (std::size_t h = 0; h < H; ++h) {
      const auto q = C.qkv.block(0, h * hd, n, hd);
      const auto k = C.qkv.block(0, d + h * hd, n, hd);
      const auto v = C.qkv.block(0, 2 * d + h * hd, n, hd);
      Mat& P = C.probs[h];
      P.noalias() = (q * k.transpose()) * scale;
      for (std::size_t i = 0; i < n; ++i) {
        T row_max = neg_inf;
        for (std::size_t j = 0; j < n; ++j) {
          const bool allowed = (!causal || j <= i) && cache.key_valid[j];
          if (!allowed) {
            P(i, j) = neg_inf;
          } else if (P(i, j) > row_max) {
            row_max = P(i, j);
          }
        }
        if (row_max == neg_inf) {
          P.row(i).setZero();
          continue;
        }
        T sum = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          const T e = P(i, j) == neg_inf ? T(0) : std::exp(P(i, j) - row_max);
          P(i, j) = e;
          sum += e;
        }
        P.row(i) /= sum;
      }
      C.attn.block(0, h * hd, n, hd).noalias() = P * v;
    }
    C.x_mid = C.x_in;
    C.x_mid.noalias() += C.attn * view(params_, L.attn_w);
    C.x_mid.rowwise() += view(params_, L.attn_b).row(0);

    nn::layernorm_forward<T>(C.x_mid, view(params_, L.ln2_g), view(params_, L.ln2_b),
                             C.ln2_xhat, C.h2, C.ln2_rstd);
    C.fc.noalias() = C.h2 * view(params_, L.fc_w);
    C.fc.rowwise() += view(params_, L.fc_b).row(0);
    C.act = nn::gelu(C.fc);
    C.x_out = C.x_mid;
    C.x_out.noalias() += C.act * view(params_, L.mlp_w);
    C.x_out.rowwise() += view(params_, L.mlp_b).row(0);
    x = &C.x_out;
  }

  nn::layernorm_forward<T>(*x, view(params_, layout_.lnf_g),
                           view(params_, layout_.lnf_b), cache.lnf_xhat,
                           cache.hf, cache.lnf_rstd);
  cache.logits.noalias() = cache.hf * wte.transpose();
}

template <typename T>
void Transformer<T>::backward(const Cache& cache, const Mat& dlogits,
                              std::span<T> grad, T scale) const {
  if (grad.size() != params_.size())
    throw ValidationError("gradient buffer has the wrong size");
  const std::size_t n = cache.ids.size();
  const std::size_t d = config_.d_model;
  const std::size_t H = config_.n_heads;
  const std::size_t hd = d / H;
  const bool causal = config_.objective == Objective::causal;
  const T attn_scale = T(1) / std::sqrt(static_cast<T>(hd));

  const auto wte = view(params_, layout_.wte);
  auto g_wte = grad_view(grad, layout_.wte);
  auto g_wpe = grad_view(grad, layout_.wpe);

  // Tied head.
  g_wte += Mat(scale * (dlogits.transpose() * cache.hf));
  Mat dhf = dlogits * wte;
  Mat dx = nn::layernorm_backward<T>(dhf, cache.lnf_xhat, cache.lnf_rstd,
                                     view(params_, layout_.lnf_g),
                                     grad_view(grad, layout_.lnf_g),
                                     grad_view(grad, layout_.lnf_b), scale);

  for (std::size_t li = config_.n_layers; li-- > 0;) {
    const auto& L = layout_.layers[li];
    const auto& C = cache.layers[li];

    // MLP block: x_out = x_mid + gelu(ln2(x_mid) W_fc + b_fc) W_p + b_p
    grad_view(grad, L.mlp_b).row(0) += scale * dx.colwise().sum().eval();
    grad_view(grad, L.mlp_w) += Mat(scale * (C.act.transpose() * dx));
    Mat dact = dx * view(params_, L.mlp_w).transpose();
    Mat dfc = dact.array() * nn::gelu_grad(C.fc).array();
    grad_view(grad, L.fc_b).row(0) += scale * dfc.colwise().sum().eval();
    grad_view(grad, L.fc_w) += Mat(scale * (C.h2.transpose() * dfc));
    Mat dh2 = dfc * view(params_, L.fc_w).transpose();
    Mat dx_mid = dx + nn::layernorm_backward<T>(dh2, C.ln2_xhat, C.ln2_rstd,
                                               view(params_, L.ln2_g),
                                               grad_view(grad, L.ln2_g),
                                               grad_view(grad, L.ln2_b), scale);

    // Attention block: x_mid = x_in + attn(ln1(x_in)) W_o + b_o
    grad_view(grad, L.attn_b).row(0) += scale * dx_mid.colwise().sum().eval();
    grad_view(grad, L.attn_w) += Mat(scale * (C.attn.transpose() * dx_mid));
    Mat dattn = dx_mid * view(params_, L.attn_w).transpose();
    Mat dqkv(n, 3 * d);
    for (std::size_t h = 0; h < H; ++h) {
      const auto q = C.qkv.block(0, h * hd, n, hd);
      const auto k = C.qkv.block(0, d + h * hd, n, hd);
      const auto v = C.qkv.block(0, 2 * d + h * hd, n, hd);
      const Mat& P = C.probs[h];
      const auto dO = dattn.block(0, h * hd, n, hd);
      Mat dP = dO * v.transpose();
      dqkv.block(0, 2 * d + h * hd, n, hd).noalias() = P.transpose() * dO;
      Mat dS = P.array() * (dP.array().colwise() -
                            (P.array() * dP.array()).rowwise().sum());
      if (causal) dS.template triangularView<Eigen::StrictlyUpper>().setZero();
      dS *= attn_scale;
      dqkv.block(0, h * hd, n, hd).noalias() = dS * k;
      dqkv.block(0, d + h * hd, n, hd).noalias() = dS.transpose() * q;
    }
    grad_view(grad, L.qkv_b).row(0) += scale * dqkv.colwise().sum().eval();
    grad_view(grad, L.qkv_w) += Mat(scale * (C.h1.transpose() * dqkv));
    Mat dh1 = dqkv * view(params_, L.qkv_w).transpose();
    dx = dx_mid + nn::layernorm_backward<T>(dh1, C.ln1_xhat, C.ln1_rstd,
                                           view(params_, L.ln1_g),
                                           grad_view(grad, L.ln1_g),
                                           grad_view(grad, L.ln1_b), scale);
  }

  for (std::size_t t = 0; t < n; ++t) {
    g_wte.row(cache.ids[t]) += scale * dx.row(t);
    g_wpe.row(t) += scale * dx.row(t);
  }
}

}  // namespace crlab

#endif  // CRLAB_MODEL_HPP_
