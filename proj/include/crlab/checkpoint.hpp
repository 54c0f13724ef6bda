#ifndef CRLAB_CHECKPOINT_HPP_
#define CRLAB_CHECKPOINT_HPP_

// Binary checkpoint container. Everything is written little-endian in a fixed
// field order, so identical runs produce identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "crlab/error.hpp"
#include "crlab/model.hpp"
#include "crlab/optim.hpp"

namespace crlab {

enum class SelectionTag { final, best_val };

inline std::string_view to_string(SelectionTag t) {
  return t == SelectionTag::final ? "final" : "best_val";
}

template <typename T>
struct Checkpoint {
  ModelConfig config;
  SelectionTag tag = SelectionTag::final;
  std::uint64_t step = 0;
  std::uint64_t boundary = 0;  // epoch or pass index the snapshot was taken at
  double val_loss = 0.0;
  std::vector<T> params;
  std::vector<T> adam_m;
  std::vector<T> adam_v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, base_lr = 1e-4;
  std::uint64_t total_steps = 1;

  static Checkpoint capture(const Transformer<T>& model, const AdamState<T>& opt,
                            SelectionTag tag, std::uint64_t boundary,
                            double val_loss) {
    Checkpoint c;
    c.config = model.config();
    c.tag = tag;
    c.step = opt.step;
    c.boundary = boundary;
    c.val_loss = val_loss;
    c.params.assign(model.params().begin(), model.params().end());
    c.adam_m = opt.m;
    c.adam_v = opt.v;
    c.beta1 = opt.beta1;
    c.beta2 = opt.beta2;
    c.eps = opt.eps;
    c.base_lr = opt.base_lr;
    c.total_steps = opt.total_steps;
    return c;
  }

  Transformer<T> restore_model() const {
    Transformer<T> m(config);
    if (params.size() != m.num_params())
      throw ValidationError("checkpoint parameter count does not match its config");
    std::copy(params.begin(), params.end(), m.params().begin());
    return m;
  }

  AdamState<T> restore_optimizer() const {
    AdamState<T> s(params.size(), base_lr, total_steps);
    s.m = adam_m;
    s.v = adam_v;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.step = step;
    return s;
  }

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

inline constexpr std::string_view kCheckpointMagic = "CRLABCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    out_.append(b, n);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  template <typename T>
  void vec(const std::vector<T>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(T));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}
  void raw(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw ValidationError("checkpoint is truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string str() {
    const auto n = u64();
    if (n > in_.size() - pos_) throw ValidationError("checkpoint is truncated");
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> vec() {
    const auto n = u64();
    if (n > (in_.size() - pos_) / sizeof(T))
      throw ValidationError("checkpoint is truncated");
    std::vector<T> v(n);
    raw(v.data(), n * sizeof(T));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& c) {
  detail::ByteWriter w;
  w.raw(detail::kCheckpointMagic.data(), detail::kCheckpointMagic.size());
  w.u32(detail::kCheckpointVersion);
  w.u32(sizeof(T));
  const auto& m = c.config;
  for (std::uint64_t v : {m.n_layers, m.n_heads, m.d_model, m.d_ff,
                          m.context_length, m.vocab_size})
    w.u64(v);
  w.str(to_string(m.objective));
  w.u64(m.init_seed);
  w.str(to_string(m.dtype));
  w.str(to_string(c.tag));
  w.u64(c.step);
  w.u64(c.boundary);
  w.f64(c.val_loss);
  w.f64(c.beta1);
  w.f64(c.beta2);
  w.f64(c.eps);
  w.f64(c.base_lr);
  w.u64(c.total_steps);
  w.vec(c.params);
  w.vec(c.adam_m);
  w.vec(c.adam_v);
  return w.take();
}

// Reads the element width without decoding the rest.
inline std::size_t checkpoint_scalar_size(std::string_view bytes) {
  detail::ByteReader r(bytes);
  std::string magic(detail::kCheckpointMagic.size(), '\0');
  r.raw(magic.data(), magic.size());
  if (magic != detail::kCheckpointMagic)
    throw ValidationError("not a crlab checkpoint");
  if (r.u32() != detail::kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version");
  return r.u32();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(std::string_view bytes) {
  if (checkpoint_scalar_size(bytes) != sizeof(T))
    throw ValidationError("checkpoint dtype does not match the requested type");
  detail::ByteReader r(bytes);
  std::string skip(detail::kCheckpointMagic.size() + 8, '\0');
  r.raw(skip.data(), skip.size());
  Checkpoint<T> c;
  auto& m = c.config;
  m.n_layers = r.u64();
  m.n_heads = r.u64();
  m.d_model = r.u64();
  m.d_ff = r.u64();
  m.context_length = r.u64();
  m.vocab_size = r.u64();
  m.objective = parse_objective(r.str());
  m.init_seed = r.u64();
  m.dtype = parse_dtype(r.str());
  const auto tag = r.str();
  if (tag == "final") c.tag = SelectionTag::final;
  else if (tag == "best_val") c.tag = SelectionTag::best_val;
  else throw ValidationError("unknown checkpoint tag '" + tag + "'");
  c.step = r.u64();
  c.boundary = r.u64();
  c.val_loss = r.f64();
  c.beta1 = r.f64();
  c.beta2 = r.f64();
  c.eps = r.f64();
  c.base_lr = r.f64();
  c.total_steps = r.u64();
  c.params = r.vec<T>();
  c.adam_m = r.vec<T>();
  c.adam_v = r.vec<T>();
  if (!r.done()) throw ValidationError("trailing bytes after checkpoint");
  m.validate();
  if (c.params.size() != parameter_count(m) || c.adam_m.size() != c.params.size() ||
      c.adam_v.size() != c.params.size())
    throw ValidationError("checkpoint tensor sizes do not match its config");
  return c;
}

}  // namespace crlab

#endif  // CRLAB_CHECKPOINT_HPP_
