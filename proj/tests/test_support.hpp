#ifndef CRLAB_TESTS_TEST_SUPPORT_HPP_
#define CRLAB_TESTS_TEST_SUPPORT_HPP_

// Test-only oracles and fixtures shared by the unit and acceptance suites.
// Nothing here calls into the code path it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crlab/model.hpp"
#include "crlab/objectives.hpp"
#include "crlab/rng.hpp"

namespace crlab::oracle {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string data_path(const std::string& name) {
  return std::string(CRLAB_DATA_DIR) + "/" + name;
}

// Central finite differences of the mean cross-entropy, one tensor at a
// time. Returns per-tensor ||analytic - numeric|| / max(||analytic||,
// ||numeric||).
struct BlockError {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
};

template <typename T>
std::vector<BlockError> finite_difference_check(
    Transformer<T>& model, const std::vector<TokenId>& ids,
    const std::vector<std::int64_t>& targets,
    const std::vector<std::uint8_t>& key_valid, double h) {
  const std::span<const std::uint8_t> kv(key_valid);
  std::vector<T> analytic(model.num_params(), T(0));
  {
    typename Transformer<T>::Cache cache;
    model.forward(ids, cache, kv);
    RowMatrix<T> dlogits;
    cross_entropy(cache.logits, std::span<const std::int64_t>(targets), &dlogits);
    model.backward(cache, dlogits, std::span<T>(analytic));
  }
  auto loss = [&]() {
    const auto fwd = model.forward(std::span<const TokenId>(ids), kv);
    return cross_entropy(fwd.logits, std::span<const std::int64_t>(targets));
  };

  std::vector<BlockError> out;
  auto params = model.params();
  for (const auto& slot : model.layout().slots) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = slot.offset; i < slot.offset + slot.size(); ++i) {
      const T saved = params[i];
      params[i] = static_cast<T>(static_cast<double>(saved) + h);
      const double up = loss();
      params[i] = static_cast<T>(static_cast<double>(saved) - h);
      const double down = loss();
      params[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic[i]);
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
    out.push_back({slot.name, std::sqrt(diff2) / denom, std::sqrt(a2)});
  }
  return out;
}

// Zeroing the tied embedding makes every logit 0, i.e. uniform predictions.
template <typename T>
void make_uniform(Transformer<T>& model) {
  model.tensor(model.layout().wte).setZero();
}

inline ModelConfig tiny_config(Objective objective = Objective::causal,
                               DType dtype = DType::f64) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 64;
  c.context_length = 8;
  c.vocab_size = 259;
  c.objective = objective;
  c.dtype = dtype;
  c.init_seed = 7;
  return c;
}

// Scales every weight so gradients are not dominated by the tiny init.
template <typename T>
void perturb(Transformer<T>& model, std::uint64_t seed, double std) {
  Xoshiro256 rng(seed);
  for (auto& p : model.params())
    p = static_cast<T>(static_cast<double>(p) + std * rng.normal());
}

}  // namespace crlab::oracle

#endif  // CRLAB_TESTS_TEST_SUPPORT_HPP_
