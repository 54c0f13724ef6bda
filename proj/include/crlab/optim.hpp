#ifndef CRLAB_OPTIM_HPP_
#define CRLAB_OPTIM_HPP_

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crlab/error.hpp"
#include "crlab/model.hpp"

namespace crlab {

// Linear decay to zero with no warmup.
inline double lr_at(std::uint64_t step, std::uint64_t total_steps,
                    double base_lr) {
  if (total_steps < 1) throw ValidationError("total_steps must be >= 1");
  if (step > total_steps)
    throw ValidationError("step " + std::to_string(step) +
                          " is past the end of the schedule (" +
                          std::to_string(total_steps) + " steps)");
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps);
}

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double base_lr = 1e-4;
  std::uint64_t total_steps = 1;
  std::uint64_t step = 0;  // updates applied so far

  AdamState() = default;
  AdamState(std::size_t n, double lr, std::uint64_t total)
      : m(n, T(0)), v(n, T(0)), base_lr(lr), total_steps(total) {}
};

// One bias-corrected Adam update at lr_at(state.step). Returns the rate used.
// `names` maps flat indices to tensor names for error messages.
template <typename T>
double adam_step(std::span<T> params, AdamState<T>& state,
                 std::span<const T> grad, const ParamLayout* names = nullptr) {
  if (state.m.size() != params.size() || state.v.size() != params.size() ||
      grad.size() != params.size())
    throw ValidationError("optimizer state does not match the parameters");
  using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
  Eigen::Map<const Vec> g(grad.data(), static_cast<Eigen::Index>(grad.size()));
  if (!g.allFinite()) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (std::isfinite(static_cast<double>(grad[i]))) continue;
      std::string where = "index " + std::to_string(i);
      if (names) where = names->slot_of(i).name + " (" + where + ")";
      throw RuntimeError("non-finite gradient in parameter " + where);
    }
  }
  const double lr = lr_at(state.step, state.total_steps, state.base_lr);
  const auto t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const auto n = static_cast<Eigen::Index>(params.size());
  Eigen::Map<Vec> p(params.data(), n), m(state.m.data(), n), v(state.v.data(), n);
  m = b1 * m + (T(1) - b1) * g;
  v = b2 * v + (T(1) - b2) * g.square();
  p -= static_cast<T>(lr / bc1) * m /
       ((v * static_cast<T>(1.0 / bc2)).sqrt() + static_cast<T>(state.eps));
  ++state.step;
  return lr;
}

}  // namespace crlab

#endif  // CRLAB_OPTIM_HPP_
