#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "introvae/errors.hpp"
#include "introvae/networks.hpp"

namespace introvae {

struct AdamSettings {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam step on a flat array; `t` is the 1-based step
// count after this update.
template <class T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, std::int64_t t,
                 const AdamSettings& s) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
    throw ShapeError("adam_update: size mismatch");
  const double c1 = 1.0 - std::pow(s.beta1, double(t));
  const double c2 = 1.0 - std::pow(s.beta2, double(t));
  const T b1 = T(s.beta1), b2 = T(s.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const double m_hat = double(m[i]) / c1;
    const double v_hat = double(v[i]) / c2;
    params[i] = static_cast<T>(double(params[i]) - s.learning_rate * m_hat / (std::sqrt(v_hat) + s.eps));
  }
}

// First and second moment buffers for every array of one ParamStore.
template <class T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m, v;

  AdamState() = default;
  explicit AdamState(const ParamStore<T>& ps) {
    for (const auto& p : ps.params()) {
      m.emplace_back(p.value.size(), T(0));
      v.emplace_back(p.value.size(), T(0));
    }
  }

  bool all_finite() const {
    for (const auto* set : {&m, &v})
      for (const auto& a : *set)
        for (T x : a)
          if (!std::isfinite(x)) return false;
    return true;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Applies one Adam step to every parameter of `ps` using its gradient slots.
template <class T>
void adam_step(ParamStore<T>& ps, AdamState<T>& state, const AdamSettings& s) {
  ++state.step;
  auto& params = ps.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    adam_update<T>(params[i].value, params[i].grad, state.m[i], state.v[i], state.step, s);
}

}  // namespace introvae
