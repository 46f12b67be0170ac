#pragma once

// Central finite-difference oracle for reverse-mode gradients. Test-only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ddf2pol/tensor.hpp"

namespace ddf2pol::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Denominator floored at 1e-3 so round-off in the loss does not dominate tiny gradients.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / scale;
}

/// Compares backward() against (f(x+eps) - f(x-eps)) / 2eps on up to
/// `per_leaf` randomly chosen coordinates of each leaf (all of them if fewer).
inline GradCheck check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                 std::size_t per_leaf, std::uint64_t seed, double eps = 1e-5) {
  for (auto& t : leaves) t.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& t : leaves) {
    std::vector<double> g(t.numel(), 0.0);
    if (!t.grad().empty()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  std::mt19937_64 rng(seed);
  GradCheck out;
  NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_values();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min(per_leaf, coords.size()));
    for (auto i : coords) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss_fn().item();
      values[i] = saved - eps;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[l][i], numeric));
      ++out.checked;
    }
  }
  return out;
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -2.0,
                            double hi = 2.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = u(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

/// Values in [-hi,-margin] U [margin,hi], keeping ReLU kinks out of reach of eps.
inline Tensor random_away_from_zero(const Shape& shape, std::mt19937_64& rng, double margin = 0.1,
                                    double hi = 2.0) {
  std::uniform_real_distribution<double> u(margin, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor(shape, std::move(v), true);
}

}  // namespace ddf2pol::testing
