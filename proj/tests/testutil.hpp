#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lgmoe/rng.hpp"
#include "lgmoe/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline lgmoe::Tensor random_tensor(std::vector<int> shape, lgmoe::Rng& rng, double scale = 1.0) {
  lgmoe::Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, scale);
  return t;
}

/// Central finite differences of a scalar function w.r.t. inputs[which].
template <typename F>
lgmoe::Tensor fd_grad(F f, std::vector<lgmoe::Tensor> inputs, size_t which, double h = 1e-5) {
  lgmoe::Tensor g(inputs[which].shape());
  for (int64_t i = 0; i < g.numel(); ++i) {
    double orig = inputs[which].data()[i];
    inputs[which].data()[i] = orig + h;
    double up = f(inputs);
    inputs[which].data()[i] = orig - h;
    double down = f(inputs);
    inputs[which].data()[i] = orig;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_rel_err(const lgmoe::Tensor& a, const lgmoe::Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, rel_err(a.data()[i], b.data()[i]));
  return worst;
}

inline double max_abs_diff(const lgmoe::Tensor& a, const lgmoe::Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace testutil
