#pragma once

#include <random>
#include <vector>

#include "icrl/tensor.hpp"

namespace icrl::testing {

template <class T = double>
BasicTensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return BasicTensor<T>(shape, std::move(v), requires_grad);
}

template <class T>
std::vector<double> values(const BasicTensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : 1e300;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace icrl::testing
