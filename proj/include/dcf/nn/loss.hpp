#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace dcf::nn {

inline std::array<double, 2> softmax2(double z0, double z1) {
  const double m = std::max(z0, z1);
  const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
  const double s = e0 + e1;
  return {e0 / s, e1 / s};
}

/// -log softmax(logits)[label], stabilised with log-sum-exp.
inline double cross_entropy(double z0, double z1, std::size_t label) {
  const double m = std::max(z0, z1);
  const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
  return lse - (label == 0 ? z0 : z1);
}

/// Mean cross-entropy over a batch of 2-way logits (row-major [n, 2]) and the
/// gradient of that mean with respect to the logits.
template <class T>
double cross_entropy_batch(std::span<const T> logits, std::span<const std::size_t> labels, std::vector<T>* dlogits) {
  const std::size_t n = labels.size();
  if (dlogits) dlogits->assign(n * 2, T(0));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z0 = logits[2 * i], z1 = logits[2 * i + 1];
    total += cross_entropy(z0, z1, labels[i]);
    if (dlogits) {
      const auto p = softmax2(z0, z1);
      (*dlogits)[2 * i] = static_cast<T>((p[0] - (labels[i] == 0 ? 1.0 : 0.0)) / static_cast<double>(n));
      (*dlogits)[2 * i + 1] = static_cast<T>((p[1] - (labels[i] == 1 ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  return total / static_cast<double>(n);
}

/// Predicted class; an exact tie resolves to class 0 (F1).
inline std::size_t argmax2(double z0, double z1) { return z1 > z0 ? 1 : 0; }

}  // namespace dcf::nn
