#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>

#include "dcf/nn/model.hpp"

namespace dcf::nn {

struct AdamConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every unfrozen parameter from its
/// accumulated gradient. Weight decay is added to the gradient (L2). Frozen
/// parameters keep value and moments; the step counter always advances.
template <class T>
void adam_step(ModelState<T>& s, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("adam: lr must be > 0");
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : s.params) {
    if (s.is_frozen(p.layer)) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]) + cfg.weight_decay * static_cast<double>(p.value[i]);
      const double m = cfg.beta1 * static_cast<double>(p.m[i]) + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * static_cast<double>(p.v[i]) + (1.0 - cfg.beta2) * g * g;
      p.m[i] = static_cast<T>(m);
      p.v[i] = static_cast<T>(v);
      const double m_hat = m / c1, v_hat = v / c2;
      p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
  ++s.version;
}

/// Clears Adam moments and the step counter (start of a fine-tuning run).
template <class T>
void reset_optimizer(ModelState<T>& s) {
  for (auto& p : s.params) {
    std::fill(p.m.begin(), p.m.end(), T(0));
    std::fill(p.v.begin(), p.v.end(), T(0));
  }
  s.step = 0;
  ++s.version;
}

}  // namespace dcf::nn
