#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dcf/image.hpp"
#include "dcf/nn/model.hpp"
#include "dcf/nn/train.hpp"

namespace dcf::nn {

/// ReLU(sum_k alpha_k A_k) with alpha_k the spatial mean of dA_k, for sample 0.
template <class T>
GrayMap cam_map(const Tensor4<T>& acts, const Tensor4<T>& grads) {
  if (!acts.same_shape(grads)) throw std::invalid_argument("cam_map: shape mismatch");
  const std::size_t plane = acts.plane();
  GrayMap map{acts.h, acts.w, std::vector<double>(plane, 0.0)};
  for (std::size_t k = 0; k < acts.c; ++k) {
    const T* g = grads.sample(0) + k * plane;
    const T* a = acts.sample(0) + k * plane;
    double alpha = 0.0;
    for (std::size_t p = 0; p < plane; ++p) alpha += g[p];
    alpha /= static_cast<double>(plane);
    for (std::size_t p = 0; p < plane; ++p) map.values[p] += alpha * a[p];
  }
  for (auto& v : map.values) v = std::max(v, 0.0);
  return map;
}

/// Min-max scaling into [0, 1]; an all-zero map stays zero and a constant
/// positive map becomes all ones.
inline void normalize_minmax(GrayMap& map) {
  if (map.values.empty()) return;
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double mn = *lo, mx = *hi;
  if (mx > mn) {
    for (auto& v : map.values) v = (v - mn) / (mx - mn);
  } else if (mx > 0.0) {
    std::fill(map.values.begin(), map.values.end(), 1.0);
  } else {
    std::fill(map.values.begin(), map.values.end(), 0.0);
  }
}

/// Half-pixel-centre bilinear resampling of a real-valued map, edge-clamped.
inline GrayMap upsample_bilinear(const GrayMap& map, std::size_t side) {
  GrayMap out{side, side, std::vector<double>(side * side)};
  const double sy_scale = static_cast<double>(map.height) / static_cast<double>(side);
  const double sx_scale = static_cast<double>(map.width) / static_cast<double>(side);
  const auto h = static_cast<std::ptrdiff_t>(map.height), w = static_cast<std::ptrdiff_t>(map.width);
  for (std::size_t r = 0; r < side; ++r) {
    const double sy = (r + 0.5) * sy_scale - 0.5;
    const double fy = std::floor(sy), ty = sy - fy;
    const auto y0 = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(fy), 0, h - 1);
    const auto y1 = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(fy) + 1, 0, h - 1);
    for (std::size_t c = 0; c < side; ++c) {
      const double sx = (c + 0.5) * sx_scale - 0.5;
      const double fx = std::floor(sx), tx = sx - fx;
      const auto x0 = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(fx), 0, w - 1);
      const auto x1 = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(fx) + 1, 0, w - 1);
      auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) { return map.values[static_cast<std::size_t>(y * w + x)]; };
      const double top = at(y0, x0) * (1 - tx) + at(y0, x1) * tx;
      const double bot = at(y1, x0) * (1 - tx) + at(y1, x1) * tx;
      out.values[r * side + c] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

/// Output activations of `layer` and d(target logit)/d(those activations)
/// for a single prepared input.
template <class T>
struct ActivationGrad {
  Tensor4<T> acts;
  Tensor4<T> grads;
};

template <class T>
ActivationGrad<T> activation_gradient(const ModelState<T>& s, const ImageU8& prepared, std::size_t target_class,
                                      std::size_t layer) {
  if (layer > s.depth()) throw std::invalid_argument("gradcam: layer must name the stem (0) or a residual block");
  if (target_class >= kOutputClasses) throw std::invalid_argument("gradcam: invalid target class");
  auto& state = const_cast<ModelState<T>&>(s);  // eval mode, read-only
  const ImageU8* batch[] = {&prepared};
  auto cache = forward(state, to_tensor<T>(batch), Mode::kEval, true);
  std::vector<T> dlogits(kOutputClasses, T(0));
  dlogits[target_class] = T(1);
  BackpropOptions opt;
  opt.param_grads = false;
  opt.capture_layer = layer;
  auto res = backprop(state, cache, dlogits, opt);
  return {cache.acts[layer + 1], std::move(res.captured)};
}

/// GradCAM heatmap at input resolution with values in [0, 1].
/// `layer` defaults to the last residual block.
template <class T>
GrayMap gradcam(const ModelState<T>& s, const ImageU8& crop, PaddingScheme scheme, std::size_t target_class,
                std::optional<std::size_t> layer = std::nullopt) {
  const auto prepared = prepare_input(crop, scheme, s.spec.input_side);
  const auto ag = activation_gradient(s, prepared, target_class, layer.value_or(s.depth()));
  // Rescaling after the upsample keeps a full-scale peak; bilinear weights
  // sum to one, so this equals normalizing first and stretching again.
  GrayMap map = upsample_bilinear(cam_map(ag.acts, ag.grads), s.spec.input_side);
  normalize_minmax(map);
  return map;
}

}  // namespace dcf::nn
