#pragma once

// Layer kernels for the residual classifier. Activations are NCHW.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace dcf::nn {

template <class T>
struct Tensor4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

  std::size_t plane() const { return h * w; }
  std::size_t sample_size() const { return c * h * w; }
  T* sample(std::size_t i) { return data.data() + i * sample_size(); }
  const T* sample(std::size_t i) const { return data.data() + i * sample_size(); }
  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// ---------------------------------------------------------------------------
// Convolution (no bias; always followed by batch norm)

struct ConvGeom {
  std::size_t in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;

  std::size_t out_extent(std::size_t in) const { return (in + 2 * pad - k) / stride + 1; }
  std::size_t patch() const { return in_c * k * k; }
};

namespace layer_detail {

template <class T>
void im2col(const T* x, const ConvGeom& g, std::size_t h, std::size_t w, std::size_t ho, std::size_t wo, T* col) {
  const std::size_t p = ho * wo;
  for (std::size_t ci = 0; ci < g.in_c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* dst = col + ((ci * g.k + ky) * g.k + kx) * p;
        const T* src = x + ci * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          T* drow = dst + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(drow, drow + wo, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            drow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : srow[ix];
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, std::size_t h, std::size_t w, std::size_t ho, std::size_t wo, T* dx) {
  const std::size_t p = ho * wo;
  for (std::size_t ci = 0; ci < g.in_c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* src = col + ((ci * g.k + ky) * g.k + kx) * p;
        T* dst = dx + ci * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * w;
          const T* srow = src + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) drow[ix] += srow[ox];
          }
        }
      }
}

}  // namespace layer_detail

template <class T>
Tensor4<T> conv_forward(const Tensor4<T>& x, const std::vector<T>& weight, const ConvGeom& g) {
  if (x.c != g.in_c) throw std::invalid_argument("conv: channel mismatch");
  const std::size_t ho = g.out_extent(x.h), wo = g.out_extent(x.w), p = ho * wo;
  Tensor4<T> y(x.n, g.out_c, ho, wo);
  std::vector<T> col(g.patch() * p);
  CMapMat<T> wm(weight.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.patch()));
  for (std::size_t i = 0; i < x.n; ++i) {
    layer_detail::im2col(x.sample(i), g, x.h, x.w, ho, wo, col.data());
    CMapMat<T> cm(col.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(p));
    MapMat<T> ym(y.sample(i), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(p));
    ym.noalias() = wm * cm;
  }
  return y;
}

/// Accumulates into `dweight` (when non-null) and writes `dx` (when non-null).
template <class T>
void conv_backward(const Tensor4<T>& x, const std::vector<T>& weight, const ConvGeom& g, const Tensor4<T>& dy,
                   std::vector<T>* dweight, Tensor4<T>* dx) {
  const std::size_t ho = dy.h, wo = dy.w, p = ho * wo;
  std::vector<T> col(g.patch() * p), dcol;
  CMapMat<T> wm(weight.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.patch()));
  if (dx) {
    *dx = Tensor4<T>(x.n, x.c, x.h, x.w);
    dcol.resize(col.size());
  }
  for (std::size_t i = 0; i < x.n; ++i) {
    CMapMat<T> dym(dy.sample(i), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(p));
    if (dweight) {
      layer_detail::im2col(x.sample(i), g, x.h, x.w, ho, wo, col.data());
      CMapMat<T> cm(col.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(p));
      MapMat<T> dwm(dweight->data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.patch()));
      dwm.noalias() += dym * cm.transpose();
    }
    if (dx) {
      MapMat<T> dcm(dcol.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(p));
      dcm.noalias() = wm.transpose() * dym;
      layer_detail::col2im_add(dcol.data(), g, x.h, x.w, ho, wo, dx->sample(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalisation

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <class T>
struct BnCache {
  bool batch_stats = false;
  std::vector<T> x_hat;          // normalised input, same layout as x
  std::vector<double> inv_std;   // per channel
};

/// Train mode with `batch_stats` normalises by batch moments and updates the
/// running estimates; otherwise the running estimates are used.
template <class T>
Tensor4<T> bn_forward(const Tensor4<T>& x, const std::vector<T>& gamma, const std::vector<T>& beta,
                      std::vector<T>& running_mean, std::vector<T>& running_var, bool batch_stats,
                      bool update_running, BnCache<T>* cache) {
  const std::size_t c = x.c, plane = x.plane();
  const double m = static_cast<double>(x.n * plane);
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  std::vector<T> x_hat(cache ? x.data.size() : 0);
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (batch_stats) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.n; ++i) {
        const T* p = x.sample(i) + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) s += p[k];
      }
      mean = s / m;
      double ss = 0.0;
      for (std::size_t i = 0; i < x.n; ++i) {
        const T* p = x.sample(i) + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const double d = p[k] - mean;
          ss += d * d;
        }
      }
      var = ss / m;
      if (update_running) {
        const double unbiased = m > 1.0 ? ss / (m - 1.0) : var;
        running_mean[ch] = static_cast<T>((1.0 - kBnMomentum) * running_mean[ch] + kBnMomentum * mean);
        running_var[ch] = static_cast<T>((1.0 - kBnMomentum) * running_var[ch] + kBnMomentum * unbiased);
      }
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + kBnEps);
    inv_std[ch] = is;
    const T g = gamma[ch], b = beta[ch];
    const T mean_t = static_cast<T>(mean), is_t = static_cast<T>(is);
    for (std::size_t i = 0; i < x.n; ++i) {
      const T* p = x.sample(i) + ch * plane;
      T* q = y.sample(i) + ch * plane;
      T* xh = cache ? x_hat.data() + i * x.sample_size() + ch * plane : nullptr;
      for (std::size_t k = 0; k < plane; ++k) {
        const T h = (p[k] - mean_t) * is_t;
        if (xh) xh[k] = h;
        q[k] = g * h + b;
      }
    }
  }
  if (cache) {
    cache->batch_stats = batch_stats;
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <class T>
void bn_backward(const Tensor4<T>& dy, const std::vector<T>& gamma, const BnCache<T>& cache,
                 std::vector<T>* dgamma, std::vector<T>* dbeta, Tensor4<T>* dx) {
  const std::size_t c = dy.c, plane = dy.plane();
  const double m = static_cast<double>(dy.n * plane);
  if (dx) *dx = Tensor4<T>(dy.n, dy.c, dy.h, dy.w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t i = 0; i < dy.n; ++i) {
      const T* g = dy.sample(i) + ch * plane;
      const T* xh = cache.x_hat.data() + i * dy.sample_size() + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum_dy += g[k];
        sum_dy_xh += static_cast<double>(g[k]) * xh[k];
      }
    }
    if (dgamma) (*dgamma)[ch] += static_cast<T>(sum_dy_xh);
    if (dbeta) (*dbeta)[ch] += static_cast<T>(sum_dy);
    if (!dx) continue;
    const double scale = gamma[ch] * cache.inv_std[ch];
    for (std::size_t i = 0; i < dy.n; ++i) {
      const T* g = dy.sample(i) + ch * plane;
      const T* xh = cache.x_hat.data() + i * dy.sample_size() + ch * plane;
      T* out = dx->sample(i) + ch * plane;
      if (cache.batch_stats) {
        const double mean_dy = sum_dy / m, mean_dy_xh = sum_dy_xh / m;
        for (std::size_t k = 0; k < plane; ++k)
          out[k] = static_cast<T>(scale * (g[k] - mean_dy - xh[k] * mean_dy_xh));
      } else {
        for (std::size_t k = 0; k < plane; ++k) out[k] = static_cast<T>(scale * g[k]);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise, pooling, dense

template <class T>
void relu_inplace(Tensor4<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

/// dy masked by (y > 0), where y is the ReLU output.
template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& y, const Tensor4<T>& dy) {
  Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
  for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] = y.data[i] > T(0) ? dy.data[i] : T(0);
  return dx;
}

/// Global average pool: [n, c, h, w] -> row-major [n, c].
template <class T>
std::vector<T> gap_forward(const Tensor4<T>& x) {
  std::vector<T> out(x.n * x.c);
  const std::size_t plane = x.plane();
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t ch = 0; ch < x.c; ++ch) {
      const T* p = x.sample(i) + ch * plane;
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
      out[i * x.c + ch] = static_cast<T>(s / static_cast<double>(plane));
    }
  return out;
}

template <class T>
Tensor4<T> gap_backward(const std::vector<T>& dy, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  Tensor4<T> dx(n, c, h, w);
  const T inv = static_cast<T>(1.0 / static_cast<double>(h * w));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T g = dy[i * c + ch] * inv;
      T* p = dx.sample(i) + ch * h * w;
      std::fill(p, p + h * w, g);
    }
  return dx;
}

/// y[n, out] = x[n, in] * W^T + b, with W stored [out, in].
template <class T>
std::vector<T> dense_forward(const std::vector<T>& x, std::size_t n, std::size_t in, const std::vector<T>& weight,
                             const std::vector<T>& bias, std::size_t out) {
  std::vector<T> y(n * out);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = bias[o];
      for (std::size_t k = 0; k < in; ++k) s += static_cast<double>(weight[o * in + k]) * x[i * in + k];
      y[i * out + o] = static_cast<T>(s);
    }
  return y;
}

template <class T>
void dense_backward(const std::vector<T>& x, std::size_t n, std::size_t in, const std::vector<T>& weight,
                    std::size_t out, const std::vector<T>& dy, std::vector<T>* dweight, std::vector<T>* dbias,
                    std::vector<T>* dx) {
  if (dx) dx->assign(n * in, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dy[i * out + o];
      if (dbias) (*dbias)[o] += g;
      for (std::size_t k = 0; k < in; ++k) {
        if (dweight) (*dweight)[o * in + k] += g * x[i * in + k];
        if (dx) (*dx)[i * in + k] += g * weight[o * in + k];
      }
    }
}

}  // namespace dcf::nn
