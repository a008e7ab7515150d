#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "dcf/image.hpp"

namespace dcf {

namespace transform_detail {

// Bilinear sample at real (y, x) with edge clamping.
inline double sample(const ImageU8& img, double y, double x, std::size_t ch) {
  const auto h = static_cast<std::int64_t>(img.height());
  const auto w = static_cast<std::int64_t>(img.width());
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  const auto y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(fy), 0, h - 1);
  const auto y1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(fy) + 1, 0, h - 1);
  const auto x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(fx), 0, w - 1);
  const auto x1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(fx) + 1, 0, w - 1);
  const double top = img.at(y0, x0, ch) * (1.0 - tx) + img.at(y0, x1, ch) * tx;
  const double bot = img.at(y1, x0, ch) * (1.0 - tx) + img.at(y1, x1, ch) * tx;
  return top * (1.0 - ty) + bot * ty;
}

inline std::uint8_t round_u8(double v) {
  return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 255.0)));
}

}  // namespace transform_detail

/// Half-pixel-centre bilinear resize of a square image to side x side.
inline ImageU8 resize_bilinear(const ImageU8& img, std::size_t side) {
  if (!img.square()) throw std::invalid_argument("resize_bilinear: input must be square");
  if (side < 1) throw std::invalid_argument("resize_bilinear: side must be >= 1");
  if (side == img.height()) return img;
  const double scale = static_cast<double>(img.height()) / static_cast<double>(side);
  ImageU8 out(side, side);
  for (std::size_t r = 0; r < side; ++r) {
    const double sy = (r + 0.5) * scale - 0.5;
    for (std::size_t c = 0; c < side; ++c) {
      const double sx = (c + 0.5) * scale - 0.5;
      for (std::size_t ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = transform_detail::round_u8(transform_detail::sample(img, sy, sx, ch));
    }
  }
  return out;
}

/// Rotation about the image centre by `degrees` (counter-clockwise), bilinear,
/// out-of-bounds samples clamped to the nearest edge pixel.
inline ImageU8 rotate(const ImageU8& img, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(img.height()) - 1.0) / 2.0;
  const double cx = (static_cast<double>(img.width()) - 1.0) / 2.0;
  ImageU8 out(img.height(), img.width());
  for (std::size_t r = 0; r < img.height(); ++r) {
    const double dy = static_cast<double>(r) - cy;
    for (std::size_t c = 0; c < img.width(); ++c) {
      const double dx = static_cast<double>(c) - cx;
      // inverse mapping: destination -> source
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      for (std::size_t ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = transform_detail::round_u8(transform_detail::sample(img, sy, sx, ch));
    }
  }
  return out;
}

inline constexpr double kMaxAugmentAngle = 15.0;

template <class Urbg>
ImageU8 rotate_random(const ImageU8& img, Urbg& rng, double max_degrees = kMaxAugmentAngle) {
  std::uniform_real_distribution<double> angle(-max_degrees, max_degrees);
  return rotate(img, angle(rng));
}

/// Mean of all channel values normalised to [0, 1].
inline double mean_pixel(const ImageU8& img) {
  std::uint64_t sum = 0;
  for (auto v : img.data()) sum += v;
  return static_cast<double>(sum) / (static_cast<double>(img.data().size()) * 255.0);
}

inline std::vector<std::uint64_t> histogram(const ImageU8& img, std::size_t bins = 256) {
  if (bins == 0 || bins > 256 || 256 % bins != 0)
    throw std::invalid_argument("histogram: bins must divide 256");
  const std::size_t width = 256 / bins;
  std::vector<std::uint64_t> counts(bins, 0);
  for (auto v : img.data()) ++counts[v / width];
  return counts;
}

}  // namespace dcf
