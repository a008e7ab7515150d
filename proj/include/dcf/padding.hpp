#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dcf/color.hpp"
#include "dcf/image.hpp"

namespace dcf {

enum class PaddingScheme { kZero, kRgbMean, kLabMean, kWhite, kGrey, kReflection };

inline constexpr std::array<PaddingScheme, 6> kAllSchemes = {
    PaddingScheme::kZero,  PaddingScheme::kRgbMean, PaddingScheme::kLabMean,
    PaddingScheme::kWhite, PaddingScheme::kGrey,    PaddingScheme::kReflection,
};

inline std::string_view to_string(PaddingScheme s) {
  switch (s) {
    case PaddingScheme::kZero: return "zero";
    case PaddingScheme::kRgbMean: return "rgb-mean";
    case PaddingScheme::kLabMean: return "lab-mean";
    case PaddingScheme::kWhite: return "white";
    case PaddingScheme::kGrey: return "grey";
    case PaddingScheme::kReflection: return "reflection";
  }
  return "?";
}

inline std::optional<PaddingScheme> parse_scheme(std::string_view name) {
  for (auto s : kAllSchemes)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

enum class PadAxis { kNone, kVertical, kHorizontal };

/// Pad amounts along the short axis. `before` is P_t (or left), `after` is P_b (or right).
struct PadGeometry {
  std::size_t before = 0;
  std::size_t after = 0;
  PadAxis axis = PadAxis::kNone;

  std::size_t total() const { return before + after; }
};

inline PadGeometry pad_geometry(std::size_t height, std::size_t width) {
  if (height == width) return {};
  const std::size_t diff = height < width ? width - height : height - width;
  const std::size_t before = diff / 2;
  return {before, diff - before, height < width ? PadAxis::kVertical : PadAxis::kHorizontal};
}

/// Symmetric-extension fold of offset `k` into [0, n): ...2,1,0 | 0,1,2 | 2,1,0...
/// Periodic in 2n and reflect_index(k) == reflect_index(-1-k).
inline std::size_t reflect_index(std::int64_t k, std::size_t n) {
  if (n == 0) throw std::invalid_argument("reflect_index: extent must be >= 1");
  const auto period = static_cast<std::int64_t>(2 * n);
  const std::int64_t m = ((k % period) + period) % period;
  return static_cast<std::size_t>(m < static_cast<std::int64_t>(n) ? m : period - 1 - m);
}

inline Rgb rgb_mean(const ImageU8& img) {
  std::array<std::uint64_t, 3> sum{};
  const auto data = img.data();
  for (std::size_t i = 0; i < data.size(); i += 3) {
    sum[0] += data[i];
    sum[1] += data[i + 1];
    sum[2] += data[i + 2];
  }
  const double n = static_cast<double>(img.height() * img.width());
  Rgb out{};
  for (int c = 0; c < 3; ++c) out[c] = static_cast<std::uint8_t>(std::round(sum[c] / n));
  return out;
}

/// Per-channel CIELAB mean of the image, converted back to 8-bit sRGB.
inline Rgb lab_mean(const ImageU8& img) {
  double sl = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < img.width(); ++c) {
      const Lab lab = rgb_to_lab(img.pixel(r, c));
      sl += lab.L;
      sa += lab.a;
      sb += lab.b;
    }
  const double n = static_cast<double>(img.height() * img.width());
  return lab_to_rgb({sl / n, sa / n, sb / n});
}

/// Fill colour of a constant-fill scheme; nullopt for reflection.
inline std::optional<Rgb> fill_value(const ImageU8& img, PaddingScheme scheme) {
  switch (scheme) {
    case PaddingScheme::kZero: return Rgb{0, 0, 0};
    case PaddingScheme::kWhite: return Rgb{255, 255, 255};
    case PaddingScheme::kGrey: return Rgb{128, 128, 128};
    case PaddingScheme::kRgbMean: return rgb_mean(img);
    case PaddingScheme::kLabMean: return lab_mean(img);
    case PaddingScheme::kReflection: return std::nullopt;
  }
  return std::nullopt;
}

/// Pads the short axis so the result is S x S with S = max(H, W). The crop
/// sits at offset P_t = floor(|W-H|/2) along the padded axis.
inline ImageU8 pad_square(const ImageU8& img, PaddingScheme scheme) {
  const auto geo = pad_geometry(img.height(), img.width());
  if (geo.axis == PadAxis::kNone) return img;

  const std::size_t side = std::max(img.height(), img.width());
  const auto fill = fill_value(img, scheme);
  ImageU8 out(side, side, fill.value_or(Rgb{0, 0, 0}));
  const auto before = static_cast<std::int64_t>(geo.before);

  if (geo.axis == PadAxis::kVertical) {
    for (std::size_t r = 0; r < side; ++r) {
      const std::int64_t k = static_cast<std::int64_t>(r) - before;
      const bool interior = k >= 0 && k < static_cast<std::int64_t>(img.height());
      if (!interior && fill) continue;
      const auto src = img.row(reflect_index(k, img.height()));
      std::copy(src.begin(), src.end(), out.row(r).begin());
    }
  } else {
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c) {
        const std::int64_t k = static_cast<std::int64_t>(c) - before;
        const bool interior = k >= 0 && k < static_cast<std::int64_t>(img.width());
        if (!interior && fill) continue;
        out.set_pixel(r, c, img.pixel(r, reflect_index(k, img.width())));
      }
  }
  return out;
}

}  // namespace dcf
