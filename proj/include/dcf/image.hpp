#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcf {

using Rgb = std::array<std::uint8_t, 3>;

/// H x W x 3 interleaved 8-bit raster, row-major.
class ImageU8 {
public:
  static constexpr std::size_t kChannels = 3;

  ImageU8() = default;

  ImageU8(std::size_t height, std::size_t width, Rgb fill = {0, 0, 0})
      : height_(height), width_(width) {
    check_dims(height, width);
    data_.resize(height * width * kChannels);
    for (std::size_t i = 0; i < height * width; ++i) {
      data_[i * 3 + 0] = fill[0];
      data_[i * 3 + 1] = fill[1];
      data_[i * 3 + 2] = fill[2];
    }
  }

  ImageU8(std::size_t height, std::size_t width, std::vector<std::uint8_t> data)
      : height_(height), width_(width), data_(std::move(data)) {
    check_dims(height, width);
    if (data_.size() != height * width * kChannels)
      throw std::invalid_argument("ImageU8: data length must equal H*W*3");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return kChannels; }
  bool empty() const noexcept { return data_.empty(); }
  bool square() const noexcept { return height_ == width_; }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  std::uint8_t at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data_[(row * width_ + col) * kChannels + ch];
  }
  std::uint8_t& at(std::size_t row, std::size_t col, std::size_t ch) {
    return data_[(row * width_ + col) * kChannels + ch];
  }

  Rgb pixel(std::size_t row, std::size_t col) const {
    const auto* p = &data_[(row * width_ + col) * kChannels];
    return {p[0], p[1], p[2]};
  }
  void set_pixel(std::size_t row, std::size_t col, Rgb v) {
    auto* p = &data_[(row * width_ + col) * kChannels];
    p[0] = v[0];
    p[1] = v[1];
    p[2] = v[2];
  }

  std::span<const std::uint8_t> row(std::size_t r) const {
    return std::span<const std::uint8_t>(data_).subspan(r * width_ * kChannels, width_ * kChannels);
  }
  std::span<std::uint8_t> row(std::size_t r) {
    return std::span<std::uint8_t>(data_).subspan(r * width_ * kChannels, width_ * kChannels);
  }

  friend bool operator==(const ImageU8&, const ImageU8&) = default;

private:
  static void check_dims(std::size_t h, std::size_t w) {
    if (h < 1 || w < 1) throw std::invalid_argument("ImageU8: height and width must be >= 1");
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Single-channel real-valued map, e.g. a GradCAM heatmap.
struct GrayMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_pnm_int(std::istream& in) {
  skip_pnm_space(in);
  std::size_t v = 0;
  if (!(in >> v)) throw std::runtime_error("pnm: malformed header");
  return v;
}

}  // namespace detail

// Binary PPM (P6, maxval 255).
inline void write_ppm(const std::filesystem::path& path, const ImageU8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data().data()),
            static_cast<std::streamsize>(img.data().size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline ImageU8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw std::runtime_error("not a binary PPM: " + path.string());
  const auto w = detail::read_pnm_int(in);
  const auto h = detail::read_pnm_int(in);
  const auto maxval = detail::read_pnm_int(in);
  if (maxval != 255) throw std::runtime_error("unsupported PPM maxval: " + path.string());
  in.get();
  std::vector<std::uint8_t> data(w * h * 3);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!in) throw std::runtime_error("truncated PPM: " + path.string());
  return ImageU8(h, w, std::move(data));
}

// Binary PGM (P5, maxval 255).
inline void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      std::span<const std::uint8_t> pixels) {
  if (pixels.size() != height * width) throw std::invalid_argument("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& height,
                                          std::size_t& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
  width = detail::read_pnm_int(in);
  height = detail::read_pnm_int(in);
  if (detail::read_pnm_int(in) != 255) throw std::runtime_error("unsupported PGM maxval");
  in.get();
  std::vector<std::uint8_t> data(width * height);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!in) throw std::runtime_error("truncated PGM: " + path.string());
  return data;
}

}  // namespace dcf
