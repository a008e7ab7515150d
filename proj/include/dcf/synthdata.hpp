#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcf/image.hpp"
#include "dcf/util.hpp"

namespace dcf {

enum class Label : std::uint8_t { kF1 = 0, kF2 = 1 };

inline constexpr std::size_t kNumClasses = 2;

inline std::string_view to_string(Label l) { return l == Label::kF1 ? "F1" : "F2"; }

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "F1") return Label::kF1;
  if (s == "F2") return Label::kF2;
  return std::nullopt;
}

struct Item {
  ImageU8 image;
  Label label = Label::kF1;
  std::int64_t timestamp = 0;
};

struct TemporalDataset {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<Item> items;

  std::size_t size() const { return items.size(); }
  std::size_t count(Label l) const {
    return static_cast<std::size_t>(
        std::count_if(items.begin(), items.end(), [l](const Item& it) { return it.label == l; }));
  }
};

/// Throws if timestamps are not strictly increasing or a label is missing.
inline void validate(const TemporalDataset& ds) {
  for (std::size_t i = 1; i < ds.items.size(); ++i)
    if (ds.items[i].timestamp <= ds.items[i - 1].timestamp)
      throw std::invalid_argument("dataset " + ds.name + ": timestamps must be strictly increasing");
  if (ds.count(Label::kF1) == 0 || ds.count(Label::kF2) == 0)
    throw std::invalid_argument("dataset " + ds.name + ": both labels must be present");
}

// ---------------------------------------------------------------------------
// Generation

/// Gaussian over one pattern parameter.
struct ParamDist {
  double mean = 0.0;
  double sd = 0.0;
};

/// Per-class pattern distribution: dot pitch (fraction of crop height) and
/// dot radius (fraction of pitch), plus additive pixel noise.
struct PatternDist {
  ParamDist pitch;
  ParamDist radius;
  double noise_sd = 0.0;
};

struct DatasetGenSpec {
  std::size_t f1_count = 0;
  std::size_t f2_count = 0;
  double tail_fraction = 0.25;  // size of the chronologically last block
  double tail_f1_share = 0.5;   // share of F1 inside that block
};

struct GenConfig {
  std::uint64_t seed = 20240101;
  DatasetGenSpec a{300, 290, 0.292, 0.81};
  DatasetGenSpec b{130, 180, 0.264, 0.27};
  std::size_t height_min = 10;
  std::size_t height_max = 18;
  double aspect_min = 4.0;
  double aspect_max = 8.0;
  double drift = 1.0;
  double noise = 6.0;
  std::size_t blur_radius = 1;
  double gain_min = 0.85;
  double gain_max = 1.15;
};

inline void validate(const GenConfig& cfg) {
  auto check_ds = [](const DatasetGenSpec& d, const char* name) {
    if (d.f1_count < 5 || d.f2_count < 5)
      throw std::invalid_argument(std::string("gen: dataset ") + name + " needs >= 5 items per label");
    if (!(d.tail_fraction > 0.0 && d.tail_fraction < 1.0))
      throw std::invalid_argument(std::string("gen: dataset ") + name + " tail_fraction must be in (0,1)");
    if (!(d.tail_f1_share >= 0.0 && d.tail_f1_share <= 1.0))
      throw std::invalid_argument(std::string("gen: dataset ") + name + " tail_f1_share must be in [0,1]");
  };
  check_ds(cfg.a, "A");
  check_ds(cfg.b, "B");
  if (cfg.height_min < 2 || cfg.height_max < cfg.height_min)
    throw std::invalid_argument("gen: invalid crop height range");
  if (!(cfg.aspect_min > 1.0) || cfg.aspect_max < cfg.aspect_min)
    throw std::invalid_argument("gen: aspect ratio range must be > 1");
  if (!(cfg.drift >= 0.0)) throw std::invalid_argument("gen: drift must be >= 0");
  if (!(cfg.noise >= 0.0)) throw std::invalid_argument("gen: noise must be >= 0");
  if (!(cfg.gain_min > 0.0) || cfg.gain_max < cfg.gain_min)
    throw std::invalid_argument("gen: invalid illumination gain range");
}

/// Pattern distribution of `label` in dataset 0 (A) or 1 (B). Dataset B
/// shifts both classes toward sparser, thinner dots by `drift` and raises
/// the noise level.
inline PatternDist pattern_dist(const GenConfig& cfg, int dataset, Label label) {
  PatternDist d = label == Label::kF1 ? PatternDist{{0.45, 0.03}, {0.36, 0.025}, cfg.noise}
                                      : PatternDist{{0.32, 0.03}, {0.28, 0.025}, cfg.noise};
  if (dataset == 1) {
    d.pitch.mean -= 0.12 * cfg.drift;
    d.radius.mean -= 0.07 * cfg.drift;
    d.noise_sd = cfg.noise * (1.0 + 0.5 * cfg.drift);
  }
  return d;
}

inline double symmetric_kl(const ParamDist& p, const ParamDist& q) {
  const double vp = p.sd * p.sd, vq = q.sd * q.sd;
  const double dm = p.mean - q.mean;
  const double kl_pq = 0.5 * (vp / vq + dm * dm / vq - 1.0 + std::log(vq / vp));
  const double kl_qp = 0.5 * (vq / vp + dm * dm / vp - 1.0 + std::log(vp / vq));
  return kl_pq + kl_qp;
}

/// Symmetric KL between A's and B's pattern-parameter distributions, summed
/// over classes and the two geometric parameters.
inline double drift_divergence(const GenConfig& cfg) {
  double total = 0.0;
  for (Label l : {Label::kF1, Label::kF2}) {
    const auto a = pattern_dist(cfg, 0, l);
    const auto b = pattern_dist(cfg, 1, l);
    total += symmetric_kl(a.pitch, b.pitch) + symmetric_kl(a.radius, b.radius);
  }
  return total;
}

inline std::size_t ceil_count(double fraction, std::size_t n) {
  // guards against 0.3 * 10 = 3.0000000000000004
  const double raw = fraction * static_cast<double>(n);
  const double near = std::round(raw);
  const double v = std::abs(raw - near) < 1e-9 ? near : std::ceil(raw);
  return static_cast<std::size_t>(v);
}

namespace synth_detail {

inline void box_blur(std::vector<double>& plane, std::size_t h, std::size_t w, std::size_t radius) {
  if (radius == 0) return;
  std::vector<double> tmp(plane.size());
  const auto r = static_cast<std::int64_t>(radius);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::int64_t k = -r; k <= r; ++k) {
        const auto xx = std::clamp<std::int64_t>(static_cast<std::int64_t>(x) + k, 0, static_cast<std::int64_t>(w) - 1);
        s += plane[y * w + static_cast<std::size_t>(xx)];
      }
      tmp[y * w + x] = s / static_cast<double>(2 * r + 1);
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::int64_t k = -r; k <= r; ++k) {
        const auto yy = std::clamp<std::int64_t>(static_cast<std::int64_t>(y) + k, 0, static_cast<std::int64_t>(h) - 1);
        s += tmp[static_cast<std::size_t>(yy) * w + x];
      }
      plane[y * w + x] = s / static_cast<double>(2 * r + 1);
    }
}

}  // namespace synth_detail

/// Renders one dot-matrix code crop.
inline ImageU8 render_crop(const GenConfig& cfg, const PatternDist& dist, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> height_d(cfg.height_min, cfg.height_max);
  std::uniform_real_distribution<double> aspect_d(cfg.aspect_min, cfg.aspect_max);
  std::uniform_real_distribution<double> gain_d(cfg.gain_min, cfg.gain_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t h = height_d(rng);
  const auto w = static_cast<std::size_t>(std::max(2.0, std::round(static_cast<double>(h) * aspect_d(rng))));
  const double pitch_frac = std::clamp(dist.pitch.mean + dist.pitch.sd * gauss(rng), 0.08, 0.6);
  const double radius_frac = std::clamp(dist.radius.mean + dist.radius.sd * gauss(rng), 0.05, 0.5);
  const double pitch = std::max(1.5, pitch_frac * static_cast<double>(h));
  const double radius = radius_frac * pitch;
  const double gain = gain_d(rng);
  const std::size_t blur = cfg.blur_radius == 0 ? 0 : std::uniform_int_distribution<std::size_t>(0, cfg.blur_radius)(rng);

  const double bg[3] = {210.0 * gain, 200.0 * gain, 185.0 * gain};
  const double ink[3] = {45.0 * gain, 40.0 * gain, 52.0 * gain};

  // dot grid, centred in both directions, ~15% of dots missing
  const auto rows = static_cast<std::size_t>(std::max(1.0, std::floor(static_cast<double>(h) / pitch)));
  const auto cols = static_cast<std::size_t>(std::max(1.0, std::floor(static_cast<double>(w) / pitch)));
  const double oy = (static_cast<double>(h) - static_cast<double>(rows) * pitch) / 2.0 + pitch / 2.0;
  const double ox = (static_cast<double>(w) - static_cast<double>(cols) * pitch) / 2.0 + pitch / 2.0;
  struct Dot { double y, x; bool on; };
  std::vector<Dot> dots(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double jy = 0.08 * pitch * gauss(rng), jx = 0.08 * pitch * gauss(rng);
      dots[r * cols + c] = {oy + r * pitch + jy, ox + c * pitch + jx, unit(rng) < 0.85};
    }

  std::vector<double> cover(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      const auto gr = static_cast<std::int64_t>(std::floor((py - oy + pitch / 2.0) / pitch));
      const auto gc = static_cast<std::int64_t>(std::floor((px - ox + pitch / 2.0) / pitch));
      double best = 0.0;
      for (std::int64_t dr = -1; dr <= 1; ++dr)
        for (std::int64_t dc = -1; dc <= 1; ++dc) {
          const auto rr = gr + dr, cc = gc + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::int64_t>(rows) || cc >= static_cast<std::int64_t>(cols)) continue;
          const Dot& d = dots[static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc)];
          if (!d.on) continue;
          const double dist_px = std::hypot(py - d.y, px - d.x);
          best = std::max(best, std::clamp(radius + 0.5 - dist_px, 0.0, 1.0));
        }
      cover[y * w + x] = best;
    }
  synth_detail::box_blur(cover, h, w, blur);

  ImageU8 img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double t = cover[y * w + x];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = bg[ch] * (1.0 - t) + ink[ch] * t + dist.noise_sd * gauss(rng);
        img.at(y, x, ch) = static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 255.0)));
      }
    }
  return img;
}

inline TemporalDataset generate_one(const GenConfig& cfg, int dataset) {
  const DatasetGenSpec& spec = dataset == 0 ? cfg.a : cfg.b;
  const std::size_t n = spec.f1_count + spec.f2_count;
  const std::size_t tail = std::min(ceil_count(spec.tail_fraction, n), n - 1);
  auto tail_f1 = static_cast<std::size_t>(std::round(spec.tail_f1_share * static_cast<double>(tail)));
  tail_f1 = std::min({tail_f1, spec.f1_count - 1, tail});
  std::size_t tail_f2 = tail - tail_f1;
  if (tail_f2 >= spec.f2_count) {
    tail_f2 = spec.f2_count - 1;
    tail_f1 = tail - tail_f2;
  }

  // label sequence: shuffled head block, then shuffled tail block
  std::vector<Label> head, tail_labels;
  head.insert(head.end(), spec.f1_count - tail_f1, Label::kF1);
  head.insert(head.end(), spec.f2_count - tail_f2, Label::kF2);
  tail_labels.insert(tail_labels.end(), tail_f1, Label::kF1);
  tail_labels.insert(tail_labels.end(), tail_f2, Label::kF2);
  std::mt19937_64 order_rng(mix_seed(cfg.seed, dataset, 0xA11CE));
  std::shuffle(head.begin(), head.end(), order_rng);
  std::shuffle(tail_labels.begin(), tail_labels.end(), order_rng);
  head.insert(head.end(), tail_labels.begin(), tail_labels.end());

  TemporalDataset ds;
  ds.name = dataset == 0 ? "A" : "B";
  ds.seed = cfg.seed;
  ds.items.resize(n);
  const PatternDist dists[2] = {pattern_dist(cfg, dataset, Label::kF1), pattern_dist(cfg, dataset, Label::kF2)};
  parallel_for(n, [&](std::size_t i) {
    const Label l = head[i];
    ds.items[i] = Item{render_crop(cfg, dists[static_cast<int>(l)], mix_seed(cfg.seed, dataset, i + 1)), l,
                       static_cast<std::int64_t>(i)};
  });
  return ds;
}

struct DatasetPair {
  TemporalDataset a;
  TemporalDataset b;
};

inline DatasetPair generate(const GenConfig& cfg) {
  validate(cfg);
  return {generate_one(cfg, 0), generate_one(cfg, 1)};
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double test_fraction = 0.25;
  std::uint64_t shuffle_seed = 7;
};

/// Indices into the dataset's item list.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Tail time block -> test; the rest is shuffled and split 4:1 into train/val.
inline Split split(const TemporalDataset& ds, const SplitSpec& spec) {
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
    throw std::invalid_argument("split: test_fraction must be in (0,1)");
  const std::size_t n = ds.size();
  if (n < 5) throw std::invalid_argument("split: dataset needs >= 5 items");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return ds.items[x].timestamp < ds.items[y].timestamp;
  });
  const std::size_t n_test = ceil_count(spec.test_fraction, n);
  if (n_test >= n || n - n_test < 2)
    throw std::invalid_argument("split: too few items remain for train/val");

  Split out;
  out.test.assign(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
  std::vector<std::size_t> rest(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test));
  std::mt19937_64 rng(spec.shuffle_seed);
  std::shuffle(rest.begin(), rest.end(), rng);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(rest.size() / 5.0)));
  out.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
  return out;
}

// ---------------------------------------------------------------------------
// On-disk layout: <root>/<name>/img_<idx>.ppm + <root>/<name>/manifest.json

inline std::string item_filename(std::size_t idx) {
  std::string digits = std::to_string(idx);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return "img_" + digits + ".ppm";
}

inline nlohmann::json manifest_json(const TemporalDataset& ds) {
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.items.size(); ++i)
    items.push_back({{"file", item_filename(i)},
                     {"label", std::string(to_string(ds.items[i].label))},
                     {"timestamp", ds.items[i].timestamp}});
  return {{"name", ds.name}, {"seed", ds.seed}, {"items", std::move(items)}};
}

inline void save_dataset(const std::filesystem::path& root, const TemporalDataset& ds) {
  const auto dir = root / ds.name;
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < ds.items.size(); ++i) write_ppm(dir / item_filename(i), ds.items[i].image);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest_json(ds).dump(2) << '\n';
}

inline TemporalDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest: " + (dir / "manifest.json").string());
  const auto j = nlohmann::json::parse(in);
  TemporalDataset ds;
  ds.name = j.at("name").get<std::string>();
  ds.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& it : j.at("items")) {
    const auto label = parse_label(it.at("label").get<std::string>());
    if (!label) throw std::runtime_error("manifest: unknown label in " + dir.string());
    ds.items.push_back({read_ppm(dir / it.at("file").get<std::string>()), *label, it.at("timestamp").get<std::int64_t>()});
  }
  validate(ds);
  return ds;
}

}  // namespace dcf
