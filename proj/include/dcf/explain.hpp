#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcf/image.hpp"
#include "dcf/nn/gradcam.hpp"
#include "dcf/nn/train.hpp"
#include "dcf/padding.hpp"
#include "dcf/synthdata.hpp"
#include "dcf/transform.hpp"

namespace dcf {

/// A labelled subset of a dataset, e.g. its test split.
struct TestSetRef {
  std::string id;
  const TemporalDataset* dataset = nullptr;
  std::vector<std::size_t> indices;
};

struct QuantRow {
  std::string set;
  Label label = Label::kF1;
  PaddingScheme scheme = PaddingScheme::kZero;
  std::optional<double> avg_mean_pixel;  // over correct predictions only
  std::optional<double> avg_confidence;
  double accuracy = 0.0;  // balanced accuracy of the whole set under this scheme
  std::size_t n_correct = 0;
  std::size_t n_total = 0;
};

/// Mean pixel value and confidence of the correctly predicted samples, per
/// (set, scheme, label). Mean pixel is measured on the padded and resized
/// network input.
template <class T>
std::vector<QuantRow> quant_table(const nn::ModelState<T>& s, std::span<const TestSetRef> sets,
                                  std::span<const PaddingScheme> schemes, std::size_t workers = worker_count()) {
  std::vector<QuantRow> rows;
  for (const auto& set : sets) {
    if (!set.dataset) throw std::invalid_argument("quant_table: null dataset for " + set.id);
    for (PaddingScheme scheme : schemes) {
      const auto prepared = nn::prepare_set(*set.dataset, set.indices, scheme, s.spec.input_side, workers);
      const auto logits = nn::predict_logits(s, prepared.images);
      std::vector<std::size_t> pred(prepared.size());
      for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = nn::argmax2(logits[2 * i], logits[2 * i + 1]);
      const double acc = nn::accuracy_from_predictions(prepared.labels, pred).balanced;
      for (Label label : {Label::kF1, Label::kF2}) {
        QuantRow row{set.id, label, scheme, std::nullopt, std::nullopt, acc, 0, 0};
        double sum_p = 0.0, sum_c = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
          if (prepared.labels[i] != static_cast<std::size_t>(label)) continue;
          ++row.n_total;
          if (pred[i] != prepared.labels[i]) continue;
          ++row.n_correct;
          sum_p += mean_pixel(prepared.images[i]);
          sum_c += nn::confidence_from_logits(logits[2 * i], logits[2 * i + 1]).prob;
        }
        if (row.n_correct > 0) {
          row.avg_mean_pixel = sum_p / static_cast<double>(row.n_correct);
          row.avg_confidence = sum_c / static_cast<double>(row.n_correct);
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

inline std::string quant_csv(std::span<const QuantRow> rows) {
  std::ostringstream out;
  out << "set,label,scheme,avg_mean_pixel,avg_confidence,accuracy,n_correct,n_total\n";
  out.setf(std::ios::fixed);
  for (const auto& r : rows) {
    out << r.set << ',' << to_string(r.label) << ',' << to_string(r.scheme) << ',';
    out.precision(6);
    if (r.avg_mean_pixel) out << *r.avg_mean_pixel;
    out << ',';
    if (r.avg_confidence) out << *r.avg_confidence;
    out.precision(4);
    out << ',' << r.accuracy << ',' << r.n_correct << ',' << r.n_total << '\n';
  }
  return out.str();
}

/// Cell text "p; c" with two and three decimals, "-" when nothing was correct.
inline std::string quant_cell(const QuantRow& r) {
  if (!r.avg_mean_pixel || !r.avg_confidence) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f; %.3f", *r.avg_mean_pixel, *r.avg_confidence);
  return buf;
}

/// Wide text table: one row per (set, label), one column pair per scheme.
inline std::string format_quant_table(std::span<const QuantRow> rows) {
  std::vector<std::string> sets;
  std::vector<PaddingScheme> schemes;
  for (const auto& r : rows) {
    if (std::find(sets.begin(), sets.end(), r.set) == sets.end()) sets.push_back(r.set);
    if (std::find(schemes.begin(), schemes.end(), r.scheme) == schemes.end()) schemes.push_back(r.scheme);
  }
  auto find = [&](const std::string& set, Label l, PaddingScheme s) -> const QuantRow* {
    for (const auto& r : rows)
      if (r.set == set && r.label == l && r.scheme == s) return &r;
    return nullptr;
  };
  std::ostringstream out;
  out << "set | label";
  for (auto s : schemes) out << " | " << to_string(s) << " avg(p; Mc) | Macc";
  out << '\n';
  for (const auto& set : sets)
    for (Label l : {Label::kF1, Label::kF2}) {
      out << set << " | " << to_string(l);
      for (auto s : schemes) {
        const QuantRow* r = find(set, l, s);
        char acc[16] = "-";
        if (r) std::snprintf(acc, sizeof acc, "%.2f", r->accuracy);
        out << " | " << (r ? quant_cell(*r) : "-") << " | " << acc;
      }
      out << '\n';
    }
  return out.str();
}

// ---------------------------------------------------------------------------
// Pixel-frequency profiles

struct PaddingProfile {
  PaddingScheme scheme = PaddingScheme::kZero;
  std::size_t bins = 256;
  std::vector<std::uint64_t> f1, f2;  // summed histograms per label
};

/// Sums the histograms of the padded crops (native resolution, before
/// resizing) per label.
inline PaddingProfile padding_profile(const TemporalDataset& ds, std::span<const std::size_t> indices,
                                      PaddingScheme scheme, std::size_t bins = 256) {
  PaddingProfile p{scheme, bins, std::vector<std::uint64_t>(bins, 0), std::vector<std::uint64_t>(bins, 0)};
  for (std::size_t idx : indices) {
    const Item& it = ds.items.at(idx);
    const auto h = histogram(pad_square(it.image, scheme), bins);
    auto& dst = it.label == Label::kF1 ? p.f1 : p.f2;
    for (std::size_t b = 0; b < bins; ++b) dst[b] += h[b];
  }
  return p;
}

inline std::string profile_csv(const PaddingProfile& p) {
  std::ostringstream out;
  out << "bin,F1,F2\n";
  for (std::size_t b = 0; b < p.bins; ++b) out << b << ',' << p.f1[b] << ',' << p.f2[b] << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// GradCAM exports

/// Grey-to-red ramp scaled by intensity: 0 -> black, 0.5 -> dim reddish grey,
/// 1 -> pure red.
inline Rgb heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ch = [&](double grey, double red) {
    return static_cast<std::uint8_t>(std::lround(v * ((1.0 - v) * grey + v * red)));
  };
  return {ch(128.0, 255.0), ch(128.0, 0.0), ch(128.0, 0.0)};
}

inline std::vector<std::uint8_t> heatmap_bytes(const GrayMap& map) {
  std::vector<std::uint8_t> out(map.values.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map.values[i], 0.0, 1.0) * 255.0));
  return out;
}

/// 0.5 * input + 0.5 * colorized heatmap, rounded.
inline ImageU8 overlay(const ImageU8& input, const GrayMap& map) {
  if (map.height != input.height() || map.width != input.width())
    throw std::invalid_argument("overlay: heatmap and input differ in size");
  ImageU8 out(input.height(), input.width());
  for (std::size_t r = 0; r < input.height(); ++r)
    for (std::size_t c = 0; c < input.width(); ++c) {
      const Rgb heat = heat_color(map.at(r, c));
      for (std::size_t ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(0.5 * input.at(r, c, ch) + 0.5 * heat[ch]));
    }
  return out;
}

struct ExplainSample {
  std::string id;
  ImageU8 crop;
  Label label = Label::kF1;
};

/// Writes <id>_input.ppm, <id>_heatmap.pgm and <id>_overlay.ppm per sample
/// plus index.json. The heatmap targets the predicted class.
template <class T>
nlohmann::json gradcam_report(const nn::ModelState<T>& s, std::span<const ExplainSample> samples, PaddingScheme scheme,
                              const std::filesystem::path& out_dir, std::optional<std::size_t> layer = std::nullopt) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw std::runtime_error("gradcam_report: cannot create " + out_dir.string());
  nlohmann::json index = nlohmann::json::array();
  for (const auto& sample : samples) {
    const ImageU8 input = nn::prepare_input(sample.crop, scheme, s.spec.input_side);
    const auto conf = nn::confidence(s, sample.crop, scheme);
    const GrayMap heat = nn::gradcam(s, sample.crop, scheme, static_cast<std::size_t>(conf.label), layer);
    const std::string in_name = sample.id + "_input.ppm";
    const std::string heat_name = sample.id + "_heatmap.pgm";
    const std::string over_name = sample.id + "_overlay.ppm";
    write_ppm(out_dir / in_name, input);
    write_pgm(out_dir / heat_name, heat.height, heat.width, heatmap_bytes(heat));
    write_ppm(out_dir / over_name, overlay(input, heat));
    index.push_back({{"id", sample.id},
                     {"input", in_name},
                     {"heatmap", heat_name},
                     {"overlay", over_name},
                     {"true_label", std::string(to_string(sample.label))},
                     {"predicted_label", std::string(to_string(conf.label))},
                     {"confidence", conf.prob}});
  }
  nlohmann::json doc = {{"scheme", std::string(to_string(scheme))}, {"samples", index}};
  std::ofstream out(out_dir / "index.json");
  if (!out) throw std::runtime_error("gradcam_report: cannot write index.json in " + out_dir.string());
  out << doc.dump(2) << '\n';
  return doc;
}

}  // namespace dcf
