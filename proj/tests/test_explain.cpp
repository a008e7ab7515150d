#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "dcf/explain.hpp"

using namespace dcf;

namespace {

struct Fixture {
  DatasetPair data;
  nn::ModelState<float> model;
  std::vector<std::size_t> idx_a, idx_b;
};

Fixture fixture() {
  GenConfig g;
  g.a = {20, 16, 0.3, 0.6};
  g.b = {12, 18, 0.3, 0.3};
  Fixture f{generate(g), {}, {}, {}};
  nn::ModelSpec spec;
  spec.input_side = 24;
  spec.stem_channels = 4;
  spec.stages = {{4, 1}, {6, 1}};
  f.model = nn::make_model<float>(spec, 5);
  f.idx_a.resize(f.data.a.size());
  std::iota(f.idx_a.begin(), f.idx_a.end(), 0);
  f.idx_b.resize(f.data.b.size());
  std::iota(f.idx_b.begin(), f.idx_b.end(), 0);
  return f;
}

}  // namespace

TEST(Quant, MatchesPerSampleOracle) {
  const auto f = fixture();
  const std::vector<TestSetRef> sets = {{"A", &f.data.a, f.idx_a}, {"B", &f.data.b, f.idx_b}};
  const std::vector<PaddingScheme> schemes = {PaddingScheme::kZero, PaddingScheme::kReflection};
  const auto rows = quant_table(f.model, sets, schemes);
  ASSERT_EQ(rows.size(), 2u * 2u * 2u);
  for (const auto& row : rows) {
    const auto& ds = row.set == "A" ? f.data.a : f.data.b;
    double sum_p = 0.0, sum_c = 0.0;
    std::size_t n = 0, total = 0;
    std::array<std::size_t, 2> hit{}, cnt{};
    for (const auto& it : ds.items) {
      const auto c = nn::confidence(f.model, it.image, row.scheme);
      ++cnt[static_cast<std::size_t>(it.label)];
      if (c.label == it.label) ++hit[static_cast<std::size_t>(it.label)];
      if (it.label != row.label) continue;
      ++total;
      if (c.label != it.label) continue;
      ++n;
      sum_p += mean_pixel(nn::prepare_input(it.image, row.scheme, f.model.spec.input_side));
      sum_c += c.prob;
    }
    EXPECT_EQ(row.n_total, total);
    EXPECT_EQ(row.n_correct, n);
    const double bal = 50.0 * (double(hit[0]) / double(cnt[0]) + double(hit[1]) / double(cnt[1]));
    EXPECT_NEAR(row.accuracy, bal, 1e-9);
    if (n == 0) {
      EXPECT_FALSE(row.avg_mean_pixel.has_value());
      EXPECT_EQ(quant_cell(row), "-");
    } else {
      EXPECT_NEAR(*row.avg_mean_pixel, sum_p / double(n), 1e-9);
      EXPECT_NEAR(*row.avg_confidence, sum_c / double(n), 1e-5);
      EXPECT_GE(*row.avg_confidence, 0.5);
      EXPECT_LE(*row.avg_confidence, 1.0);
    }
  }
}

TEST(Quant, CellAndCsvFormat) {
  QuantRow r{"A", Label::kF2, PaddingScheme::kWhite, 0.4567, 0.98765, 81.5, 3, 4};
  EXPECT_EQ(quant_cell(r), "0.46; 0.988");
  r.avg_mean_pixel.reset();
  r.avg_confidence.reset();
  EXPECT_EQ(quant_cell(r), "-");
  const auto csv = quant_csv(std::vector<QuantRow>{r});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "set,label,scheme,avg_mean_pixel,avg_confidence,accuracy,n_correct,n_total");
  EXPECT_NE(csv.find("A,F2,white,"), std::string::npos);
}

TEST(Quant, RejectsNullDataset) {
  const auto f = fixture();
  const std::vector<TestSetRef> sets = {{"X", nullptr, {}}};
  const std::vector<PaddingScheme> schemes = {PaddingScheme::kZero};
  EXPECT_THROW(quant_table(f.model, sets, schemes), std::invalid_argument);
}

TEST(Profile, ConservesPixelCount) {
  const auto f = fixture();
  for (auto scheme : kAllSchemes) {
    const auto p = padding_profile(f.data.a, f.idx_a, scheme, 32);
    std::uint64_t expect1 = 0, expect2 = 0;
    for (const auto& it : f.data.a.items) {
      const std::uint64_t side = std::max(it.image.height(), it.image.width());
      (it.label == Label::kF1 ? expect1 : expect2) += 3 * side * side;
    }
    EXPECT_EQ(std::accumulate(p.f1.begin(), p.f1.end(), std::uint64_t{0}), expect1);
    EXPECT_EQ(std::accumulate(p.f2.begin(), p.f2.end(), std::uint64_t{0}), expect2);
  }
}

TEST(Profile, ZeroPaddingAddsOnlyBlack) {
  const auto f = fixture();
  const auto zero = padding_profile(f.data.b, f.idx_b, PaddingScheme::kZero);
  const auto white = padding_profile(f.data.b, f.idx_b, PaddingScheme::kWhite);
  for (std::size_t b = 1; b < 255; ++b) {
    EXPECT_EQ(zero.f1[b], white.f1[b]);
    EXPECT_EQ(zero.f2[b], white.f2[b]);
  }
  EXPECT_EQ(zero.f1[0] + zero.f1[255], white.f1[0] + white.f1[255]);
  const auto csv = profile_csv(zero);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 257);
}

TEST(Heat, RampEndpoints) {
  EXPECT_EQ(heat_color(0.0), (Rgb{0, 0, 0}));
  EXPECT_EQ(heat_color(1.0), (Rgb{255, 0, 0}));
  EXPECT_EQ(heat_color(0.5), (Rgb{96, 32, 32}));
  EXPECT_EQ(heat_color(-3.0), heat_color(0.0));
  EXPECT_EQ(heat_color(7.0), heat_color(1.0));
  GrayMap m{1, 3, {0.0, 0.5, 1.0}};
  EXPECT_EQ(heatmap_bytes(m), (std::vector<std::uint8_t>{0, 128, 255}));
}

TEST(Heat, OverlayOfEmptyMapHalvesInput) {
  ImageU8 img(2, 2);
  for (std::size_t i = 0; i < img.data().size(); ++i) img.data()[i] = static_cast<std::uint8_t>(i * 23);
  const auto o = overlay(img, GrayMap{2, 2, std::vector<double>(4, 0.0)});
  for (std::size_t i = 0; i < img.data().size(); ++i)
    EXPECT_EQ(o.data()[i], static_cast<std::uint8_t>(std::lround(0.5 * img.data()[i])));
  EXPECT_THROW(overlay(img, GrayMap{1, 2, {0.0, 0.0}}), std::invalid_argument);
}

TEST(Report, WritesThreeFilesPerSampleAndIndex) {
  const auto f = fixture();
  std::vector<ExplainSample> samples;
  for (std::size_t i = 0; i < 3; ++i) samples.push_back({"s" + std::to_string(i), f.data.b.items[i].image, f.data.b.items[i].label});
  const auto dir = std::filesystem::temp_directory_path() / "dcf_test_gradcam";
  std::filesystem::remove_all(dir);
  const auto doc = gradcam_report(f.model, samples, PaddingScheme::kReflection, dir);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 3u * samples.size() + 1u);
  ASSERT_EQ(doc["samples"].size(), 3u);
  EXPECT_EQ(doc["scheme"], "reflection");
  for (const auto& s : doc["samples"]) {
    std::size_t h = 0, w = 0;
    const auto bytes = read_pgm(dir / s["heatmap"].get<std::string>(), h, w);
    EXPECT_EQ(h, 24u);
    EXPECT_EQ(w, 24u);
    const auto mx = *std::max_element(bytes.begin(), bytes.end());
    EXPECT_TRUE(mx == 0 || mx == 255);
    const auto input = read_ppm(dir / s["input"].get<std::string>());
    EXPECT_EQ(input, nn::prepare_input(samples[std::stoul(s["id"].get<std::string>().substr(1))].crop,
                                       PaddingScheme::kReflection, 24));
    EXPECT_GT(s["confidence"].get<double>(), 0.49);
  }
  std::ifstream in(dir / "index.json");
  EXPECT_EQ(nlohmann::json::parse(in), doc);
  std::filesystem::remove_all(dir);
}
