#include <gtest/gtest.h>

#include <random>

#include "dcf/nn/checkpoint.hpp"
#include "dcf/nn/gradcam.hpp"
#include "oracles.hpp"

using namespace dcf;
using namespace dcf::nn;

namespace {

ImageU8 noise_crop(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  ImageU8 img(h, w);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(byte(rng));
  return img;
}

}  // namespace

TEST(CamMap, HandComputed) {
  Tensor4<double> a(1, 2, 1, 2), g(1, 2, 1, 2);
  a.data = {1.0, 3.0, 2.0, -1.0};
  g.data = {1.0, 1.0, -2.0, 0.0};  // alpha = (1, -1)
  const auto m = cam_map(a, g);
  ASSERT_EQ(m.values.size(), 2u);
  EXPECT_DOUBLE_EQ(m.values[0], 0.0);  // relu(1 - 2)
  EXPECT_DOUBLE_EQ(m.values[1], 4.0);  // 3 + 1
  EXPECT_THROW(cam_map(a, Tensor4<double>(1, 1, 1, 2)), std::invalid_argument);
}

TEST(CamMap, LastLayerGradientIsHeadWeightOverArea) {
  // With GAP and a dense head, d z_t / d A_k(p) = W[t, k] / (h w).
  auto s = make_model<double>(oracle::toy_spec(), 7);
  const auto img = noise_crop(8, 8, 1);
  for (std::size_t t = 0; t < 2; ++t) {
    const auto ag = activation_gradient(s, img, t, s.depth());
    const double area = static_cast<double>(ag.acts.plane());
    const auto& w = s.param("head.weight").value;
    for (std::size_t k = 0; k < ag.grads.c; ++k)
      for (std::size_t p = 0; p < ag.grads.plane(); ++p)
        EXPECT_NEAR(ag.grads.sample(0)[k * ag.grads.plane() + p], w[t * s.head_in + k] / area, 1e-15);
    const auto m = cam_map(ag.acts, ag.grads);
    for (std::size_t p = 0; p < m.values.size(); ++p) {
      double expect = 0.0;
      for (std::size_t k = 0; k < ag.acts.c; ++k) expect += w[t * s.head_in + k] / area * ag.acts.sample(0)[k * ag.acts.plane() + p];
      EXPECT_NEAR(m.values[p], std::max(expect, 0.0), 1e-12);
    }
  }
}

TEST(CamMap, ActivationGradientMatchesFiniteDifferences) {
  for (std::size_t layer : {0u, 1u})
    for (std::size_t target : {0u, 1u}) {
      const auto c = oracle::check_activation_gradient(21, layer, target);
      EXPECT_LT(c.rel_error, 1e-4) << c.name;
    }
}

TEST(CamMap, RejectsBadArguments) {
  auto s = make_model<double>(oracle::toy_spec(), 7);
  const auto img = noise_crop(8, 8, 1);
  EXPECT_THROW(activation_gradient(s, img, 2, 0), std::invalid_argument);
  EXPECT_THROW(activation_gradient(s, img, 0, s.depth() + 1), std::invalid_argument);
}

TEST(Normalize, Cases) {
  GrayMap m{1, 3, {2.0, 4.0, 3.0}};
  normalize_minmax(m);
  EXPECT_EQ(m.values, (std::vector<double>{0.0, 1.0, 0.5}));
  GrayMap zero{1, 2, {0.0, 0.0}};
  normalize_minmax(zero);
  EXPECT_EQ(zero.values, (std::vector<double>{0.0, 0.0}));
  GrayMap flat{1, 2, {0.3, 0.3}};
  normalize_minmax(flat);
  EXPECT_EQ(flat.values, (std::vector<double>{1.0, 1.0}));
}

TEST(Upsample, ConstantAndHalfPixel) {
  GrayMap c{2, 2, {0.7, 0.7, 0.7, 0.7}};
  for (double v : upsample_bilinear(c, 5).values) EXPECT_DOUBLE_EQ(v, 0.7);
  GrayMap step{1, 2, {0.0, 1.0}};
  const auto u = upsample_bilinear(step, 4);
  // source columns -0.25, 0.25, 0.75, 1.25
  EXPECT_DOUBLE_EQ(u.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(u.at(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(u.at(0, 2), 0.75);
  EXPECT_DOUBLE_EQ(u.at(0, 3), 1.0);
}

TEST(GradCam, RangeAndShape) {
  auto s = make_model<float>(ModelSpec{}, 3);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto crop = noise_crop(12, 70, seed);
    for (std::size_t layer = 0; layer <= s.depth(); ++layer) {
      const auto m = gradcam(s, crop, PaddingScheme::kReflection, seed % 2, layer);
      ASSERT_EQ(m.height, 64u);
      ASSERT_EQ(m.width, 64u);
      for (double v : m.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(GradCam, DoesNotMutateModel) {
  auto s = make_model<float>(ModelSpec{}, 3);
  const auto before = state_checksum(s);
  gradcam(s, noise_crop(10, 50, 1), PaddingScheme::kZero, 1);
  EXPECT_EQ(state_checksum(s), before);
}
