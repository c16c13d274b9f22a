#include <random>

#include <gtest/gtest.h>

#include "hli/aulm.hpp"
#include "oracles.hpp"

using hli::Tensor;

namespace {

Tensor noise_images(int n, int h, int w, std::mt19937_64& rng) {
  Tensor t({n, 3, h, w});
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (double& v : t.data) v = u(rng);
  return t;
}

}  // namespace

TEST(AdaptiveErase, ZeroProbabilityIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor x = noise_images(8, 64, 32, rng);
  std::vector<hli::ImagePoint> pts(8, {10, 20});
  hli::EraseConfig cfg;
  cfg.prob = 0;
  EXPECT_EQ(hli::adaptive_erase(x, pts, cfg, rng).data, x.data);
}

TEST(AdaptiveErase, CertainZeroFillInterior) {
  std::mt19937_64 rng(2);
  const Tensor x = noise_images(1, 64, 32, rng);
  hli::EraseConfig cfg;
  cfg.prob = 1;
  cfg.fill = hli::EraseFill::kZero;
  const hli::ImagePoint p{16, 30};
  const Tensor y = hli::adaptive_erase(x, std::vector<hli::ImagePoint>{p}, cfg, rng);
  int erased = 0;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 64; ++r)
      for (int col = 0; col < 32; ++col) {
        if (r >= 22 && r < 38 && col >= 12 && col < 20) {
          EXPECT_EQ(y.at(0, c, r, col), 0.0);
          ++erased;
        } else {
          EXPECT_EQ(y.at(0, c, r, col), x.at(0, c, r, col));
        }
      }
  EXPECT_EQ(erased, 3 * 16 * 8);
}

TEST(AdaptiveErase, MatchesPerPixelReferenceWithClipping) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> eh(1, 64), ew(1, 32), py(0, 63), px(0, 31), edge(0, 3);
  for (int trial = 0; trial < 500; ++trial) {
    const Tensor x = noise_images(1, 64, 32, rng);
    hli::EraseConfig cfg;
    cfg.prob = 1;
    cfg.fill = hli::EraseFill::kDatasetMean;
    cfg.channel_mean = {0.25, 0.5, 0.75};
    cfg.erase_h = eh(rng);
    cfg.erase_w = ew(rng);
    hli::ImagePoint p{px(rng), py(rng)};
    // Bias a share of the cases onto corners and edges.
    switch (edge(rng)) {
      case 0: p = {0, 0}; break;
      case 1: p = {31, 63}; break;
      case 2: p.x = 0; break;
      default: break;
    }
    std::mt19937_64 draw(trial);
    const Tensor y = hli::adaptive_erase(x, std::vector<hli::ImagePoint>{p}, cfg, draw);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 64; ++r)
        for (int col = 0; col < 32; ++col) {
          const double expected =
              oracle::in_erase_box(r, col, p, cfg.erase_h, cfg.erase_w, 64, 32) ? cfg.channel_mean[c] : x.at(0, c, r, col);
          ASSERT_EQ(y.at(0, c, r, col), expected) << "trial " << trial;
        }
  }
}

TEST(AdaptiveErase, FrequencyMatchesProbability) {
  std::mt19937_64 rng(4);
  const Tensor x({10000, 3, 8, 8}, 0.5);
  std::vector<hli::ImagePoint> pts(10000, {4, 4});
  hli::EraseConfig cfg;
  cfg.prob = 0.4;
  cfg.erase_h = 2;
  cfg.erase_w = 2;
  std::vector<char> erased;
  hli::adaptive_erase(x, pts, cfg, rng, &erased);
  const double rate = std::count(erased.begin(), erased.end(), char{1}) / 10000.0;
  EXPECT_GE(rate, 0.38);
  EXPECT_LE(rate, 0.42);
}

TEST(AdaptiveErase, SameRngStateSameResult) {
  std::mt19937_64 rng(5);
  const Tensor x = noise_images(6, 64, 32, rng);
  std::vector<hli::ImagePoint> pts(6, {5, 9});
  hli::EraseConfig cfg;
  cfg.fill = hli::EraseFill::kUniformNoise;
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(hli::adaptive_erase(x, pts, cfg, a).data, hli::adaptive_erase(x, pts, cfg, b).data);
}

TEST(AdaptiveErase, DifferentPointsEraseDifferentRegions) {
  std::mt19937_64 rng(6);
  const Tensor x = noise_images(1, 64, 32, rng);
  hli::EraseConfig cfg;
  cfg.prob = 1;
  cfg.fill = hli::EraseFill::kZero;
  std::mt19937_64 a(1), b(1);
  const Tensor y1 = hli::adaptive_erase(x, std::vector<hli::ImagePoint>{{4, 4}}, cfg, a);
  const Tensor y2 = hli::adaptive_erase(x, std::vector<hli::ImagePoint>{{28, 60}}, cfg, b);
  EXPECT_NE(y1.data, y2.data);
}

TEST(AdaptiveErase, RejectsOutOfBoundsPointAndOversizedBox) {
  std::mt19937_64 rng(7);
  const Tensor x = noise_images(1, 64, 32, rng);
  hli::EraseConfig cfg;
  EXPECT_THROW(hli::adaptive_erase(x, std::vector<hli::ImagePoint>{{32, 0}}, cfg, rng), hli::Error);
  EXPECT_THROW(hli::adaptive_erase(x, std::vector<hli::ImagePoint>{{0, -1}}, cfg, rng), hli::Error);
  cfg.erase_h = 65;
  EXPECT_THROW(hli::adaptive_erase(x, std::vector<hli::ImagePoint>{{0, 0}}, cfg, rng), hli::Error);
}

TEST(EraseFill, ParseRoundTrip) {
  for (auto f : {hli::EraseFill::kDatasetMean, hli::EraseFill::kZero, hli::EraseFill::kUniformNoise}) {
    EXPECT_EQ(hli::parse_erase_fill(hli::to_string(f)), f);
  }
  EXPECT_THROW(hli::parse_erase_fill("blue"), hli::Error);
}

TEST(RandomPoints, InsideImage) {
  std::mt19937_64 rng(8);
  for (const auto& p : hli::random_points(1000, 64, 32, rng)) {
    EXPECT_GE(p.x, 0);
    EXPECT_LT(p.x, 32);
    EXPECT_GE(p.y, 0);
    EXPECT_LT(p.y, 64);
  }
}
