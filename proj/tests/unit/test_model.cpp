#include <filesystem>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hli/checkpoint.hpp"
#include "hli/model.hpp"
#include "oracles.hpp"

using hli::Matrix;
using hli::Tensor;

namespace {

hli::ArchConfig tiny_arch() {
  hli::ArchConfig a;
  a.height = 16;
  a.width = 8;
  a.channels = {4, 4, 6, 8};
  a.num_classes = 3;
  return a;
}

Tensor random_images(int n, const hli::ArchConfig& a, std::mt19937_64& rng) {
  Tensor t({n, a.in_channels, a.height, a.width});
  std::uniform_real_distribution<double> u(0, 1);
  for (double& v : t.data) v = u(rng);
  return t;
}

Tensor random_heatmaps(int n, int h, int w, std::mt19937_64& rng, bool with_ties) {
  Tensor t({n, h, w});
  std::uniform_int_distribution<int> small(0, 3);
  std::normal_distribution<double> g(0, 1);
  for (double& v : t.data) v = with_ties ? small(rng) : g(rng);
  return t;
}

}  // namespace

TEST(Network, ShapesAndStride) {
  const hli::Network net(hli::ArchConfig{});
  EXPECT_EQ(net.feature_height(), 8);
  EXPECT_EQ(net.feature_width(), 4);
  EXPECT_EQ(net.stride(), 8);
  EXPECT_EQ(net.embedding_dim(), 64);
  std::mt19937_64 rng(1);
  const auto params = net.init_params(1);
  const auto out = net.forward(params, random_images(64, net.arch(), rng), hli::Mode::kEval);
  EXPECT_EQ(out.embedding.rows(), 64);
  EXPECT_EQ(out.embedding.cols(), 64);
  EXPECT_EQ(out.logits.rows(), 64);
  EXPECT_EQ(out.logits.cols(), 16);
  EXPECT_EQ(out.spatial_map.shape, (std::vector<int>{64, 64, 8, 4}));
}

TEST(Network, EmbeddingIsSpatialMean) {
  const hli::Network net(tiny_arch());
  std::mt19937_64 rng(2);
  const auto params = net.init_params(2);
  const auto out = net.forward(params, random_images(3, net.arch(), rng), hli::Mode::kEval);
  const Tensor& fm = out.spatial_map;
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < fm.dim(1); ++c) {
      double s = 0;
      for (int y = 0; y < fm.dim(2); ++y)
        for (int x = 0; x < fm.dim(3); ++x) s += fm.at(i, c, y, x);
      EXPECT_NEAR(out.embedding(i, c), s / (fm.dim(2) * fm.dim(3)), 1e-12);
    }
}

TEST(Network, ZeroClassifierGivesZeroLogits) {
  const hli::Network net(tiny_arch());
  auto params = net.init_params(3);
  params.get("classifier.weight").fill(0.0);
  params.get("classifier.bias").fill(0.0);
  const Tensor zeros({2, 3, 16, 8}, 0.0);
  const auto out = net.forward(params, zeros, hli::Mode::kEval);
  EXPECT_EQ(out.logits.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Network, RejectsWrongInputShape) {
  const hli::Network net(tiny_arch());
  const auto params = net.init_params(4);
  EXPECT_THROW(net.forward(params, Tensor({2, 3, 8, 8}), hli::Mode::kEval), hli::Error);
}

TEST(Network, DeterministicForward) {
  const hli::Network net(tiny_arch());
  std::mt19937_64 rng(5);
  const auto params = net.init_params(5);
  const Tensor x = random_images(4, net.arch(), rng);
  const auto a = net.forward(params, x, hli::Mode::kTrain);
  const auto b = net.forward(params, x, hli::Mode::kTrain);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.embedding, b.embedding);
}

TEST(Network, InitIsSeeded) {
  const hli::Network net(tiny_arch());
  const auto a = net.init_params(6), b = net.init_params(6), c = net.init_params(7);
  EXPECT_EQ(a.get("block1.conv.weight").data, b.get("block1.conv.weight").data);
  EXPECT_NE(a.get("block1.conv.weight").data, c.get("block1.conv.weight").data);
}

// Every trainable tensor, both normalization modes.
class NetworkGradient : public ::testing::TestWithParam<hli::Mode> {};

TEST_P(NetworkGradient, MatchesCentralDifferences) {
  const hli::Network net(tiny_arch());
  std::mt19937_64 rng(8);
  auto params = net.init_params(8);
  // Move running statistics off their defaults so evaluation mode is non-trivial.
  for (auto& e : params.entries()) {
    if (e.name.find("running_mean") != std::string::npos)
      for (double& v : e.value.data) v = 0.1;
    if (e.name.find("running_var") != std::string::npos)
      for (double& v : e.value.data) v = 0.7;
  }
  const Tensor x = random_images(4, net.arch(), rng);
  const Matrix probe_logits = oracle::random_matrix(4, 3, rng);
  const Matrix probe_emb = oracle::random_matrix(4, 8, rng);
  const hli::Mode mode = GetParam();

  auto objective = [&](const hli::ModelParams& p) {
    const auto out = net.forward(p, x, mode);
    return out.logits.cwiseProduct(probe_logits).sum() + out.embedding.cwiseProduct(probe_emb).sum();
  };

  hli::ForwardCache cache;
  net.forward(params, x, mode, &cache);
  auto grads = params.zeros_like();
  net.backward(params, cache, probe_emb, probe_logits, grads);

  for (std::size_t k = 0; k < params.entries().size(); ++k) {
    auto& entry = params.entries()[k];
    if (!entry.trainable) continue;
    std::vector<double> numeric(entry.value.size());
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double keep = entry.value.data[i];
      const double h = 1e-6;
      entry.value.data[i] = keep + h;
      const double up = objective(params);
      entry.value.data[i] = keep - h;
      const double down = objective(params);
      entry.value.data[i] = keep;
      numeric[i] = (up - down) / (2 * h);
    }
    EXPECT_LT(oracle::relative_error(grads.entries()[k].value.data, numeric), 1e-4) << entry.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, NetworkGradient, ::testing::Values(hli::Mode::kTrain, hli::Mode::kEval));

TEST(Network, RunningStatsFollowMomentum) {
  const hli::Network net(tiny_arch());
  std::mt19937_64 rng(9);
  auto params = net.init_params(9);
  hli::ForwardCache cache;
  net.forward(params, random_images(4, net.arch(), rng), hli::Mode::kTrain, &cache);
  net.update_running_stats(params, cache);
  const auto& mean = params.get("block1.bn.running_mean");
  for (std::size_t c = 0; c < mean.size(); ++c) EXPECT_NEAR(mean.data[c], 0.1 * cache.blocks[0].mean[c], 1e-12);
}

TEST(Cam, ZeroWeightsGiveZeroHeatmap) {
  hli::FeatureBundle b;
  std::mt19937_64 rng(10);
  b.spatial_map = Tensor({2, 3, 4, 2});
  for (double& v : b.spatial_map.data) v = std::normal_distribution<double>()(rng);
  hli::ModelParams p;
  p.add("classifier.weight", Tensor({5, 3}, 0.0), true);
  p.add("classifier.bias", Tensor({5}, 0.0), true);
  const auto hm = hli::compute_cam(b, p, std::vector<int>{1, 4});
  for (double v : hm.data) EXPECT_EQ(v, 0.0);
}

TEST(Cam, UnitWeightSingleChannelIsIdentity) {
  hli::FeatureBundle b;
  b.spatial_map = Tensor({1, 1, 3, 2});
  for (std::size_t i = 0; i < 6; ++i) b.spatial_map.data[i] = static_cast<double>(i) - 2.5;
  hli::ModelParams p;
  p.add("classifier.weight", Tensor({1, 1}, 1.0), true);
  p.add("classifier.bias", Tensor({1}, 0.0), true);
  EXPECT_EQ(hli::compute_cam(b, p, std::vector<int>{0}).data, b.spatial_map.data);
}

TEST(Cam, MatchesTripleLoopAndIsLinear) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    hli::FeatureBundle b;
    b.spatial_map = Tensor({3, 6, 4, 2});
    for (double& v : b.spatial_map.data) v = g(rng);
    hli::ModelParams p;
    Tensor w({5, 6});
    for (double& v : w.data) v = g(rng);
    p.add("classifier.weight", w, true);
    p.add("classifier.bias", Tensor({5}), true);
    const std::vector<int> cls{0, 4, 2};
    const auto hm = hli::compute_cam(b, p, cls);
    const auto ref = oracle::cam(b.spatial_map, w, cls);
    for (std::size_t i = 0; i < hm.size(); ++i) EXPECT_NEAR(hm.data[i], ref.data[i], 1e-10);

    for (double& v : p.get("classifier.weight").data) v *= 2.5;
    const auto scaled = hli::compute_cam(b, p, cls);
    for (std::size_t i = 0; i < hm.size(); ++i) EXPECT_NEAR(scaled.data[i], 2.5 * hm.data[i], 1e-10);
  }
}

TEST(Cam, RejectsClassOutOfRange) {
  hli::FeatureBundle b;
  b.spatial_map = Tensor({1, 2, 2, 2});
  hli::ModelParams p;
  p.add("classifier.weight", Tensor({3, 2}), true);
  p.add("classifier.bias", Tensor({3}), true);
  EXPECT_THROW(hli::compute_cam(b, p, std::vector<int>{3}), hli::Error);
  EXPECT_THROW(hli::compute_cam(b, p, std::vector<int>{-1}), hli::Error);
}

TEST(MostInformativePoint, SinglePeakMapsToStrideCellCentre) {
  Tensor hm({1, 4, 4}, 0.0);
  hm.data[2 * 4 + 3] = 1.0;  // row 2, col 3
  const auto pts = hli::most_informative_point(hm, 16, 16);  // stride 4
  EXPECT_EQ(pts[0].y, 2 * 4 + 2);
  EXPECT_EQ(pts[0].x, 3 * 4 + 2);
}

TEST(MostInformativePoint, ConstantHeatmapPicksFirstCell) {
  const Tensor hm({1, 8, 4}, 0.25);
  EXPECT_EQ(hli::heatmap_argmax(hm)[0], (std::pair<int, int>{0, 0}));
  const auto pts = hli::most_informative_point(hm, 64, 32);
  EXPECT_EQ(pts[0], (hli::ImagePoint{4, 4}));
}

TEST(MostInformativePoint, MatchesExhaustiveScan) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor hm = random_heatmaps(1, 8, 4, rng, trial % 2 == 0);
    const auto cell = hli::heatmap_argmax(hm)[0];
    EXPECT_EQ(cell, oracle::argmax_cell(hm, 0));
    const auto pt = hli::most_informative_point(hm, 64, 32)[0];
    EXPECT_EQ(pt.y, cell.first * 8 + 4);
    EXPECT_EQ(pt.x, cell.second * 8 + 4);
  }
}

TEST(MostInformativePoint, InvariantToPositiveScaling) {
  std::mt19937_64 rng(13);
  Tensor hm = random_heatmaps(5, 8, 4, rng, false);
  const auto before = hli::most_informative_point(hm, 64, 32);
  for (double& v : hm.data) v *= 3.7;
  EXPECT_EQ(hli::most_informative_point(hm, 64, 32), before);
}

TEST(MostInformativePoint, RejectsIncompatibleImageSize) {
  const Tensor hm({1, 8, 4}, 0.0);
  EXPECT_THROW(hli::most_informative_point(hm, 60, 32), hli::Error);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  const hli::Network net(tiny_arch());
  const auto params = net.init_params(14);
  const auto dir = std::filesystem::temp_directory_path() / "hli_ckpt_test";
  std::filesystem::create_directories(dir);
  hli::CheckpointMeta meta{"teacher", 42, "abcdef", tiny_arch()};
  hli::save_checkpoint(dir / "m", params, meta);
  const auto loaded = hli::load_checkpoint(dir / "m.json", params);
  EXPECT_TRUE(loaded.params.same_schema(params));
  for (std::size_t k = 0; k < params.size(); ++k) {
    EXPECT_EQ(loaded.params.entries()[k].value.data, params.entries()[k].value.data);
    EXPECT_EQ(loaded.params.entries()[k].trainable, params.entries()[k].trainable);
  }
  EXPECT_EQ(loaded.meta.role, "teacher");
  EXPECT_EQ(loaded.meta.step, 42);
  EXPECT_EQ(loaded.meta.config_hash, "abcdef");
  EXPECT_EQ(loaded.meta.arch.channels, tiny_arch().channels);

  const hli::Network other(hli::ArchConfig{});
  EXPECT_THROW(hli::load_checkpoint(dir / "m", other.init_params(0)), hli::Error);
  std::filesystem::resize_file(dir / "m.bin", 8);
  EXPECT_THROW(hli::load_checkpoint(dir / "m"), hli::Error);
  std::filesystem::remove_all(dir);
}

TEST(Classifier, SetAndReset) {
  const hli::Network net(tiny_arch());
  auto params = net.init_params(15);
  Matrix w = Matrix::Ones(5, 8);
  hli::set_classifier(params, w);
  EXPECT_EQ(hli::num_classes(params), 5);
  EXPECT_EQ(params.get("classifier.bias").size(), 5u);
  std::mt19937_64 rng(1);
  hli::reset_classifier(params, 7, 0.01, rng);
  EXPECT_EQ(hli::num_classes(params), 7);
  EXPECT_THROW(hli::set_classifier(params, Matrix::Ones(5, 3)), hli::Error);
}
