#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "sortrack/stem.hpp"

using namespace sortrack;
using DTensor = BasicTensor<double>;

namespace {

DTensor random_tensor(Shape shape, std::mt19937_64& rng) {
  DTensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace

TEST(SpaceToDepth, BlockOneIsIdentity) {
  std::mt19937_64 rng(31);
  const auto x = random_tensor({3, 5, 7}, rng);
  EXPECT_EQ(space_to_depth(x, 1), x);
  EXPECT_EQ(depth_to_space(x, 1), x);
}

TEST(SpaceToDepth, RasterOrder) {
  const DTensor x(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto y = space_to_depth(x, 2);
  EXPECT_EQ(y.shape(), (Shape{4, 1, 1}));
  EXPECT_EQ(y.data(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(SpaceToDepth, RoundtripBitwiseAndMultiset) {
  std::mt19937_64 rng(32);
  for (std::size_t s : {2u, 4u}) {
    const auto x = random_tensor({3, 8, 8}, rng);
    const auto y = space_to_depth(x, s);
    EXPECT_EQ(y.shape(), (Shape{3 * s * s, 8 / s, 8 / s}));
    EXPECT_EQ(depth_to_space(y, s), x);
    auto a = x.data(), b = y.data();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    const auto z = random_tensor({3 * s * s, 2, 3}, rng);
    EXPECT_EQ(space_to_depth(depth_to_space(z, s), s), z);
  }
}

TEST(SpaceToDepth, IndivisibleIsShapeError) {
  EXPECT_THROW(space_to_depth(DTensor({3, 6, 8}), 4), ShapeError);
  EXPECT_THROW(depth_to_space(DTensor({5, 2, 2}), 2), ShapeError);
}

TEST(Stem, ZeroImageZeroFeatures) {
  const StemConfig cfg;
  const auto w = StemWeights<double>::identity_blocks(cfg);
  const auto y = stem_forward(DTensor({3, 16, 16}), cfg, w);
  EXPECT_EQ(y.shape(), (Shape{64, 4, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Stem, IdentityBlocksReproduceRearrangedInput) {
  std::mt19937_64 rng(33);
  const StemConfig cfg{2, 12, 1, 3};  // D = 3 * 2 * 2
  const auto w = StemWeights<double>::identity_blocks(cfg);
  const auto x = random_tensor({3, 6, 6}, rng);
  EXPECT_EQ(stem_forward(x, cfg, w), space_to_depth(x, 2));
}

TEST(Stem, MatchesSpaceToDepthThenMaskedProjection) {
  std::mt19937_64 rng(34);
  const StemConfig cfg{2, 8, 4, 3};
  StemWeights<double> w{random_tensor({8, 3, 1, 1}, rng), random_tensor({8}, rng)};
  const auto x = random_tensor({3, 6, 4}, rng);
  // dense {D, C s^2} weights, zero outside each output's group
  std::vector<double> dense(8 * 12, 0.0);
  for (std::size_t d = 0; d < 8; ++d) {
    const std::size_t g = d / 2;
    for (std::size_t j = 0; j < 3; ++j) dense[d * 12 + g * 3 + j] = w.weights[d * 3 + j];
  }
  const auto s2d = space_to_depth(x, 2);
  oracle::Map m(12, s2d.height(), s2d.width());
  m.v = s2d.data();
  const auto ref = oracle::project(m, dense, w.bias.data(), 8);
  const auto y = stem_forward(x, cfg, w);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref.v[i], 1e-13);
}

TEST(Stem, LinearInImage) {
  std::mt19937_64 rng(35);
  const StemConfig cfg{4, 16, 4, 3};
  StemWeights<double> w{random_tensor({16, 12, 1, 1}, rng), DTensor({16})};
  const auto x = random_tensor({3, 8, 8}, rng), y = random_tensor({3, 8, 8}, rng);
  DTensor mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = 2.0 * x[i] - 0.5 * y[i];
  const auto fx = stem_forward(x, cfg, w), fy = stem_forward(y, cfg, w), fm = stem_forward(mix, cfg, w);
  for (std::size_t i = 0; i < fm.size(); ++i) EXPECT_NEAR(fm[i], 2.0 * fx[i] - 0.5 * fy[i], 1e-6);
}

TEST(Stem, IsolatedSpikeSurvives) {
  const StemConfig cfg;
  const auto w = StemWeights<double>::identity_blocks(cfg);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        DTensor img({3, 8, 8});
        img(c, 4 + y, x) = 1.0;
        EXPECT_GT(sum_of_squares(stem_forward(img, cfg, w)), 0.0) << c << " " << y << " " << x;
      }
}

TEST(Stem, ErrorsOnBadConfigOrShapes) {
  StemConfig cfg;
  cfg.groups = 5;
  EXPECT_THROW(stem_forward(DTensor({3, 8, 8}), cfg, StemWeights<double>::zeros(StemConfig{})), InputError);
  const StemConfig ok;
  EXPECT_THROW(stem_forward(DTensor({1, 8, 8}), ok, StemWeights<double>::zeros(ok)), ShapeError);
  EXPECT_THROW(stem_forward(DTensor({3, 6, 8}), ok, StemWeights<double>::zeros(ok)), ShapeError);
}

TEST(StridedBaseline, ZeroAndConstantImage) {
  const StemConfig cfg{4, 8, 4, 3};
  auto w = StridedWeights<double>::zeros(cfg);
  EXPECT_EQ(stem_strided_baseline(DTensor({3, 8, 8}), cfg, w), DTensor({8, 2, 2}));
  w.weights.fill(1.0 / 48.0);
  const auto y = stem_strided_baseline(DTensor({3, 8, 8}, 3.0), cfg, w);
  for (double v : y.data()) EXPECT_NEAR(v, 3.0, 1e-12);  // kernel sum 1 x value 3
}

TEST(StridedBaseline, SpikeEnergyNeverExceedsGranularStem) {
  const StemConfig cfg;
  auto avg = StridedWeights<double>::zeros(cfg);
  avg.weights.fill(1.0 / 48.0);
  const auto ident = StemWeights<double>::identity_blocks(cfg);
  DTensor img({3, 16, 16});
  img(1, 6, 9) = 1.0;
  EXPECT_LE(sum_of_squares(stem_strided_baseline(img, cfg, avg)), sum_of_squares(stem_forward(img, cfg, ident)));
}
