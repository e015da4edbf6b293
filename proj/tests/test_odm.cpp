#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "sortrack/odm.hpp"

using namespace sortrack;
using std::numbers::pi;

TEST(Orientations, ExactValues) {
  EXPECT_EQ(orientations(0.0, 4), (std::vector<double>{0.0, pi / 4, pi / 2, 3 * pi / 4}));
  EXPECT_EQ(orientations(0.0, 1), (std::vector<double>{0.0}));
  const auto t = orientations(0.3, 3);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(t[k], 0.3 + static_cast<double>(k) * pi / 3.0);
  EXPECT_THROW(orientations(0.0, 0), InputError);
}

TEST(GaborKernel, OriginAndScalarPoint) {
  GaborParams p;
  for (double th : {0.0, 0.4, 1.9, 3.0}) {
    EXPECT_DOUBLE_EQ(gabor_kernel<double>(th, p, 5)(2, 2), 1.0);
    p.psi = 0.7;
    EXPECT_NEAR(gabor_kernel<double>(th, p, 5)(2, 2), std::cos(0.7), 1e-15);
    p.psi = 0.0;
  }
  // (x, y) = (1, 0) is row 2, column 3: exp(-1/8) cos(pi/2)
  EXPECT_NEAR(gabor_kernel<double>(0.0, p, 5)(2, 3), 0.0, 1e-15);
}

TEST(GaborKernel, DegenerateLimitIsAllOnes) {
  const GaborParams p{1e4, 1e6, 0.5, 0.0};
  for (double v : gabor_kernel<double>(0.3, p, 5).data()) EXPECT_NEAR(v, 1.0, 1e-3);
}

TEST(GaborKernel, MatchesDirectFormula) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const GaborParams p{0.5 + 3.0 * u(rng), 2.0 + 6.0 * u(rng), 0.2 + 1.5 * u(rng), -pi + 2 * pi * u(rng)};
    const double th = -4.0 + 8.0 * u(rng);
    const std::size_t size = 3 + 2 * static_cast<std::size_t>(trial % 4);
    const auto k = gabor_kernel<double>(th, p, size);
    const auto ref = oracle::gabor_kernel(th, p.sigma, p.lambda, p.gamma, p.psi, size);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(k[i], ref[i], 1e-9);
  }
}

TEST(GaborKernel, Errors) {
  EXPECT_THROW(gabor_kernel<double>(0.0, {}, 4), InputError);
  EXPECT_THROW(gabor_kernel<double>(0.0, {-1.0, 4.0, 0.5, 0.0}, 5), InputError);
  EXPECT_THROW(gabor_kernel<double>(0.0, {2.0, 0.0, 0.5, 0.0}, 5), InputError);
}

TEST(GaborKernel, PiPeriodicWithZeroPhaseExact) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double th = u(rng);
    const GaborParams p{1.0 + std::abs(u(rng)) / 3, 2.0 + std::abs(u(rng)), 0.3 + std::abs(u(rng)) / 6, 0.0};
    EXPECT_EQ(gabor_kernel<double>(th, p, 7), gabor_kernel<double>(th + pi, p, 7)) << th;
    EXPECT_EQ(gabor_kernel<float>(th, p, 5), gabor_kernel<float>(th - pi, p, 5)) << th;
  }
}

TEST(GaborBank, AntipodalOrientationsIdentical) {
  const auto a = gabor_bank<double>(0.2, {}, 4, 5);
  const auto b = gabor_bank<double>(0.2 + pi, {}, 4, 5);
  EXPECT_EQ(a.kernels, b.kernels);
}

TEST(GaborBank, QuarterTurnTransposesGrid) {
  const GaborParams p{2.0, 4.0, 1.0, 0.0};
  const auto bank = gabor_bank<double>(0.0, p, 2, 5);
  const auto k0 = bank.kernel(0), k1 = bank.kernel(1);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(k1(r, c), k0(c, r), 1e-9);
}

TEST(GaborBank, BoundedDeterministicAndShaped) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const GaborParams p{u(rng), u(rng) + 1.0, u(rng), u(rng)};
    const double phi = u(rng);
    const auto a = gabor_bank<float>(phi, p, 4, 5), b = gabor_bank<float>(phi, p, 4, 5);
    EXPECT_EQ(a.kernels, b.kernels);
    EXPECT_EQ(a.kernels.shape(), (Shape{4, 5, 5}));
    EXPECT_EQ(a.thetas, orientations(phi, 4));
    for (float v : a.kernels.data()) EXPECT_LE(std::abs(v), 1.0f);
  }
}

TEST(RotateCoords, PreservesRadius) {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = std::round(u(rng)), y = std::round(u(rng)), th = u(rng);
    const auto r = rotate_coords(x, y, th);
    EXPECT_NEAR(r[0] * r[0] + r[1] * r[1], x * x + y * y, 1e-12);
  }
}

TEST(GaborGrads, OriginValues) {
  GaborParams p;
  p.psi = 0.4;
  const auto g = gabor_param_grads<double>(0.9, p, 5);
  EXPECT_NEAR(g.d_psi(2, 2), -std::sin(0.4), 1e-15);
  EXPECT_EQ(g.d_sigma(2, 2), 0.0);
  p.psi = 0.0;
  EXPECT_NEAR(gabor_param_grads<double>(0.9, p, 5).d_psi(2, 2), 0.0, 1e-15);
}

TEST(GaborGrads, MatchFiniteDifferences) {
  std::mt19937_64 rng(45);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const GaborParams p{0.8 + 2.5 * u(rng), 2.5 + 5.0 * u(rng), 0.3 + 1.2 * u(rng), -pi + 2 * pi * u(rng)};
    const double th = 2 * pi * u(rng);
    const auto g = gabor_param_grads<double>(th, p, 5);
    const std::array<const BasicTensor<double>*, 4> an{&g.d_sigma, &g.d_lambda, &g.d_gamma, &g.d_psi};
    for (int which = 0; which < 4; ++which) {
      auto plus = p, minus = p;
      double* fields_p[4] = {&plus.sigma, &plus.lambda, &plus.gamma, &plus.psi};
      double* fields_m[4] = {&minus.sigma, &minus.lambda, &minus.gamma, &minus.psi};
      *fields_p[which] += h;
      *fields_m[which] -= h;
      const auto kp = oracle::gabor_kernel(th, plus.sigma, plus.lambda, plus.gamma, plus.psi, 5);
      const auto km = oracle::gabor_kernel(th, minus.sigma, minus.lambda, minus.gamma, minus.psi, 5);
      double num2 = 0.0, diff2 = 0.0, an2 = 0.0;
      for (std::size_t i = 0; i < 25; ++i) {
        const double n = (kp[i] - km[i]) / (2 * h), a = (*an[which])[i];
        num2 += n * n;
        an2 += a * a;
        diff2 += (n - a) * (n - a);
      }
      const double denom = std::max(std::sqrt(num2), std::sqrt(an2));
      if (denom > 1e-12) {
        EXPECT_LE(std::sqrt(diff2) / denom, 1e-5) << "param " << which << " trial " << trial;
      }
    }
  }
}

namespace {

EventFrame frame_from(const std::vector<std::vector<int>>& signed_img) {
  const std::size_t h = signed_img.size(), w = signed_img[0].size();
  EventFrame f(h, w, {0, 1});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const int v = signed_img[y][x];
      (v > 0 ? f.pos_counts : f.neg_counts)[y * w + x] = static_cast<std::uint32_t>(std::abs(v));
    }
  return f;
}

double angle_gap(double a, double b) {
  const double d = std::fmod(std::abs(a - b), pi);
  return std::min(d, pi - d);
}

}  // namespace

TEST(EstimatePhi, EmptyFrameIsDegenerate) {
  const auto e = estimate_phi(EventFrame(16, 16, {0, 1}));
  EXPECT_EQ(e.phi, 0.0);
  EXPECT_TRUE(e.degenerate);
}

TEST(EstimatePhi, StripeEquivariantUnderQuarterTurn) {
  std::vector<std::vector<int>> v(24, std::vector<int>(24, 0)), hz(24, std::vector<int>(24, 0));
  for (std::size_t i = 0; i < 24; ++i) {
    v[i][11] = 3;
    hz[11][i] = 3;
  }
  const auto a = estimate_phi(frame_from(v)), b = estimate_phi(frame_from(hz));
  ASSERT_FALSE(a.degenerate);
  ASSERT_FALSE(b.degenerate);
  EXPECT_LT(angle_gap(a.phi, 0.0), 1e-9);  // the gradient of a vertical stripe is horizontal
  EXPECT_LT(angle_gap(b.phi, a.phi + pi / 2), 1e-9);
}

TEST(EstimatePhi, DiagonalBlobPair) {
  // positive blob leading a negative one along the 45 degree diagonal
  std::vector<std::vector<int>> img(32, std::vector<int>(32, 0));
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double dp = std::hypot(x - 18.0, y - 18.0), dn = std::hypot(x - 13.0, y - 13.0);
      if (dp < 3.0) img[y][x] += 2;
      if (dn < 3.0) img[y][x] -= 2;
    }
  const auto e = estimate_phi(frame_from(img));
  ASSERT_FALSE(e.degenerate);
  EXPECT_LT(angle_gap(e.phi, pi / 4), 0.05) << e.phi;
}

TEST(EstimatePhi, PolarityFlipInvariantAndRange) {
  std::mt19937_64 rng(46);
  std::uniform_int_distribution<int> u(-3, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<int>> img(20, std::vector<int>(20, 0)), neg = img;
    for (std::size_t y = 0; y < 20; ++y)
      for (std::size_t x = 0; x < 20; ++x) neg[y][x] = -(img[y][x] = u(rng));
    const auto a = estimate_phi(frame_from(img)), b = estimate_phi(frame_from(neg));
    EXPECT_EQ(a.phi, b.phi);
    EXPECT_GE(a.phi, 0.0);
    EXPECT_LT(a.phi, pi);
  }
}
