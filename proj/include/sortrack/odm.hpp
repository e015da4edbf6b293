#pragma once

// Orthogonal directional module: a bank of K steerable Gabor kernels whose
// orientations are spread uniformly over [phi, phi + pi), plus the analytic
// partial derivatives needed to learn the shared Gabor coefficients.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "sortrack/event_io.hpp"
#include "sortrack/tensor.hpp"

namespace sortrack {

struct GaborParams {
  double sigma = 2.0;
  double lambda = 4.0;
  double gamma = 0.5;
  double psi = 0.0;

  void validate() const {
    if (!(sigma > 0.0) || !(lambda > 0.0) || !(gamma > 0.0))
      throw InputError("gabor: sigma, lambda and gamma must be positive");
  }
};

inline std::vector<double> orientations(double phi, std::size_t k) {
  if (k == 0) throw InputError("orientations: K must be >= 1");
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = phi + static_cast<double>(i) * std::numbers::pi / static_cast<double>(k);
  return out;
}

namespace detail {

// theta is reduced to [0, pi) with a sign flag so that theta and theta + pi
// yield exactly negated rotated coordinates. The reduced angle is snapped to
// a 2^-36 rad grid, far below any resolution that matters for a kernel.
struct Orientation {
  double cos_t;
  double sin_t;
  double sign;
};

inline Orientation canonical_orientation(double theta) {
  constexpr double pi = std::numbers::pi;
  constexpr double grid = 68719476736.0;  // 2^36
  double turns = std::floor(theta / pi);
  double r = theta - turns * pi;
  r = std::round(r * grid) / grid;
  if (r >= std::round(pi * grid) / grid) {
    r = 0.0;
    turns += 1.0;
  }
  const bool odd = std::fmod(std::abs(turns), 2.0) == 1.0;
  return {std::cos(r), std::sin(r), odd ? -1.0 : 1.0};
}

struct GaborPoint {
  double x_theta;
  double y_theta;
  double envelope;
  double phase;
};

inline GaborPoint gabor_point(const Orientation& o, double x, double y, const GaborParams& p) {
  const double xt = o.sign * (x * o.cos_t + y * o.sin_t);
  const double yt = o.sign * (-x * o.sin_t + y * o.cos_t);
  const double env = std::exp(-(xt * xt + p.gamma * p.gamma * yt * yt) / (2.0 * p.sigma * p.sigma));
  const double phase = 2.0 * std::numbers::pi * xt / p.lambda + p.psi;
  return {xt, yt, env, phase};
}

inline void check_kernel_size(std::size_t size) {
  if (size % 2 == 0) throw InputError("gabor_kernel: size must be odd, got " + std::to_string(size));
}

}  // namespace detail

// Rotated lattice coordinates; grid offsets run from -(size-1)/2 to
// +(size-1)/2, x along columns and y along rows.
inline std::array<double, 2> rotate_coords(double x, double y, double theta) {
  const auto o = detail::canonical_orientation(theta);
  return {o.sign * (x * o.cos_t + y * o.sin_t), o.sign * (-x * o.sin_t + y * o.cos_t)};
}

// G(x,y) = exp(-(x_t^2 + gamma^2 y_t^2) / (2 sigma^2)) * cos(2 pi x_t / lambda + psi)
template <class T = float>
BasicTensor<T> gabor_kernel(double theta, const GaborParams& params, std::size_t size) {
  detail::check_kernel_size(size);
  params.validate();
  const auto o = detail::canonical_orientation(theta);
  const auto half = static_cast<double>((size - 1) / 2);
  BasicTensor<T> k({size, size});
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const auto pt = detail::gabor_point(o, static_cast<double>(c) - half, static_cast<double>(r) - half, params);
      k(r, c) = static_cast<T>(pt.envelope * std::cos(pt.phase));
    }
  return k;
}

template <class T>
struct GaborGrads {
  BasicTensor<T> d_sigma;
  BasicTensor<T> d_lambda;
  BasicTensor<T> d_gamma;
  BasicTensor<T> d_psi;
};

template <class T = double>
GaborGrads<T> gabor_param_grads(double theta, const GaborParams& params, std::size_t size) {
  detail::check_kernel_size(size);
  params.validate();
  const auto o = detail::canonical_orientation(theta);
  const auto half = static_cast<double>((size - 1) / 2);
  GaborGrads<T> g{BasicTensor<T>({size, size}), BasicTensor<T>({size, size}), BasicTensor<T>({size, size}),
                  BasicTensor<T>({size, size})};
  const double s2 = params.sigma * params.sigma;
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const auto pt = detail::gabor_point(o, static_cast<double>(c) - half, static_cast<double>(r) - half, params);
      const double cs = std::cos(pt.phase), sn = std::sin(pt.phase);
      const double q = pt.x_theta * pt.x_theta + params.gamma * params.gamma * pt.y_theta * pt.y_theta;
      g.d_sigma(r, c) = static_cast<T>(pt.envelope * cs * q / (s2 * params.sigma));
      g.d_lambda(r, c) =
          static_cast<T>(pt.envelope * sn * 2.0 * std::numbers::pi * pt.x_theta / (params.lambda * params.lambda));
      g.d_gamma(r, c) = static_cast<T>(-pt.envelope * cs * params.gamma * pt.y_theta * pt.y_theta / s2);
      g.d_psi(r, c) = static_cast<T>(-pt.envelope * sn);
    }
  return g;
}

template <class T = float>
struct GaborBank {
  std::size_t k = 4;
  double phi = 0.0;
  GaborParams params;
  std::size_t kernel_size = 5;
  std::vector<double> thetas;
  BasicTensor<T> kernels;  // {K, size, size}

  BasicTensor<T> kernel(std::size_t i) const {
    const std::size_t n = kernel_size * kernel_size;
    return BasicTensor<T>(Shape{kernel_size, kernel_size},
                          std::vector<T>(kernels.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                                         kernels.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
  }
};

template <class T = float>
GaborBank<T> gabor_bank(double phi, const GaborParams& params, std::size_t k, std::size_t size) {
  GaborBank<T> bank{k, phi, params, size, orientations(phi, k), BasicTensor<T>({k, size, size})};
  const std::size_t n = size * size;
  for (std::size_t i = 0; i < k; ++i) {
    const auto g = gabor_kernel<T>(bank.thetas[i], params, size);
    std::copy(g.data().begin(), g.data().end(), bank.kernels.data().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return bank;
}

struct PhiEstimate {
  double phi = 0.0;
  bool degenerate = false;
  double coherence = 0.0;
};

inline constexpr double kDefaultPhiSmoothing = 1.5;

// Dominant gradient orientation of the signed event image (pos - neg), taken
// from the Gaussian-smoothed structure tensor summed over the frame.
// Returns phi in [0, pi); isotropic or empty frames give phi = 0 and set the
// degenerate flag.
inline PhiEstimate estimate_phi(const EventFrame& frame, double smoothing = kDefaultPhiSmoothing) {
  const std::size_t h = frame.height, w = frame.width;
  if (h == 0 || w == 0) return {0.0, true, 0.0};
  const auto img = frame.signed_counts();
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> double {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) return 0.0;
    return img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  std::vector<double> jxx(h * w), jyy(h * w), jxy(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto iy = static_cast<std::ptrdiff_t>(y), ix = static_cast<std::ptrdiff_t>(x);
      const double gx = 0.5 * (at(iy, ix + 1) - at(iy, ix - 1));
      const double gy = 0.5 * (at(iy + 1, ix) - at(iy - 1, ix));
      const std::size_t i = y * w + x;
      jxx[i] = gx * gx;
      jyy[i] = gy * gy;
      jxy[i] = gx * gy;
    }

  // Separable Gaussian smoothing with zero boundary.
  if (smoothing > 0.0) {
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * smoothing));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
      const double v = std::exp(-0.5 * static_cast<double>(i * i) / (smoothing * smoothing));
      taps[static_cast<std::size_t>(i + radius)] = v;
      norm += v;
    }
    for (auto& t : taps) t /= norm;
    std::vector<double> tmp(h * w);
    for (auto* field : {&jxx, &jyy, &jxy}) {
      auto& f = *field;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
            const auto xx = static_cast<std::ptrdiff_t>(x) + d;
            if (xx >= 0 && xx < static_cast<std::ptrdiff_t>(w))
              acc += taps[static_cast<std::size_t>(d + radius)] * f[y * w + static_cast<std::size_t>(xx)];
          }
          tmp[y * w + x] = acc;
        }
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
            const auto yy = static_cast<std::ptrdiff_t>(y) + d;
            if (yy >= 0 && yy < static_cast<std::ptrdiff_t>(h))
              acc += taps[static_cast<std::size_t>(d + radius)] * tmp[static_cast<std::size_t>(yy) * w + x];
          }
          f[y * w + x] = acc;
        }
    }
  }

  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < h * w; ++i) {
    sxx += jxx[i];
    syy += jyy[i];
    sxy += jxy[i];
  }
  const double trace = sxx + syy;
  const double gap = std::sqrt((sxx - syy) * (sxx - syy) + 4.0 * sxy * sxy);
  if (!(trace > 1e-12)) return {0.0, true, 0.0};
  const double coherence = gap / trace;
  if (coherence < 1e-6) return {0.0, true, coherence};
  double phi = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  if (phi < 0.0) phi += std::numbers::pi;
  if (phi >= std::numbers::pi) phi -= std::numbers::pi;
  return {phi, false, coherence};
}

}  // namespace sortrack
