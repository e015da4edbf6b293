#pragma once

// Straight-line reference implementations. Nothing here calls into the
// library's arithmetic: every oracle recomputes its result from the defining
// formula with plain loops over std::vector<double>.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

struct Map {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;

  Map() = default;
  Map(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, 0.0) {}
  double& at(std::size_t ch, std::size_t y, std::size_t x) { return v[(ch * h + y) * w + x]; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const { return v[(ch * h + y) * w + x]; }
  // zero outside the map
  double get(std::size_t ch, long y, long x) const {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
    return at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  }
};

// out[o](y, x) = sum over the group's inputs i and taps (u, v) of
//   k[o][i][u][v] * in[g*cin_g + i](y + u - pad, x + v - pad)
inline Map conv(const Map& in, const std::vector<double>& k, std::size_t cout, std::size_t ks, std::size_t groups,
                std::size_t pad) {
  const std::size_t cin_g = in.c / groups, cout_g = cout / groups;
  const std::size_t oh = in.h + 2 * pad - ks + 1, ow = in.w + 2 * pad - ks + 1;
  Map out(cout, oh, ow);
  for (std::size_t o = 0; o < cout; ++o) {
    const std::size_t g = o / cout_g;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t i = 0; i < cin_g; ++i)
          for (std::size_t u = 0; u < ks; ++u)
            for (std::size_t v = 0; v < ks; ++v)
              s += k[((o * cin_g + i) * ks + u) * ks + v] *
                   in.get(g * cin_g + i, static_cast<long>(y + u) - static_cast<long>(pad),
                          static_cast<long>(x + v) - static_cast<long>(pad));
        out.at(o, y, x) = s;
      }
  }
  return out;
}

// Two-pass mean / variance per group, then per-channel affine.
inline Map group_norm(const Map& in, std::size_t groups, const std::vector<double>& scale,
                      const std::vector<double>& shift, double eps) {
  Map out(in.c, in.h, in.w);
  const std::size_t cpg = in.c / groups, plane = in.h * in.w;
  for (std::size_t g = 0; g < groups; ++g) {
    double mean = 0.0;
    for (std::size_t ch = g * cpg; ch < (g + 1) * cpg; ++ch)
      for (std::size_t i = 0; i < plane; ++i) mean += in.v[ch * plane + i];
    mean /= static_cast<double>(cpg * plane);
    double var = 0.0;
    for (std::size_t ch = g * cpg; ch < (g + 1) * cpg; ++ch)
      for (std::size_t i = 0; i < plane; ++i) var += (in.v[ch * plane + i] - mean) * (in.v[ch * plane + i] - mean);
    var /= static_cast<double>(cpg * plane);
    for (std::size_t ch = g * cpg; ch < (g + 1) * cpg; ++ch)
      for (std::size_t i = 0; i < plane; ++i)
        out.v[ch * plane + i] = scale[ch] * (in.v[ch * plane + i] - mean) / std::sqrt(var + eps) + shift[ch];
  }
  return out;
}

inline Map project(const Map& in, const std::vector<double>& w, const std::vector<double>& b, std::size_t cout) {
  Map out(cout, in.h, in.w);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < in.h; ++y)
      for (std::size_t x = 0; x < in.w; ++x) {
        double s = b[o];
        for (std::size_t i = 0; i < in.c; ++i) s += w[o * in.c + i] * in.at(i, y, x);
        out.at(o, y, x) = s;
      }
  return out;
}

// Per-channel template correlation, "same" size, mean over the kernel taps.
inline Map xcorr(const Map& search, const Map& kernel) {
  Map out(search.c, search.h, search.w);
  const long py = static_cast<long>((kernel.h - 1) / 2), px = static_cast<long>((kernel.w - 1) / 2);
  for (std::size_t ch = 0; ch < search.c; ++ch)
    for (std::size_t y = 0; y < search.h; ++y)
      for (std::size_t x = 0; x < search.w; ++x) {
        double s = 0.0;
        for (std::size_t u = 0; u < kernel.h; ++u)
          for (std::size_t v = 0; v < kernel.w; ++v)
            s += kernel.at(ch, u, v) * search.get(ch, static_cast<long>(y + u) - py, static_cast<long>(x + v) - px);
        out.at(ch, y, x) = s / static_cast<double>(kernel.h * kernel.w);
      }
  return out;
}

// Gabor value written out directly from the rotated-coordinate definition.
inline double gabor(double x, double y, double theta, double sigma, double lambda, double gamma, double psi) {
  const double xt = x * std::cos(theta) + y * std::sin(theta);
  const double yt = -x * std::sin(theta) + y * std::cos(theta);
  return std::exp(-(xt * xt + gamma * gamma * yt * yt) / (2.0 * sigma * sigma)) *
         std::cos(2.0 * std::numbers::pi * xt / lambda + psi);
}

// row-major {size, size}, centered at (size - 1) / 2
inline std::vector<double> gabor_kernel(double theta, double sigma, double lambda, double gamma, double psi,
                                        std::size_t size) {
  std::vector<double> k(size * size);
  const double half = static_cast<double>(size - 1) / 2.0;
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c)
      k[r * size + c] =
          gabor(static_cast<double>(c) - half, static_cast<double>(r) - half, theta, sigma, lambda, gamma, psi);
  return k;
}

struct Ev {
  int x, y;
  std::int64_t t;
  int p;
};

// Linear scan: every event is tested against the window on its own.
inline void accumulate(const std::vector<Ev>& events, std::int64_t start, std::int64_t end, std::size_t w,
                       std::vector<std::uint32_t>& pos, std::vector<std::uint32_t>& neg) {
  for (const auto& e : events) {
    if (e.t < start || e.t >= end) continue;
    const std::size_t i = static_cast<std::size_t>(e.y) * w + static_cast<std::size_t>(e.x);
    (e.p > 0 ? pos : neg)[i] += 1;
  }
}

struct Box {
  double x, y, w, h;
};

inline double box_iou(const Box& a, const Box& b) {
  const double ax1 = a.x, ay1 = a.y, ax2 = a.x + a.w, ay2 = a.y + a.h;
  const double bx1 = b.x, by1 = b.y, bx2 = b.x + b.w, by2 = b.y + b.h;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  // Areas from the same corners as the intersection: identical boxes give 1.
  const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double box_giou(const Box& a, const Box& b) {
  const double hx = std::max(a.x + a.w, b.x + b.w) - std::min(a.x, b.x);
  const double hy = std::max(a.y + a.h, b.y + b.h) - std::min(a.y, b.y);
  const double iw = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double ih = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double uni = a.w * a.h + b.w * b.h - iw * ih;
  return iw * ih / uni - (hx * hy - uni) / (hx * hy);
}

struct Scores {
  double auc = 0, pr = 0, npr = 0, op50 = 0, op75 = 0;
};

// Frame 0 is the initialization frame and is skipped. Thresholds are
// generated independently: 51 IoU steps of 0.02 (strict >, except >= at 1),
// 20 px center error, 51 normalized steps of 0.01.
inline Scores scores(const std::vector<Box>& pred, const std::vector<Box>& gt) {
  Scores s;
  const std::size_t n = gt.size() - 1;
  double auc = 0.0, npr = 0.0;
  for (int i = 0; i <= 50; ++i) {
    const double t = 0.02 * i;
    std::size_t hits = 0, nhits = 0;
    for (std::size_t f = 1; f < gt.size(); ++f) {
      const double o = box_iou(pred[f], gt[f]);
      hits += i == 50 ? o >= 1.0 : o > t;
      const double dx = (pred[f].x + pred[f].w / 2) - (gt[f].x + gt[f].w / 2);
      const double dy = (pred[f].y + pred[f].h / 2) - (gt[f].y + gt[f].h / 2);
      nhits += std::sqrt(dx * dx + dy * dy) / std::sqrt(gt[f].w * gt[f].h) <= i / 100.0;
    }
    auc += 100.0 * static_cast<double>(hits) / static_cast<double>(n);
    npr += 100.0 * static_cast<double>(nhits) / static_cast<double>(n);
  }
  s.auc = auc / 51.0;
  s.npr = npr / 51.0;
  std::size_t pr = 0, o50 = 0, o75 = 0;
  for (std::size_t f = 1; f < gt.size(); ++f) {
    const double dx = (pred[f].x + pred[f].w / 2) - (gt[f].x + gt[f].w / 2);
    const double dy = (pred[f].y + pred[f].h / 2) - (gt[f].y + gt[f].h / 2);
    pr += std::sqrt(dx * dx + dy * dy) <= 20.0;
    const double o = box_iou(pred[f], gt[f]);
    o50 += o > 0.5;
    o75 += o > 0.75;
  }
  s.pr = 100.0 * static_cast<double>(pr) / static_cast<double>(n);
  s.op50 = 100.0 * static_cast<double>(o50) / static_cast<double>(n);
  s.op75 = 100.0 * static_cast<double>(o75) / static_cast<double>(n);
  return s;
}

inline Map random_map(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = -1.0,
                      double hi = 1.0) {
  Map m(c, h, w);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : m.v) x = u(rng);
  return m;
}

}  // namespace oracle
