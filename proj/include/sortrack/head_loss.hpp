#pragma once

// Center-map head and the multi-task objective
//   L = lambda_f * L_focal + lambda_l1 * L_1 + lambda_g * L_giou.

#include <cmath>
#include <numbers>

#include "sortrack/box.hpp"
#include "sortrack/numerics.hpp"

namespace sortrack {

template <class T = float>
struct HeadWeights {
  BasicTensor<T> score_w;   // {1, D}
  BasicTensor<T> score_b;   // {1}
  BasicTensor<T> size_w;    // {2, D}
  BasicTensor<T> size_b;    // {2}
  BasicTensor<T> offset_w;  // {2, D}
  BasicTensor<T> offset_b;  // {2}

  static HeadWeights zeros(std::size_t d) {
    return {BasicTensor<T>({1, d}), BasicTensor<T>({1}), BasicTensor<T>({2, d}),
            BasicTensor<T>({2}),    BasicTensor<T>({2, d}), BasicTensor<T>({2})};
  }
};

template <class T = float>
struct HeadOutput {
  BasicTensor<T> score_logits;   // {1, h, w}
  BasicTensor<T> score;          // sigmoid(score_logits)
  BasicTensor<T> size;           // {2, h, w}: box w, h in grid cells
  BasicTensor<T> offset_logits;  // {2, h, w}
  BasicTensor<T> offset;         // sigmoid(offset_logits), sub-cell center offset

  std::size_t height() const { return score.height(); }
  std::size_t width() const { return score.width(); }
};

template <class T>
struct HeadContext {
  ProjectionContext<T> score, size, offset;
};

template <class T>
HeadOutput<T> head_forward(const BasicTensor<T>& features, const HeadWeights<T>& w, HeadContext<T>* ctx = nullptr) {
  HeadOutput<T> out;
  out.score_logits = project_1x1(features, w.score_w, w.score_b, ctx ? &ctx->score : nullptr);
  out.size = project_1x1(features, w.size_w, w.size_b, ctx ? &ctx->size : nullptr);
  out.offset_logits = project_1x1(features, w.offset_w, w.offset_b, ctx ? &ctx->offset : nullptr);
  out.score = sigmoid(out.score_logits);
  out.offset = sigmoid(out.offset_logits);
  return out;
}

// Gradients w.r.t. the raw head maps (score/offset logits and size).
template <class T>
struct HeadMapGrads {
  BasicTensor<T> score_logits;
  BasicTensor<T> size;
  BasicTensor<T> offset_logits;
};

template <class T>
struct HeadBackward {
  BasicTensor<T> features;
  HeadWeights<T> weights;
};

template <class T>
HeadBackward<T> head_backward(const HeadMapGrads<T>& g, const HeadContext<T>& ctx) {
  auto s = project_1x1_backward(g.score_logits, ctx.score);
  auto z = project_1x1_backward(g.size, ctx.size);
  auto o = project_1x1_backward(g.offset_logits, ctx.offset);
  HeadBackward<T> out;
  out.features = add(add(s.input, z.input), o.input);
  out.weights = {std::move(s.weights), std::move(s.bias), std::move(z.weights),
                 std::move(z.bias),    std::move(o.weights), std::move(o.bias)};
  return out;
}

struct LossWeights {
  double lambda_f = 1.0;
  double lambda_l1 = 14.0;
  double lambda_g = 1.0;
};

struct FocalParams {
  double alpha = 2.0;
  double beta = 4.0;
};

// Target for one search patch: Gaussian center map plus the box it encodes.
struct GroundTruthTarget {
  BasicTensor<double> center_map;  // {1, h, w}
  BoundingBox box;                 // search-patch pixels
  std::size_t peak_row = 0;
  std::size_t peak_col = 0;
  double offset_x = 0.0;  // in [0, 1)
  double offset_y = 0.0;
  std::size_t stride = 4;
  double patch_size = 256.0;
};

// Smallest Gaussian radius keeping IoU >= min_overlap for a box of the given
// size (in grid cells) under a corner shift.
inline double gaussian_radius(double height, double width, double min_overlap = 0.7) {
  const double a1 = 1.0, b1 = height + width, c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4.0 * a1 * c1)) / 2.0;
  const double a2 = 4.0, b2 = 2.0 * (height + width), c2 = (1.0 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 4.0 * a2 * c2)) / 2.0;
  const double a3 = 4.0 * min_overlap, b3 = -2.0 * min_overlap * (height + width),
               c3 = (min_overlap - 1.0) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0;
  return std::min({r1, r2, r3});
}

// The peak cell (i, j) is the cell whose center is at or before the box
// center, so center = (j + 0.5 + offset) * stride with offset in [0, 1).
inline GroundTruthTarget encode_target(const BoundingBox& box, std::size_t map_h, std::size_t map_w,
                                       std::size_t stride, double patch_size) {
  if (!box.valid()) throw InputError("encode_target: degenerate box");
  GroundTruthTarget t;
  t.box = box;
  t.stride = stride;
  t.patch_size = patch_size;
  const double s = static_cast<double>(stride);
  const double fx = box.cx() / s - 0.5, fy = box.cy() / s - 0.5;
  const double jx = std::clamp(std::floor(fx), 0.0, static_cast<double>(map_w - 1));
  const double iy = std::clamp(std::floor(fy), 0.0, static_cast<double>(map_h - 1));
  t.peak_col = static_cast<std::size_t>(jx);
  t.peak_row = static_cast<std::size_t>(iy);
  t.offset_x = std::clamp(fx - jx, 0.0, std::nextafter(1.0, 0.0));
  t.offset_y = std::clamp(fy - iy, 0.0, std::nextafter(1.0, 0.0));
  const double radius = std::max(0.0, std::floor(gaussian_radius(box.h / s, box.w / s)));
  const double sigma = (2.0 * radius + 1.0) / 6.0;
  t.center_map = BasicTensor<double>::map(1, map_h, map_w);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
    for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
      const auto y = static_cast<std::ptrdiff_t>(t.peak_row) + dy, x = static_cast<std::ptrdiff_t>(t.peak_col) + dx;
      if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(map_h) || x >= static_cast<std::ptrdiff_t>(map_w)) continue;
      const double v = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      t.center_map(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = v;
    }
  t.center_map(0, t.peak_row, t.peak_col) = 1.0;
  return t;
}

// Box at cell (row, col) from its offset (in [0,1)) and size (grid cells).
inline BoundingBox decode_cell(std::size_t row, std::size_t col, double off_x, double off_y, double size_w,
                               double size_h, std::size_t stride) {
  const double s = static_cast<double>(stride);
  return BoundingBox::from_center((static_cast<double>(col) + 0.5 + off_x) * s,
                                  (static_cast<double>(row) + 0.5 + off_y) * s, std::max(0.0, size_w) * s,
                                  std::max(0.0, size_h) * s);
}

struct Peak {
  std::size_t row = 0;
  std::size_t col = 0;
  double score = 0.0;
};

// Row-major first maximum.
template <class T>
Peak find_peak(const BasicTensor<T>& score) {
  Peak p{0, 0, static_cast<double>(score[0])};
  for (std::size_t y = 0; y < score.height(); ++y)
    for (std::size_t x = 0; x < score.width(); ++x)
      if (static_cast<double>(score(0, y, x)) > p.score) p = {y, x, static_cast<double>(score(0, y, x))};
  return p;
}

template <class T>
BoundingBox decode_box(const HeadOutput<T>& head, std::size_t stride) {
  const auto p = find_peak(head.score_logits);
  return decode_cell(p.row, p.col, head.offset(0, p.row, p.col), head.offset(1, p.row, p.col),
                     head.size(0, p.row, p.col), head.size(1, p.row, p.col), stride);
}

namespace detail {

inline double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

inline void check_focal_target(const BasicTensor<double>& target) {
  std::size_t pos = 0;
  for (double v : target.data()) pos += v == 1.0;
  if (pos == 0) throw InputError("focal_loss: target map has no peak");
}

}  // namespace detail

// Penalty-reduced pixelwise focal loss, normalized by the number of peaks.
template <class T>
double focal_loss(const BasicTensor<T>& pred, const BasicTensor<double>& target, FocalParams fp = {}) {
  if (pred.shape() != target.shape()) throw ShapeError("focal_loss: shape mismatch");
  detail::check_focal_target(target);
  double loss = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], y = target[i];
    if (y == 1.0) {
      loss -= std::pow(1.0 - p, fp.alpha) * std::log(p);
      ++pos;
    } else {
      loss -= std::pow(1.0 - y, fp.beta) * std::pow(p, fp.alpha) * std::log(1.0 - p);
    }
  }
  return loss / static_cast<double>(pos);
}

// Same loss evaluated from logits, with its gradient w.r.t. the logits.
template <class T>
double focal_loss_logits(const BasicTensor<T>& logits, const BasicTensor<double>& target, BasicTensor<T>* grad,
                         double scale = 1.0, FocalParams fp = {}) {
  if (logits.shape() != target.shape()) throw ShapeError("focal_loss_logits: shape mismatch");
  detail::check_focal_target(target);
  std::size_t pos = 0;
  for (double v : target.data()) pos += v == 1.0;
  const double inv_pos = 1.0 / static_cast<double>(pos);
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i], y = target[i];
    const double log_p = detail::log_sigmoid(z), log_q = detail::log_sigmoid(-z);
    const double p = std::exp(log_p), q = std::exp(log_q);
    double l, dz;
    if (y == 1.0) {
      l = -std::pow(q, fp.alpha) * log_p;
      dz = fp.alpha * p * std::pow(q, fp.alpha) * log_p - std::pow(q, fp.alpha + 1.0);
    } else {
      const double wneg = std::pow(1.0 - y, fp.beta);
      l = -wneg * std::pow(p, fp.alpha) * log_q;
      dz = wneg * (std::pow(p, fp.alpha + 1.0) - fp.alpha * std::pow(p, fp.alpha) * q * log_q);
    }
    loss += l;
    if (grad) (*grad)[i] += static_cast<T>(scale * dz * inv_pos);
  }
  return loss * inv_pos;
}

// Mean absolute error over (cx, cy, w, h), normalized by the patch size.
inline double l1_loss(const BoundingBox& pred, const BoundingBox& gt, double patch_size) {
  if (!gt.valid()) throw InputError("l1_loss: degenerate ground-truth box");
  const double pw = std::max(0.0, pred.w), ph = std::max(0.0, pred.h);
  return (std::abs(pred.cx() - gt.cx()) + std::abs(pred.cy() - gt.cy()) + std::abs(pw - gt.w) +
          std::abs(ph - gt.h)) /
         (4.0 * patch_size);
}

inline double giou_loss(const BoundingBox& pred, const BoundingBox& gt) {
  if (!gt.valid()) throw InputError("giou_loss: degenerate ground-truth box");
  BoundingBox p = BoundingBox::from_center(pred.cx(), pred.cy(), std::max(0.0, pred.w), std::max(0.0, pred.h));
  return 1.0 - giou(p, gt);
}

// d/d(cx, cy, w, h) of the two box losses, w and h taken before clamping.
struct BoxLossGrads {
  double cx = 0, cy = 0, w = 0, h = 0;
};

inline BoxLossGrads l1_loss_grad(const BoundingBox& pred, const BoundingBox& gt, double patch_size) {
  auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  const double k = 1.0 / (4.0 * patch_size);
  return {k * sgn(pred.cx() - gt.cx()), k * sgn(pred.cy() - gt.cy()),
          pred.w > 0.0 ? k * sgn(pred.w - gt.w) : 0.0, pred.h > 0.0 ? k * sgn(pred.h - gt.h) : 0.0};
}

inline BoxLossGrads giou_loss_grad(const BoundingBox& pred, const BoundingBox& gt) {
  const double w = std::max(0.0, pred.w), h = std::max(0.0, pred.h);
  const double x1 = pred.cx() - 0.5 * w, x2 = pred.cx() + 0.5 * w;
  const double y1 = pred.cy() - 0.5 * h, y2 = pred.cy() + 0.5 * h;
  const double gx1 = gt.x, gx2 = gt.right(), gy1 = gt.y, gy2 = gt.bottom();

  const double iw = std::min(x2, gx2) - std::max(x1, gx1);
  const double ih = std::min(y2, gy2) - std::max(y1, gy1);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double ap = w * h, ag = gt.w * gt.h;
  const double uni = ap + ag - inter;
  const double cw = std::max(x2, gx2) - std::min(x1, gx1);
  const double chh = std::max(y2, gy2) - std::min(y1, gy1);
  const double hull = cw * chh;

  // L = 2 - I/U - U/C with U = Ap + Ag - I.
  const double dI = -(uni + inter) / (uni * uni) + 1.0 / hull;
  const double dAp = inter / (uni * uni) - 1.0 / hull;
  const double dC = uni / (hull * hull);

  double dx1 = 0, dx2 = 0, dy1 = 0, dy2 = 0;
  if (overlap) {
    if (x1 > gx1) dx1 -= dI * ih;
    if (x2 < gx2) dx2 += dI * ih;
    if (y1 > gy1) dy1 -= dI * iw;
    if (y2 < gy2) dy2 += dI * iw;
  }
  if (x1 < gx1) dx1 -= dC * chh;
  if (x2 > gx2) dx2 += dC * chh;
  if (y1 < gy1) dy1 -= dC * cw;
  if (y2 > gy2) dy2 += dC * cw;

  BoxLossGrads g;
  g.cx = dx1 + dx2;
  g.cy = dy1 + dy2;
  g.w = pred.w > 0.0 ? 0.5 * (dx2 - dx1) + dAp * h : 0.0;
  g.h = pred.h > 0.0 ? 0.5 * (dy2 - dy1) + dAp * w : 0.0;
  return g;
}

struct LossBreakdown {
  double focal = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
  double total = 0.0;
  LossWeights weights;
};

inline LossBreakdown combine_losses(double focal, double l1, double giou_l, const LossWeights& w) {
  return {focal, l1, giou_l, w.lambda_f * focal + w.lambda_l1 * l1 + w.lambda_g * giou_l, w};
}

// Box predicted at the ground-truth peak cell.
template <class T>
BoundingBox box_at_target_cell(const HeadOutput<T>& head, const GroundTruthTarget& t) {
  const std::size_t r = t.peak_row, c = t.peak_col;
  const double s = static_cast<double>(t.stride);
  return BoundingBox::from_center((static_cast<double>(c) + 0.5 + head.offset(0, r, c)) * s,
                                  (static_cast<double>(r) + 0.5 + head.offset(1, r, c)) * s,
                                  static_cast<double>(head.size(0, r, c)) * s,
                                  static_cast<double>(head.size(1, r, c)) * s);
}

// Total objective; box terms are evaluated at the ground-truth peak cell.
// When grads is non-null, d(total)/d(head maps) is accumulated into it.
template <class T>
LossBreakdown total_loss(const HeadOutput<T>& head, const GroundTruthTarget& target, const LossWeights& w,
                         HeadMapGrads<T>* grads = nullptr) {
  if (grads) {
    if (grads->score_logits.empty()) grads->score_logits = BasicTensor<T>(head.score_logits.shape());
    if (grads->size.empty()) grads->size = BasicTensor<T>(head.size.shape());
    if (grads->offset_logits.empty()) grads->offset_logits = BasicTensor<T>(head.offset_logits.shape());
  }
  const double focal =
      focal_loss_logits(head.score_logits, target.center_map, grads ? &grads->score_logits : nullptr, w.lambda_f);
  const BoundingBox pred = box_at_target_cell(head, target);
  const double l1 = l1_loss(pred, target.box, target.patch_size);
  const double gl = giou_loss(pred, target.box);
  if (grads) {
    const auto a = l1_loss_grad(pred, target.box, target.patch_size);
    const auto b = giou_loss_grad(pred, target.box);
    const double s = static_cast<double>(target.stride);
    const double gcx = w.lambda_l1 * a.cx + w.lambda_g * b.cx;
    const double gcy = w.lambda_l1 * a.cy + w.lambda_g * b.cy;
    const double gw = w.lambda_l1 * a.w + w.lambda_g * b.w;
    const double gh = w.lambda_l1 * a.h + w.lambda_g * b.h;
    const std::size_t r = target.peak_row, c = target.peak_col;
    const double ox = head.offset(0, r, c), oy = head.offset(1, r, c);
    grads->offset_logits(0, r, c) += static_cast<T>(gcx * s * ox * (1.0 - ox));
    grads->offset_logits(1, r, c) += static_cast<T>(gcy * s * oy * (1.0 - oy));
    grads->size(0, r, c) += static_cast<T>(gw * s);
    grads->size(1, r, c) += static_cast<T>(gh * s);
  }
  return combine_losses(focal, l1, gl, w);
}

}  // namespace sortrack
