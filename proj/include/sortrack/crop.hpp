#pragma once

#include <cmath>
#include <utility>

#include "sortrack/box.hpp"
#include "sortrack/event_io.hpp"
#include "sortrack/tensor.hpp"

namespace sortrack {

// Affine map between frame pixels and a square resized patch:
//   patch = (frame - origin) * scale.
struct CropMapping {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double scale = 1.0;  // patch pixels per frame pixel
  std::size_t out_size = 0;
  bool padded = false;
  std::size_t padded_pixels = 0;

  double side() const { return static_cast<double>(out_size) / scale; }

  BoundingBox to_patch(const BoundingBox& b) const {
    return {(b.x - origin_x) * scale, (b.y - origin_y) * scale, b.w * scale, b.h * scale};
  }
  BoundingBox to_frame(const BoundingBox& b) const {
    return {b.x / scale + origin_x, b.y / scale + origin_y, b.w / scale, b.h / scale};
  }
};

inline CropMapping crop_geometry(const BoundingBox& box, double factor, std::size_t out_size) {
  if (!(box.w > 0.0) || !(box.h > 0.0)) throw InputError("crop_patch: box must have positive area");
  if (!(factor > 0.0) || out_size == 0) throw InputError("crop_patch: factor and size must be positive");
  const double side = factor * std::sqrt(box.w * box.h);
  CropMapping m;
  m.origin_x = box.cx() - 0.5 * side;
  m.origin_y = box.cy() - 0.5 * side;
  m.scale = static_cast<double>(out_size) / side;
  m.out_size = out_size;
  return m;
}

// Square crop of side factor * sqrt(w * h) around the box center, bilinearly
// resized to out_size. Samples falling outside the frame take the per-channel
// frame mean.
inline std::pair<FeatureMap, CropMapping> crop_patch(const FeatureMap& frame, const BoundingBox& box, double factor,
                                                     std::size_t out_size) {
  require_rank(frame, 3, "crop_patch");
  auto m = crop_geometry(box, factor, out_size);
  const std::size_t c = frame.channels(), h = frame.height(), w = frame.width();
  std::vector<double> mean(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (float v : frame.channel(ch)) s += v;
    mean[ch] = s / static_cast<double>(h * w);
  }
  FeatureMap patch = FeatureMap::map(c, out_size, out_size);
  const double inv = 1.0 / m.scale;
  for (std::size_t v = 0; v < out_size; ++v) {
    const double fy = m.origin_y + (static_cast<double>(v) + 0.5) * inv - 0.5;
    for (std::size_t u = 0; u < out_size; ++u) {
      const double fx = m.origin_x + (static_cast<double>(u) + 0.5) * inv - 0.5;
      if (fx < -0.5 || fy < -0.5 || fx > static_cast<double>(w) - 0.5 || fy > static_cast<double>(h) - 0.5) {
        for (std::size_t ch = 0; ch < c; ++ch) patch(ch, v, u) = static_cast<float>(mean[ch]);
        ++m.padded_pixels;
        continue;
      }
      const double cx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const double cy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(cx)), y0 = static_cast<std::size_t>(std::floor(cy));
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = cx - static_cast<double>(x0), ay = cy - static_cast<double>(y0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = (1.0 - ax) * frame(ch, y0, x0) + ax * frame(ch, y0, x1);
        const double bot = (1.0 - ax) * frame(ch, y1, x0) + ax * frame(ch, y1, x1);
        patch(ch, v, u) = static_cast<float>((1.0 - ay) * top + ay * bot);
      }
    }
  }
  m.padded = m.padded_pixels > 0;
  return {std::move(patch), m};
}

// Integer-aligned sub-window of an event frame covering the crop square
// (clipped to the frame), used for orientation estimation.
inline EventFrame crop_event_frame(const EventFrame& frame, const CropMapping& m) {
  const auto clampi = [](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(hi)));
  };
  const std::size_t x0 = clampi(std::floor(m.origin_x), frame.width);
  const std::size_t y0 = clampi(std::floor(m.origin_y), frame.height);
  const std::size_t x1 = clampi(std::ceil(m.origin_x + m.side()), frame.width);
  const std::size_t y1 = clampi(std::ceil(m.origin_y + m.side()), frame.height);
  EventFrame out(y1 > y0 ? y1 - y0 : 0, x1 > x0 ? x1 - x0 : 0, frame.window);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      out.pos_counts[(y - y0) * out.width + (x - x0)] = frame.pos_counts[y * frame.width + x];
      out.neg_counts[(y - y0) * out.width + (x - x0)] = frame.neg_counts[y * frame.width + x];
    }
  return out;
}

}  // namespace sortrack
