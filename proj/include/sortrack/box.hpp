#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "sortrack/tensor.hpp"

namespace sortrack {

// Axis-aligned box: top-left corner and extent, in pixels.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const noexcept { return x + 0.5 * w; }
  double cy() const noexcept { return y + 0.5 * h; }
  double area() const noexcept { return std::max(0.0, w) * std::max(0.0, h); }
  double right() const noexcept { return x + w; }
  double bottom() const noexcept { return y + h; }
  bool valid() const noexcept { return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y); }

  static BoundingBox from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, w, h};
  }

  bool operator==(const BoundingBox&) const = default;
};

using Trajectory = std::vector<BoundingBox>;

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  return iw > 0.0 && ih > 0.0 ? iw * ih : 0.0;
}

// Extent measured as right - x, like the intersection, so identical boxes
// overlap with IoU exactly 1.
inline double edge_area(const BoundingBox& b) {
  return std::max(0.0, b.right() - b.x) * std::max(0.0, b.bottom() - b.y);
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = edge_area(a) + edge_area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double giou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = edge_area(a) + edge_area(b) - inter;
  const double hull = (std::max(a.right(), b.right()) - std::min(a.x, b.x)) *
                      (std::max(a.bottom(), b.bottom()) - std::min(a.y, b.y));
  if (!(uni > 0.0) || !(hull > 0.0)) return -1.0;
  return inter / uni - (hull - uni) / hull;
}

inline double center_distance(const BoundingBox& a, const BoundingBox& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

// groundtruth.txt: one "x,y,w,h" line per frame.
inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("load_trajectory: cannot open " + path);
  Trajectory out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::array<double, 4> v{};
    std::size_t field = 0, start = 0;
    bool ok = true;
    while (ok && field < 4) {
      std::size_t end = line.find_first_of(",\t ", start);
      if (end == std::string::npos) end = line.size();
      std::string tok = line.substr(start, end - start);
      while (!tok.empty() && tok.back() == '\r') tok.pop_back();
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v[field]);
      ok = ec == std::errc{} && ptr == tok.data() + tok.size() && !tok.empty();
      ++field;
      start = end + 1;
      if (end == line.size() && field < 4) ok = false;
      if (field == 4 && end != line.size() && line.find_first_not_of(" \t\r", end) != std::string::npos) ok = false;
    }
    if (!ok) throw ParseError(path + ": malformed box on line " + std::to_string(line_no));
    out.push_back({v[0], v[1], v[2], v[3]});
  }
  return out;
}

inline void save_trajectory(const Trajectory& boxes, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("save_trajectory: cannot write " + path);
  for (const auto& b : boxes)
    out << format_double(b.x) << ',' << format_double(b.y) << ',' << format_double(b.w) << ',' << format_double(b.h)
        << '\n';
}

}  // namespace sortrack
