#pragma once

// One-pass evaluation: success (IoU) curve and AUC, center-error precision,
// size-normalized precision and overlap precision at 0.5 / 0.75.
// Frame 0 is the initialization frame and is excluded.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sortrack/box.hpp"
#include "sortrack/image_io.hpp"

namespace sortrack {

inline constexpr std::size_t kSuccessPoints = 51;    // IoU thresholds 0:0.02:1
inline constexpr std::size_t kPrecisionPoints = 51;  // pixel thresholds 0:1:50
inline constexpr std::size_t kNormPrecisionPoints = 51;  // normalized thresholds 0:0.01:0.5
inline constexpr double kPrecisionThresholdPx = 20.0;

inline double success_threshold(std::size_t i) { return static_cast<double>(i) / 50.0; }
inline double precision_threshold(std::size_t i) { return static_cast<double>(i); }
inline double norm_precision_threshold(std::size_t i) { return static_cast<double>(i) / 100.0; }

// Frame counts as a success at threshold t when IoU > t; at t = 1 the test
// is IoU >= 1 so an exact tracker reaches 100.
inline bool overlap_success(double overlap, std::size_t i) {
  return i + 1 == kSuccessPoints ? overlap >= 1.0 : overlap > success_threshold(i);
}

struct MetricsReport {
  std::size_t frames = 0;  // evaluated frames
  double auc = 0.0;
  double pr = 0.0;
  double npr = 0.0;
  double op50 = 0.0;
  double op75 = 0.0;
  std::vector<double> success_curve = std::vector<double>(kSuccessPoints, 0.0);
  std::vector<double> precision_curve = std::vector<double>(kPrecisionPoints, 0.0);
  std::vector<double> norm_precision_curve = std::vector<double>(kNormPrecisionPoints, 0.0);

  bool operator==(const MetricsReport&) const = default;
};

inline void finalize_scalars(MetricsReport& r) {
  double s = 0.0;
  for (double v : r.success_curve) s += v;
  r.auc = s / static_cast<double>(kSuccessPoints);
  r.pr = r.precision_curve[static_cast<std::size_t>(kPrecisionThresholdPx)];
  double n = 0.0;
  for (double v : r.norm_precision_curve) n += v;
  r.npr = n / static_cast<double>(kNormPrecisionPoints);
}

inline MetricsReport evaluate(const Trajectory& pred, const Trajectory& gt) {
  if (pred.size() != gt.size())
    throw InputError("evaluate: " + std::to_string(pred.size()) + " predictions for " + std::to_string(gt.size()) +
                     " ground-truth boxes");
  MetricsReport r;
  if (gt.size() <= 1) return r;
  r.frames = gt.size() - 1;
  std::vector<std::size_t> succ(kSuccessPoints, 0), prec(kPrecisionPoints, 0), nprec(kNormPrecisionPoints, 0);
  std::size_t op50 = 0, op75 = 0;
  for (std::size_t f = 1; f < gt.size(); ++f) {
    const double o = iou(pred[f], gt[f]);
    const double err = center_distance(pred[f], gt[f]);
    const double nerr = err / std::sqrt(gt[f].w * gt[f].h);
    for (std::size_t i = 0; i < kSuccessPoints; ++i) succ[i] += overlap_success(o, i);
    for (std::size_t i = 0; i < kPrecisionPoints; ++i) prec[i] += err <= precision_threshold(i);
    for (std::size_t i = 0; i < kNormPrecisionPoints; ++i) nprec[i] += nerr <= norm_precision_threshold(i);
    op50 += o > 0.5;
    op75 += o > 0.75;
  }
  // Divide last so that count == frames gives exactly 100.
  const auto pct = [&](std::size_t count) { return 100.0 * static_cast<double>(count) / static_cast<double>(r.frames); };
  for (std::size_t i = 0; i < kSuccessPoints; ++i) r.success_curve[i] = pct(succ[i]);
  for (std::size_t i = 0; i < kPrecisionPoints; ++i) r.precision_curve[i] = pct(prec[i]);
  for (std::size_t i = 0; i < kNormPrecisionPoints; ++i) r.norm_precision_curve[i] = pct(nprec[i]);
  r.op50 = pct(op50);
  r.op75 = pct(op75);
  finalize_scalars(r);
  return r;
}

// Frame-pooled aggregate: every curve point and scalar is the frame-weighted
// mean over the input reports.
inline MetricsReport aggregate(const std::vector<MetricsReport>& reports) {
  MetricsReport out;
  for (const auto& r : reports) out.frames += r.frames;
  if (out.frames == 0) return out;
  auto pool = [&](auto member) {
    std::vector<double> acc((reports.front().*member).size(), 0.0);
    for (const auto& r : reports)
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(r.frames) * (r.*member)[i];
    for (auto& v : acc) v /= static_cast<double>(out.frames);
    return acc;
  };
  out.success_curve = pool(&MetricsReport::success_curve);
  out.precision_curve = pool(&MetricsReport::precision_curve);
  out.norm_precision_curve = pool(&MetricsReport::norm_precision_curve);
  double op50 = 0.0, op75 = 0.0;
  for (const auto& r : reports) {
    op50 += static_cast<double>(r.frames) * r.op50;
    op75 += static_cast<double>(r.frames) * r.op75;
  }
  out.op50 = op50 / static_cast<double>(out.frames);
  out.op75 = op75 / static_cast<double>(out.frames);
  finalize_scalars(out);
  return out;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["aggregation"] = "frame-pooled";
  j["frames"] = r.frames;
  j["auc"] = r.auc;
  j["pr"] = r.pr;
  j["npr"] = r.npr;
  j["op50"] = r.op50;
  j["op75"] = r.op75;
  j["success_thresholds"] = "0:0.02:1 (IoU > t; IoU >= 1 at t = 1)";
  j["success_curve"] = r.success_curve;
  j["precision_thresholds_px"] = "0:1:50 (error <= t)";
  j["precision_curve"] = r.precision_curve;
  j["norm_precision_thresholds"] = "0:0.01:0.5 (error / sqrt(w*h) <= t)";
  j["norm_precision_curve"] = r.norm_precision_curve;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.frames = j.at("frames").get<std::size_t>();
  r.auc = j.at("auc").get<double>();
  r.pr = j.at("pr").get<double>();
  r.npr = j.at("npr").get<double>();
  r.op50 = j.at("op50").get<double>();
  r.op75 = j.at("op75").get<double>();
  r.success_curve = j.at("success_curve").get<std::vector<double>>();
  r.precision_curve = j.at("precision_curve").get<std::vector<double>>();
  r.norm_precision_curve = j.at("norm_precision_curve").get<std::vector<double>>();
  return r;
}

inline void write_report(const MetricsReport& r, const std::string& path,
                         const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("write_report: cannot write " + path);
  auto j = report_to_json(r);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  out << j.dump(2) << '\n';
}

inline MetricsReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("read_report: cannot open " + path);
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("read_report: " + path + ": " + e.what());
  }
}

// Minimal line plot of y in [0, 100] against x in [x_lo, x_hi].
inline Image8 plot_curve(const std::vector<double>& y, double x_lo, double x_hi, std::size_t width = 320,
                         std::size_t height = 240) {
  Image8 img(width, height, 3, 255);
  const std::size_t m = 24;  // margin
  auto px = [&](double x) { return m + static_cast<std::size_t>(std::lround((x - x_lo) / (x_hi - x_lo) * static_cast<double>(width - 2 * m))); };
  auto py = [&](double v) { return height - m - static_cast<std::size_t>(std::lround(std::clamp(v, 0.0, 100.0) / 100.0 * static_cast<double>(height - 2 * m))); };
  auto dot = [&](std::size_t x, std::size_t y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x >= width || y >= height) return;
    img.at(y, x, 0) = r;
    img.at(y, x, 1) = g;
    img.at(y, x, 2) = b;
  };
  for (std::size_t x = m; x <= width - m; ++x) dot(x, height - m, 0, 0, 0);
  for (std::size_t yy = m; yy <= height - m; ++yy) dot(m, yy, 0, 0, 0);
  for (int tick = 0; tick <= 4; ++tick) {
    const auto yy = py(25.0 * tick);
    for (std::size_t x = m + 1; x <= width - m; x += 4) dot(x, yy, 200, 200, 200);
  }
  if (y.size() < 2) return img;
  for (std::size_t i = 0; i + 1 < y.size(); ++i) {
    const double xa = x_lo + (x_hi - x_lo) * static_cast<double>(i) / static_cast<double>(y.size() - 1);
    const double xb = x_lo + (x_hi - x_lo) * static_cast<double>(i + 1) / static_cast<double>(y.size() - 1);
    const int steps = 32;
    for (int s = 0; s <= steps; ++s) {
      const double a = static_cast<double>(s) / steps;
      const auto x = px((1 - a) * xa + a * xb), yy = py((1 - a) * y[i] + a * y[i + 1]);
      dot(x, yy, 200, 30, 30);
      dot(x, yy + 1, 200, 30, 30);
    }
  }
  return img;
}

}  // namespace sortrack
