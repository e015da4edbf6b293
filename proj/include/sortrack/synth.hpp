#pragma once

// Synthetic benchmark: a textured target moving over a static cluttered
// background, exposure-integrated motion blur and a threshold-crossing event
// camera model driven by the same sharp sub-frame renders.

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "sortrack/config.hpp"
#include "sortrack/sequence.hpp"

namespace sortrack {

enum class MotionModel { linear, sinusoidal, random_walk };
enum class Illumination { normal, hdr, lowlight };

struct SceneSpec {
  std::size_t width = 240;
  std::size_t height = 180;
  std::size_t length = 40;
  std::int64_t frame_period_us = 10000;
  double target_w = 30.0;
  double target_h = 30.0;
  std::uint64_t texture_seed = 1;
  MotionModel motion = MotionModel::linear;
  double speed = 4.0;     // px per frame
  double exposure = 1.0;  // fraction of the frame period, (0, 1]
  double clutter = 4.0;   // background rectangles per 10^4 px
  Illumination light = Illumination::normal;
  double hdr_gain = 6.0;       // radiance multiplier inside the bright band
  double lowlight_gain = 0.2;
  double lowlight_noise = 4.0 / 255.0;

  void validate() const {
    if (width < 16 || height < 16 || length == 0) throw InputError("scene: frame too small or empty sequence");
    if (!(exposure > 0.0) || exposure > 1.0) throw InputError("scene: exposure must lie in (0, 1]");
    if (speed < 0.0) throw InputError("scene: speed must be non-negative");
    if (!(target_w > 0.0) || !(target_h > 0.0)) throw InputError("scene: target size must be positive");
    if (frame_period_us <= 0) throw InputError("scene: frame period must be positive");
  }
};

inline const char* to_string(MotionModel m) {
  switch (m) {
    case MotionModel::linear: return "linear";
    case MotionModel::sinusoidal: return "sinusoidal";
    case MotionModel::random_walk: return "random_walk";
  }
  return "?";
}

inline const char* to_string(Illumination l) {
  switch (l) {
    case Illumination::normal: return "normal";
    case Illumination::hdr: return "hdr";
    case Illumination::lowlight: return "lowlight";
  }
  return "?";
}

// Linear-radiance RGB image, planar 3 x H x W.
using Radiance = BasicTensor<double>;

// Static scene content plus the target's continuous trajectory.
class Scene {
 public:
  Scene(const SceneSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    build_background(rng);
    build_texture();
    build_path(rng);
  }

  const SceneSpec& spec() const { return spec_; }

  // Target center at time t (microseconds from sequence start).
  std::array<double, 2> center(double t_us) const {
    const double f = std::clamp(t_us / static_cast<double>(spec_.frame_period_us) * kPathRes, 0.0,
                                static_cast<double>(path_.size() - 1));
    const auto i = static_cast<std::size_t>(std::floor(f));
    const std::size_t j = std::min(i + 1, path_.size() - 1);
    const double a = f - static_cast<double>(i);
    return {(1.0 - a) * path_[i][0] + a * path_[j][0], (1.0 - a) * path_[i][1] + a * path_[j][1]};
  }

  BoundingBox box(double t_us) const {
    const auto c = center(t_us);
    return BoundingBox::from_center(c[0], c[1], spec_.target_w, spec_.target_h);
  }

  // Sharp scene radiance at time t; values may exceed 1 in the HDR band.
  Radiance render(double t_us) const {
    Radiance img = background_;
    const auto b = box(t_us);
    const std::size_t w = spec_.width, h = spec_.height, plane = w * h;
    const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(b.x)));
    const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(b.y)));
    const auto x1 = static_cast<std::size_t>(std::clamp(std::ceil(b.right()), 0.0, static_cast<double>(w)));
    const auto y1 = static_cast<std::size_t>(std::clamp(std::ceil(b.bottom()), 0.0, static_cast<double>(h)));
    for (std::size_t y = y0; y < y1; ++y) {
      // Box-filter coverage of the pixel by the target rectangle.
      const double cy = std::max(0.0, std::min<double>(static_cast<double>(y) + 1.0, b.bottom()) -
                                          std::max<double>(static_cast<double>(y), b.y));
      for (std::size_t x = x0; x < x1; ++x) {
        const double cx = std::max(0.0, std::min<double>(static_cast<double>(x) + 1.0, b.right()) -
                                            std::max<double>(static_cast<double>(x), b.x));
        const double alpha = cx * cy;
        if (alpha <= 0.0) continue;
        const double u = static_cast<double>(x) + 0.5 - b.x, v = static_cast<double>(y) + 0.5 - b.y;
        const auto tex = texture_at(u, v);
        for (std::size_t c = 0; c < 3; ++c) {
          const double lit = tex[c] * band_gain(x);
          double& dst = img[c * plane + y * w + x];
          dst = (1.0 - alpha) * dst + alpha * lit;
        }
      }
    }
    return img;
  }

  // 8-bit sensor image of an (averaged) radiance, after gain and noise.
  Image8 expose(const Radiance& radiance, std::mt19937_64& noise_rng) const {
    const std::size_t w = spec_.width, h = spec_.height, plane = w * h;
    Image8 img(w, h, 3);
    const double gain = spec_.light == Illumination::lowlight ? spec_.lowlight_gain : 1.0;
    const double sigma = spec_.light == Illumination::lowlight ? spec_.lowlight_noise : 0.0;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double v = gain * radiance[c * plane + y * w + x];
          if (sigma > 0.0) v += sigma * noise(noise_rng);
          img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
    return img;
  }

  // Log luminance seen by the event sensor (unclamped radiance).
  BasicTensor<double> log_luminance(const Radiance& radiance) const {
    const std::size_t plane = spec_.width * spec_.height;
    const double gain = spec_.light == Illumination::lowlight ? spec_.lowlight_gain : 1.0;
    BasicTensor<double> out({spec_.height, spec_.width});
    for (std::size_t i = 0; i < plane; ++i) {
      const double lum = 0.299 * radiance[i] + 0.587 * radiance[plane + i] + 0.114 * radiance[2 * plane + i];
      out[i] = std::log(gain * lum + kLogEpsilon);
    }
    return out;
  }

  // Columns [band_x0, band_x1) of the HDR bright band (empty otherwise).
  std::array<double, 2> band() const { return {band_x0_, band_x1_}; }

  static constexpr double kLogEpsilon = 0.01;
  static constexpr std::size_t kPathRes = 16;  // path samples per frame

 private:
  SceneSpec spec_;
  Radiance background_;
  std::vector<std::array<double, 3>> texture_;
  std::size_t tex_cols_ = 0, tex_rows_ = 0;
  std::vector<std::array<double, 2>> path_;
  double band_x0_ = 0.0, band_x1_ = 0.0;
  static constexpr double kCell = 5.0;  // texture cell size, px

  double band_gain(std::size_t x) const {
    if (spec_.light != Illumination::hdr) return 1.0;
    const double xc = static_cast<double>(x) + 0.5;
    return xc >= band_x0_ && xc < band_x1_ ? spec_.hdr_gain : 1.0;
  }

  void build_background(std::mt19937_64& rng) {
    const std::size_t w = spec_.width, h = spec_.height, plane = w * h;
    background_ = Radiance::map(3, h, w);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    // Smooth low-contrast gradient base.
    const double base = 0.25 + 0.15 * u01(rng), gx = 0.1 * (u01(rng) - 0.5), gy = 0.1 * (u01(rng) - 0.5);
    const std::array<double, 3> tint{0.9 + 0.2 * u01(rng), 0.9 + 0.2 * u01(rng), 0.9 + 0.2 * u01(rng)};
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = base + gx * (static_cast<double>(x) / static_cast<double>(w) - 0.5) +
                         gy * (static_cast<double>(y) / static_cast<double>(h) - 0.5);
        for (std::size_t c = 0; c < 3; ++c) background_[c * plane + y * w + x] = v * tint[c];
      }
    // Clutter: random static rectangles.
    const auto n = static_cast<std::size_t>(std::lround(spec_.clutter * static_cast<double>(plane) / 1e4));
    for (std::size_t r = 0; r < n; ++r) {
      const double rw = 4.0 + 20.0 * u01(rng), rh = 4.0 + 20.0 * u01(rng);
      const double rx = u01(rng) * (static_cast<double>(w) - rw), ry = u01(rng) * (static_cast<double>(h) - rh);
      const std::array<double, 3> col{0.1 + 0.6 * u01(rng), 0.1 + 0.6 * u01(rng), 0.1 + 0.6 * u01(rng)};
      for (auto y = static_cast<std::size_t>(ry); y < static_cast<std::size_t>(ry + rh) && y < h; ++y)
        for (auto x = static_cast<std::size_t>(rx); x < static_cast<std::size_t>(rx + rw) && x < w; ++x)
          for (std::size_t c = 0; c < 3; ++c) background_[c * plane + y * w + x] = col[c];
    }
    if (spec_.light == Illumination::hdr) {
      band_x0_ = static_cast<double>(w) * (0.35 + 0.1 * u01(rng));
      band_x1_ = band_x0_ + static_cast<double>(w) * 0.25;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t c = 0; c < 3; ++c) background_[c * plane + y * w + x] *= band_gain(x);
    }
  }

  void build_texture() {
    std::mt19937_64 rng(spec_.texture_seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    tex_cols_ = static_cast<std::size_t>(std::ceil(spec_.target_w / kCell));
    tex_rows_ = static_cast<std::size_t>(std::ceil(spec_.target_h / kCell));
    texture_.resize(tex_cols_ * tex_rows_);
    const std::array<double, 3> hue{u01(rng), u01(rng), u01(rng)};
    for (auto& t : texture_) {
      const bool bright = u01(rng) < 0.5;
      for (std::size_t c = 0; c < 3; ++c)
        t[c] = bright ? 0.75 + 0.25 * hue[c] * u01(rng) : 0.02 + 0.12 * hue[c] * u01(rng);
    }
  }

  std::array<double, 3> texture_at(double u, double v) const {
    const auto col = std::min(tex_cols_ - 1, static_cast<std::size_t>(std::max(0.0, u) / kCell));
    const auto row = std::min(tex_rows_ - 1, static_cast<std::size_t>(std::max(0.0, v) / kCell));
    return texture_[row * tex_cols_ + col];
  }

  // Sampled at kPathRes points per frame; reflects off a margin that keeps
  // the target fully inside the frame.
  void build_path(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double w = static_cast<double>(spec_.width), h = static_cast<double>(spec_.height);
    const double lo_x = 0.5 * spec_.target_w + 2.0, hi_x = w - 0.5 * spec_.target_w - 2.0;
    const double lo_y = 0.5 * spec_.target_h + 2.0, hi_y = h - 0.5 * spec_.target_h - 2.0;
    double cx = lo_x + (hi_x - lo_x) * (0.25 + 0.5 * u01(rng));
    double cy = lo_y + (hi_y - lo_y) * (0.25 + 0.5 * u01(rng));
    if (spec_.light == Illumination::hdr) cx = lo_x + (band_x0_ - lo_x) * (0.2 + 0.3 * u01(rng));  // start left of band
    double heading = 2.0 * std::numbers::pi * u01(rng);
    if (spec_.light == Illumination::hdr) heading = 0.35 * (u01(rng) - 0.5);  // cross the band
    const std::size_t n = spec_.length * kPathRes + 1;
    const double step = spec_.speed / static_cast<double>(kPathRes);
    const double amp_x = std::min(0.35 * (hi_x - lo_x), 40.0), amp_y = std::min(0.35 * (hi_y - lo_y), 30.0);
    const double ox = cx, oy = cy, phase = 2.0 * std::numbers::pi * u01(rng);
    path_.clear();
    path_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0) {
        if (spec_.motion == MotionModel::sinusoidal) {
          // Angular rate chosen so the peak speed equals spec.speed.
          const double omega = amp_x > 0.0 ? spec_.speed / amp_x : 0.0;
          const double t = static_cast<double>(i) / static_cast<double>(kPathRes);
          cx = ox + amp_x * std::sin(omega * t);
          cy = oy + amp_y * std::sin(0.5 * omega * t + phase) - amp_y * std::sin(phase);
        } else {
          if (spec_.motion == MotionModel::random_walk && i % kPathRes == 0)
            heading += 0.6 * (u01(rng) - 0.5);
          cx += step * std::cos(heading);
          cy += step * std::sin(heading);
        }
        if (cx < lo_x || cx > hi_x) {
          cx = std::clamp(2.0 * std::clamp(cx, lo_x, hi_x) - cx, lo_x, hi_x);
          heading = std::numbers::pi - heading;
        }
        if (cy < lo_y || cy > hi_y) {
          cy = std::clamp(2.0 * std::clamp(cy, lo_y, hi_y) - cy, lo_y, hi_y);
          heading = -heading;
        }
      }
      path_.push_back({cx, cy});
    }
  }
};

// Threshold-crossing event model. log_frames[k] is the log luminance at
// times[k]; each pixel keeps a reference level and fires one event per
// contrast-threshold crossing, timestamped by linear interpolation.
inline std::vector<Event> simulate_events(const std::vector<BasicTensor<double>>& log_frames,
                                          const std::vector<double>& times, const EventSimConfig& cfg) {
  if (!(cfg.threshold > 0.0)) throw InputError("simulate_events: threshold must be positive");
  if (log_frames.size() != times.size()) throw InputError("simulate_events: frames/times length mismatch");
  std::vector<Event> events;
  if (log_frames.empty()) return events;
  const std::size_t h = log_frames[0].dim(0), w = log_frames[0].dim(1), n = h * w;
  std::vector<double> ref(log_frames[0].data());
  std::vector<std::int64_t> last(n, std::numeric_limits<std::int64_t>::min() / 2);
  const double c = cfg.threshold;
  for (std::size_t k = 1; k < log_frames.size(); ++k) {
    const auto& prev = log_frames[k - 1];
    const auto& cur = log_frames[k];
    if (cur.size() != n) throw ShapeError("simulate_events: frame size changed");
    const double t0 = times[k - 1], dt = times[k] - times[k - 1];
    for (std::size_t i = 0; i < n; ++i) {
      const double a = prev[i], b = cur[i];
      if (a == b && std::abs(b - ref[i]) < c) continue;
      for (;;) {
        const double diff = b - ref[i];
        int p = 0;
        if (diff >= c) p = 1;
        else if (diff <= -c) p = -1;
        if (p == 0) break;
        ref[i] += p * c;
        const double frac = b != a ? std::clamp((ref[i] - a) / (b - a), 0.0, 1.0) : 1.0;
        const auto t = static_cast<std::int64_t>(std::floor(t0 + frac * dt));
        if (t - last[i] < cfg.refractory_us) continue;
        last[i] = t;
        events.push_back({static_cast<int>(i % w), static_cast<int>(i / w), t, p});
      }
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return events;
}

struct RenderedSequence {
  std::vector<Image8> frames;
  std::vector<Image8> sharp;  // mid-exposure sharp frames
  Trajectory groundtruth;
  std::vector<Event> events;
  SequenceMeta meta;
};

inline RenderedSequence render_sequence(const SceneSpec& spec, std::uint64_t seed, const EventSimConfig& ev = {}) {
  if (ev.substeps < 2) throw InputError("render_sequence: at least 2 substeps per frame");
  const Scene scene(spec, seed);
  std::mt19937_64 noise_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  RenderedSequence out;
  const auto period = static_cast<double>(spec.frame_period_us);
  const auto n_exp = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(ev.substeps) * spec.exposure)));

  out.meta.width = spec.width;
  out.meta.height = spec.height;
  out.meta.num_frames = spec.length;
  out.meta.frame_period_us = spec.frame_period_us;
  for (std::size_t f = 0; f < spec.length; ++f) {
    const double start = static_cast<double>(f) * period, len = spec.exposure * period;
    Radiance acc = Radiance::map(3, spec.height, spec.width);
    for (std::size_t k = 0; k < n_exp; ++k) {
      const auto r = scene.render(start + (static_cast<double>(k) + 0.5) * len / static_cast<double>(n_exp));
      acc += r;
    }
    acc *= 1.0 / static_cast<double>(n_exp);
    out.frames.push_back(scene.expose(acc, noise_rng));
    out.sharp.push_back(scene.expose(scene.render(start + 0.5 * len), noise_rng));
    out.groundtruth.push_back(scene.box(start + 0.5 * len));
    out.meta.exposure.push_back({static_cast<std::int64_t>(start), static_cast<std::int64_t>(std::llround(start + len))});
  }

  std::vector<BasicTensor<double>> logs;
  std::vector<double> times;
  const std::size_t steps = spec.length * ev.substeps;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * period / static_cast<double>(ev.substeps);
    times.push_back(t);
    logs.push_back(scene.log_luminance(scene.render(t)));
  }
  out.events = simulate_events(logs, times, ev);

  out.meta.extra["motion"] = to_string(spec.motion);
  out.meta.extra["illumination"] = to_string(spec.light);
  out.meta.extra["speed_px_per_frame"] = spec.speed;
  out.meta.extra["exposure_fraction"] = spec.exposure;
  out.meta.extra["seed"] = seed;
  out.meta.extra["event_threshold"] = ev.threshold;
  out.meta.extra["event_substeps"] = ev.substeps;
  if (spec.light == Illumination::hdr) {
    const auto b = scene.band();
    out.meta.extra["hdr_band_x"] = {b[0], b[1]};
  }
  return out;
}

inline void write_sequence(const RenderedSequence& seq, const fs::path& dir) {
  fs::create_directories(dir / "frames");
  for (std::size_t i = 0; i < seq.frames.size(); ++i)
    write_png(seq.frames[i], (dir / "frames" / frame_filename(i)).string());
  save_events(seq.events, (dir / "events.csv").string());
  save_trajectory(seq.groundtruth, (dir / "groundtruth.txt").string());
  std::ofstream meta(dir / "meta.json", std::ios::binary);
  meta << meta_to_json(seq.meta).dump(2) << '\n';
}

struct PresetEntry {
  std::string name;
  SceneSpec spec;
  std::uint64_t seed;
};

// Four sequences per condition. Sequence seeds derive from the base seed so
// disjoint base seeds give disjoint sets.
inline std::vector<PresetEntry> preset_specs(const std::string& preset, std::uint64_t seed) {
  const bool all = preset == "all";
  if (!all && preset != "blur" && preset != "hdr" && preset != "lowlight")
    throw InputError("gen-synth: unknown preset '" + preset + "' (blur, hdr, lowlight, all)");
  std::vector<PresetEntry> out;
  const std::array<MotionModel, 4> motions{MotionModel::linear, MotionModel::sinusoidal, MotionModel::random_walk,
                                           MotionModel::linear};
  auto add = [&](const std::string& cond, Illumination light, std::size_t cond_index) {
    for (std::size_t i = 0; i < 4; ++i) {
      const std::uint64_t s = seed * 1000003ULL + cond_index * 101ULL + i;
      std::mt19937_64 rng(s);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      SceneSpec spec;
      spec.motion = motions[i];
      spec.light = light;
      spec.texture_seed = s + 7;
      spec.target_w = 26.0 + 8.0 * u01(rng);
      spec.target_h = 26.0 + 8.0 * u01(rng);
      if (light == Illumination::normal) {
        spec.speed = 5.0 + 4.0 * u01(rng);
        spec.exposure = 1.0;
      } else {
        spec.speed = 3.0 + 2.0 * u01(rng);
        spec.exposure = 0.6;
      }
      char name[32];
      std::snprintf(name, sizeof name, "%s_%02zu", cond.c_str(), i);
      out.push_back({name, spec, s});
    }
  };
  if (all || preset == "blur") add("blur", Illumination::normal, 0);
  if (all || preset == "hdr") add("hdr", Illumination::hdr, 1);
  if (all || preset == "lowlight") add("lowlight", Illumination::lowlight, 2);
  return out;
}

}  // namespace sortrack
