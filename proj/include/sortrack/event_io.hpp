#pragma once

// Event streams: CSV persistence, temporal-window accumulation into count
// frames, 3-channel rendering and ImageNet-style normalization.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "sortrack/tensor.hpp"

namespace sortrack {

struct Event {
  int x = 0;
  int y = 0;
  std::int64_t t = 0;  // microseconds
  int p = 1;           // +1 or -1

  bool operator==(const Event&) const = default;
};

struct TimeWindow {
  std::int64_t start = 0;  // inclusive
  std::int64_t end = 0;    // exclusive

  bool contains(std::int64_t t) const noexcept { return t >= start && t < end; }
  bool operator==(const TimeWindow&) const = default;
};

struct EventFrame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> pos_counts;
  std::vector<std::uint32_t> neg_counts;
  TimeWindow window;

  EventFrame() = default;
  EventFrame(std::size_t h, std::size_t w, TimeWindow win)
      : height(h), width(w), pos_counts(h * w, 0), neg_counts(h * w, 0), window(win) {}

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto v : pos_counts) s += v;
    for (auto v : neg_counts) s += v;
    return s;
  }

  // pos - neg as a single-channel map.
  BasicTensor<double> signed_counts() const {
    BasicTensor<double> out = BasicTensor<double>::map(1, height, width);
    for (std::size_t i = 0; i < pos_counts.size(); ++i)
      out[i] = static_cast<double>(pos_counts[i]) - static_cast<double>(neg_counts[i]);
    return out;
  }
};

inline bool is_time_sorted(const std::vector<Event>& events) {
  return std::is_sorted(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
}

inline EventFrame accumulate(const std::vector<Event>& events, TimeWindow window, std::size_t height,
                             std::size_t width) {
  if (window.end <= window.start) throw InputError("accumulate: empty time window");
  if (height == 0 || width == 0) throw InputError("accumulate: zero frame size");
  if (!is_time_sorted(events)) throw InputError("accumulate: event stream not sorted by timestamp");
  EventFrame frame(height, width, window);
  auto first = std::lower_bound(events.begin(), events.end(), window.start,
                                [](const Event& e, std::int64_t t) { return e.t < t; });
  for (auto it = first; it != events.end() && it->t < window.end; ++it) {
    if (it->x < 0 || it->y < 0 || static_cast<std::size_t>(it->x) >= width ||
        static_cast<std::size_t>(it->y) >= height)
      throw InputError("accumulate: event at (" + std::to_string(it->x) + "," + std::to_string(it->y) +
                       ") outside " + std::to_string(width) + "x" + std::to_string(height) + " frame");
    const std::size_t idx = static_cast<std::size_t>(it->y) * width + static_cast<std::size_t>(it->x);
    if (it->p > 0)
      ++frame.pos_counts[idx];
    else
      ++frame.neg_counts[idx];
  }
  return frame;
}

inline constexpr std::uint32_t kDefaultEventClip = 4;

// Channel 0: positive counts, channel 1: negative counts, channel 2: zero.
// Values are on the 0..255 pixel scale so they share RGB preprocessing.
inline FeatureMap render_event_frame(const EventFrame& frame, std::uint32_t clip = kDefaultEventClip) {
  if (clip < 1) throw InputError("render_event_frame: clip must be >= 1");
  FeatureMap img = FeatureMap::map(3, frame.height, frame.width);
  const double scale = 255.0 / static_cast<double>(clip);
  const std::size_t plane = frame.height * frame.width;
  for (std::size_t i = 0; i < plane; ++i) {
    img[i] = static_cast<float>(std::min(frame.pos_counts[i], clip) * scale);
    img[plane + i] = static_cast<float>(std::min(frame.neg_counts[i], clip) * scale);
  }
  return img;
}

struct NormalizationStats {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};

  static NormalizationStats imagenet() { return {}; }
};

inline void check_stats(const FeatureMap& image, const NormalizationStats& stats, const char* what) {
  require_rank(image, 3, what);
  if (image.channels() != 3) throw ShapeError(std::string(what) + ": expected 3 channels");
  for (double s : stats.std)
    if (!(s > 0.0)) throw InputError(std::string(what) + ": std must be positive");
}

inline FeatureMap normalize(const FeatureMap& image, const NormalizationStats& stats = {}) {
  check_stats(image, stats, "normalize");
  FeatureMap out(image.shape());
  const std::size_t plane = image.plane();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i)
      out[i] = static_cast<float>((image[i] / 255.0 - stats.mean[c]) / stats.std[c]);
  return out;
}

inline FeatureMap denormalize(const FeatureMap& image, const NormalizationStats& stats = {}) {
  check_stats(image, stats, "denormalize");
  FeatureMap out(image.shape());
  const std::size_t plane = image.plane();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i)
      out[i] = static_cast<float>((image[i] * stats.std[c] + stats.mean[c]) * 255.0);
  return out;
}

namespace detail {

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace detail

// One event per line: "x,y,t,p" with p in {1,-1}. Blank lines are skipped.
inline Event parse_event_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string_view> fields;
  for (std::size_t start = 0;;) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  Event e;
  long long t = 0;
  if (fields.size() != 4 || !detail::parse_int(fields[0], e.x) || !detail::parse_int(fields[1], e.y) ||
      !detail::parse_int(fields[2], t) || !detail::parse_int(fields[3], e.p) || (e.p != 1 && e.p != -1))
    throw ParseError("events: malformed line " + std::to_string(line_no) + ": '" + std::string(line) + "'");
  e.t = t;
  return e;
}

inline std::vector<Event> load_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("load_events: cannot open " + path);
  std::vector<Event> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    events.push_back(parse_event_line(line, line_no));
  }
  return events;
}

inline void save_events(const std::vector<Event>& events, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("save_events: cannot write " + path);
  std::string buf;
  buf.reserve(events.size() * 20);
  for (const auto& e : events) {
    buf += std::to_string(e.x);
    buf += ',';
    buf += std::to_string(e.y);
    buf += ',';
    buf += std::to_string(e.t);
    buf += ',';
    buf += e.p > 0 ? "1" : "-1";
    buf += '\n';
  }
  out << buf;
}

}  // namespace sortrack
