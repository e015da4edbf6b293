#pragma once

// Sequence directory layout:
//   frames/000000.png ...   RGB frames
//   events.csv              "x,y,t,p" lines, sorted by t
//   groundtruth.txt         one "x,y,w,h" line per frame
//   meta.json               frame size, period and per-frame exposure windows

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sortrack/box.hpp"
#include "sortrack/event_io.hpp"
#include "sortrack/image_io.hpp"

namespace sortrack {

namespace fs = std::filesystem;

struct SequenceMeta {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t num_frames = 0;
  std::int64_t frame_period_us = 10000;
  std::vector<TimeWindow> exposure;
  nlohmann::json extra = nlohmann::json::object();
};

inline std::string frame_filename(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.png", i);
  return buf;
}

inline nlohmann::ordered_json meta_to_json(const SequenceMeta& m) {
  nlohmann::ordered_json j;
  j["width"] = m.width;
  j["height"] = m.height;
  j["num_frames"] = m.num_frames;
  j["frame_period_us"] = m.frame_period_us;
  auto exp = nlohmann::ordered_json::array();
  for (const auto& w : m.exposure) exp.push_back({w.start, w.end});
  j["exposure_us"] = exp;
  for (auto it = m.extra.begin(); it != m.extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

inline SequenceMeta meta_from_json(const nlohmann::json& j) {
  SequenceMeta m;
  m.width = j.at("width").get<std::size_t>();
  m.height = j.at("height").get<std::size_t>();
  m.num_frames = j.at("num_frames").get<std::size_t>();
  m.frame_period_us = j.value("frame_period_us", std::int64_t{10000});
  if (j.contains("exposure_us"))
    for (const auto& w : j.at("exposure_us")) m.exposure.push_back({w.at(0).get<std::int64_t>(), w.at(1).get<std::int64_t>()});
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "width" && it.key() != "height" && it.key() != "num_frames" && it.key() != "frame_period_us" &&
        it.key() != "exposure_us")
      m.extra[it.key()] = it.value();
  return m;
}

struct Sequence {
  std::string name;
  fs::path dir;
  SequenceMeta meta;
  Trajectory groundtruth;
  std::vector<Event> events;

  std::size_t size() const { return groundtruth.size(); }
  fs::path frame_path(std::size_t i) const { return dir / "frames" / frame_filename(i); }
  FeatureMap frame(std::size_t i) const { return to_planar(read_png(frame_path(i).string())); }

  // Exposure window of frame i; falls back to the whole frame period.
  TimeWindow window(std::size_t i) const {
    if (i < meta.exposure.size()) return meta.exposure[i];
    const auto t0 = static_cast<std::int64_t>(i) * meta.frame_period_us;
    return {t0, t0 + meta.frame_period_us};
  }

  EventFrame event_frame(std::size_t i) const { return accumulate(events, window(i), meta.height, meta.width); }
};

inline Sequence load_sequence(const fs::path& dir) {
  Sequence s;
  s.dir = dir;
  s.name = dir.filename().string();
  if (s.name.empty()) s.name = dir.parent_path().filename().string();
  const auto meta_path = dir / "meta.json";
  const auto gt_path = dir / "groundtruth.txt";
  if (!fs::exists(gt_path)) throw InputError("load_sequence: missing " + gt_path.string());
  s.groundtruth = load_trajectory(gt_path.string());
  if (fs::exists(meta_path)) {
    std::ifstream in(meta_path);
    try {
      s.meta = meta_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("load_sequence: bad meta.json in " + dir.string() + ": " + e.what());
    }
  } else {
    const auto first = read_png(s.frame_path(0).string());
    s.meta.width = first.width;
    s.meta.height = first.height;
    s.meta.num_frames = s.groundtruth.size();
  }
  if (s.meta.num_frames != s.groundtruth.size())
    throw InputError("load_sequence: " + std::to_string(s.groundtruth.size()) + " boxes for " +
                     std::to_string(s.meta.num_frames) + " frames in " + dir.string());
  const auto ev_path = dir / "events.csv";
  if (fs::exists(ev_path)) s.events = load_events(ev_path.string());
  return s;
}

// Sequence directories directly below root (or root itself if it is one).
inline std::vector<fs::path> find_sequences(const fs::path& root) {
  if (fs::exists(root / "groundtruth.txt")) return {root};
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) throw InputError("find_sequences: not a directory: " + root.string());
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "groundtruth.txt")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sortrack
