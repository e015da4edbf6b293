#pragma once

// Layered configuration: built-in defaults < key=value file < flag overrides.
// Keys carry a section prefix ("stem.block", "odm.k", ...).

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sortrack/box.hpp"
#include "sortrack/head_loss.hpp"
#include "sortrack/odm.hpp"
#include "sortrack/stem.hpp"

namespace sortrack {

enum class StemMode { granular, strided };

struct CropSpec {
  std::size_t template_size = 128;
  double template_factor = 2.0;
  std::size_t search_size = 256;
  double search_factor = 4.0;
};

struct TrackSpec {
  // Fraction of the decoded size change applied per frame. The crop follows
  // the previous box, so any per-frame size bias compounds; 1 = no damping.
  double size_rate = 0.5;
};

struct EventSimConfig {
  double threshold = 0.15;  // log-intensity contrast C
  std::size_t substeps = 8;
  std::int64_t refractory_us = 0;
};

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 1;  // samples averaged per step
  double lr = 1e-2;
  bool cosine = true;  // lr decays to 0 over the run along a half cosine
  double momentum = 0.9;
  double clip_norm = 5.0;
  double gabor_lr_scale = 0.01;  // Gabor coefficients see gradients summed over every pixel
  std::size_t seed = 0;
  std::size_t max_gap = 3;  // search crop centered on the box this many frames back, at most
  double scale_jitter = 0.2;  // search crop side scaled by exp(U(-j, j)); 0 = exact box size
};

struct Config {
  StemConfig stem;
  StemMode stem_mode = StemMode::granular;
  std::size_t k = 4;
  std::size_t kernel_size = 5;
  GaborParams gabor;
  double phi_smoothing = kDefaultPhiSmoothing;
  bool use_sor = true;
  CropSpec crop;
  TrackSpec track;
  LossWeights loss;
  std::uint32_t event_clip = kDefaultEventClip;
  EventSimConfig events;
  TrainConfig train;

  using Ref = std::variant<std::size_t*, double*, bool*, std::uint32_t*, std::int64_t*, StemMode*>;

  std::vector<std::pair<std::string, Ref>> fields() {
    return {{"stem.block", &stem.block},
            {"stem.latent_dim", &stem.latent_dim},
            {"stem.groups", &stem.groups},
            {"stem.mode", &stem_mode},
            {"odm.k", &k},
            {"odm.kernel_size", &kernel_size},
            {"odm.sigma", &gabor.sigma},
            {"odm.lambda", &gabor.lambda},
            {"odm.gamma", &gabor.gamma},
            {"odm.psi", &gabor.psi},
            {"odm.phi_smoothing", &phi_smoothing},
            {"sor.enabled", &use_sor},
            {"crop.template_size", &crop.template_size},
            {"crop.template_factor", &crop.template_factor},
            {"crop.search_size", &crop.search_size},
            {"crop.search_factor", &crop.search_factor},
            {"track.size_rate", &track.size_rate},
            {"loss.lambda_f", &loss.lambda_f},
            {"loss.lambda_l1", &loss.lambda_l1},
            {"loss.lambda_g", &loss.lambda_g},
            {"events.clip", &event_clip},
            {"events.threshold", &events.threshold},
            {"events.substeps", &events.substeps},
            {"events.refractory_us", &events.refractory_us},
            {"train.steps", &train.steps},
            {"train.batch", &train.batch},
            {"train.lr", &train.lr},
            {"train.cosine", &train.cosine},
            {"train.momentum", &train.momentum},
            {"train.clip_norm", &train.clip_norm},
            {"train.gabor_lr_scale", &train.gabor_lr_scale},
            {"train.seed", &train.seed},
            {"train.max_gap", &train.max_gap},
            {"train.scale_jitter", &train.scale_jitter}};
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& [name, ref] : fields()) {
      if (name != key) continue;
      const bool ok = std::visit([&](auto* p) { return parse_into(value, *p); }, ref);
      if (!ok) throw ParseError("config: bad value '" + value + "' for " + key);
      return;
    }
    throw ParseError("config: unknown key '" + key + "'");
  }

  std::map<std::string, std::string> entries() const {
    std::map<std::string, std::string> out;
    for (auto& [name, ref] : const_cast<Config*>(this)->fields())
      out[name] = std::visit([](auto* p) { return to_text(*p); }, ref);
    return out;
  }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries()) os << k << '=' << v << '\n';
    return os.str();
  }

  // Lines "key = value"; '#' starts a comment.
  void load_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("config: line " + std::to_string(line_no) + " has no '='");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    load_text(ss.str());
  }

  void validate() const {
    stem.validate();
    if (k == 0) throw InputError("config: odm.k must be >= 1");
    if (kernel_size % 2 == 0) throw InputError("config: odm.kernel_size must be odd");
    gabor.validate();
    if (crop.template_size % stem.block != 0 || crop.search_size % stem.block != 0)
      throw InputError("config: crop sizes must be divisible by stem.block");
    if (crop.template_factor < 1.0 || crop.search_factor < 1.0) throw InputError("config: crop factors must be >= 1");
    if (!(track.size_rate > 0.0 && track.size_rate <= 1.0)) throw InputError("config: track.size_rate must be in (0, 1]");
    if (event_clip < 1) throw InputError("config: events.clip must be >= 1");
    if (train.batch < 1) throw InputError("config: train.batch must be >= 1");
    if (!(events.threshold > 0.0) || events.substeps < 2) throw InputError("config: invalid event simulator settings");
  }

 private:
  template <class V>
  static bool parse_into(const std::string& s, V& out) {
    if constexpr (std::is_same_v<V, bool>) {
      if (s == "true" || s == "1") return out = true, true;
      if (s == "false" || s == "0") return out = false, true;
      return false;
    } else if constexpr (std::is_same_v<V, StemMode>) {
      if (s == "granular") return out = StemMode::granular, true;
      if (s == "strided") return out = StemMode::strided, true;
      return false;
    } else {
      V v{};
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size()) return false;
      out = v;
      return true;
    }
  }

  template <class V>
  static std::string to_text(const V& v) {
    if constexpr (std::is_same_v<V, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_same_v<V, StemMode>) {
      return v == StemMode::granular ? "granular" : "strided";
    } else if constexpr (std::is_floating_point_v<V>) {
      return format_double(v);
    } else {
      return std::to_string(v);
    }
  }
};

}  // namespace sortrack
