#pragma once

// Refine-then-track inference: template features are computed once from the
// first frame and cached; each new frame is cropped around the previous
// estimate, fused, correlated with the template and decoded at the peak.

#include <optional>

#include "sortrack/crop.hpp"
#include "sortrack/model.hpp"
#include "sortrack/sequence.hpp"

namespace sortrack {

// One frame's inputs: RGB on the 0..255 scale, its exposure-window event
// frame and that frame rendered to three channels.
struct FrameData {
  FeatureMap rgb;
  EventFrame events;
  FeatureMap event_image;
};

inline FrameData load_frame(const Sequence& seq, std::size_t i, std::uint32_t clip = kDefaultEventClip) {
  FrameData f;
  f.rgb = seq.frame(i);
  if (f.rgb.height() != seq.meta.height || f.rgb.width() != seq.meta.width)
    throw InputError("load_frame: frame " + std::to_string(i) + " size differs from meta.json");
  f.events = seq.event_frame(i);
  f.event_image = render_event_frame(f.events, clip);
  return f;
}

struct PatchPair {
  FeatureMap rgb;    // normalized
  FeatureMap event;  // normalized
  CropMapping mapping;
  PhiEstimate phi;
};

inline PatchPair make_patches(const FrameData& f, const BoundingBox& box, double factor, std::size_t size,
                              bool estimate_orientation, double smoothing = kDefaultPhiSmoothing,
                              const NormalizationStats& stats = {}) {
  PatchPair p;
  auto [rgb, mapping] = crop_patch(f.rgb, box, factor, size);
  auto ev = crop_patch(f.event_image, box, factor, size).first;
  p.rgb = normalize(rgb, stats);
  p.event = normalize(ev, stats);
  p.mapping = mapping;
  if (estimate_orientation) p.phi = estimate_phi(crop_event_frame(f.events, mapping), smoothing);
  return p;
}

// Per-pixel feature energy (sum of squared channels), {1, h, w}.
template <class T>
BasicTensor<double> energy_map(const BasicTensor<T>& features) {
  require_rank(features, 3, "energy_map");
  BasicTensor<double> e = BasicTensor<double>::map(1, features.height(), features.width());
  const std::size_t plane = features.plane();
  for (std::size_t c = 0; c < features.channels(); ++c)
    for (std::size_t p = 0; p < plane; ++p) e[p] += static_cast<double>(features[c * plane + p]) * features[c * plane + p];
  return e;
}

// Fraction of total energy on cells whose centers fall inside the box
// (box in patch pixels, cells of `stride` pixels).
inline double energy_fraction(const BasicTensor<double>& energy, const BoundingBox& box, std::size_t stride) {
  double inside = 0.0, total = 0.0;
  const double s = static_cast<double>(stride);
  for (std::size_t y = 0; y < energy.height(); ++y)
    for (std::size_t x = 0; x < energy.width(); ++x) {
      const double v = energy(0, y, x);
      total += v;
      const double cx = (static_cast<double>(x) + 0.5) * s, cy = (static_cast<double>(y) + 0.5) * s;
      if (cx >= box.x && cx < box.right() && cy >= box.y && cy < box.bottom()) inside += v;
    }
  return total > 0.0 ? inside / total : 0.0;
}

template <class T = float>
struct StepDiagnostics {
  CropMapping mapping;
  PhiEstimate phi;
  Peak peak;
  BasicTensor<T> pre;   // stem features of the RGB search patch
  BasicTensor<T> post;  // refined search features
};

template <class T = float>
class Tracker {
 public:
  explicit Tracker(const Model<T>& model, NormalizationStats stats = {}) : model_(model), stats_(stats) {}

  void init(const FrameData& f, const BoundingBox& box) {
    if (!box.valid()) throw InputError("tracker init: invalid box");
    const auto& c = model_.cfg.crop;
    const auto p = make_patches(f, box, c.template_factor, c.template_size, false, model_.cfg.phi_smoothing, stats_);
    template_rgb_ = p.rgb;
    kernel_ = model_.template_forward(cast(p.rgb), cast(p.event));
    last_ = box;
    frame_w_ = static_cast<double>(f.rgb.width());
    frame_h_ = static_cast<double>(f.rgb.height());
    initialized_ = true;
  }

  BoundingBox step(const FrameData& f, StepDiagnostics<T>* diag = nullptr) {
    if (!initialized_) throw UsageError("tracker step before init");
    const auto& c = model_.cfg.crop;
    const auto p = make_patches(f, last_, c.search_factor, c.search_size, model_.cfg.use_sor, model_.cfg.phi_smoothing,
                                stats_);
    auto feats = model_.search_features(cast(p.rgb), cast(p.event), p.phi.phi);
    const auto head = model_.search_head(feats.post, kernel_);
    const auto peak = find_peak(head.score_logits);
    const BoundingBox in_patch = decode_box(head, model_.stride());
    const BoundingBox b = p.mapping.to_frame(in_patch);
    const double r = model_.cfg.track.size_rate;
    last_ = clamp_box(BoundingBox::from_center(b.cx(), b.cy(), last_.w + r * (b.w - last_.w), last_.h + r * (b.h - last_.h)));
    if (diag) {
      diag->mapping = p.mapping;
      diag->phi = p.phi;
      diag->peak = peak;
      diag->pre = std::move(feats.pre);
      diag->post = std::move(feats.post);
    }
    return last_;
  }

  bool initialized() const { return initialized_; }
  const BoundingBox& last_box() const { return last_; }
  const BasicTensor<T>& template_kernel() const { return kernel_; }
  const FeatureMap& template_patch() const { return template_rgb_; }

 private:
  const Model<T>& model_;
  NormalizationStats stats_;
  BasicTensor<T> kernel_;
  FeatureMap template_rgb_;
  BoundingBox last_;
  double frame_w_ = 0.0, frame_h_ = 0.0;
  bool initialized_ = false;

  static BasicTensor<T> cast(const FeatureMap& m) {
    if constexpr (std::is_same_v<T, float>) return m;
    else return BasicTensor<T>::cast(m);
  }

  // Keep the estimate usable: positive size no larger than the frame, and
  // the center inside the frame.
  BoundingBox clamp_box(const BoundingBox& b) const {
    const double w = std::clamp(std::isfinite(b.w) ? b.w : last_.w, 4.0, frame_w_);
    const double h = std::clamp(std::isfinite(b.h) ? b.h : last_.h, 4.0, frame_h_);
    const double cx = std::clamp(std::isfinite(b.cx()) ? b.cx() : last_.cx(), 0.0, frame_w_);
    const double cy = std::clamp(std::isfinite(b.cy()) ? b.cy() : last_.cy(), 0.0, frame_h_);
    return BoundingBox::from_center(cx, cy, w, h);
  }
};

struct TrackOptions {
  std::optional<fs::path> saliency_dir;
};

struct SaliencyRecord {
  std::size_t frame = 0;
  double pre_fraction = 0.0;   // energy share inside the ground-truth box
  double post_fraction = 0.0;
};

struct TrackResult {
  Trajectory boxes;
  std::vector<SaliencyRecord> saliency;
};

template <class T = float>
TrackResult track_sequence(const Sequence& seq, const Model<T>& model, const TrackOptions& opt = {}) {
  TrackResult out;
  if (seq.size() == 0) return out;
  Tracker<T> tracker(model);
  tracker.init(load_frame(seq, 0, model.cfg.event_clip), seq.groundtruth[0]);
  out.boxes.push_back(seq.groundtruth[0]);
  if (opt.saliency_dir) fs::create_directories(*opt.saliency_dir);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    StepDiagnostics<T> diag;
    out.boxes.push_back(tracker.step(load_frame(seq, i, model.cfg.event_clip), opt.saliency_dir ? &diag : nullptr));
    if (!opt.saliency_dir) continue;
    const auto pre = energy_map(diag.pre), post = energy_map(diag.post);
    const auto gt_patch = diag.mapping.to_patch(seq.groundtruth[i]);
    out.saliency.push_back({i, energy_fraction(pre, gt_patch, model.stride()), energy_fraction(post, gt_patch, model.stride())});
    const auto stem = frame_filename(i);
    write_png(heatmap_image(pre), (*opt.saliency_dir / ("pre_" + stem)).string());
    write_png(heatmap_image(post), (*opt.saliency_dir / ("post_" + stem)).string());
  }
  if (opt.saliency_dir) {
    std::ofstream csv(*opt.saliency_dir / "saliency.csv", std::ios::binary);
    csv << "frame,pre_fraction,post_fraction\n";
    for (const auto& r : out.saliency)
      csv << r.frame << ',' << format_double(r.pre_fraction) << ',' << format_double(r.post_fraction) << '\n';
  }
  return out;
}

}  // namespace sortrack
