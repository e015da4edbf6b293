#pragma once

// Toy end-to-end training: SGD with momentum over (template, search) pairs
// sampled from synthetic sequences, minimizing the focal + L1 + GIoU
// objective through the head, correlation, SOR and stem.

#include <cmath>
#include <functional>
#include <numbers>
#include <string_view>
#include <ostream>
#include <random>

#include "sortrack/tracker.hpp"

namespace sortrack {

struct TrainingSequence {
  std::string name;
  std::vector<FrameData> frames;
  Trajectory groundtruth;
};

inline std::vector<TrainingSequence> load_training_set(const fs::path& root, std::uint32_t clip) {
  std::vector<TrainingSequence> out;
  for (const auto& dir : find_sequences(root)) {
    const auto seq = load_sequence(dir);
    if (seq.size() < 2) continue;
    TrainingSequence ts{seq.name, {}, seq.groundtruth};
    for (std::size_t i = 0; i < seq.size(); ++i) ts.frames.push_back(load_frame(seq, i, clip));
    out.push_back(std::move(ts));
  }
  if (out.empty()) throw InputError("train: no usable sequences under " + root.string());
  return out;
}

template <class T = float>
struct TrainSample {
  PatchPair tmpl;
  PatchPair search;
  GroundTruthTarget target;
  std::size_t sequence = 0, template_frame = 0, search_frame = 0;
};

// Template from frame i, search from frame j > i cropped around the
// ground-truth box of frame j - d (d in 1..max_gap), as at inference time
// where the crop follows the previous estimate. The crop side is jittered so
// the size head sees the target at more than one scale; otherwise its bias
// compounds through the crop at inference time.
template <class T = float>
TrainSample<T> draw_sample(const std::vector<TrainingSequence>& set, const Model<T>& model, std::mt19937_64& rng) {
  const auto& cfg = model.cfg;
  TrainSample<T> s;
  s.sequence = std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(rng);
  const auto& seq = set[s.sequence];
  const std::size_t n = seq.frames.size();
  s.search_frame = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
  s.template_frame = std::uniform_int_distribution<std::size_t>(0, s.search_frame - 1)(rng);
  const std::size_t max_gap = std::max<std::size_t>(1, std::min(cfg.train.max_gap, s.search_frame));
  const std::size_t gap = std::uniform_int_distribution<std::size_t>(1, max_gap)(rng);
  s.tmpl = make_patches(seq.frames[s.template_frame], seq.groundtruth[s.template_frame], cfg.crop.template_factor,
                        cfg.crop.template_size, false, cfg.phi_smoothing);
  const auto& prev = seq.groundtruth[s.search_frame - gap];
  const double j = cfg.train.scale_jitter;
  const double scale = std::exp(std::uniform_real_distribution<double>(-j, j)(rng));
  const auto around = BoundingBox::from_center(prev.cx(), prev.cy(), prev.w * scale, prev.h * scale);
  s.search = make_patches(seq.frames[s.search_frame], around, cfg.crop.search_factor,
                          cfg.crop.search_size, cfg.use_sor, cfg.phi_smoothing);
  const auto box = s.search.mapping.to_patch(seq.groundtruth[s.search_frame]);
  s.target = encode_target(box, model.score_size(), model.score_size(), model.stride(),
                           static_cast<double>(cfg.crop.search_size));
  return s;
}

// Loss of one sample; with grads non-null, accumulates d(loss)/d(params).
template <class T>
LossBreakdown sample_loss(const Model<T>& model, const TrainSample<T>& s, ModelParams<T>* grads) {
  auto conv = [](const FeatureMap& m) {
    if constexpr (std::is_same_v<T, float>) return m;
    else return BasicTensor<T>::cast(m);
  };
  TemplateContext<T> tctx;
  SearchContext<T> sctx;
  const auto kernel = model.template_forward(conv(s.tmpl.rgb), conv(s.tmpl.event), grads ? &tctx : nullptr);
  const auto head = model.search_forward(conv(s.search.rgb), conv(s.search.event), s.search.phi.phi, kernel,
                                         grads ? &sctx : nullptr);
  if (!grads) return total_loss(head, s.target, model.cfg.loss);
  HeadMapGrads<T> hg;
  const auto loss = total_loss(head, s.target, model.cfg.loss, &hg);
  const auto gk = model.search_backward(hg, sctx, *grads);
  model.template_backward(gk, tctx, *grads);
  return loss;
}

struct StepLog {
  std::size_t step = 0;
  LossBreakdown loss;
  double grad_norm = 0.0;
};

struct TrainResult {
  std::vector<StepLog> history;
  double initial_loss = 0.0;  // mean total over the first window
  double final_loss = 0.0;    // mean total over the last window
};

inline constexpr std::size_t kLossWindow = 25;

inline double scheduled_lr(const TrainConfig& tc, std::size_t step) {
  if (!tc.cosine || tc.steps == 0) return tc.lr;
  return tc.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(tc.steps)));
}

struct TrainOptions {
  bool repeat_first_sample = false;  // overfit a single fixed pair
  std::function<void(const StepLog&)> on_step;
};

template <class T = float>
TrainResult train_toy(Model<T>& model, const std::vector<TrainingSequence>& set, const TrainOptions& opt = {}) {
  const auto& tc = model.cfg.train;
  std::mt19937_64 rng(tc.seed);
  ModelParams<T> velocity = ModelParams<T>::zeros(model.cfg);
  TrainResult result;
  std::optional<TrainSample<T>> fixed;
  if (opt.repeat_first_sample) fixed = draw_sample(set, model, rng);
  for (std::size_t step = 0; step < tc.steps; ++step) {
    ModelParams<T> grads = ModelParams<T>::zeros(model.cfg);
    StepLog log;
    log.step = step;
    // Copies of one fixed sample would all give the same gradient.
    const std::size_t batch = fixed ? 1 : tc.batch;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto l = sample_loss(model, fixed ? *fixed : draw_sample(set, model, rng), &grads);
      log.loss.focal += l.focal / static_cast<double>(batch);
      log.loss.l1 += l.l1 / static_cast<double>(batch);
      log.loss.giou += l.giou / static_cast<double>(batch);
      log.loss.total += l.total / static_cast<double>(batch);
      log.loss.weights = l.weights;
    }
    if (batch > 1) grads.for_each([&](const char*, BasicTensor<T>& g) { g *= static_cast<T>(1.0 / static_cast<double>(batch)); });
    double sq = 0.0;
    grads.for_each([&](const char*, const BasicTensor<T>& g) { sq += sum_of_squares(g); });
    log.grad_norm = std::sqrt(sq);
    const double clip = tc.clip_norm > 0.0 && log.grad_norm > tc.clip_norm ? tc.clip_norm / log.grad_norm : 1.0;
    const double base_lr = scheduled_lr(tc, step);
    std::vector<BasicTensor<T>*> gs, vs;
    grads.for_each([&](const char*, BasicTensor<T>& g) { gs.push_back(&g); });
    velocity.for_each([&](const char*, BasicTensor<T>& v) { vs.push_back(&v); });
    std::size_t idx = 0;
    model.params.for_each([&](const char* name, BasicTensor<T>& p) {
      auto& g = *gs[idx];
      auto& v = *vs[idx];
      ++idx;
      const double lr = base_lr * (std::string_view(name) == kGaborParamName ? tc.gabor_lr_scale : 1.0);
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = static_cast<T>(tc.momentum * v[i] + clip * g[i]);
        p[i] = static_cast<T>(p[i] - lr * v[i]);
      }
    });
    if (opt.on_step) opt.on_step(log);
    result.history.push_back(log);
  }
  const std::size_t n = result.history.size(), win = std::min(kLossWindow, n);
  for (std::size_t i = 0; i < win; ++i) {
    result.initial_loss += result.history[i].loss.total / static_cast<double>(win);
    result.final_loss += result.history[n - win + i].loss.total / static_cast<double>(win);
  }
  return result;
}

inline nlohmann::ordered_json step_json(const StepLog& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  j["total"] = s.loss.total;
  j["focal"] = s.loss.focal;
  j["l1"] = s.loss.l1;
  j["giou"] = s.loss.giou;
  j["lambda_f"] = s.loss.weights.lambda_f;
  j["lambda_l1"] = s.loss.weights.lambda_l1;
  j["lambda_g"] = s.loss.weights.lambda_g;
  j["grad_norm"] = s.grad_norm;
  return j;
}

}  // namespace sortrack
