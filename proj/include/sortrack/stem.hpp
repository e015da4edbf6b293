#pragma once

// Granular feature stem: lossless space-to-depth followed by a grouped 1x1
// projection into the latent space. The strided-convolution baseline used
// for the "no stem" ablation lives here too.

#include <string>

#include "sortrack/numerics.hpp"

namespace sortrack {

struct StemConfig {
  std::size_t block = 4;        // downsampling factor s
  std::size_t latent_dim = 64;  // D
  std::size_t groups = 4;
  std::size_t in_channels = 3;

  std::size_t s2d_channels() const { return in_channels * block * block; }

  void validate() const {
    if (block < 1) throw InputError("stem: block must be >= 1");
    if (groups == 0 || s2d_channels() % groups != 0 || latent_dim % groups != 0)
      throw InputError("stem: groups " + std::to_string(groups) + " must divide " + std::to_string(s2d_channels()) +
                       " and " + std::to_string(latent_dim));
  }
};

// Output channel c*s*s + dy*s + dx holds input channel c at offset (dy, dx)
// of every s x s block.
template <class T>
BasicTensor<T> space_to_depth(const BasicTensor<T>& input, std::size_t s) {
  require_rank(input, 3, "space_to_depth");
  if (s == 0 || input.height() % s != 0 || input.width() % s != 0)
    throw ShapeError("space_to_depth: " + shape_str(input.shape()) + " not divisible by block " + std::to_string(s));
  const std::size_t c = input.channels(), oh = input.height() / s, ow = input.width() / s;
  BasicTensor<T> out = BasicTensor<T>::map(c * s * s, oh, ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t dy = 0; dy < s; ++dy)
      for (std::size_t dx = 0; dx < s; ++dx) {
        const std::size_t oc = (ch * s + dy) * s + dx;
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t x = 0; x < ow; ++x) out(oc, y, x) = input(ch, y * s + dy, x * s + dx);
      }
  return out;
}

template <class T>
BasicTensor<T> depth_to_space(const BasicTensor<T>& input, std::size_t s) {
  require_rank(input, 3, "depth_to_space");
  if (s == 0 || input.channels() % (s * s) != 0)
    throw ShapeError("depth_to_space: channels " + std::to_string(input.channels()) + " not divisible by " +
                     std::to_string(s * s));
  const std::size_t c = input.channels() / (s * s), ih = input.height(), iw = input.width();
  BasicTensor<T> out = BasicTensor<T>::map(c, ih * s, iw * s);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t dy = 0; dy < s; ++dy)
      for (std::size_t dx = 0; dx < s; ++dx) {
        const std::size_t ic = (ch * s + dy) * s + dx;
        for (std::size_t y = 0; y < ih; ++y)
          for (std::size_t x = 0; x < iw; ++x) out(ch, y * s + dy, x * s + dx) = input(ic, y, x);
      }
  return out;
}

template <class T>
struct StemWeights {
  BasicTensor<T> weights;  // {D, s2d_channels / groups, 1, 1}
  BasicTensor<T> bias;     // {D}

  static StemWeights zeros(const StemConfig& cfg) {
    return {BasicTensor<T>({cfg.latent_dim, cfg.s2d_channels() / cfg.groups, 1, 1}), BasicTensor<T>({cfg.latent_dim})};
  }

  // Output channel j of group g copies input slot (j mod slots) of group g.
  static StemWeights identity_blocks(const StemConfig& cfg) {
    auto w = zeros(cfg);
    const std::size_t slots = cfg.s2d_channels() / cfg.groups;
    for (std::size_t d = 0; d < cfg.latent_dim; ++d) w.weights[d * slots + (d % (cfg.latent_dim / cfg.groups)) % slots] = T{1};
    return w;
  }
};

template <class T>
struct StemContext {
  ConvContext<T> conv;
  StemConfig cfg;
};

template <class T>
BasicTensor<T> stem_forward(const BasicTensor<T>& image, const StemConfig& cfg, const StemWeights<T>& w,
                            StemContext<T>* ctx = nullptr) {
  cfg.validate();
  require_rank(image, 3, "stem_forward");
  if (image.channels() != cfg.in_channels)
    throw ShapeError("stem_forward: expected " + std::to_string(cfg.in_channels) + " channels, got " +
                     std::to_string(image.channels()));
  if (w.weights.shape() != Shape{cfg.latent_dim, cfg.s2d_channels() / cfg.groups, 1, 1} || w.bias.size() != cfg.latent_dim)
    throw ShapeError("stem_forward: weights " + shape_str(w.weights.shape()) + " do not match config");
  const auto s2d = space_to_depth(image, cfg.block);
  auto out = conv2d_grouped(s2d, w.weights, ConvSpec{1, cfg.groups, 0}, ctx ? &ctx->conv : nullptr);
  const std::size_t plane = out.plane();
  for (std::size_t d = 0; d < cfg.latent_dim; ++d)
    for (std::size_t p = 0; p < plane; ++p) out[d * plane + p] += w.bias[d];
  if (ctx) ctx->cfg = cfg;
  return out;
}

template <class T>
StemWeights<T> stem_backward(const BasicTensor<T>& grad_out, const StemContext<T>& ctx) {
  auto g = conv2d_grouped_backward(grad_out, ctx.conv);
  StemWeights<T> grads{std::move(g.kernels), BasicTensor<T>({ctx.cfg.latent_dim})};
  const std::size_t plane = grad_out.plane();
  for (std::size_t d = 0; d < ctx.cfg.latent_dim; ++d) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += grad_out[d * plane + p];
    grads.bias[d] = static_cast<T>(acc);
  }
  return grads;
}

template <class T>
struct StridedWeights {
  BasicTensor<T> weights;  // {D, C_in, s, s}
  BasicTensor<T> bias;     // {D}

  static StridedWeights zeros(const StemConfig& cfg) {
    return {BasicTensor<T>({cfg.latent_dim, cfg.in_channels, cfg.block, cfg.block}), BasicTensor<T>({cfg.latent_dim})};
  }
};

template <class T>
struct StridedContext {
  ProjectionContext<T> proj;
  StemConfig cfg;
};

// s x s convolution with stride s. The {D, C, s, s} weight layout flattens
// in the same order as space_to_depth channels, so the op is evaluated as a
// dense per-block projection.
template <class T>
BasicTensor<T> stem_strided_baseline(const BasicTensor<T>& image, const StemConfig& cfg, const StridedWeights<T>& w,
                                     StridedContext<T>* ctx = nullptr) {
  require_rank(image, 3, "stem_strided_baseline");
  if (image.channels() != cfg.in_channels) throw ShapeError("stem_strided_baseline: channel mismatch");
  if (w.weights.shape() != Shape{cfg.latent_dim, cfg.in_channels, cfg.block, cfg.block} || w.bias.size() != cfg.latent_dim)
    throw ShapeError("stem_strided_baseline: weights " + shape_str(w.weights.shape()) + " do not match config");
  const auto s2d = space_to_depth(image, cfg.block);
  const BasicTensor<T> flat(Shape{cfg.latent_dim, cfg.s2d_channels()}, w.weights.data());
  if (ctx) ctx->cfg = cfg;
  return project_1x1(s2d, flat, w.bias, ctx ? &ctx->proj : nullptr);
}

template <class T>
StridedWeights<T> stem_strided_backward(const BasicTensor<T>& grad_out, const StridedContext<T>& ctx) {
  auto g = project_1x1_backward(grad_out, ctx.proj);
  const auto& cfg = ctx.cfg;
  return {BasicTensor<T>(Shape{cfg.latent_dim, cfg.in_channels, cfg.block, cfg.block}, std::move(g.weights.data())),
          std::move(g.bias)};
}

}  // namespace sortrack
