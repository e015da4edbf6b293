#pragma once

// Spatial orthogonal refinement: directional responses of both modalities,
// an event-derived gate in (1, 2), modulation of the RGB responses, a 1x1
// projection back to C channels and a residual connection.

#include <limits>
#include <vector>

#include "sortrack/numerics.hpp"
#include "sortrack/odm.hpp"

namespace sortrack {

template <class T = float>
struct SorState {
  std::size_t k = 4;
  std::size_t kernel_size = 5;
  GaborParams params;
  GroupNormState<T> gn_rgb;
  GroupNormState<T> gn_event;
  BasicTensor<T> proj_w;  // {C, K*C}
  BasicTensor<T> proj_b;  // {C}

  static SorState make(std::size_t channels, std::size_t k = 4, std::size_t kernel_size = 5,
                       GaborParams params = {}) {
    return {k,
            kernel_size,
            params,
            GroupNormState<T>::identity(k * channels, k),
            GroupNormState<T>::identity(k * channels, k),
            BasicTensor<T>({channels, k * channels}),
            BasicTensor<T>({channels})};
  }

  std::size_t channels() const { return proj_w.dim(0); }
};

template <class T>
struct DirectionalContext {
  std::vector<ConvContext<T>> conv;  // one per orientation block
  GroupNormContext<T> gn;
  std::size_t k = 0;
  std::size_t kernel_size = 0;
};

// Block layout: output channel k*C + c is input channel c filtered by the
// k-th kernel; each block is one normalization group.
template <class T>
BasicTensor<T> directional_response(const BasicTensor<T>& features, const GaborBank<T>& bank,
                                    const GroupNormState<T>& gn, DirectionalContext<T>* ctx = nullptr) {
  require_rank(features, 3, "directional_response");
  const std::size_t c = features.channels(), plane = features.plane(), ks = bank.kernel_size;
  if (gn.num_groups != bank.k)
    throw ShapeError("directional_response: GN groups " + std::to_string(gn.num_groups) + " must equal K " +
                     std::to_string(bank.k));
  if (gn.scale.size() != bank.k * c)
    throw ShapeError("directional_response: GN affine size " + std::to_string(gn.scale.size()) + " vs K*C " +
                     std::to_string(bank.k * c));
  BasicTensor<T> stacked = BasicTensor<T>::map(bank.k * c, features.height(), features.width());
  if (ctx) {
    ctx->conv.assign(bank.k, {});
    ctx->k = bank.k;
    ctx->kernel_size = ks;
  }
  const auto spec = ConvSpec::same(ks, c);
  for (std::size_t b = 0; b < bank.k; ++b) {
    BasicTensor<T> kernels({c, 1, ks, ks});
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(bank.kernels.data().begin() + static_cast<std::ptrdiff_t>(b * ks * ks), ks * ks,
                  kernels.data().begin() + static_cast<std::ptrdiff_t>(ch * ks * ks));
    const auto block = conv2d_grouped(features, kernels, spec, ctx ? &ctx->conv[b] : nullptr);
    std::copy(block.data().begin(), block.data().end(), stacked.data().begin() + static_cast<std::ptrdiff_t>(b * c * plane));
  }
  return group_norm(stacked, gn, ctx ? &ctx->gn : nullptr);
}

template <class T>
struct DirectionalGrads {
  BasicTensor<T> input;
  BasicTensor<T> gn_scale;
  BasicTensor<T> gn_shift;
  BasicTensor<T> kernels;  // {K, ks, ks}
};

template <class T>
DirectionalGrads<T> directional_response_backward(const BasicTensor<T>& grad_out, const DirectionalContext<T>& ctx) {
  if (!ctx.gn.ready || ctx.conv.size() != ctx.k) throw UsageError("directional_response_backward: forward context missing");
  auto gn = group_norm_backward(grad_out, ctx.gn);
  const std::size_t kc = grad_out.channels(), c = kc / ctx.k, plane = grad_out.plane(), ks = ctx.kernel_size;
  DirectionalGrads<T> g{BasicTensor<T>::map(c, grad_out.height(), grad_out.width()), std::move(gn.scale),
                        std::move(gn.shift), BasicTensor<T>({ctx.k, ks, ks})};
  std::vector<double> gin(c * plane, 0.0);
  for (std::size_t b = 0; b < ctx.k; ++b) {
    BasicTensor<T> gblock = BasicTensor<T>::map(c, grad_out.height(), grad_out.width());
    std::copy_n(gn.input.data().begin() + static_cast<std::ptrdiff_t>(b * c * plane), c * plane, gblock.data().begin());
    auto cg = conv2d_grouped_backward(gblock, ctx.conv[b]);
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += cg.input[i];
    for (std::size_t i = 0; i < ks * ks; ++i) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) acc += cg.kernels[ch * ks * ks + i];
      g.kernels[b * ks * ks + i] = static_cast<T>(acc);
    }
  }
  for (std::size_t i = 0; i < gin.size(); ++i) g.input[i] = static_cast<T>(gin[i]);
  return g;
}

// M = 1 + sigmoid(r), kept strictly inside (1, 2) for the storage type.
template <class T>
BasicTensor<T> build_gate(const BasicTensor<T>& r_event) {
  BasicTensor<T> gate(r_event.shape());
  const T lo = std::nextafter(T{1}, T{2});
  const T hi = std::nextafter(T{2}, T{1});
  for (std::size_t i = 0; i < r_event.size(); ++i)
    gate[i] = std::clamp(static_cast<T>(1.0 + static_cast<double>(sigmoid_scalar<double>(r_event[i]))), lo, hi);
  return gate;
}

template <class T>
struct SorContext {
  GaborBank<T> bank;
  DirectionalContext<T> rgb;
  DirectionalContext<T> event;
  BasicTensor<T> r_rgb;
  BasicTensor<T> r_event;
  BasicTensor<T> gate;
  ProjectionContext<T> proj;
  bool ready = false;
};

template <class T>
BasicTensor<T> sor_forward(const BasicTensor<T>& f_rgb, const BasicTensor<T>& f_event, const SorState<T>& state,
                           double phi, SorContext<T>* ctx = nullptr) {
  require_rank(f_rgb, 3, "sor_forward rgb");
  f_rgb.require_same(f_event, "sor_forward (rgb vs event features)");
  if (f_rgb.channels() != state.channels())
    throw ShapeError("sor_forward: features have " + std::to_string(f_rgb.channels()) + " channels, state expects " +
                     std::to_string(state.channels()));
  auto bank = gabor_bank<T>(phi, state.params, state.k, state.kernel_size);
  auto r_rgb = directional_response(f_rgb, bank, state.gn_rgb, ctx ? &ctx->rgb : nullptr);
  auto r_event = directional_response(f_event, bank, state.gn_event, ctx ? &ctx->event : nullptr);
  auto gate = build_gate(r_event);
  auto modulated = hadamard(r_rgb, gate);
  auto out = add(project_1x1(modulated, state.proj_w, state.proj_b, ctx ? &ctx->proj : nullptr), f_rgb);
  if (ctx) {
    ctx->bank = std::move(bank);
    ctx->r_rgb = std::move(r_rgb);
    ctx->r_event = std::move(r_event);
    ctx->gate = std::move(gate);
    ctx->ready = true;
  }
  return out;
}

template <class T>
struct SorGrads {
  BasicTensor<T> f_rgb;
  BasicTensor<T> f_event;
  BasicTensor<T> proj_w;
  BasicTensor<T> proj_b;
  BasicTensor<T> gn_rgb_scale;
  BasicTensor<T> gn_rgb_shift;
  BasicTensor<T> gn_event_scale;
  BasicTensor<T> gn_event_shift;
  // d/d{sigma, lambda, gamma, psi}
  std::array<double, 4> gabor{};
};

template <class T>
SorGrads<T> sor_backward(const BasicTensor<T>& grad_out, const SorContext<T>& ctx) {
  if (!ctx.ready) throw UsageError("sor_backward: forward context missing");
  auto pg = project_1x1_backward(grad_out, ctx.proj);
  BasicTensor<T> g_rrgb(ctx.r_rgb.shape()), g_revent(ctx.r_event.shape());
  for (std::size_t i = 0; i < g_rrgb.size(); ++i) {
    const double gm = pg.input[i];
    g_rrgb[i] = static_cast<T>(gm * ctx.gate[i]);
    const double s = sigmoid_scalar<double>(ctx.r_event[i]);
    g_revent[i] = static_cast<T>(gm * ctx.r_rgb[i] * s * (1.0 - s));
  }
  auto drgb = directional_response_backward(g_rrgb, ctx.rgb);
  auto devent = directional_response_backward(g_revent, ctx.event);

  SorGrads<T> g;
  g.f_rgb = add(drgb.input, grad_out);
  g.f_event = std::move(devent.input);
  g.proj_w = std::move(pg.weights);
  g.proj_b = std::move(pg.bias);
  g.gn_rgb_scale = std::move(drgb.gn_scale);
  g.gn_rgb_shift = std::move(drgb.gn_shift);
  g.gn_event_scale = std::move(devent.gn_scale);
  g.gn_event_shift = std::move(devent.gn_shift);

  const auto& bank = ctx.bank;
  const std::size_t n = bank.kernel_size * bank.kernel_size;
  for (std::size_t b = 0; b < bank.k; ++b) {
    const auto pd = gabor_param_grads<double>(bank.thetas[b], bank.params, bank.kernel_size);
    for (std::size_t i = 0; i < n; ++i) {
      const double gk = static_cast<double>(drgb.kernels[b * n + i]) + static_cast<double>(devent.kernels[b * n + i]);
      g.gabor[0] += gk * pd.d_sigma[i];
      g.gabor[1] += gk * pd.d_lambda[i];
      g.gabor[2] += gk * pd.d_gamma[i];
      g.gabor[3] += gk * pd.d_psi[i];
    }
  }
  return g;
}

}  // namespace sortrack
