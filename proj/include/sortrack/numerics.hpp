#pragma once

// Dense kernels used by the stem, the refinement module and the head.
// Every op is templated on the storage scalar; reductions accumulate in
// double regardless of storage type.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sortrack/tensor.hpp"

namespace sortrack {

struct ConvSpec {
  std::size_t kernel_size = 3;
  std::size_t groups = 1;
  std::size_t padding = 1;

  static ConvSpec same(std::size_t kernel_size, std::size_t groups) {
    return {kernel_size, groups, (kernel_size - 1) / 2};
  }
};

template <class T>
struct ConvContext {
  BasicTensor<T> input;
  BasicTensor<T> kernels;
  ConvSpec spec;
  bool ready = false;
};

namespace detail {

inline std::string dims(std::size_t a, std::size_t b) {
  return std::to_string(a) + " vs " + std::to_string(b);
}

template <class T>
void check_conv(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const ConvSpec& spec) {
  require_rank(input, 3, "conv2d_grouped input");
  if (kernels.rank() != 4) throw ShapeError("conv2d_grouped: kernel stack must be rank 4, got " + shape_str(kernels.shape()));
  if (spec.kernel_size % 2 == 0) throw ShapeError("conv2d_grouped: kernel_size must be odd");
  if (spec.groups == 0 || input.channels() % spec.groups != 0)
    throw ShapeError("conv2d_grouped: input channels " + std::to_string(input.channels()) +
                     " not divisible by groups " + std::to_string(spec.groups));
  const std::size_t cout = kernels.dim(0);
  if (cout % spec.groups != 0)
    throw ShapeError("conv2d_grouped: output channels " + std::to_string(cout) + " not divisible by groups");
  if (kernels.dim(1) != input.channels() / spec.groups)
    throw ShapeError("conv2d_grouped: kernel in-channels " + dims(kernels.dim(1), input.channels() / spec.groups));
  if (kernels.dim(2) != spec.kernel_size || kernels.dim(3) != spec.kernel_size)
    throw ShapeError("conv2d_grouped: kernel spatial size " + dims(kernels.dim(2), spec.kernel_size));
  if (input.height() + 2 * spec.padding < spec.kernel_size || input.width() + 2 * spec.padding < spec.kernel_size)
    throw ShapeError("conv2d_grouped: input smaller than kernel");
}

}  // namespace detail

// Zero-padded stride-1 grouped convolution (cross-correlation form).
// kernels has shape {C_out, C_in / groups, k, k}.
template <class T>
BasicTensor<T> conv2d_grouped(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const ConvSpec& spec,
                              ConvContext<T>* ctx = nullptr) {
  detail::check_conv(input, kernels, spec);
  const std::size_t cin = input.channels(), h = input.height(), w = input.width();
  const std::size_t cout = kernels.dim(0), k = spec.kernel_size;
  const std::size_t in_per_group = cin / spec.groups, out_per_group = cout / spec.groups;
  const std::size_t oh = h + 2 * spec.padding - k + 1, ow = w + 2 * spec.padding - k + 1;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  BasicTensor<T> out = BasicTensor<T>::map(cout, oh, ow);
  std::vector<double> acc(oh * ow);
  for (std::size_t o = 0; o < cout; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const std::size_t g = o / out_per_group;
    for (std::size_t cl = 0; cl < in_per_group; ++cl) {
      const std::size_t ci = g * in_per_group + cl;
      const T* src = input.data().data() + ci * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = kernels[((o * in_per_group + cl) * k + ky) * k + kx];
          if (wv == 0.0) continue;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
          const std::size_t x1 = static_cast<std::size_t>(
              std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ow), static_cast<std::ptrdiff_t>(w) - dx));
          for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const T* row = src + static_cast<std::size_t>(iy) * w;
            double* arow = acc.data() + y * ow;
            for (std::size_t x = x0; x < x1; ++x) arow[x] += wv * static_cast<double>(row[x + dx]);
          }
        }
      }
    }
    T* dst = out.data().data() + o * oh * ow;
    for (std::size_t i = 0; i < oh * ow; ++i) dst[i] = static_cast<T>(acc[i]);
  }
  if (ctx) {
    ctx->input = input;
    ctx->kernels = kernels;
    ctx->spec = spec;
    ctx->ready = true;
  }
  return out;
}

template <class T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> kernels;
};

template <class T>
ConvGrads<T> conv2d_grouped_backward(const BasicTensor<T>& grad_out, const ConvContext<T>& ctx) {
  if (!ctx.ready) throw UsageError("conv2d_grouped_backward: forward context missing");
  const auto& input = ctx.input;
  const auto& kernels = ctx.kernels;
  const auto& spec = ctx.spec;
  const std::size_t cin = input.channels(), h = input.height(), w = input.width();
  const std::size_t cout = kernels.dim(0), k = spec.kernel_size;
  const std::size_t in_per_group = cin / spec.groups, out_per_group = cout / spec.groups;
  const std::size_t oh = h + 2 * spec.padding - k + 1, ow = w + 2 * spec.padding - k + 1;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  if (grad_out.shape() != Shape{cout, oh, ow})
    throw ShapeError("conv2d_grouped_backward: grad_out " + shape_str(grad_out.shape()) + " vs expected " +
                     shape_str(Shape{cout, oh, ow}));

  std::vector<double> gin(input.size(), 0.0);
  BasicTensor<T> gk(kernels.shape());
  for (std::size_t o = 0; o < cout; ++o) {
    const std::size_t g = o / out_per_group;
    const T* go = grad_out.data().data() + o * oh * ow;
    for (std::size_t cl = 0; cl < in_per_group; ++cl) {
      const std::size_t ci = g * in_per_group + cl;
      const T* src = input.data().data() + ci * h * w;
      double* gsrc = gin.data() + ci * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t kidx = ((o * in_per_group + cl) * k + ky) * k + kx;
          const double wv = kernels[kidx];
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
          const std::size_t x1 = static_cast<std::size_t>(
              std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(ow), static_cast<std::ptrdiff_t>(w) - dx));
          double kacc = 0.0;
          for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const T* row = src + static_cast<std::size_t>(iy) * w;
            double* grow = gsrc + static_cast<std::size_t>(iy) * w;
            const T* grow_out = go + y * ow;
            for (std::size_t x = x0; x < x1; ++x) {
              const double gv = grow_out[x];
              kacc += gv * static_cast<double>(row[x + dx]);
              grow[x + dx] += wv * gv;
            }
          }
          gk[kidx] = static_cast<T>(kacc);
        }
      }
    }
  }
  BasicTensor<T> gi(input.shape());
  for (std::size_t i = 0; i < gin.size(); ++i) gi[i] = static_cast<T>(gin[i]);
  return {std::move(gi), std::move(gk)};
}

template <class T>
struct GroupNormState {
  std::size_t num_groups = 1;
  BasicTensor<T> scale;  // {C}
  BasicTensor<T> shift;  // {C}
  double epsilon = 1e-5;

  static GroupNormState identity(std::size_t channels, std::size_t groups, double eps = 1e-5) {
    return {groups, BasicTensor<T>({channels}, T{1}), BasicTensor<T>({channels}, T{0}), eps};
  }
};

template <class T>
struct GroupNormContext {
  std::vector<double> xhat;
  std::vector<double> inv_std;  // per group
  BasicTensor<T> scale;
  std::size_t num_groups = 0;
  Shape shape;
  bool ready = false;
};

template <class T>
BasicTensor<T> group_norm(const BasicTensor<T>& input, const GroupNormState<T>& state,
                          GroupNormContext<T>* ctx = nullptr) {
  require_rank(input, 3, "group_norm input");
  const std::size_t c = input.channels(), plane = input.plane();
  if (state.num_groups == 0 || c % state.num_groups != 0)
    throw ShapeError("group_norm: channels " + std::to_string(c) + " not divisible by num_groups " +
                     std::to_string(state.num_groups));
  if (state.scale.size() != c || state.shift.size() != c)
    throw ShapeError("group_norm: affine parameters must have " + std::to_string(c) + " entries");
  if (!(state.epsilon > 0.0)) throw InputError("group_norm: epsilon must be positive");

  const std::size_t cpg = c / state.num_groups, n = cpg * plane;
  BasicTensor<T> out(input.shape());
  std::vector<double> xhat(input.size());
  std::vector<double> inv_std(state.num_groups);
  for (std::size_t g = 0; g < state.num_groups; ++g) {
    const std::size_t begin = g * n;
    double mean = 0.0;
    T lo = input[begin], hi = input[begin];
    for (std::size_t i = begin; i < begin + n; ++i) {
      mean += input[i];
      lo = std::min(lo, input[i]);
      hi = std::max(hi, input[i]);
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = begin; i < begin + n; ++i) {
      const double d = input[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const bool constant = lo == hi;
    const double is = 1.0 / std::sqrt((constant ? 0.0 : var) + state.epsilon);
    inv_std[g] = is;
    for (std::size_t i = begin; i < begin + n; ++i) xhat[i] = constant ? 0.0 : (input[i] - mean) * is;
    for (std::size_t ch = g * cpg; ch < (g + 1) * cpg; ++ch) {
      const double sc = state.scale[ch], sh = state.shift[ch];
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = ch * plane + p;
        out[i] = static_cast<T>(sc * xhat[i] + sh);
      }
    }
  }
  if (ctx) {
    ctx->xhat = std::move(xhat);
    ctx->inv_std = std::move(inv_std);
    ctx->scale = state.scale;
    ctx->num_groups = state.num_groups;
    ctx->shape = input.shape();
    ctx->ready = true;
  }
  return out;
}

template <class T>
struct GroupNormGrads {
  BasicTensor<T> input;
  BasicTensor<T> scale;
  BasicTensor<T> shift;
};

template <class T>
GroupNormGrads<T> group_norm_backward(const BasicTensor<T>& grad_out, const GroupNormContext<T>& ctx) {
  if (!ctx.ready) throw UsageError("group_norm_backward: forward context missing");
  if (grad_out.shape() != ctx.shape)
    throw ShapeError("group_norm_backward: grad_out " + shape_str(grad_out.shape()) + " vs " + shape_str(ctx.shape));
  const std::size_t c = ctx.shape[0], plane = ctx.shape[1] * ctx.shape[2];
  const std::size_t cpg = c / ctx.num_groups, n = cpg * plane;
  GroupNormGrads<T> g{BasicTensor<T>(ctx.shape), BasicTensor<T>({c}), BasicTensor<T>({c})};
  std::vector<double> dxhat(n);
  for (std::size_t grp = 0; grp < ctx.num_groups; ++grp) {
    const std::size_t begin = grp * n;
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::size_t ch = grp * cpg; ch < (grp + 1) * cpg; ++ch) {
      double gs = 0.0, gb = 0.0;
      const double sc = ctx.scale[ch];
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = ch * plane + p;
        const double go = grad_out[i];
        gs += go * ctx.xhat[i];
        gb += go;
        const double d = go * sc;
        dxhat[i - begin] = d;
        sum_d += d;
        sum_dx += d * ctx.xhat[i];
      }
      g.scale[ch] = static_cast<T>(gs);
      g.shift[ch] = static_cast<T>(gb);
    }
    const double inv_n = 1.0 / static_cast<double>(n), is = ctx.inv_std[grp];
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = begin + j;
      g.input[i] = static_cast<T>(is * (dxhat[j] - inv_n * sum_d - ctx.xhat[i] * inv_n * sum_dx));
    }
  }
  return g;
}

template <class T>
struct ProjectionContext {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  bool ready = false;
};

// Per-pixel linear map: weights {C_out, C_in}, bias {C_out}.
template <class T>
BasicTensor<T> project_1x1(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& bias,
                           ProjectionContext<T>* ctx = nullptr) {
  require_rank(input, 3, "project_1x1 input");
  if (weights.rank() != 2 || weights.dim(1) != input.channels())
    throw ShapeError("project_1x1: weights " + shape_str(weights.shape()) + " incompatible with " +
                     std::to_string(input.channels()) + " input channels");
  const std::size_t cout = weights.dim(0), cin = weights.dim(1), plane = input.plane();
  if (bias.size() != cout) throw ShapeError("project_1x1: bias length " + detail::dims(bias.size(), cout));
  BasicTensor<T> out = BasicTensor<T>::map(cout, input.height(), input.width());
  std::vector<double> acc(plane);
  for (std::size_t o = 0; o < cout; ++o) {
    std::fill(acc.begin(), acc.end(), static_cast<double>(bias[o]));
    for (std::size_t i = 0; i < cin; ++i) {
      const double wv = weights(o, i);
      if (wv == 0.0) continue;
      const T* src = input.data().data() + i * plane;
      for (std::size_t p = 0; p < plane; ++p) acc[p] += wv * static_cast<double>(src[p]);
    }
    T* dst = out.data().data() + o * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = static_cast<T>(acc[p]);
  }
  if (ctx) {
    ctx->input = input;
    ctx->weights = weights;
    ctx->ready = true;
  }
  return out;
}

template <class T>
struct ProjectionGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

template <class T>
ProjectionGrads<T> project_1x1_backward(const BasicTensor<T>& grad_out, const ProjectionContext<T>& ctx) {
  if (!ctx.ready) throw UsageError("project_1x1_backward: forward context missing");
  const auto& in = ctx.input;
  const std::size_t cout = ctx.weights.dim(0), cin = ctx.weights.dim(1), plane = in.plane();
  if (grad_out.shape() != Shape{cout, in.height(), in.width()})
    throw ShapeError("project_1x1_backward: grad_out " + shape_str(grad_out.shape()));
  ProjectionGrads<T> g{BasicTensor<T>(in.shape()), BasicTensor<T>(ctx.weights.shape()), BasicTensor<T>({cout})};
  std::vector<double> gin(in.size(), 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    const T* go = grad_out.data().data() + o * plane;
    double gb = 0.0;
    for (std::size_t p = 0; p < plane; ++p) gb += go[p];
    g.bias[o] = static_cast<T>(gb);
    for (std::size_t i = 0; i < cin; ++i) {
      const T* src = in.data().data() + i * plane;
      double* gi = gin.data() + i * plane;
      const double wv = ctx.weights(o, i);
      double gw = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        gw += static_cast<double>(go[p]) * static_cast<double>(src[p]);
        gi[p] += wv * static_cast<double>(go[p]);
      }
      g.weights(o, i) = static_cast<T>(gw);
    }
  }
  for (std::size_t i = 0; i < gin.size(); ++i) g.input[i] = static_cast<T>(gin[i]);
  return g;
}

// Logistic function, kept strictly inside (0, 1) for the storage type.
template <class T>
T sigmoid_scalar(double x) {
  const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T{1}, T{0});
  return std::clamp(static_cast<T>(s), lo, hi);
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid_scalar<T>(input[i]);
  return out;
}

template <class T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  a.require_same(b, "hadamard");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  a.require_same(b, "add");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <class T>
struct XcorrContext {
  BasicTensor<T> search;
  BasicTensor<T> kernel;
  bool ready = false;
};

// Depthwise cross-correlation of a {C, kh, kw} template kernel over a
// {C, H, W} search map, "same" output with (k - 1) / 2 leading zero padding,
// averaged over the kernel area.
template <class T>
BasicTensor<T> depthwise_xcorr(const BasicTensor<T>& search, const BasicTensor<T>& kernel,
                               XcorrContext<T>* ctx = nullptr) {
  require_rank(search, 3, "depthwise_xcorr search");
  require_rank(kernel, 3, "depthwise_xcorr kernel");
  if (kernel.channels() != search.channels())
    throw ShapeError("depthwise_xcorr: channels " + detail::dims(kernel.channels(), search.channels()));
  const std::size_t c = search.channels(), h = search.height(), w = search.width();
  const std::size_t kh = kernel.height(), kw = kernel.width();
  const auto py = static_cast<std::ptrdiff_t>((kh - 1) / 2), px = static_cast<std::ptrdiff_t>((kw - 1) / 2);
  const double norm = 1.0 / static_cast<double>(kh * kw);
  BasicTensor<T> out(search.shape());
  std::vector<double> acc(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* src = search.data().data() + ch * h * w;
    for (std::size_t u = 0; u < kh; ++u)
      for (std::size_t v = 0; v < kw; ++v) {
        const double kv = kernel(ch, u, v) * norm;
        if (kv == 0.0) continue;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(u) - py, dx = static_cast<std::ptrdiff_t>(v) - px;
        const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
        const std::size_t x1 = static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - dx, 0, static_cast<std::ptrdiff_t>(w)));
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + dy;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* row = src + static_cast<std::size_t>(iy) * w;
          double* arow = acc.data() + y * w;
          for (std::size_t x = x0; x < x1; ++x) arow[x] += kv * static_cast<double>(row[x + dx]);
        }
      }
    T* dst = out.data().data() + ch * h * w;
    for (std::size_t i = 0; i < h * w; ++i) dst[i] = static_cast<T>(acc[i]);
  }
  if (ctx) {
    ctx->search = search;
    ctx->kernel = kernel;
    ctx->ready = true;
  }
  return out;
}

template <class T>
struct XcorrGrads {
  BasicTensor<T> search;
  BasicTensor<T> kernel;
};

template <class T>
XcorrGrads<T> depthwise_xcorr_backward(const BasicTensor<T>& grad_out, const XcorrContext<T>& ctx) {
  if (!ctx.ready) throw UsageError("depthwise_xcorr_backward: forward context missing");
  ctx.search.require_same(grad_out, "depthwise_xcorr_backward");
  const auto& search = ctx.search;
  const auto& kernel = ctx.kernel;
  const std::size_t c = search.channels(), h = search.height(), w = search.width();
  const std::size_t kh = kernel.height(), kw = kernel.width();
  const auto py = static_cast<std::ptrdiff_t>((kh - 1) / 2), px = static_cast<std::ptrdiff_t>((kw - 1) / 2);
  const double norm = 1.0 / static_cast<double>(kh * kw);
  XcorrGrads<T> g{BasicTensor<T>(search.shape()), BasicTensor<T>(kernel.shape())};
  std::vector<double> gs(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::fill(gs.begin(), gs.end(), 0.0);
    const T* src = search.data().data() + ch * h * w;
    const T* go = grad_out.data().data() + ch * h * w;
    for (std::size_t u = 0; u < kh; ++u)
      for (std::size_t v = 0; v < kw; ++v) {
        const double kv = kernel(ch, u, v) * norm;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(u) - py, dx = static_cast<std::ptrdiff_t>(v) - px;
        const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
        const std::size_t x1 = static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - dx, 0, static_cast<std::ptrdiff_t>(w)));
        double kacc = 0.0;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + dy;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* row = src + static_cast<std::size_t>(iy) * w;
          double* grow = gs.data() + static_cast<std::size_t>(iy) * w;
          const T* gorow = go + y * w;
          for (std::size_t x = x0; x < x1; ++x) {
            const double gv = gorow[x];
            kacc += gv * static_cast<double>(row[x + dx]);
            grow[x + dx] += kv * gv;
          }
        }
        g.kernel(ch, u, v) = static_cast<T>(kacc * norm);
      }
    T* dst = g.search.data().data() + ch * h * w;
    for (std::size_t i = 0; i < h * w; ++i) dst[i] = static_cast<T>(gs[i]);
  }
  return g;
}

}  // namespace sortrack
