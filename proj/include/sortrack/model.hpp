#pragma once

// Full tracking network: shared stem -> SOR fusion -> depthwise correlation
// of cached template features against search features -> group norm ->
// center head.
// Parameters, forward/backward for a (template, search) pair and the binary
// checkpoint format.

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <string>

#include "sortrack/config.hpp"
#include "sortrack/head_loss.hpp"
#include "sortrack/sor.hpp"
#include "sortrack/stem.hpp"

namespace sortrack {

inline constexpr const char* kGaborParamName = "odm.gabor";

// Initial center probability of every score cell: one positive among
// thousands of cells, so the negatives must start near zero.
inline constexpr double kScorePrior = 0.01;

template <class T = float>
struct ModelParams {
  StemWeights<T> stem;
  StridedWeights<T> strided;
  BasicTensor<T> gabor;  // {4}: log sigma, log lambda, log gamma, psi
  GroupNormState<T> gn_rgb;
  GroupNormState<T> gn_event;
  BasicTensor<T> proj_w;  // {D, K*D}
  BasicTensor<T> proj_b;  // {D}
  GroupNormState<T> gn_corr;  // one group: the head sees a unit-scale response
  HeadWeights<T> head;

  static ModelParams zeros(const Config& cfg) {
    const std::size_t d = cfg.stem.latent_dim, kd = cfg.k * d;
    return {StemWeights<T>::zeros(cfg.stem),
            StridedWeights<T>::zeros(cfg.stem),
            BasicTensor<T>({4}),
            {cfg.k, BasicTensor<T>({kd}), BasicTensor<T>({kd}), 1e-5},
            {cfg.k, BasicTensor<T>({kd}), BasicTensor<T>({kd}), 1e-5},
            BasicTensor<T>({d, kd}),
            BasicTensor<T>({d}),
            {1, BasicTensor<T>({d}), BasicTensor<T>({d}), 1e-5},
            HeadWeights<T>::zeros(d)};
  }

  // Visits every trainable tensor with a stable name.
  template <class F>
  void for_each(F&& f) {
    f("stem.weights", stem.weights);
    f("stem.bias", stem.bias);
    f("strided.weights", strided.weights);
    f("strided.bias", strided.bias);
    f(kGaborParamName, gabor);
    f("sor.gn_rgb.scale", gn_rgb.scale);
    f("sor.gn_rgb.shift", gn_rgb.shift);
    f("sor.gn_event.scale", gn_event.scale);
    f("sor.gn_event.shift", gn_event.shift);
    f("sor.proj_w", proj_w);
    f("sor.proj_b", proj_b);
    f("corr.gn.scale", gn_corr.scale);
    f("corr.gn.shift", gn_corr.shift);
    f("head.score_w", head.score_w);
    f("head.score_b", head.score_b);
    f("head.size_w", head.size_w);
    f("head.size_b", head.size_b);
    f("head.offset_w", head.offset_w);
    f("head.offset_b", head.offset_b);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each([&](const char* n, BasicTensor<T>& t) { f(n, std::as_const(t)); });
  }
};

template <class T>
struct TemplateContext {
  StemContext<T> stem_rgb, stem_event;
  StridedContext<T> strided_rgb, strided_event;
  SorContext<T> sor;
  Shape refined_shape;
  std::size_t crop_y = 0, crop_x = 0;
};

template <class T>
struct SearchContext {
  StemContext<T> stem_rgb, stem_event;
  StridedContext<T> strided_rgb, strided_event;
  SorContext<T> sor;
  XcorrContext<T> xcorr;
  GroupNormContext<T> gn_corr;
  HeadContext<T> head;
  double phi = 0.0;
};

template <class T = float>
class Model {
 public:
  Config cfg;
  ModelParams<T> params;

  Model() : Model(Config{}) {}
  explicit Model(const Config& c) : cfg(c), params(ModelParams<T>::zeros(c)) {
    cfg.validate();
    set_gabor(cfg.gabor);
  }

  // Template side length on the feature grid (the crop covers the box).
  std::size_t template_cells() const {
    const double cells = static_cast<double>(cfg.crop.template_size) / cfg.crop.template_factor /
                         static_cast<double>(cfg.stem.block);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cells)));
  }
  std::size_t stride() const { return cfg.stem.block; }
  std::size_t score_size() const { return cfg.crop.search_size / cfg.stem.block; }

  GaborParams gabor_params() const {
    return {std::exp(static_cast<double>(params.gabor[0])), std::exp(static_cast<double>(params.gabor[1])),
            std::exp(static_cast<double>(params.gabor[2])), static_cast<double>(params.gabor[3])};
  }
  void set_gabor(const GaborParams& g) {
    g.validate();
    params.gabor[0] = static_cast<T>(std::log(g.sigma));
    params.gabor[1] = static_cast<T>(std::log(g.lambda));
    params.gabor[2] = static_cast<T>(std::log(g.gamma));
    params.gabor[3] = static_cast<T>(g.psi);
  }

  SorState<T> sor_state() const {
    return {cfg.k, cfg.kernel_size, gabor_params(), params.gn_rgb, params.gn_event, params.proj_w, params.proj_b};
  }

  // Weight initialization: identity-block granular stem, random strided
  // stem, small random SOR projection, head biased to a low score prior and
  // the nominal target size. The score branch starts as the channel mean of
  // the correlation, so an untrained model already ranks cells by match.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    auto fill = [&](BasicTensor<T>& t, double std) {
      for (auto& v : t.data()) v = static_cast<T>(std * n01(rng));
    };
    const std::size_t d = cfg.stem.latent_dim;
    params = ModelParams<T>::zeros(cfg);
    params.stem = StemWeights<T>::identity_blocks(cfg.stem);
    for (auto& v : params.stem.weights.data()) v += static_cast<T>(0.01 * n01(rng));
    fill(params.strided.weights, 1.0 / std::sqrt(static_cast<double>(cfg.stem.s2d_channels())));
    set_gabor(cfg.gabor);
    params.gn_rgb = GroupNormState<T>::identity(cfg.k * d, cfg.k);
    params.gn_event = GroupNormState<T>::identity(cfg.k * d, cfg.k);
    params.gn_corr = GroupNormState<T>::identity(d, 1);
    fill(params.proj_w, 0.01);
    fill(params.head.score_w, 0.01);
    for (auto& v : params.head.score_w.data()) v += static_cast<T>(1.0 / static_cast<double>(d));
    params.head.score_b[0] = static_cast<T>(std::log(kScorePrior / (1.0 - kScorePrior)));
    fill(params.head.size_w, 0.001);
    fill(params.head.offset_w, 0.001);
    const double nominal = static_cast<double>(cfg.crop.search_size) / cfg.crop.search_factor / static_cast<double>(stride());
    params.head.size_b[0] = static_cast<T>(nominal);
    params.head.size_b[1] = static_cast<T>(nominal);
  }

  // ---- forward ---------------------------------------------------------

  BasicTensor<T> encode(const BasicTensor<T>& image, StemContext<T>* sc, StridedContext<T>* tc) const {
    ++stem_calls_;
    if (cfg.stem_mode == StemMode::granular) return stem_forward(image, cfg.stem, params.stem, sc);
    return stem_strided_baseline(image, cfg.stem, params.strided, tc);
  }

  BasicTensor<T> refine(const BasicTensor<T>& f_rgb, const BasicTensor<T>& f_event, double phi,
                        SorContext<T>* ctx) const {
    if (!cfg.use_sor) return f_rgb;
    return sor_forward(f_rgb, f_event, sor_state(), phi, ctx);
  }

  // Normalized 3 x template_size^2 patches -> {D, n, n} correlation kernel:
  // the central n x n cells of the refined features, zero-mean per channel.
  BasicTensor<T> template_forward(const BasicTensor<T>& rgb, const BasicTensor<T>& event,
                                  TemplateContext<T>* ctx = nullptr) const {
    check_patch(rgb, cfg.crop.template_size, "template rgb");
    check_patch(event, cfg.crop.template_size, "template event");
    auto f_rgb = encode(rgb, ctx ? &ctx->stem_rgb : nullptr, ctx ? &ctx->strided_rgb : nullptr);
    BasicTensor<T> f_event;
    if (cfg.use_sor) f_event = encode(event, ctx ? &ctx->stem_event : nullptr, ctx ? &ctx->strided_event : nullptr);
    auto refined = refine(f_rgb, f_event, 0.0, ctx ? &ctx->sor : nullptr);
    return template_crop(refined, ctx);
  }

  BasicTensor<T> template_crop(const BasicTensor<T>& refined, TemplateContext<T>* ctx = nullptr) const {
    const std::size_t n = std::min(template_cells(), refined.height());
    const std::size_t y0 = (refined.height() - n) / 2, x0 = (refined.width() - n) / 2;
    BasicTensor<T> kernel = BasicTensor<T>::map(refined.channels(), n, n);
    for (std::size_t c = 0; c < refined.channels(); ++c) {
      double mean = 0.0;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) mean += refined(c, y0 + y, x0 + x);
      mean /= static_cast<double>(n * n);
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          kernel(c, y, x) = static_cast<T>(static_cast<double>(refined(c, y0 + y, x0 + x)) - mean);
    }
    if (ctx) {
      ctx->refined_shape = refined.shape();
      ctx->crop_y = y0;
      ctx->crop_x = x0;
    }
    return kernel;
  }

  struct SearchFeatures {
    BasicTensor<T> pre;   // stem RGB features
    BasicTensor<T> post;  // refined features
  };

  SearchFeatures search_features(const BasicTensor<T>& rgb, const BasicTensor<T>& event, double phi,
                                 SearchContext<T>* ctx = nullptr) const {
    check_patch(rgb, cfg.crop.search_size, "search rgb");
    check_patch(event, cfg.crop.search_size, "search event");
    auto f_rgb = encode(rgb, ctx ? &ctx->stem_rgb : nullptr, ctx ? &ctx->strided_rgb : nullptr);
    BasicTensor<T> f_event;
    if (cfg.use_sor) f_event = encode(event, ctx ? &ctx->stem_event : nullptr, ctx ? &ctx->strided_event : nullptr);
    if (ctx) ctx->phi = phi;
    auto post = refine(f_rgb, f_event, phi, ctx ? &ctx->sor : nullptr);
    return {std::move(f_rgb), std::move(post)};
  }

  HeadOutput<T> search_head(const BasicTensor<T>& refined, const BasicTensor<T>& kernel,
                            SearchContext<T>* ctx = nullptr) const {
    auto corr = depthwise_xcorr(refined, kernel, ctx ? &ctx->xcorr : nullptr);
    auto normed = group_norm(corr, params.gn_corr, ctx ? &ctx->gn_corr : nullptr);
    return head_forward(normed, params.head, ctx ? &ctx->head : nullptr);
  }

  HeadOutput<T> search_forward(const BasicTensor<T>& rgb, const BasicTensor<T>& event, double phi,
                               const BasicTensor<T>& kernel, SearchContext<T>* ctx = nullptr) const {
    return search_head(search_features(rgb, event, phi, ctx).post, kernel, ctx);
  }

  // ---- backward --------------------------------------------------------
  // Gradients are accumulated into `grads`; returns d/d(template kernel).

  BasicTensor<T> search_backward(const HeadMapGrads<T>& g, const SearchContext<T>& ctx, ModelParams<T>& grads) const {
    auto hb = head_backward(g, ctx.head);
    accumulate_head(grads.head, hb.weights);
    auto ng = group_norm_backward(hb.features, ctx.gn_corr);
    grads.gn_corr.scale += ng.scale;
    grads.gn_corr.shift += ng.shift;
    auto xg = depthwise_xcorr_backward(ng.input, ctx.xcorr);
    backward_refined(xg.search, ctx.sor, ctx.stem_rgb, ctx.stem_event, ctx.strided_rgb, ctx.strided_event, grads);
    return std::move(xg.kernel);
  }

  void template_backward(const BasicTensor<T>& grad_kernel, const TemplateContext<T>& ctx,
                         ModelParams<T>& grads) const {
    BasicTensor<T> g_refined(ctx.refined_shape);
    const std::size_t n = grad_kernel.height();
    for (std::size_t c = 0; c < grad_kernel.channels(); ++c) {
      double mean = 0.0;
      for (T v : grad_kernel.channel(c)) mean += v;
      mean /= static_cast<double>(n * n);
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          g_refined(c, ctx.crop_y + y, ctx.crop_x + x) = static_cast<T>(grad_kernel(c, y, x) - mean);
    }
    backward_refined(g_refined, ctx.sor, ctx.stem_rgb, ctx.stem_event, ctx.strided_rgb, ctx.strided_event, grads);
  }

  std::size_t stem_calls() const { return stem_calls_; }
  void reset_stem_calls() const { stem_calls_ = 0; }

 private:
  mutable std::size_t stem_calls_ = 0;

  static void check_patch(const BasicTensor<T>& p, std::size_t size, const char* what) {
    if (p.shape() != Shape{3, size, size})
      throw ShapeError(std::string(what) + ": expected " + shape_str(Shape{3, size, size}) + ", got " +
                       shape_str(p.shape()));
  }

  static void accumulate_head(HeadWeights<T>& acc, const HeadWeights<T>& g) {
    acc.score_w += g.score_w;
    acc.score_b += g.score_b;
    acc.size_w += g.size_w;
    acc.size_b += g.size_b;
    acc.offset_w += g.offset_w;
    acc.offset_b += g.offset_b;
  }

  void backward_stem(const BasicTensor<T>& g, const StemContext<T>& sc, const StridedContext<T>& tc,
                     ModelParams<T>& grads) const {
    if (cfg.stem_mode == StemMode::granular) {
      auto sg = stem_backward(g, sc);
      grads.stem.weights += sg.weights;
      grads.stem.bias += sg.bias;
    } else {
      auto sg = stem_strided_backward(g, tc);
      grads.strided.weights += sg.weights;
      grads.strided.bias += sg.bias;
    }
  }

  void backward_refined(const BasicTensor<T>& g_refined, const SorContext<T>& sor, const StemContext<T>& s_rgb,
                        const StemContext<T>& s_event, const StridedContext<T>& t_rgb,
                        const StridedContext<T>& t_event, ModelParams<T>& grads) const {
    if (!cfg.use_sor) {
      backward_stem(g_refined, s_rgb, t_rgb, grads);
      return;
    }
    auto sg = sor_backward(g_refined, sor);
    grads.proj_w += sg.proj_w;
    grads.proj_b += sg.proj_b;
    grads.gn_rgb.scale += sg.gn_rgb_scale;
    grads.gn_rgb.shift += sg.gn_rgb_shift;
    grads.gn_event.scale += sg.gn_event_scale;
    grads.gn_event.shift += sg.gn_event_shift;
    // Chain rule onto the stored log-parameters.
    const auto gp = sor.bank.params;
    grads.gabor[0] += static_cast<T>(sg.gabor[0] * gp.sigma);
    grads.gabor[1] += static_cast<T>(sg.gabor[1] * gp.lambda);
    grads.gabor[2] += static_cast<T>(sg.gabor[2] * gp.gamma);
    grads.gabor[3] += static_cast<T>(sg.gabor[3]);
    backward_stem(sg.f_rgb, s_rgb, t_rgb, grads);
    backward_stem(sg.f_event, s_event, t_event, grads);
  }
};

// ---- checkpoint ----------------------------------------------------------
// "SRTRCKPT" | u32 version | u64 config length | config text |
// u32 tensor count | per tensor: u32 name length, name, u32 rank,
// u64 dims[rank], f32 data[numel]. All integers and floats little-endian.

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'T', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw ParseError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("save_checkpoint: cannot write " + path);
  os.write(kCheckpointMagic, 8);
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  const std::string text = model.cfg.to_text();
  detail::put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::uint32_t count = 0;
  model.params.for_each([&](const char*, const BasicTensor<T>&) { ++count; });
  detail::put_le<std::uint32_t>(os, count);
  model.params.for_each([&](const char* name, const BasicTensor<T>& t) {
    const std::string n(name);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(n.size()));
    os.write(n.data(), static_cast<std::streamsize>(n.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint64_t>(os, d);
    for (T v : t.data()) detail::put_le<float>(os, static_cast<float>(v));
  });
  if (!os) throw InputError("save_checkpoint: write failed for " + path);
}

template <class T = float>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("load_checkpoint: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError("load_checkpoint: " + path + " is not a checkpoint");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw ParseError("load_checkpoint: unsupported version " + std::to_string(version));
  const auto len = detail::get_le<std::uint64_t>(is);
  if (len > (1u << 20)) throw ParseError("load_checkpoint: implausible config length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError("checkpoint: truncated file");
  Config cfg;
  cfg.load_text(text);
  Model<T> model(cfg);
  std::map<std::string, BasicTensor<T>*> slots;
  model.params.for_each([&](const char* name, BasicTensor<T>& t) { slots[name] = &t; });
  const auto count = detail::get_le<std::uint32_t>(is);
  if (count != slots.size()) throw ParseError("load_checkpoint: expected " + std::to_string(slots.size()) + " tensors");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = detail::get_le<std::uint32_t>(is);
    if (nlen > 256) throw ParseError("load_checkpoint: implausible tensor name length");
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw ParseError("checkpoint: truncated file");
    auto it = slots.find(name);
    if (it == slots.end()) throw ParseError("load_checkpoint: unknown tensor " + name);
    const auto rank = detail::get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(is));
    if (shape != it->second->shape())
      throw ParseError("load_checkpoint: tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                       shape_str(it->second->shape()));
    for (auto& v : it->second->data()) v = static_cast<T>(detail::get_le<float>(is));
  }
  return model;
}

}  // namespace sortrack
