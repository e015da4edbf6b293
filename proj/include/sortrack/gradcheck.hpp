#pragma once

// Finite-difference verification of every hand-written backward pass.
// Each check draws a small random instance in double precision, reduces the
// op output to a scalar with a random weighting (L = sum w * out) and
// compares the analytic gradient with central differences. The error of one
// instance is ||a - n|| / max(||a||, ||n||) over all checked coordinates.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sortrack/model.hpp"

namespace sortrack {

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 1e-4;
  std::size_t instances = 0;
  std::size_t coordinates = 0;  // checked per run, summed over instances

  bool ok() const { return max_error <= tolerance; }
};

inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  if (a.size() != n.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  if (denom < 1e-300) return 0.0;
  return std::sqrt(diff) / denom;
}

namespace gradcheck {

using Tensor = BasicTensor<double>;
using Rng = std::mt19937_64;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double weighted_sum(const Tensor& out, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
  return s;
}

// Central differences of loss() w.r.t. the listed entries of x (all entries
// when idx is empty); x is restored afterwards.
inline std::vector<double> numeric(Tensor& x, const std::function<double()>& loss, double h,
                                   const std::vector<std::size_t>& idx = {}) {
  std::vector<double> out;
  auto probe = [&](std::size_t i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = loss();
    x[i] = keep - h;
    const double down = loss();
    x[i] = keep;
    out.push_back((up - down) / (2.0 * h));
  };
  if (idx.empty())
    for (std::size_t i = 0; i < x.size(); ++i) probe(i);
  else
    for (auto i : idx) probe(i);
  return out;
}

inline std::vector<double> gather(const Tensor& g, const std::vector<std::size_t>& idx = {}) {
  if (idx.empty()) return g.data();
  std::vector<double> out;
  for (auto i : idx) out.push_back(g[i]);
  return out;
}

inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, Rng& rng) {
  if (n <= count) return {};
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

// Accumulates per-instance errors of one named check.
struct Tally {
  GradCheckResult r;
  Tally(std::string name, double tol) { r.name = std::move(name), r.tolerance = tol; }
  void add(const std::vector<double>& a, const std::vector<double>& n) {
    r.max_error = std::max(r.max_error, relative_error(a, n));
    r.coordinates += a.size();
  }
};

inline constexpr double kStep = 1e-4;

inline GaborParams random_gabor(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {0.8 + 2.0 * u(rng), 2.0 + 4.0 * u(rng), 0.3 + 0.9 * u(rng), -std::numbers::pi + 2.0 * std::numbers::pi * u(rng)};
}

// ---- individual checks ---------------------------------------------------

inline void check_gabor(Rng& rng, std::array<Tally, 4>& t) {
  constexpr double h = 1e-5;
  const double theta = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);
  const std::size_t size = 2 * pick(rng, 1, 4) + 1;
  const auto p = random_gabor(rng);
  const auto g = gabor_param_grads<double>(theta, p, size);
  const Tensor* analytic[4] = {&g.d_sigma, &g.d_lambda, &g.d_gamma, &g.d_psi};
  for (int k = 0; k < 4; ++k) {
    auto up = p, down = p;
    double* fu[4] = {&up.sigma, &up.lambda, &up.gamma, &up.psi};
    double* fd[4] = {&down.sigma, &down.lambda, &down.gamma, &down.psi};
    *fu[k] += h;
    *fd[k] -= h;
    const auto a = gabor_kernel<double>(theta, up, size), b = gabor_kernel<double>(theta, down, size);
    std::vector<double> n(a.size());
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = (a[i] - b[i]) / (2.0 * h);
    t[static_cast<std::size_t>(k)].add(analytic[k]->data(), n);
  }
}

inline void check_conv(Rng& rng, Tally& t) {
  const std::size_t groups = pick(rng, 1, 2), cin = groups * pick(rng, 1, 2), cout = groups * pick(rng, 1, 2);
  const std::size_t ks = 2 * pick(rng, 0, 1) + 1;
  const ConvSpec spec = ConvSpec::same(ks, groups);
  auto x = random_tensor({cin, pick(rng, 3, 8), pick(rng, 3, 8)}, rng);
  auto k = random_tensor({cout, cin / groups, ks, ks}, rng);
  const auto w = random_tensor({cout, x.height(), x.width()}, rng);
  ConvContext<double> ctx;
  conv2d_grouped(x, k, spec, &ctx);
  const auto g = conv2d_grouped_backward(w, ctx);
  auto loss = [&] { return weighted_sum(conv2d_grouped(x, k, spec), w); };
  t.add(g.input.data(), numeric(x, loss, kStep));
  t.add(g.kernels.data(), numeric(k, loss, kStep));
}

inline void check_group_norm(Rng& rng, Tally& t) {
  const std::size_t groups = pick(rng, 1, 4), c = groups * pick(rng, 1, 2);
  auto x = random_tensor({c, pick(rng, 2, 8), pick(rng, 2, 8)}, rng, -2.0, 2.0);
  GroupNormState<double> st{groups, random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng), 1e-5};
  const auto w = random_tensor(x.shape(), rng);
  GroupNormContext<double> ctx;
  group_norm(x, st, &ctx);
  const auto g = group_norm_backward(w, ctx);
  auto loss = [&] { return weighted_sum(group_norm(x, st), w); };
  t.add(g.input.data(), numeric(x, loss, kStep));
  t.add(g.scale.data(), numeric(st.scale, loss, kStep));
  t.add(g.shift.data(), numeric(st.shift, loss, kStep));
}

inline void check_projection(Rng& rng, Tally& t) {
  const std::size_t cin = pick(rng, 1, 8), cout = pick(rng, 1, 8);
  auto x = random_tensor({cin, pick(rng, 1, 8), pick(rng, 1, 8)}, rng);
  auto wt = random_tensor({cout, cin}, rng), b = random_tensor({cout}, rng);
  const auto w = random_tensor({cout, x.height(), x.width()}, rng);
  ProjectionContext<double> ctx;
  project_1x1(x, wt, b, &ctx);
  const auto g = project_1x1_backward(w, ctx);
  auto loss = [&] { return weighted_sum(project_1x1(x, wt, b), w); };
  t.add(g.input.data(), numeric(x, loss, kStep));
  t.add(g.weights.data(), numeric(wt, loss, kStep));
  t.add(g.bias.data(), numeric(b, loss, kStep));
}

inline void check_xcorr(Rng& rng, Tally& t) {
  const std::size_t c = pick(rng, 1, 4);
  auto s = random_tensor({c, pick(rng, 4, 8), pick(rng, 4, 8)}, rng);
  auto k = random_tensor({c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
  const auto w = random_tensor(s.shape(), rng);
  XcorrContext<double> ctx;
  depthwise_xcorr(s, k, &ctx);
  const auto g = depthwise_xcorr_backward(w, ctx);
  auto loss = [&] { return weighted_sum(depthwise_xcorr(s, k), w); };
  t.add(g.search.data(), numeric(s, loss, kStep));
  t.add(g.kernel.data(), numeric(k, loss, kStep));
}

inline void check_stems(Rng& rng, Tally& granular, Tally& strided) {
  StemConfig cfg{2, 4 * pick(rng, 1, 2), pick(rng, 0, 1) ? 4u : 2u, 3};
  if (cfg.latent_dim % cfg.groups != 0) cfg.groups = 2;
  auto img = random_tensor({3, 2 * pick(rng, 1, 4), 2 * pick(rng, 1, 4)}, rng);
  const auto w = random_tensor({cfg.latent_dim, img.height() / 2, img.width() / 2}, rng);

  StemWeights<double> sw{random_tensor({cfg.latent_dim, cfg.s2d_channels() / cfg.groups, 1, 1}, rng),
                         random_tensor({cfg.latent_dim}, rng)};
  StemContext<double> sc;
  stem_forward(img, cfg, sw, &sc);
  const auto sg = stem_backward(w, sc);
  auto sloss = [&] { return weighted_sum(stem_forward(img, cfg, sw), w); };
  granular.add(sg.weights.data(), numeric(sw.weights, sloss, kStep));
  granular.add(sg.bias.data(), numeric(sw.bias, sloss, kStep));

  StridedWeights<double> tw{random_tensor({cfg.latent_dim, 3, 2, 2}, rng), random_tensor({cfg.latent_dim}, rng)};
  StridedContext<double> tc;
  stem_strided_baseline(img, cfg, tw, &tc);
  const auto tg = stem_strided_backward(w, tc);
  auto tloss = [&] { return weighted_sum(stem_strided_baseline(img, cfg, tw), w); };
  strided.add(tg.weights.data(), numeric(tw.weights, tloss, kStep));
  strided.add(tg.bias.data(), numeric(tw.bias, tloss, kStep));
}

inline SorState<double> random_sor_state(std::size_t c, std::size_t k, Rng& rng) {
  auto st = SorState<double>::make(c, k, 2 * pick(rng, 1, 2) + 1, random_gabor(rng));
  st.gn_rgb.scale = random_tensor({k * c}, rng, 0.5, 1.5);
  st.gn_rgb.shift = random_tensor({k * c}, rng);
  st.gn_event.scale = random_tensor({k * c}, rng, 0.5, 1.5);
  st.gn_event.shift = random_tensor({k * c}, rng);
  st.proj_w = random_tensor({c, k * c}, rng);
  st.proj_b = random_tensor({c}, rng);
  return st;
}

// Whole refinement module: feature, normalization, projection and Gabor
// coefficient gradients.
inline void check_sor(Rng& rng, Tally& feats, Tally& affine, Tally& coeffs) {
  const std::size_t c = pick(rng, 1, 4), k = pick(rng, 1, 4), h = pick(rng, 3, 8), wd = pick(rng, 3, 8);
  auto st = random_sor_state(c, k, rng);
  const double phi = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);
  auto fr = random_tensor({c, h, wd}, rng), fe = random_tensor({c, h, wd}, rng);
  const auto w = random_tensor({c, h, wd}, rng);
  SorContext<double> ctx;
  sor_forward(fr, fe, st, phi, &ctx);
  const auto g = sor_backward(w, ctx);
  auto loss = [&] { return weighted_sum(sor_forward(fr, fe, st, phi), w); };
  feats.add(g.f_rgb.data(), numeric(fr, loss, kStep));
  feats.add(g.f_event.data(), numeric(fe, loss, kStep));
  affine.add(g.proj_w.data(), numeric(st.proj_w, loss, kStep));
  affine.add(g.proj_b.data(), numeric(st.proj_b, loss, kStep));
  affine.add(g.gn_rgb_scale.data(), numeric(st.gn_rgb.scale, loss, kStep));
  affine.add(g.gn_rgb_shift.data(), numeric(st.gn_rgb.shift, loss, kStep));
  affine.add(g.gn_event_scale.data(), numeric(st.gn_event.scale, loss, kStep));
  affine.add(g.gn_event_shift.data(), numeric(st.gn_event.shift, loss, kStep));
  Tensor p({4});
  p[0] = st.params.sigma, p[1] = st.params.lambda, p[2] = st.params.gamma, p[3] = st.params.psi;
  auto ploss = [&] {
    auto s2 = st;
    s2.params = {p[0], p[1], p[2], p[3]};
    return weighted_sum(sor_forward(fr, fe, s2, phi), w);
  };
  coeffs.add({g.gabor.begin(), g.gabor.end()}, numeric(p, ploss, kStep));
}

inline void check_loss(Rng& rng, Tally& t) {
  constexpr double h = 1e-6;
  const std::size_t n = pick(rng, 4, 8), stride = 4;
  const double patch = static_cast<double>(n * stride);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double bw = patch * (0.2 + 0.4 * u(rng)), bh = patch * (0.2 + 0.4 * u(rng));
  const BoundingBox gt = BoundingBox::from_center(patch * (0.3 + 0.4 * u(rng)), patch * (0.3 + 0.4 * u(rng)), bw, bh);
  const auto target = encode_target(gt, n, n, stride, patch);
  LossWeights lw{0.5 + u(rng), 14.0 * (0.5 + u(rng)), 0.5 + u(rng)};
  HeadOutput<double> head;
  head.score_logits = random_tensor({1, n, n}, rng, -3.0, 3.0);
  head.offset_logits = random_tensor({2, n, n}, rng, -2.0, 2.0);
  head.size = random_tensor({2, n, n}, rng, 1.0, 0.6 * static_cast<double>(n));
  auto refresh = [&] {
    head.score = sigmoid(head.score_logits);
    head.offset = sigmoid(head.offset_logits);
  };
  refresh();
  HeadMapGrads<double> g;
  total_loss(head, target, lw, &g);
  auto loss = [&] {
    refresh();
    return total_loss(head, target, lw).total;
  };
  t.add(g.score_logits.data(), numeric(head.score_logits, loss, h));
  t.add(g.offset_logits.data(), numeric(head.offset_logits, loss, h));
  t.add(g.size.data(), numeric(head.size, loss, h));
  refresh();
}

// Tiny model, end to end: a few sampled coordinates of every parameter
// tensor through head, correlation, refinement and stem.
inline void check_model(Rng& rng, Tally& t, bool use_sor, StemMode mode) {
  Config cfg;
  cfg.stem = {4, 8, 4, 3};
  cfg.stem_mode = mode;
  cfg.k = 2;
  cfg.kernel_size = 3;
  cfg.use_sor = use_sor;
  cfg.crop = {32, 2.0, 48, 4.0};
  Model<double> m(cfg);
  m.initialize(rng());
  for (auto* tw : {&m.params.head.score_w, &m.params.head.size_w, &m.params.head.offset_w, &m.params.proj_w})
    *tw = random_tensor(tw->shape(), rng, -0.5, 0.5);
  m.params.gn_corr.scale = random_tensor(m.params.gn_corr.scale.shape(), rng, 0.5, 1.5);
  m.params.gn_corr.shift = random_tensor(m.params.gn_corr.shift.shape(), rng);
  m.set_gabor(random_gabor(rng));
  auto trgb = random_tensor({3, 32, 32}, rng), tev = random_tensor({3, 32, 32}, rng);
  auto srgb = random_tensor({3, 48, 48}, rng), sev = random_tensor({3, 48, 48}, rng);
  const double phi = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);
  const double patch = 48.0;
  const auto target = encode_target(BoundingBox::from_center(20.0, 27.0, 11.0, 9.0), m.score_size(), m.score_size(),
                                    m.stride(), patch);
  auto loss = [&] {
    const auto kernel = m.template_forward(trgb, tev);
    return total_loss(m.search_forward(srgb, sev, phi, kernel), target, cfg.loss).total;
  };
  TemplateContext<double> tctx;
  SearchContext<double> sctx;
  auto grads = ModelParams<double>::zeros(cfg);
  const auto kernel = m.template_forward(trgb, tev, &tctx);
  const auto head = m.search_forward(srgb, sev, phi, kernel, &sctx);
  HeadMapGrads<double> hg;
  total_loss(head, target, cfg.loss, &hg);
  m.template_backward(m.search_backward(hg, sctx, grads), tctx, grads);
  std::vector<BasicTensor<double>*> gs;
  grads.for_each([&](const char*, BasicTensor<double>& g) { gs.push_back(&g); });
  std::vector<double> a, n;
  std::size_t i = 0;
  m.params.for_each([&](const char*, BasicTensor<double>& p) {
    const auto& g = *gs[i++];
    double norm = 0.0;
    for (double v : g.data()) norm = std::max(norm, std::abs(v));
    if (norm == 0.0) return;  // inactive branch of this configuration
    const auto idx = sample_indices(p.size(), 4, rng);
    const auto ga = gather(g, idx), gn = numeric(p, loss, 1e-5, idx);
    a.insert(a.end(), ga.begin(), ga.end());
    n.insert(n.end(), gn.begin(), gn.end());
  });
  t.add(a, n);
}

}  // namespace gradcheck

// Runs every check over `instances` random draws derived from `seed`.
inline std::vector<GradCheckResult> run_grad_checks(std::uint64_t seed, std::size_t instances = 100,
                                                    std::size_t model_instances = 4) {
  using gradcheck::Tally;
  std::array<Tally, 4> gabor{Tally{"odm.gabor.d_sigma", 1e-5}, Tally{"odm.gabor.d_lambda", 1e-5},
                             Tally{"odm.gabor.d_gamma", 1e-5}, Tally{"odm.gabor.d_psi", 1e-5}};
  Tally conv{"numerics.conv2d_grouped", 1e-4}, gn{"numerics.group_norm", 1e-4}, proj{"numerics.project_1x1", 1e-4},
      xcorr{"numerics.depthwise_xcorr", 1e-4}, stem{"stem.granular", 1e-4}, strided{"stem.strided", 1e-4},
      sor_f{"sor.features", 1e-4}, sor_a{"sor.norm_projection", 1e-4}, sor_c{"sor.gabor_coefficients", 1e-4},
      loss{"head_loss.total", 1e-4}, model{"model.end_to_end", 1e-4};
  for (std::size_t i = 0; i < instances; ++i) {
    gradcheck::Rng rng(seed * 1000003ULL + i);
    gradcheck::check_gabor(rng, gabor);
    gradcheck::check_conv(rng, conv);
    gradcheck::check_group_norm(rng, gn);
    gradcheck::check_projection(rng, proj);
    gradcheck::check_xcorr(rng, xcorr);
    gradcheck::check_stems(rng, stem, strided);
    gradcheck::check_sor(rng, sor_f, sor_a, sor_c);
    gradcheck::check_loss(rng, loss);
  }
  for (std::size_t i = 0; i < model_instances; ++i) {
    gradcheck::Rng rng(seed * 7919ULL + i);
    gradcheck::check_model(rng, model, i % 2 == 0, i % 4 == 3 ? StemMode::strided : StemMode::granular);
  }
  std::vector<GradCheckResult> out;
  for (auto& t : gabor) out.push_back(t.r), out.back().instances = instances;
  for (auto* t : {&conv, &gn, &proj, &xcorr, &stem, &strided, &sor_f, &sor_a, &sor_c, &loss}) {
    t->r.instances = instances;
    out.push_back(t->r);
  }
  model.r.instances = model_instances;
  out.push_back(model.r);
  return out;
}

}  // namespace sortrack
