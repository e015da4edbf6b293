// End-to-end acceptance run: one PASS/FAIL line per criterion. Exits non-zero
// if any criterion fails. Criteria 5-8 drive the sortrack CLI.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "sortrack/gradcheck.hpp"
#include "sortrack/metrics.hpp"
#include "sortrack/sor.hpp"
#include "sortrack/stem.hpp"
#include "sortrack/synth.hpp"

using namespace sortrack;
using std::numbers::pi;

namespace {

// ---- pinned settings ----
constexpr std::uint64_t kGradSeed = 0;
constexpr std::size_t kGradInstances = 100;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kGroupNormTolerance = 1e-5;
constexpr std::size_t kGateSamples = 1000000;
constexpr std::size_t kMetricPairs = 200;
constexpr double kMetricTolerance = 1e-9;
constexpr std::uint64_t kBundleSeed = 0;     // toy benchmark
constexpr std::uint64_t kTrainSetSeed = 100;  // disjoint training set
constexpr std::uint64_t kTrainSeed = 1;       // initialization and sampling
constexpr std::size_t kTrainSteps = 500;
constexpr std::size_t kAblationSteps = 300;
constexpr std::size_t kAblationBatch = 4;
constexpr double kLossRatio = 0.5;
constexpr double kOverfitIoU = 0.7;
constexpr double kTrainSeconds = 600.0;
constexpr double kAblationSeconds = 1800.0;
constexpr std::size_t kLossWindow = 25;

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

int cli(const std::string& args) {
  const fs::path log = g_work / "cli.log";
  const std::string cmd = std::string("\"") + SORTRACK_CLI + "\" " + args + " >> \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (code != 0) throw std::runtime_error("command failed (" + std::to_string(code) + "): sortrack " + args);
  return code;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- 1: gradient suite ----
Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_grad_checks(kGradSeed, kGradInstances);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : results)
    if (r.max_error >= worst) worst = r.max_error, worst_name = r.name;
  const bool ok = worst <= kGradTolerance && secs < kGradSeconds;
  return {ok, std::to_string(results.size()) + " checks x " + std::to_string(kGradInstances) + " instances, max rel err " +
                  fmt(worst) + " (" + worst_name + "), " + fmt(secs, 3) + " s"};
}

// ---- 2: equation fidelity ----
Outcome equation_fidelity() {
  bool ok = true;
  std::string why;
  for (std::size_t k : {1u, 2u, 3u, 4u, 8u})
    for (double phi : {0.0, 0.37, 2.9}) {
      const auto t = orientations(phi, k);
      for (std::size_t i = 0; i < k; ++i)
        if (t[i] != phi + static_cast<double>(i) * pi / static_cast<double>(k)) ok = false, why = "orientation K=" + std::to_string(k);
    }
  std::mt19937_64 rng(2);
  std::normal_distribution<double> wide(0.0, 30.0);
  BasicTensor<double> r({kGateSamples});
  for (auto& v : r.data()) v = wide(rng);
  r[0] = 1e6;
  r[1] = -1e6;
  const auto g = build_gate(r);
  const auto gf = build_gate(BasicTensor<float>::cast(r));
  for (std::size_t i = 0; i < kGateSamples; ++i)
    if (!(g[i] > 1.0 && g[i] < 2.0) || !(gf[i] > 1.0f && gf[i] < 2.0f)) ok = false, why = "gate bound";
  auto st = SorState<double>::make(4);
  BasicTensor<double> f({4, 12, 12}), e({4, 12, 12});
  for (auto& v : f.data()) v = wide(rng);
  for (auto& v : e.data()) v = wide(rng);
  if (!(sor_forward(f, e, st, 0.8) == f)) ok = false, why = "residual identity";
  return {ok, ok ? "orientations exact for K in {1,2,3,4,8}; gate in (1,2) on 1e6 values (double, float); residual bitwise"
                 : "failed: " + why};
}

// ---- 3: structural invariants ----
Outcome structural_invariants() {
  bool ok = true;
  std::string why;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (std::size_t s : {1u, 2u, 4u}) {
    BasicTensor<double> x({3, 16, 16});
    for (auto& v : x.data()) v = u(rng);
    if (!(depth_to_space(space_to_depth(x, s), s) == x)) ok = false, why = "space-to-depth";
  }
  std::uniform_int_distribution<int> px(0, 31);
  std::vector<Event> ev;
  for (int i = 0; i < 5000; ++i) ev.push_back({px(rng), px(rng), static_cast<std::int64_t>(i / 3), i % 2 ? 1 : -1});
  const auto whole = accumulate(ev, {0, 2000}, 32, 32);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::int64_t> cuts{0, 2000};
    std::uniform_int_distribution<std::int64_t> c(1, 1999);
    for (int i = 0; i < 1 + trial % 6; ++i) cuts.push_back(c(rng));
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<std::uint64_t> pos(32 * 32, 0), neg(32 * 32, 0);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const auto part = accumulate(ev, {cuts[i], cuts[i + 1]}, 32, 32);
      for (std::size_t p = 0; p < pos.size(); ++p) pos[p] += part.pos_counts[p], neg[p] += part.neg_counts[p];
    }
    for (std::size_t p = 0; p < pos.size(); ++p)
      if (pos[p] != whole.pos_counts[p] || neg[p] != whole.neg_counts[p]) ok = false, why = "event conservation";
  }
  double gn_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    BasicTensor<double> x({8, 9, 9});
    for (auto& v : x.data()) v = u(rng) * (1 + trial % 4) + trial;
    const auto y = group_norm(x, GroupNormState<double>::identity(8, 4));
    for (std::size_t grp = 0; grp < 4; ++grp) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = grp * 162; i < (grp + 1) * 162; ++i) mean += y[i] / 162.0;
      for (std::size_t i = grp * 162; i < (grp + 1) * 162; ++i) var += (y[i] - mean) * (y[i] - mean) / 162.0;
      gn_err = std::max({gn_err, std::abs(mean), std::abs(var - 1.0)});
    }
  }
  if (gn_err > kGroupNormTolerance) ok = false, why = "group norm " + fmt(gn_err);
  std::uniform_real_distribution<double> th(-7.0, 7.0);
  for (int trial = 0; trial < 500; ++trial) {
    const double t = th(rng);
    const GaborParams p{0.5 + std::abs(u(rng)), 2.0 + std::abs(u(rng)), 0.2 + std::abs(u(rng)) / 5, 0.0};
    if (!(gabor_kernel<double>(t, p, 5) == gabor_kernel<double>(t + pi, p, 5))) ok = false, why = "gabor periodicity";
  }
  return {ok, ok ? "s2d roundtrip bitwise; counts conserved over 20 partitions; GN max dev " + fmt(gn_err) +
                       "; psi=0 kernels pi-periodic bitwise"
                 : "failed: " + why};
}

// ---- 4: metrics oracle ----
Outcome metrics_oracle() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(0.0, 300.0), sz(4.0, 80.0), amp(0.0, 30.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  double worst = 0.0;
  bool perfect = true;
  for (std::size_t pair = 0; pair < kMetricPairs; ++pair) {
    const std::size_t len = 2 + pair % 60;
    Trajectory gt(len), pred(len);
    std::vector<oracle::Box> og, op;
    for (std::size_t i = 0; i < len; ++i) {
      gt[i] = {pos(rng), pos(rng), sz(rng), sz(rng)};
      const double a = amp(rng);
      pred[i] = {gt[i].x + a * n01(rng), gt[i].y + a * n01(rng), std::max(1.0, gt[i].w + a * n01(rng)),
                 std::max(1.0, gt[i].h + a * n01(rng))};
      if (pair % 10 == 0 && i % 3 == 0) pred[i] = gt[i];  // exact hits
      og.push_back({gt[i].x, gt[i].y, gt[i].w, gt[i].h});
      op.push_back({pred[i].x, pred[i].y, pred[i].w, pred[i].h});
    }
    const auto r = evaluate(pred, gt);
    const auto o = oracle::scores(op, og);
    worst = std::max({worst, std::abs(r.auc - o.auc), std::abs(r.pr - o.pr), std::abs(r.npr - o.npr),
                      std::abs(r.op50 - o.op50), std::abs(r.op75 - o.op75)});
    const auto p = evaluate(gt, gt);
    for (double v : {p.auc, p.pr, p.npr, p.op50, p.op75}) perfect = perfect && v == 100.0;
  }
  return {worst <= kMetricTolerance && perfect,
          std::to_string(kMetricPairs) + " pairs, max |diff| " + fmt(worst) + "; perfect predictions " +
              (perfect ? "score 100 on all five" : "DO NOT score 100")};
}

// ---- shared data for 5-8 ----
struct LossCurve {
  double initial = 0.0, final = 0.0;
};

LossCurve read_loss_log(const fs::path& p) {
  std::ifstream in(p);
  std::vector<double> totals;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) totals.push_back(nlohmann::json::parse(line).at("total").get<double>());
  if (totals.empty()) throw std::runtime_error("empty loss log " + p.string());
  const std::size_t w = std::min(kLossWindow, totals.size());
  LossCurve c;
  for (std::size_t i = 0; i < w; ++i) {
    c.initial += totals[i] / static_cast<double>(w);
    c.final += totals[totals.size() - w + i] / static_cast<double>(w);
  }
  return c;
}

double mean_iou(const fs::path& pred, const fs::path& gt) {
  const auto p = load_trajectory(pred.string()), g = load_trajectory(gt.string());
  double s = 0.0;
  for (std::size_t i = 1; i < g.size(); ++i) s += iou(p[i], g[i]);
  return g.size() > 1 ? s / static_cast<double>(g.size() - 1) : 0.0;
}

double report_auc(const fs::path& report) { return read_report(report.string()).auc; }

// ---- 5: trainability ----
Outcome trainability() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path one = g_work / "overfit_data";
  fs::create_directories(one);
  fs::copy(g_work / "bundle" / "blur_00", one / "blur_00", fs::copy_options::recursive);
  cli("train-toy --data " + q(one) + " --out " + q(g_work / "overfit.ckpt") + " --steps " + std::to_string(kTrainSteps) +
      " --seed " + std::to_string(kTrainSeed) + " --log " + q(g_work / "overfit_log.jsonl"));
  const double train_secs = seconds_since(t0);
  cli("track --seq " + q(one / "blur_00") + " --model " + q(g_work / "overfit.ckpt") + " --out " +
      q(g_work / "overfit_pred.txt"));
  const double secs = seconds_since(t0);
  const auto loss = read_loss_log(g_work / "overfit_log.jsonl");
  const double miou = mean_iou(g_work / "overfit_pred.txt", one / "blur_00" / "groundtruth.txt");
  const bool ok = loss.final < kLossRatio * loss.initial && miou >= kOverfitIoU && secs < kTrainSeconds;
  return {ok, "loss " + fmt(loss.initial) + " -> " + fmt(loss.final) + " (ratio " + fmt(loss.final / loss.initial) +
                  "), overfit mean IoU " + fmt(miou) + ", " + fmt(train_secs, 3) + " s train / " + fmt(secs, 3) + " s total"};
}

// ---- 6: directional ablation ----
struct AblationResult {
  double full = 0.0, no_sor = 0.0, no_stemnet = 0.0;
};
AblationResult g_ablation;

Outcome directional_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  cli("gen-synth --preset all --seed " + std::to_string(kTrainSetSeed) + " --out " + q(g_work / "train"));
  const fs::path blur = g_work / "bundle_blur";
  fs::create_directories(blur);
  for (int i = 0; i < 4; ++i) {
    const std::string name = "blur_0" + std::to_string(i);
    if (!fs::exists(blur / name)) fs::copy(g_work / "bundle" / name, blur / name, fs::copy_options::recursive);
  }
  auto run_variant = [&](const std::string& tag, const std::string& flags) {
    const auto ckpt = g_work / (tag + ".ckpt");
    cli("train-toy --data " + q(g_work / "train") + " --out " + q(ckpt) + " --steps " + std::to_string(kAblationSteps) +
        " --batch " + std::to_string(kAblationBatch) + " --seed " + std::to_string(kTrainSeed) + " --log " + q(g_work / (tag + "_log.jsonl")) + flags);
    cli("track --seq " + q(blur) + " --model " + q(ckpt) + " --out " + q(g_work / ("pred_" + tag)));
    cli("eval --pred " + q(g_work / ("pred_" + tag)) + " --gt " + q(blur) + " --out " + q(g_work / (tag + ".json")));
    return report_auc(g_work / (tag + ".json"));
  };
  g_ablation.full = run_variant("full", "");
  g_ablation.no_sor = run_variant("no_sor", " --no-sor");
  g_ablation.no_stemnet = run_variant("no_stemnet", " --no-stemnet");
  const double secs = seconds_since(t0);
  const auto& a = g_ablation;
  const bool ok = a.full > a.no_sor && a.full > a.no_stemnet && secs < kAblationSeconds;
  return {ok, "blur AUC full " + fmt(a.full) + " vs no-sor " + fmt(a.no_sor) + " (margin " + fmt(a.full - a.no_sor) +
                  ") and no-stemnet " + fmt(a.no_stemnet) + " (margin " + fmt(a.full - a.no_stemnet) + "), " +
                  fmt(secs, 3) + " s"};
}

// ---- 7: determinism ----
Outcome determinism() {
  const auto seq = g_work / "bundle" / "blur_01";
  cli("track --seq " + q(seq) + " --model " + q(g_work / "full.ckpt") + " --out " + q(g_work / "det_a.txt"));
  cli("track --seq " + q(seq) + " --model " + q(g_work / "full.ckpt") + " --out " + q(g_work / "det_b.txt"));
  const bool track_same = slurp(g_work / "det_a.txt") == slurp(g_work / "det_b.txt");
  cli("gen-synth --preset all --seed " + std::to_string(kBundleSeed) + " --out " + q(g_work / "bundle_again"));
  bool synth_same = true;
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(g_work / "bundle")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto other = g_work / "bundle_again" / fs::relative(e.path(), g_work / "bundle");
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) synth_same = false;
  }
  return {track_same && synth_same, std::string("track outputs ") + (track_same ? "identical" : "DIFFER") +
                                        "; gen-synth " + std::to_string(files) + " files " +
                                        (synth_same ? "identical" : "DIFFER")};
}

// ---- 8: saliency ----
Outcome saliency() {
  const auto seq = g_work / "bundle" / "hdr_00";
  const auto dir = g_work / "saliency";
  cli("track --seq " + q(seq) + " --model " + q(g_work / "full.ckpt") + " --out " + q(g_work / "sal_pred.txt") +
      " --saliency " + q(dir));
  std::ifstream in(dir / "saliency.csv");
  std::string line;
  std::getline(in, line);
  double pre = 0.0, post = 0.0;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    pre += std::stod(b);
    post += std::stod(c);
    ++n;
  }
  bool maps = n > 0;
  for (std::size_t i = 1; i <= n; ++i)
    maps = maps && fs::exists(dir / ("pre_" + frame_filename(i))) && fs::exists(dir / ("post_" + frame_filename(i)));
  if (n) pre /= static_cast<double>(n), post /= static_cast<double>(n);
  return {maps && post > pre, "hdr_00 mean in-box energy fraction pre " + fmt(pre) + " -> post " + fmt(post) + " over " +
                                  std::to_string(n) + " frames" + (maps ? "" : "; maps missing")};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "sortrack_acceptance";
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  std::cout << "work dir " << g_work.string() << std::endl;

  bool bundle_ok = true;
  try {
    cli("gen-synth --preset all --seed " + std::to_string(kBundleSeed) + " --out " + q(g_work / "bundle"));
  } catch (const std::exception& e) {
    bundle_ok = false;
    std::cout << "bundle generation failed: " << e.what() << std::endl;
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"equation fidelity", equation_fidelity},
      {"structural invariants", structural_invariants},
      {"metrics oracle", metrics_oracle},
      {"trainability", trainability},
      {"directional ablation", directional_ablation},
      {"determinism", determinism},
      {"saliency export", saliency}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      if (i >= 4 && !bundle_ok) throw std::runtime_error("no toy benchmark");
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
