// sortrack: synthetic data generation, toy training, tracking, evaluation,
// Gabor bank inspection and gradient checking.

#include <atomic>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"

#include "sortrack/gradcheck.hpp"
#include "sortrack/metrics.hpp"
#include "sortrack/synth.hpp"
#include "sortrack/train.hpp"

#ifndef SORTRACK_VERSION
#define SORTRACK_VERSION "0.0.0"
#endif

namespace {

using namespace sortrack;

// Layered configuration: built-in defaults < --config file < --set overrides.
struct ConfigOptions {
  std::string file;
  std::vector<std::string> overrides;

  void apply(Config& cfg) const {
    if (!file.empty()) cfg.load_file(file);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::string version_text() {
  std::ostringstream os;
  os << "sortrack " << SORTRACK_VERSION << " (C++" << __cplusplus / 100 % 100 << ", " << __VERSION__ << ")\n";
  os << "defaults:\n" << Config{}.to_text();
  return os.str();
}

// ---- gen-synth -------------------------------------------------------------

struct GenSynthArgs {
  std::string preset = "all";
  std::string out;
  std::uint64_t seed = 0;
};

int gen_synth(const GenSynthArgs& a, const ConfigOptions& co) {
  Config cfg;
  co.apply(cfg);
  const auto specs = preset_specs(a.preset, a.seed);
  fs::create_directories(a.out);
  for (const auto& e : specs) {
    write_sequence(render_sequence(e.spec, e.seed, cfg.events), fs::path(a.out) / e.name);
    std::cerr << "wrote " << (fs::path(a.out) / e.name).string() << '\n';
  }
  return 0;
}

// ---- train-toy -------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch;
  std::optional<std::uint64_t> seed;
  std::string log;
  bool no_sor = false;
  bool no_stemnet = false;
};

int train_cmd(const TrainArgs& a, const ConfigOptions& co) {
  Config cfg;
  co.apply(cfg);
  if (a.steps) cfg.train.steps = *a.steps;
  if (a.batch) cfg.train.batch = *a.batch;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.no_sor) cfg.use_sor = false;
  if (a.no_stemnet) cfg.stem_mode = StemMode::strided;
  cfg.validate();
  const auto set = load_training_set(a.data, cfg.event_clip);
  Model<float> model(cfg);
  model.initialize(cfg.train.seed);
  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::binary);
    if (!log_file) throw InputError("cannot write " + a.log);
  }
  std::ostream& log = a.log.empty() ? std::cout : log_file;
  TrainOptions opt;
  opt.on_step = [&](const StepLog& s) { log << step_json(s).dump() << '\n'; };
  const auto r = train_toy(model, set, opt);
  save_checkpoint(model, a.out);
  std::cerr << "loss " << format_double(r.initial_loss) << " -> " << format_double(r.final_loss) << " (mean of first/last "
            << std::min(kLossWindow, r.history.size()) << " steps); checkpoint " << a.out << '\n';
  return 0;
}

// ---- track -----------------------------------------------------------------

struct TrackArgs {
  std::string seq;
  std::string model;
  std::string out;
  bool no_sor = false;
  bool no_stemnet = false;
  std::string saliency;
  std::size_t jobs = 1;
};

int track_cmd(const TrackArgs& a, const ConfigOptions& co) {
  auto model = load_checkpoint<float>(a.model);
  co.apply(model.cfg);
  if (a.no_sor) model.cfg.use_sor = false;
  if (a.no_stemnet) model.cfg.stem_mode = StemMode::strided;
  const auto dirs = find_sequences(a.seq);
  if (dirs.empty()) throw InputError("track: no sequences under " + a.seq);
  const bool single = dirs.size() == 1 && fs::exists(fs::path(a.seq) / "groundtruth.txt");
  if (!single) fs::create_directories(a.out);
  const std::string cfg_text = model.cfg.to_text();
  write_text(single ? fs::path(a.out + ".config.txt") : fs::path(a.out) / "config.txt", cfg_text);

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::string first_error;
  auto worker = [&] {
    const Model<float> local = model;  // per-worker copy; the checkpoint stays read-only
    for (std::size_t i = next++; i < dirs.size(); i = next++) {
      try {
        const auto seq = load_sequence(dirs[i]);
        TrackOptions opt;
        if (!a.saliency.empty()) opt.saliency_dir = single ? fs::path(a.saliency) : fs::path(a.saliency) / seq.name;
        const auto r = track_sequence(seq, local, opt);
        save_trajectory(r.boxes, single ? a.out : (fs::path(a.out) / (seq.name + ".txt")).string());
      } catch (const std::exception& e) {
        std::lock_guard lock(err_mu);
        if (first_error.empty()) first_error = dirs[i].string() + ": " + e.what();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(a.jobs, 1, dirs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (!first_error.empty()) throw InputError("track: " + first_error);
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string out;
  std::string plot;
};

fs::path gt_file(const fs::path& p) { return fs::is_directory(p) ? p / "groundtruth.txt" : p; }

int eval_cmd(const EvalArgs& a) {
  nlohmann::ordered_json per_seq = nlohmann::ordered_json::object();
  std::vector<MetricsReport> reports;
  const bool multi = fs::is_directory(a.gt) && !fs::exists(fs::path(a.gt) / "groundtruth.txt");
  if (multi) {
    if (!fs::is_directory(a.pred)) throw InputError("eval: --gt is a sequence root, so --pred must be a directory");
    for (const auto& dir : find_sequences(a.gt)) {
      const auto name = dir.filename().string();
      const auto pred = fs::path(a.pred) / (name + ".txt");
      if (!fs::exists(pred)) throw InputError("eval: missing prediction " + pred.string());
      reports.push_back(evaluate(load_trajectory(pred.string()), load_trajectory(gt_file(dir).string())));
      per_seq[name] = report_to_json(reports.back());
    }
    if (reports.empty()) throw InputError("eval: no sequences under " + a.gt);
  } else {
    reports.push_back(evaluate(load_trajectory(a.pred), load_trajectory(gt_file(a.gt).string())));
  }
  const auto agg = aggregate(reports);
  nlohmann::ordered_json extra;
  extra["sequences"] = per_seq;
  if (!a.out.empty()) write_report(agg, a.out, extra);
  std::cout << "frames " << agg.frames << "  AUC " << format_double(agg.auc) << "  PR " << format_double(agg.pr)
            << "  NPR " << format_double(agg.npr) << "  OP50 " << format_double(agg.op50) << "  OP75 "
            << format_double(agg.op75) << '\n';
  if (!a.plot.empty()) {
    fs::create_directories(a.plot);
    write_png(plot_curve(agg.success_curve, 0.0, 1.0), (fs::path(a.plot) / "success.png").string());
    write_png(plot_curve(agg.precision_curve, 0.0, 50.0), (fs::path(a.plot) / "precision.png").string());
    write_png(plot_curve(agg.norm_precision_curve, 0.0, 0.5), (fs::path(a.plot) / "norm_precision.png").string());
  }
  return 0;
}

// ---- gabor-dump ------------------------------------------------------------

struct GaborArgs {
  std::string out;
  double phi = 0.0;
  std::string model;
  std::size_t zoom = 16;
};

int gabor_cmd(const GaborArgs& a, const ConfigOptions& co) {
  Config cfg;
  GaborParams params;
  if (!a.model.empty()) {
    const auto m = load_checkpoint<float>(a.model);
    cfg = m.cfg;
    co.apply(cfg);
    params = m.gabor_params();
  } else {
    co.apply(cfg);
    params = cfg.gabor;
  }
  const auto bank = gabor_bank<double>(a.phi, params, cfg.k, cfg.kernel_size);
  fs::create_directories(a.out);
  const std::size_t ks = cfg.kernel_size, cell = ks * a.zoom, gap = 4;
  Image8 grid(cfg.k * cell + (cfg.k + 1) * gap, cell + 2 * gap, 1, 128);
  std::ostringstream csv;
  csv << "k,theta,row,col,value\n";
  for (std::size_t k = 0; k < cfg.k; ++k) {
    const auto g = bank.kernel(k);
    for (std::size_t r = 0; r < ks; ++r)
      for (std::size_t c = 0; c < ks; ++c) {
        const double v = g(r, c);
        csv << k << ',' << format_double(bank.thetas[k]) << ',' << r << ',' << c << ',' << format_double(v) << '\n';
        const auto px = static_cast<std::uint8_t>(std::lround(127.5 + 127.5 * std::clamp(v, -1.0, 1.0)));
        for (std::size_t y = 0; y < a.zoom; ++y)
          for (std::size_t x = 0; x < a.zoom; ++x)
            grid.at(gap + r * a.zoom + y, gap + k * (cell + gap) + c * a.zoom + x, 0) = px;
      }
  }
  write_png(grid, (fs::path(a.out) / "gabor_bank.png").string());
  write_text(fs::path(a.out) / "gabor_bank.csv", csv.str());
  std::ostringstream info;
  info << cfg.to_text() << "phi=" << format_double(a.phi) << "\nsigma=" << format_double(params.sigma)
       << "\nlambda=" << format_double(params.lambda) << "\ngamma=" << format_double(params.gamma)
       << "\npsi=" << format_double(params.psi) << '\n';
  write_text(fs::path(a.out) / "config.txt", info.str());
  return 0;
}

// ---- grad-check ------------------------------------------------------------

int grad_check_cmd(std::uint64_t seed, std::size_t instances) {
  const auto results = run_grad_checks(seed, instances);
  bool ok = true;
  std::printf("%-28s %12s %10s %8s\n", "check", "max_rel_err", "tolerance", "status");
  for (const auto& r : results) {
    std::printf("%-28s %12.3e %10.1e %8s\n", r.name.c_str(), r.max_error, r.tolerance, r.ok() ? "ok" : "FAIL");
    ok = ok && r.ok() && r.max_error <= 1e-4;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sortrack: event-guided feature refinement tracker (desk scale)"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_text());
  ConfigOptions co;
  app.add_option("--config", co.file, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--set", co.overrides, "override one config key (key=value), repeatable");

  GenSynthArgs gs;
  auto* gen = app.add_subcommand("gen-synth", "render synthetic sequences with simulated events");
  gen->add_option("--preset", gs.preset, "blur, hdr, lowlight or all")->check(CLI::IsMember({"blur", "hdr", "lowlight", "all"}));
  gen->add_option("--out", gs.out, "output root")->required();
  gen->add_option("--seed", gs.seed, "base seed");

  TrainArgs ta;
  auto* train = app.add_subcommand("train-toy", "train on synthetic sequences");
  train->add_option("--data", ta.data, "sequence root")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", ta.out, "checkpoint path")->required();
  train->add_option("--steps", ta.steps, "SGD steps");
  train->add_option("--batch", ta.batch, "samples averaged per step")->check(CLI::PositiveNumber);
  train->add_option("--seed", ta.seed, "initialization and sampling seed");
  train->add_option("--log", ta.log, "JSON-lines loss log (default: stdout)");
  train->add_flag("--no-sor", ta.no_sor, "train without refinement (identity bypass)");
  train->add_flag("--no-stemnet", ta.no_stemnet, "train with the strided-convolution stem");

  TrackArgs tr;
  auto* track = app.add_subcommand("track", "track one sequence or every sequence under a root");
  track->add_option("--seq", tr.seq, "sequence directory or root")->required()->check(CLI::ExistingDirectory);
  track->add_option("--model", tr.model, "checkpoint")->required()->check(CLI::ExistingFile);
  track->add_option("--out", tr.out, "prediction file (single sequence) or directory")->required();
  track->add_flag("--no-sor", tr.no_sor, "bypass the refinement module");
  track->add_flag("--no-stemnet", tr.no_stemnet, "use the strided-convolution stem");
  track->add_option("--saliency", tr.saliency, "write pre/post refinement energy maps here");
  track->add_option("--jobs", tr.jobs, "sequences tracked in parallel")->check(CLI::PositiveNumber);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "success / precision metrics");
  eval->add_option("--pred", ea.pred, "prediction file or directory of <name>.txt")->required()->check(CLI::ExistingPath);
  eval->add_option("--gt", ea.gt, "groundtruth file, sequence directory or root")->required()->check(CLI::ExistingPath);
  eval->add_option("--out", ea.out, "JSON report");
  eval->add_option("--plot", ea.plot, "directory for curve PNGs");

  GaborArgs ga;
  auto* gabor = app.add_subcommand("gabor-dump", "write the oriented kernel bank as PNG and CSV");
  gabor->add_option("--out", ga.out, "output directory")->required();
  gabor->add_option("--phi", ga.phi, "base orientation (radians)");
  gabor->add_option("--model", ga.model, "take the learned coefficients from a checkpoint")->check(CLI::ExistingFile);

  std::uint64_t gc_seed = 0;
  std::size_t gc_instances = 100;
  auto* grad = app.add_subcommand("grad-check", "finite-difference check of every backward pass");
  grad->add_option("--seed", gc_seed, "seed");
  grad->add_option("--instances", gc_instances, "random instances per check")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) return gen_synth(gs, co);
    if (*train) return train_cmd(ta, co);
    if (*track) return track_cmd(tr, co);
    if (*eval) return eval_cmd(ea);
    if (*gabor) return gabor_cmd(ga, co);
    if (*grad) return grad_check_cmd(gc_seed, gc_instances);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
