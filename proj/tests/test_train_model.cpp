#include <gtest/gtest.h>

#include "sortrack/gradcheck.hpp"
#include "sortrack/synth.hpp"
#include "sortrack/train.hpp"
#include "test_util.hpp"

using namespace sortrack;

namespace {

Config small_config() {
  Config cfg;
  cfg.stem.latent_dim = 16;
  cfg.crop.template_size = 64;
  cfg.crop.search_size = 128;
  cfg.train.steps = 4;
  return cfg;
}

std::vector<TrainingSequence> small_set(const testutil::TempDir& dir) {
  SceneSpec s;
  s.width = 96;
  s.height = 80;
  s.length = 5;
  s.target_w = 20;
  s.target_h = 16;
  s.speed = 2.0;
  write_sequence(render_sequence(s, 9), dir / "seqs" / "a");
  return load_training_set(dir / "seqs", kDefaultEventClip);
}

template <class T>
std::vector<std::vector<T>> snapshot(const Model<T>& m) {
  std::vector<std::vector<T>> out;
  m.params.for_each([&](const char*, const BasicTensor<T>& t) { out.push_back(t.data()); });
  return out;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesWeightsUnchanged) {
  testutil::TempDir dir;
  const auto set = small_set(dir);
  auto cfg = small_config();
  cfg.train.lr = 0.0;
  Model<float> m(cfg);
  m.initialize(3);
  const auto before = snapshot(m);
  const auto r = train_toy(m, set);
  EXPECT_EQ(snapshot(m), before);
  ASSERT_EQ(r.history.size(), 4u);
  for (const auto& s : r.history) {
    EXPECT_TRUE(std::isfinite(s.loss.total));
    EXPECT_GT(s.grad_norm, 0.0);
  }
}

TEST(Train, DeterministicForFixedSeed) {
  testutil::TempDir dir;
  const auto set = small_set(dir);
  Model<float> a(small_config()), b(small_config());
  a.initialize(4);
  b.initialize(4);
  const auto ra = train_toy(a, set), rb = train_toy(b, set);
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_EQ(ra.final_loss, rb.final_loss);
}

TEST(Train, BatchAveragesPerSampleGradients) {
  testutil::TempDir dir;
  const auto set = small_set(dir);
  auto cfg = small_config();
  cfg.train.steps = 1;
  cfg.train.batch = 3;
  cfg.train.momentum = 0.0;
  cfg.train.clip_norm = 0.0;
  Model<double> batched(cfg);
  batched.initialize(2);
  const auto before = batched.params;
  const auto r = train_toy(batched, set);
  // Same three draws, one at a time.
  std::mt19937_64 rng(cfg.train.seed);
  auto grads = ModelParams<double>::zeros(cfg);
  Model<double> ref(cfg);
  ref.params = before;
  double total = 0.0;
  for (int i = 0; i < 3; ++i) total += sample_loss(ref, draw_sample(set, ref, rng), &grads).total / 3.0;
  EXPECT_NEAR(r.history[0].loss.total, total, 1e-9 * total);
  std::vector<const BasicTensor<double>*> gs;
  grads.for_each([&](const char*, const BasicTensor<double>& g) { gs.push_back(&g); });
  std::size_t k = 0;
  ref.params.for_each([&](const char* name, BasicTensor<double>& p) {
    const auto& g = *gs[k++];
    const double lr = cfg.train.lr * (std::string_view(name) == kGaborParamName ? cfg.train.gabor_lr_scale : 1.0);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = p[i] - lr * (g[i] * (1.0 / 3.0));
  });
  EXPECT_EQ(snapshot(ref), snapshot(batched));
}

TEST(Train, CosineScheduleDecaysFromBaseRate) {
  TrainConfig tc;
  tc.steps = 4;
  EXPECT_EQ(scheduled_lr(tc, 0), tc.lr);
  EXPECT_NEAR(scheduled_lr(tc, 2), 0.5 * tc.lr, 1e-15);
  EXPECT_LT(scheduled_lr(tc, 3), scheduled_lr(tc, 2));
  EXPECT_GT(scheduled_lr(tc, 3), 0.0);
  tc.cosine = false;
  EXPECT_EQ(scheduled_lr(tc, 3), tc.lr);
}

TEST(Train, SingleSampleOverfitReducesLoss) {
  testutil::TempDir dir;
  const auto set = small_set(dir);
  auto cfg = small_config();
  cfg.train.steps = 60;
  Model<float> m(cfg);
  m.initialize(5);
  TrainOptions opt;
  opt.repeat_first_sample = true;
  const auto r = train_toy(m, set, opt);
  EXPECT_LT(r.history.back().loss.total, r.history.front().loss.total);
  EXPECT_LT(r.final_loss, r.initial_loss);
}

TEST(Train, EmptyDatasetRejected) {
  testutil::TempDir dir;
  EXPECT_THROW(load_training_set(dir.path(), kDefaultEventClip), InputError);
}

TEST(Train, StepJsonCarriesLossTermsAndWeights) {
  testutil::TempDir dir;
  const auto set = small_set(dir);
  auto cfg = small_config();
  cfg.train.steps = 1;
  Model<float> m(cfg);
  m.initialize(6);
  nlohmann::ordered_json j;
  TrainOptions opt;
  opt.on_step = [&](const StepLog& s) { j = step_json(s); };
  train_toy(m, set, opt);
  for (const char* key : {"step", "total", "focal", "l1", "giou", "lambda_f", "lambda_l1", "lambda_g", "grad_norm"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["lambda_f"], 1.0);
  EXPECT_EQ(j["lambda_l1"], 14.0);
  EXPECT_EQ(j["lambda_g"], 1.0);
  const double total = j["total"], f = j["focal"], l1 = j["l1"], g = j["giou"];
  EXPECT_NEAR(total, f + 14.0 * l1 + g, 1e-9 * std::max(1.0, total));
}

TEST(Checkpoint, RoundtripBitIdentical) {
  testutil::TempDir dir;
  auto cfg = small_config();
  cfg.use_sor = false;
  cfg.gabor.sigma = 1.7;
  Model<float> m(cfg);
  m.initialize(7);
  save_checkpoint(m, (dir / "m.ckpt").string());
  const auto back = load_checkpoint<float>((dir / "m.ckpt").string());
  EXPECT_EQ(snapshot(back), snapshot(m));
  EXPECT_EQ(back.cfg.to_text(), m.cfg.to_text());
  save_checkpoint(back, (dir / "n.ckpt").string());
  EXPECT_EQ(testutil::slurp(dir / "m.ckpt"), testutil::slurp(dir / "n.ckpt"));
  EXPECT_EQ(testutil::slurp(dir / "m.ckpt").substr(0, 8), "SRTRCKPT");
}

TEST(Checkpoint, RejectsForeignAndTruncatedFiles) {
  testutil::TempDir dir;
  testutil::write_text(dir / "x.ckpt", "NOTACKPTxxxxxxxx");
  EXPECT_THROW(load_checkpoint<float>((dir / "x.ckpt").string()), ParseError);
  Model<float> m(small_config());
  save_checkpoint(m, (dir / "m.ckpt").string());
  const auto full = testutil::slurp(dir / "m.ckpt");
  testutil::write_text(dir / "t.ckpt", full.substr(0, full.size() / 2));
  EXPECT_ANY_THROW(load_checkpoint<float>((dir / "t.ckpt").string()));
  EXPECT_THROW(load_checkpoint<float>((dir / "missing.ckpt").string()), InputError);
}

TEST(Config, SetParseAndValidate) {
  Config c;
  c.set("odm.k", "8");
  EXPECT_EQ(c.k, 8u);
  c.set("sor.enabled", "false");
  EXPECT_FALSE(c.use_sor);
  c.set("stem.mode", "strided");
  EXPECT_EQ(c.stem_mode, StemMode::strided);
  EXPECT_THROW(c.set("odm.k", "eight"), ParseError);
  EXPECT_THROW(c.set("no.such.key", "1"), ParseError);
  EXPECT_THROW(c.load_text("odm.k 4\n"), ParseError);
  c.load_text("# comment\n odm.sigma = 2.5  # trailing\n\n");
  EXPECT_EQ(c.gabor.sigma, 2.5);
  Config d;
  d.load_text(c.to_text());
  EXPECT_EQ(d.to_text(), c.to_text());
  Config bad;
  bad.kernel_size = 4;
  EXPECT_THROW(bad.validate(), InputError);
  bad = Config{};
  bad.crop.search_size = 250;
  EXPECT_THROW(bad.validate(), InputError);
  bad = Config{};
  bad.track.size_rate = 0.0;
  EXPECT_THROW(bad.validate(), InputError);
  bad = Config{};
  bad.train.batch = 0;
  EXPECT_THROW(bad.validate(), InputError);
  EXPECT_THROW(Model<float>{bad}, InputError);
}

TEST(Model, InitializationPriorsAndShapes) {
  Model<double> m(small_config());
  m.initialize(8);
  EXPECT_NEAR(sigmoid_scalar<double>(m.params.head.score_b[0]), kScorePrior, 1e-12);
  EXPECT_EQ(m.params.proj_w.shape(), (Shape{16, 64}));
  EXPECT_EQ(m.score_size(), 32u);
  EXPECT_EQ(m.template_cells(), 8u);
  EXPECT_NEAR(m.gabor_params().sigma, m.cfg.gabor.sigma, 1e-12);
}

TEST(GradCheck, AllAnalyticGradientsMatch) {
  for (const auto& r : run_grad_checks(7, 3, 1)) EXPECT_TRUE(r.ok()) << r.name << " " << r.max_error;
}
