#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "constyle/checkpoint.hpp"
#include "constyle/corpus.hpp"
#include "constyle/errors.hpp"
#include "constyle/image_io.hpp"
#include "constyle/trainer.hpp"
#include "test_support.hpp"

namespace constyle {
namespace {

namespace fs = std::filesystem;

TrainConfig tiny_config() {
  TrainConfig c;
  c.patch = 16;
  c.batch = 2;
  c.total_iters = 50;
  c.queue_capacity = 8;
  c.encoder.width = 4;
  c.encoder.latent_dim = 16;
  c.encoder.stages = 3;
  c.net.width = 8;
  c.net.levels = 3;
  c.net.blocks_left = {1, 1, 1};
  c.net.blocks_bottom = 1;
  c.net.blocks_right = {1, 1, 1};
  c.net.feature_width = 4;
  c.net.latent_dim = 16;
  c.ema_momentum = 0.9;
  c.data.degradation = "noise:25";
  c.seed = 42;
  return c;
}

std::pair<Tensor, Tensor> fixed_batch(const TrainConfig& c, std::uint64_t seed) {
  std::vector<float> v;
  for (std::size_t b = 0; b < c.batch; ++b) {
    const Tensor img = synthetic_image(c.patch, c.patch, seed + b);
    v.insert(v.end(), img.data().begin(), img.data().end());
  }
  const Tensor clean(Shape{c.batch, 3, c.patch, c.patch}, v);
  return {clean, apply(c.degradation(), clean, seed)};
}

std::vector<float> flatten(const ParameterSet<float>& params) {
  std::vector<float> out;
  for (const auto& [_, p] : params) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("constyle_trainer_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

// ---------------------------------------------------------------- schedule

TEST(CosineLr, Endpoints) {
  EXPECT_EQ(cosine_lr(0, 1000, 3e-4, 1e-6), 3e-4);
  EXPECT_EQ(cosine_lr(1000, 1000, 3e-4, 1e-6), 1e-6);
  EXPECT_NEAR(cosine_lr(500, 1000, 3e-4, 1e-6), (3e-4 + 1e-6) / 2, 1e-15);
  EXPECT_NEAR(cosine_lr(500, 1000, 3e-4, 1e-6), 1.5050e-4, 1e-9);
}

TEST(CosineLr, MonotoneAndRangeChecked) {
  double prev = 1.0;
  for (std::size_t i = 0; i <= 64; ++i) {
    const double lr = cosine_lr(i, 64, 3e-4, 1e-6);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
  EXPECT_THROW(cosine_lr(65, 64, 3e-4, 1e-6), ContractError);
}

// ---------------------------------------------------------------- AdamW

struct Scalar {
  ParameterSet<float> params;
  Scalar(float value) { params.add("p", Tensor(Shape{1}, {value})); }
  float value() { return params.get("p").item(); }
  void set_grad(float g) {
    auto p = params.get("p");
    p.zero_grad();
    sum(scale(p, g)).backward();
  }
};

TEST(AdamW, HandComputedStep) {
  Scalar s(1.0f);
  s.set_grad(1.0f);
  AdamW opt({0.9, 0.999, 1e-8, 0.0, std::nullopt});
  opt.step({{"g", &s.params}}, 0.1);
  EXPECT_NEAR(s.value(), 0.9, 1e-6);
}

TEST(AdamW, DecoupledWeightDecay) {
  Scalar s(1.0f);
  s.set_grad(1.0f);
  AdamW opt({0.9, 0.999, 1e-8, 0.1, std::nullopt});
  opt.step({{"g", &s.params}}, 0.1);
  EXPECT_NEAR(s.value(), 0.89, 1e-6);
}

TEST(AdamW, ZeroGradientLeavesParameter) {
  Scalar s(0.75f);
  s.set_grad(0.0f);
  AdamW opt({0.9, 0.999, 1e-8, 0.0, std::nullopt});
  opt.step({{"g", &s.params}}, 0.1);
  EXPECT_EQ(s.value(), 0.75f);
}

TEST(AdamW, ParametersWithoutGradientAreSkipped) {
  Scalar s(0.5f);
  AdamW opt({0.9, 0.999, 1e-8, 0.1, std::nullopt});
  opt.step({{"g", &s.params}}, 0.1);
  EXPECT_EQ(s.value(), 0.5f);
  EXPECT_TRUE(opt.moments().empty());
}

TEST(AdamW, NanGradientNamesParameter) {
  Scalar s(1.0f);
  s.set_grad(1.0f);
  s.params.get("p").node()->grad[0] = std::nanf("");
  AdamW opt;
  try {
    opt.step({{"encoder", &s.params}}, 0.1);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.p"), std::string::npos);
  }
}

TEST(AdamW, GlobalNormClipping) {
  Scalar a(0.f), b(0.f);
  a.set_grad(3.f);
  b.set_grad(4.f);
  AdamW opt({0.9, 0.999, 1e-8, 0.0, 1.0});
  opt.step({{"a", &a.params}, {"b", &b.params}}, 0.1);
  // Adam normalizes magnitude away, but the moments carry the clipped gradient.
  EXPECT_NEAR(opt.moments().at("a.p").m.item(), 0.1 * 0.6, 1e-7);
  EXPECT_NEAR(opt.moments().at("b.p").m.item(), 0.1 * 0.8, 1e-7);
}

// ---------------------------------------------------------------- config

TEST(TrainConfig, DefaultsMatchRecipe) {
  const TrainConfig c = config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.lr_init, 3e-4);
  EXPECT_EQ(c.lr_final, 1e-6);
  EXPECT_EQ(c.beta1, 0.9);
  EXPECT_EQ(c.beta2, 0.999);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.patch, 128u);
  EXPECT_EQ(c.queue_capacity, 65760u);
  EXPECT_EQ(c.loss_weights.style, 1.0);
  EXPECT_EQ(c.loss_weights.l1, 1.0);
  EXPECT_FALSE(c.grad_clip.has_value());
}

TEST(TrainConfig, ErrorsNameTheField) {
  auto message = [](const nlohmann::json& j) {
    try {
      config_from_json(j);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(message({{"loss_weights", {{"style", -1.0}}}}).rfind("loss_weights.style", 0), 0u);
  EXPECT_EQ(message({{"net", {{"depth", 3}}}}).rfind("net.depth", 0), 0u);
  EXPECT_EQ(message({{"batch", "four"}}).rfind("batch", 0), 0u);
  EXPECT_EQ(message({{"lr_final", 1.0}}).rfind("lr_final", 0), 0u);
  EXPECT_EQ(message({{"batch", 0}}).rfind("batch", 0), 0u);
  EXPECT_EQ(message({{"data", {{"degradation", "noise:80"}}}}).rfind("data.degradation", 0), 0u);
  EXPECT_EQ(message({{"patch", 100}}).rfind("patch", 0), 0u);
  EXPECT_EQ(message({{"info_nce", "bogus"}}).rfind("info_nce", 0), 0u);
}

TEST(TrainConfig, NetMustMatchEncoderLayout) {
  TrainConfig c = tiny_config();
  c.net.latent_dim = 32;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("net.latent_dim", 0), 0u);
  }
  c = tiny_config();
  c.net.feature_width = 8;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c = tiny_config();
  c.grad_clip = 1.0;
  c.ablation.g3_queue_behind_momentum = true;
  c.info_nce = InfoNceConvention::literal;
  const TrainConfig back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

using ConfigFile = TempDir;

TEST_F(ConfigFile, MissingFileNamesPath) {
  try {
    load_config(dir_ / "absent.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("absent.json"), std::string::npos);
  }
}

TEST_F(ConfigFile, RelativePathsResolveAgainstConfigDirectory) {
  std::ofstream(dir_ / "c.json") << R"({"data": {"train_manifest": "corpus/manifest.txt"}})";
  EXPECT_EQ(fs::path(load_config(dir_ / "c.json").data.train_manifest), dir_ / "corpus" / "manifest.txt");
}

// ---------------------------------------------------------------- model / train_step

TEST(Model, ParameterAccounting) {
  TrainConfig c;
  c.batch = 4;
  const Model model(c);
  const auto counts = model.parameter_counts();
  EXPECT_EQ(counts["encoder"], counts["momentum_encoder"]);
  EXPECT_NEAR(counts["encoder"].get<double>() / 1.19e6, 1.0, 0.1);
  EXPECT_EQ(model.queue.capacity(), kDefaultQueueCapacity);
  EXPECT_EQ(model.queue.size(), 4u);
}

TEST(Model, InferShapeAndMomentumIndependence) {
  TrainConfig c = tiny_config();
  c.net.zero_init_tail = false;
  Model model(c);
  Rng rng(3);
  for (auto& [name, p] : model.net.parameters()) {
    if (name.rfind("inject", 0) == 0 || name.rfind("code_fuse", 0) == 0)
      for (auto& v : p.mutable_data()) v = std::normal_distribution<float>(0, 0.1f)(rng);
  }
  const Tensor x = Tensor::uniform({2, 3, 16, 24}, rng, 0.f, 1.f);
  const Tensor before = model.infer(x);
  EXPECT_EQ(before.shape(), x.shape());
  for (auto& [_, p] : model.momentum.parameters())
    for (auto& v : p.mutable_data()) v = std::normal_distribution<float>(0, 1)(rng);
  EXPECT_TRUE(testing::bit_equal(model.infer(x).data(), before.data()));
}

TEST(TrainStep, QueueGrowsAndEmaHolds) {
  const TrainConfig c = tiny_config();
  Trainer trainer(c);
  const auto [clean, degraded] = fixed_batch(c, 1);
  const std::vector<float> momentum_before = flatten(trainer.model().momentum.parameters());
  const std::size_t size_before = trainer.model().queue.size();
  const auto b = trainer.train_step(clean, degraded);
  EXPECT_EQ(trainer.model().queue.size(), size_before + c.batch);
  EXPECT_EQ(trainer.model().queue.total_pushed(), size_before + c.batch);
  EXPECT_EQ(b.iteration, 1u);
  EXPECT_EQ(trainer.iteration(), 1u);

  const std::vector<float> enc = flatten(trainer.model().encoder.parameters());
  const std::vector<float> mom = flatten(trainer.model().momentum.parameters());
  for (std::size_t i = 0; i < mom.size(); ++i) {
    const double expected = c.ema_momentum * double(momentum_before[i]) + (1 - c.ema_momentum) * double(enc[i]);
    ASSERT_EQ(mom[i], static_cast<float>(expected)) << i;
  }
}

TEST(TrainStep, PushesQueryCodesFromTheStep) {
  const TrainConfig c = tiny_config();
  Trainer trainer(c);
  const auto [clean, degraded] = fixed_batch(c, 2);
  const Tensor q = [&] {
    NoGradGuard guard;
    return trainer.model().encoder.encode(degraded).code;
  }();
  trainer.train_step(clean, degraded);
  const Tensor64 snap = trainer.model().queue.snapshot();
  const std::size_t d = c.encoder.latent_dim, first = snap.dim(0) - c.batch;
  for (std::size_t i = 0; i < c.batch * d; ++i) EXPECT_NEAR(snap.data()[first * d + i], q.data()[i], 1e-6);
}

TEST(TrainStep, G3PushesMomentumCodesOfDegraded) {
  TrainConfig c = tiny_config();
  c.ablation.g3_queue_behind_momentum = true;
  Trainer trainer(c);
  const auto [clean, degraded] = fixed_batch(c, 3);
  const Tensor k = trainer.model().momentum.encode(degraded).code;
  trainer.train_step(clean, degraded);
  const Tensor64 snap = trainer.model().queue.snapshot();
  const std::size_t d = c.encoder.latent_dim, first = snap.dim(0) - c.batch;
  for (std::size_t i = 0; i < c.batch * d; ++i) EXPECT_NEAR(snap.data()[first * d + i], k.data()[i], 1e-6);
}

TEST(TrainStep, OnlyL1WeightGivesL1Total) {
  TrainConfig c = tiny_config();
  c.loss_weights = {0.0, 0.0, 0.0, 1.0};
  Trainer trainer(c);
  const auto [clean, degraded] = fixed_batch(c, 4);
  for (int i = 0; i < 3; ++i) {
    const auto b = trainer.train_step(clean, degraded);
    EXPECT_EQ(b.total, b.l1);
  }
}

TEST(TrainStep, TotalIsWeightedSum) {
  TrainConfig c = tiny_config();
  c.loss_weights = {0.3, 2.0, 0.7, 1.5};
  c.queue_capacity = 4;  // style loss becomes active after the first overflow
  Trainer trainer(c);
  bool saw_style = false;
  for (int i = 0; i < 4; ++i) {
    const auto [clean, degraded] = fixed_batch(c, 10 + i);
    const auto b = trainer.train_step(clean, degraded);
    EXPECT_NEAR(b.total, 0.3 * b.style + 2.0 * b.content + 0.7 * b.infonce + 1.5 * b.l1, 1e-10);
    EXPECT_LE(b.style, 0.0);
    saw_style = saw_style || b.style_active;
  }
  EXPECT_TRUE(saw_style);
}

TEST(TrainStep, OverfitsAFixedBatchReconstructionOnly) {
  TrainConfig c = tiny_config();
  c.total_iters = 200;
  c.lr_init = 1e-3;
  c.loss_weights = {0.0, 0.0, 0.0, 1.0};
  Trainer trainer(c);
  const auto [clean, degraded] = fixed_batch(c, 5);
  const auto first = trainer.train_step(clean, degraded);
  LossBreakdown last;
  for (int i = 1; i < 200; ++i) last = trainer.train_step(clean, degraded);
  EXPECT_LT(last.total, first.total);
}

TEST(TrainStep, OverfitsAFixedBatch) {
  TrainConfig c = tiny_config();
  c.total_iters = 200;
  c.lr_init = 1e-3;
  Trainer trainer(c);
  const auto [clean, degraded] = fixed_batch(c, 5);
  const auto first = trainer.train_step(clean, degraded);
  LossBreakdown last;
  for (int i = 1; i < 200; ++i) last = trainer.train_step(clean, degraded);
  EXPECT_LT(last.l1, first.l1);
  EXPECT_LT(last.total, first.total);
}

TEST(TrainStep, MismatchedBatchesRejected) {
  Trainer trainer(tiny_config());
  Rng rng(1);
  EXPECT_THROW(trainer.train_step(Tensor::zeros({2, 3, 16, 16}), Tensor::zeros({2, 3, 16, 8})), DimensionError);
}

TEST(Ablation, VariantsSetExactlyOneFlag) {
  const TrainConfig base = tiny_config();
  EXPECT_EQ(Model(ablation_variant(base, "g1_small_queue")).queue.capacity(), 16u);
  EXPECT_EQ(Model(ablation_variant(base, "baseline")).queue.capacity(), 8u);
  EXPECT_FALSE(Model(ablation_variant(base, "g2_no_feature_maps")).inject);
  EXPECT_TRUE(ablation_variant(base, "g3_queue_behind_momentum").ablation.g3_queue_behind_momentum);
  EXPECT_THROW(ablation_variant(base, "g4"), ConfigError);
}

TEST(Ablation, G2OutputIgnoresBundle) {
  TrainConfig c = ablation_variant(tiny_config(), "g2_no_feature_maps");
  c.net.zero_init_tail = false;
  Model model(c);
  Rng rng(2);
  for (auto& [name, p] : model.net.parameters())
    if (name.rfind("inject", 0) == 0 || name.rfind("code_fuse", 0) == 0)
      for (auto& v : p.mutable_data()) v = std::normal_distribution<float>(0, 0.2f)(rng);
  const Tensor x = Tensor::uniform({1, 3, 16, 16}, rng, 0.f, 1.f);
  const Tensor ref = model.infer(x);
  for (int i = 0; i < 5; ++i) {
    auto bundle = model.encoder.encode(Tensor::uniform({1, 3, 16, 16}, rng, 0.f, 1.f));
    for (auto& v : bundle.code.mutable_data()) v *= -3.f;
    EXPECT_TRUE(testing::bit_equal(model.net.forward(x, &bundle, model.inject).data(), ref.data()));
  }
}

// ---------------------------------------------------------------- determinism / checkpoints

using Persistence = TempDir;

TEST_F(Persistence, SameSeedSameCheckpointBytes) {
  const auto manifest = write_synthetic_corpus(dir_ / "corpus", 3, 24, 24, 9);
  TrainConfig c = tiny_config();
  for (const char* name : {"a.ckpt", "b.ckpt"}) {
    Trainer trainer(c);
    PatchSampler sampler(read_manifest(manifest), {c.patch, true, c.seed});
    trainer.run(sampler, 3);
    save_checkpoint(dir_ / name, trainer);
  }
  EXPECT_EQ(file_bytes(dir_ / "a.ckpt"), file_bytes(dir_ / "b.ckpt"));
}

TEST_F(Persistence, ResumeMatchesUninterruptedBitExactly) {
  const auto manifest = write_synthetic_corpus(dir_ / "corpus", 3, 24, 24, 9);
  TrainConfig c = tiny_config();
  c.queue_capacity = 6;
  const auto files = read_manifest(manifest);

  Trainer straight(c);
  PatchSampler s1(files, {c.patch, true, c.seed});
  straight.run(s1, 4);
  save_checkpoint(dir_ / "mid.ckpt", straight);
  straight.run(s1, 6);
  save_checkpoint(dir_ / "straight.ckpt", straight);

  Trainer resumed = load_trainer(dir_ / "mid.ckpt");
  EXPECT_EQ(resumed.iteration(), 4u);
  PatchSampler s2(files, {c.patch, true, c.seed});
  resumed.run(s2, 6);
  save_checkpoint(dir_ / "resumed.ckpt", resumed);

  EXPECT_TRUE(testing::bit_equal(flatten(resumed.model().net.parameters()), flatten(straight.model().net.parameters())));
  EXPECT_EQ(resumed.model().queue.contents(), straight.model().queue.contents());
  EXPECT_EQ(file_bytes(dir_ / "resumed.ckpt"), file_bytes(dir_ / "straight.ckpt"));
}

TEST_F(Persistence, RoundTripRestoresEverything) {
  TrainConfig c = tiny_config();
  Trainer trainer(c);
  const auto [clean, degraded] = fixed_batch(c, 6);
  trainer.train_step(clean, degraded);
  trainer.train_step(clean, degraded);
  save_checkpoint(dir_ / "x.ckpt", trainer);
  const auto data = read_checkpoint(dir_ / "x.ckpt");
  EXPECT_EQ(data.iteration, 2u);
  EXPECT_EQ(data.optimizer_steps, 2u);
  EXPECT_EQ(data.queue_codes, trainer.model().queue.contents());
  const Trainer back = load_trainer(dir_ / "x.ckpt");
  EXPECT_TRUE(testing::bit_equal(flatten(back.model().encoder.parameters()), flatten(trainer.model().encoder.parameters())));
  EXPECT_TRUE(testing::bit_equal(flatten(back.model().momentum.parameters()), flatten(trainer.model().momentum.parameters())));
  EXPECT_EQ(back.optimizer().moments().size(), trainer.optimizer().moments().size());
  EXPECT_EQ(to_json(back.config()), to_json(trainer.config()));
}

TEST_F(Persistence, MalformedFilesAreReported) {
  Trainer trainer(tiny_config());
  save_checkpoint(dir_ / "ok.ckpt", trainer);
  std::string bytes = file_bytes(dir_ / "ok.ckpt");

  std::string wrong_version = bytes;
  wrong_version[8] = 7;
  std::ofstream(dir_ / "v.ckpt", std::ios::binary) << wrong_version;
  EXPECT_THROW(read_checkpoint(dir_ / "v.ckpt"), CheckpointVersionError);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::ofstream(dir_ / "m.ckpt", std::ios::binary) << bad_magic;
  EXPECT_THROW(read_checkpoint(dir_ / "m.ckpt"), CheckpointError);

  std::ofstream(dir_ / "t.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(read_checkpoint(dir_ / "t.ckpt"), CheckpointError);

  EXPECT_THROW(read_checkpoint(dir_ / "none.ckpt"), IoError);
}

// ---------------------------------------------------------------- evaluation

using Evaluation = TempDir;

TEST_F(Evaluation, IdentityModelAtZeroSigmaIsInfinite) {
  const auto manifest = write_synthetic_corpus(dir_, 2, 20, 28, 3);
  const Model model(tiny_config());
  const auto r = evaluate(&model, read_manifest(manifest), DegradationSpec::noise(0), 1, 8);
  EXPECT_EQ(r.report.count, 2u);
  EXPECT_EQ(r.report.psnr_db, kPsnrIdentical);
  EXPECT_EQ(r.report.ssim, 1.0);
}

TEST_F(Evaluation, FailuresAreSkippedAndCounted) {
  const auto manifest = write_synthetic_corpus(dir_, 3, 32, 32, 3);
  std::ofstream(dir_ / "broken.png") << "garbage";
  auto files = read_manifest(manifest);
  files.push_back(dir_ / "broken.png");
  std::vector<std::string> logged;
  const auto r = evaluate(nullptr, files, DegradationSpec::noise(25), 1, 8, "eval",
                          [&](const std::string& s) { logged.push_back(s); });
  EXPECT_EQ(r.report.count, 3u);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(logged.size(), 1u);
  EXPECT_NE(r.failures[0].find("broken.png"), std::string::npos);
}

TEST_F(Evaluation, NoisyBaselineNearClosedForm) {
  const auto manifest = write_synthetic_corpus(dir_, 4, 64, 64, 11);
  const auto r = evaluate(nullptr, read_manifest(manifest), DegradationSpec::noise(25), 5, 8);
  EXPECT_NEAR(r.report.psnr_db, 20.0 * std::log10(255.0 / 25.0), 0.3);
  const auto again = evaluate(nullptr, read_manifest(manifest), DegradationSpec::noise(25), 5, 8);
  EXPECT_EQ(again.report.psnr_db, r.report.psnr_db);
}

}  // namespace
}  // namespace constyle
