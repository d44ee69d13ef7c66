#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "synthetic.hpp"
#include "uniemo/checkpoint.hpp"
#include "uniemo/config.hpp"
#include "uniemo/gradcheck.hpp"
#include "uniemo/optim.hpp"
#include "uniemo/training.hpp"

namespace uniemo {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("uniemo_test_training_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

// A model small enough for a few steps per test.
Config tiny_config() {
  return Config::from_text(
      "model.image_size = 16\n"
      "model.patch = 4\n"
      "model.width = 16\n"
      "model.depth = 1\n"
      "model.heads = 2\n"
      "model.mlp_ratio = 2\n"
      "model.decoder_width = 8\n"
      "model.decoder_depth = 1\n"
      "model.decoder_heads = 2\n"
      "model.embed_dim = 8\n"
      "fusion.kappa = 2\n"
      "pretrain.batch_size = 4\n"
      "pretrain.warmup_steps = 2\n"
      "pretrain.total_steps = 6\n"
      "pretrain.base_lr = 1e-3\n"
      "finetune.batch_size = 4\n"
      "finetune.warmup_steps = 1\n"
      "finetune.total_steps = 3\n",
      "tiny");
}

std::vector<std::string> lines_of(const fs::path& path) {
  std::ifstream is(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

bool same_arrays(const Checkpoint& a, const Checkpoint& b, std::string_view prefix = "") {
  std::size_t compared = 0;
  for (const auto& [name, t] : a.arrays) {
    if (!name.starts_with(prefix)) continue;
    const Tensor* other = b.find(name);
    if (other == nullptr || !(*other == t)) return false;
    ++compared;
  }
  return compared > 0;
}

TEST(Config, DefaultsAndTypedAccess) {
  const Config c;
  EXPECT_EQ(c.get("fusion.strategy"), "gamma1");
  EXPECT_EQ(c.get_uint("model.image_size"), 64u);
  EXPECT_DOUBLE_EQ(c.get_double("model.mask_ratio"), 0.75);
  EXPECT_TRUE(c.get_bool("finetune.mixup"));
  EXPECT_EQ(Config::from_text(c.to_text()), c);
  const TrainConfig t = train_config(c);
  EXPECT_EQ(t.backbone.cls_proj_dim, 64u);
  EXPECT_DOUBLE_EQ(t.pretrain.beta2, 0.95);
  EXPECT_DOUBLE_EQ(t.finetune.beta2, 0.999);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  Config c;
  EXPECT_THROW(c.set("model.nonexistent", "1"), Error);
  EXPECT_THROW(c.set("model.depth", "-1"), Error);
  EXPECT_THROW(c.set("model.mask_ratio", "lots"), Error);
  EXPECT_THROW(c.set("fusion.strategy", "gamma9"), Error);
  EXPECT_THROW(c.set_assignment("no_equals_sign"), Error);
  EXPECT_NE(error_of([] { Config::from_text("seed = 1\nbogus = 2\n", "f.cfg"); }).find("f.cfg:2"),
            std::string::npos);
  c.set("precision", "single");
  EXPECT_THROW(train_config(c), Error);
}

TEST(Config, PrecedenceDefaultsFileEnvSetSeed) {
  const fs::path dir = scratch_dir("config");
  {
    std::ofstream os(dir / "run.cfg");
    os << "# comment\nseed = 5\nmodel.depth = 2\nfusion.kappa = 3\n";
  }
  unsetenv("UNIEMO_SEED");
  const std::vector<std::string> none;
  Config c = resolve_config(dir / "run.cfg", none, std::nullopt);
  EXPECT_EQ(c.get_uint("seed"), 5u);
  EXPECT_EQ(c.get_uint("model.depth"), 2u);
  EXPECT_EQ(c.get_uint("model.width"), 128u);

  setenv("UNIEMO_SEED", "7", 1);
  c = resolve_config(dir / "run.cfg", none, std::nullopt);
  EXPECT_EQ(c.get_uint("seed"), 7u);

  const std::vector<std::string> sets{"seed=9", "model.depth=3"};
  c = resolve_config(dir / "run.cfg", sets, std::nullopt);
  EXPECT_EQ(c.get_uint("seed"), 9u);
  EXPECT_EQ(c.get_uint("model.depth"), 3u);
  EXPECT_EQ(c.get_uint("fusion.kappa"), 3u);

  c = resolve_config(dir / "run.cfg", sets, 11u);
  EXPECT_EQ(c.get_uint("seed"), 11u);
  unsetenv("UNIEMO_SEED");
  EXPECT_THROW(resolve_config(dir / "missing.cfg", none, std::nullopt), Error);
}

TEST(Schedule, WarmupThenCosineToZero) {
  OptimConfig o;
  o.base_lr = 1e-3;
  o.warmup_steps = 10;
  o.total_steps = 100;
  EXPECT_LT(learning_rate(o, 0), learning_rate(o, 10));
  for (std::int64_t s = 0; s < 10; ++s) EXPECT_LT(learning_rate(o, s), learning_rate(o, s + 1));
  EXPECT_DOUBLE_EQ(learning_rate(o, 10), 1e-3);
  for (std::int64_t s = 10; s < 100; ++s) EXPECT_GE(learning_rate(o, s), learning_rate(o, s + 1));
  EXPECT_LE(learning_rate(o, 100), 1e-2 * o.base_lr);
  EXPECT_NEAR(learning_rate(o, 55), 0.5e-3, 1e-15);
  o.cosine = false;
  EXPECT_DOUBLE_EQ(learning_rate(o, 90), 1e-3);
}

TEST(Optimizer, ZeroLearningRateLeavesParametersUnchanged) {
  ParameterStore store;
  Rng rng(1);
  Parameter& w = store.add("layer.weight", Tensor({3, 4}, 0.5));
  Parameter& b = store.add("layer.bias", Tensor({4}, 0.1));
  for (Parameter* p : store.all()) {
    p->grad = Tensor(p->value.shape());
    for (double& g : p->grad.data()) g = rng.normal();
  }
  const Tensor w0 = w.value, b0 = b.value;
  AdamW opt(store.all(), OptimConfig{});
  opt.step(0.0);
  EXPECT_TRUE(w.value == w0);
  EXPECT_TRUE(b.value == b0);
  opt.step(1e-2);
  EXPECT_FALSE(w.value == w0);
  EXPECT_EQ(opt.steps_taken(), 2);
}

TEST(Optimizer, DecayAppliesToWeightMatricesOnly) {
  ParameterStore store;
  EXPECT_TRUE(AdamW::decays(store.add("encoder.block0.qkv.weight", Tensor({2, 2}))));
  EXPECT_FALSE(AdamW::decays(store.add("encoder.block0.qkv.bias", Tensor({2}))));
  EXPECT_FALSE(AdamW::decays(store.add("encoder.cls_token", Tensor({1, 2}))));
  EXPECT_FALSE(AdamW::decays(store.add("decoder.mask_token", Tensor({1, 2}))));
  Parameter& frozen = store.add("frozen.weight", Tensor({2, 2}));
  frozen.trainable = false;
  EXPECT_THROW(AdamW({&frozen}, OptimConfig{}), Error);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = scratch_dir("ckpt");
  Checkpoint c;
  c.kind = "pretrain";
  c.step = 42;
  c.config_text = Config().to_text();
  c.rng_state = "12 34 56";
  Rng rng(3);
  Tensor a({3, 5});
  for (double& v : a.data()) v = rng.normal() * 1e-300;
  Tensor b({7}, {0.1, -0.0, 1e308, 5e-324, 1.0 / 3.0, -2.5, 0.0});
  c.arrays = {{"param/a", a}, {"param/b", b}};
  save_checkpoint(c, dir / "x.ckpt");
  const Checkpoint back = load_checkpoint(dir / "x.ckpt");
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.step, 42);
  EXPECT_EQ(back.config_text, c.config_text);
  EXPECT_EQ(back.rng_state, c.rng_state);
  ASSERT_EQ(back.arrays.size(), 2u);
  EXPECT_TRUE(same_arrays(c, back));
  EXPECT_TRUE(std::signbit(back.at("param/b")[1]));
  EXPECT_THROW(back.at("param/missing"), Error);
}

TEST(Checkpoint, VersionMismatchAndCorruptionAreDetected) {
  const fs::path dir = scratch_dir("ckpt_bad");
  Checkpoint c;
  c.kind = "pretrain";
  c.arrays = {{"param/a", Tensor({4, 4}, 0.25)}};
  save_checkpoint(c, dir / "good.ckpt");
  std::string bytes;
  {
    std::ifstream is(dir / "good.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  const auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream os(dir / name, std::ios::binary);
    os << content;
    return dir / name;
  };
  std::string version = bytes;
  version[8] = 7;
  const std::string v_err = error_of([&] { load_checkpoint(write("version.ckpt", version)); });
  EXPECT_NE(v_err.find("version 7"), std::string::npos) << v_err;
  EXPECT_NE(v_err.find("version 1"), std::string::npos) << v_err;

  std::string tampered = bytes;
  tampered[tampered.size() - 5] ^= 0x10;
  const std::string t_err = error_of([&] { load_checkpoint(write("tampered.ckpt", tampered)); });
  EXPECT_NE(t_err.find("corrupt checkpoint"), std::string::npos) << t_err;
  EXPECT_NE(t_err.find("param/a"), std::string::npos) << t_err;

  std::string header = bytes;
  header[30] ^= 0x01;
  EXPECT_NE(error_of([&] { load_checkpoint(write("header.ckpt", header)); }).find("corrupt"), std::string::npos);

  const std::string truncated = bytes.substr(0, bytes.size() - 10);
  EXPECT_NE(error_of([&] { load_checkpoint(write("short.ckpt", truncated)); }).find("truncated"), std::string::npos);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), Error);
}

TEST(BatchOrder, EpochsArePermutationsAndStateless) {
  std::multiset<std::size_t> seen;
  for (std::int64_t s = 0; s < 5; ++s) {
    for (std::size_t i : batch_indices(9, s, 4, 20)) seen.insert(i);
  }
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(seen.count(i), 1u);
  EXPECT_EQ(batch_indices(9, 3, 4, 20), batch_indices(9, 3, 4, 20));
  EXPECT_EQ(batch_indices(9, 0, 8, 3).size(), 8u);
}

TEST(Pretrain, ZeroStepsGiveTheInitializedModel) {
  Config c = tiny_config();
  c.set("pretrain.total_steps", "0");
  const TrainConfig t = train_config(c);
  const auto teacher = make_teacher(t);
  const PretrainRunResult r = run_pretrain(c, {}, *teacher);
  EXPECT_TRUE(r.reports.empty());
  EXPECT_EQ(r.checkpoint.step, 0);
  const PretrainModel fresh(t);
  for (const Parameter* p : fresh.store.all()) {
    const Tensor* stored = r.checkpoint.find("param/" + p->name);
    ASSERT_NE(stored, nullptr) << p->name;
    EXPECT_TRUE(*stored == p->value) << p->name;
  }
}

TEST(Pretrain, StepsAreDeterministicAndReportSums) {
  const Config c = tiny_config();
  const auto data = testing::synthetic_samples(8, 16);
  const auto teacher = make_teacher(train_config(c));
  const auto run = [&] { return run_pretrain(c, data, *teacher).reports; };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].step, static_cast<std::int64_t>(i + 1));
    EXPECT_EQ(a[i].lt, b[i].lt);
    EXPECT_EQ(a[i].l1, b[i].l1);
    EXPECT_NEAR(a[i].lt, a[i].l1 + a[i].l2 + a[i].l3, 1e-9);
    EXPECT_GE(a[i].l2, 0.0);
    EXPECT_LE(a[i].l2, 2.0);
    EXPECT_GE(a[i].l3, 0.0);
    EXPECT_LE(a[i].l3, 2.0);
  }
}

TEST(Pretrain, OptimizerHoldsExactlyTheStudentParameters) {
  const Config c = tiny_config();
  const auto teacher = make_teacher(train_config(c));
  Pretrainer trainer(c, *teacher);
  const auto params = trainer.optimizer().params();
  const auto all = trainer.model().store.all();
  EXPECT_EQ(std::set<Parameter*>(params.begin(), params.end()), std::set<Parameter*>(all.begin(), all.end()));
  for (const Parameter* p : params) {
    const std::string_view g = p->group();
    EXPECT_TRUE(g == "encoder" || g == "projection" || g == "decoder" || g == "fusion") << p->name;
  }
}

TEST(Pretrain, MissingCaptionAndTeacherWidthMismatchThrow) {
  const Config c = tiny_config();
  const TrainConfig t = train_config(c);
  auto data = testing::synthetic_samples(4, 16);
  const auto teacher = make_teacher(t);
  PretrainModel model(t);
  Rng rng(1);
  std::vector<const ImageSample*> batch{&data[0], &data[1]};
  data[1].caption.clear();
  EXPECT_THROW(pretrain_forward(model, batch, *teacher, rng, false), Error);
  data[1].caption = "A photo evoking awe";
  const StubTeacher wide(0, 32);
  EXPECT_THROW(pretrain_forward(model, batch, wide, rng, false), Error);
}

TEST(Pretrain, MetricsFileHasOneRowPerStepAndResumeIsBitwise) {
  const fs::path dir = scratch_dir("resume");
  Config c = tiny_config();
  c.set("pretrain.checkpoint_every", "3");
  const auto data = testing::synthetic_samples(8, 16);
  const auto teacher = make_teacher(train_config(c));

  const PretrainRunResult straight = run_pretrain(c, data, *teacher, {dir / "straight", std::nullopt, -1});
  const auto rows = lines_of(dir / "straight" / "pretrain_metrics.csv");
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0], "step,l1,l2,l3,lt");
  EXPECT_TRUE(fs::exists(dir / "straight" / "checkpoint_3.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "straight" / "pretrain.ckpt"));

  run_pretrain(c, data, *teacher, {dir / "split", std::nullopt, 3});
  const Checkpoint mid = load_checkpoint(dir / "split" / "pretrain.ckpt");
  EXPECT_EQ(mid.step, 3);
  const PretrainRunResult resumed = run_pretrain(c, data, *teacher, {dir / "split", mid, -1});
  ASSERT_EQ(resumed.reports.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const LossReport& a = straight.reports[i + 3];
    const LossReport& b = resumed.reports[i];
    EXPECT_EQ(a.step, b.step);
    EXPECT_EQ(a.l1, b.l1);
    EXPECT_EQ(a.l2, b.l2);
    EXPECT_EQ(a.l3, b.l3);
    EXPECT_EQ(a.lt, b.lt);
  }
  EXPECT_TRUE(same_arrays(straight.checkpoint, resumed.checkpoint));
  EXPECT_EQ(lines_of(dir / "split" / "pretrain_metrics.csv"), rows);

  Checkpoint wrong = mid;
  wrong.kind = "finetune";
  EXPECT_THROW(run_pretrain(c, data, *teacher, {{}, wrong, -1}), Error);
}

TEST(Finetune, TransfersEncoderOnlyAndAddsAFreshHead) {
  Config c = tiny_config();
  c.set("pretrain.total_steps", "2");
  c.set("finetune.total_steps", "0");
  const auto data = testing::synthetic_samples(8, 16);
  const auto teacher = make_teacher(train_config(c));
  const Checkpoint pre = run_pretrain(c, data, *teacher).checkpoint;
  const FinetuneRunResult ft = run_finetune(c, &pre, data, {});
  EXPECT_TRUE(same_arrays(pre, ft.checkpoint, "param/encoder."));
  const Classifier fresh(train_config(c));
  std::set<std::string> encoder_names;
  for (const Parameter* p : fresh.store.with_prefix("encoder.")) encoder_names.insert("param/" + p->name);
  std::set<std::string> transferred;
  for (const auto& [name, t] : ft.checkpoint.arrays) {
    if (name.starts_with("param/encoder.")) transferred.insert(name);
    EXPECT_FALSE(name.starts_with("param/decoder.") || name.starts_with("param/fusion.") ||
                 name.starts_with("param/projection."))
        << name;
  }
  EXPECT_EQ(transferred, encoder_names);
  EXPECT_TRUE(ft.checkpoint.at("param/head.weight") == fresh.head.weight->value);
  EXPECT_THROW(Classifier::from_checkpoint(pre), Error);
  EXPECT_NO_THROW(Classifier::from_checkpoint(ft.checkpoint));
}

TEST(Finetune, ProbeWithZeroStepsReportsTheRandomHeadAccuracy) {
  Config c = tiny_config();
  c.set("finetune.total_steps", "0");
  c.set("finetune.probe", "true");
  const auto data = testing::synthetic_samples(16, 16);
  const FinetuneRunResult ft = run_finetune(c, nullptr, data, {});
  const Classifier fresh(train_config(c));
  const double expected = accuracy(predict_labels(fresh, data), sample_labels(data, 8));
  EXPECT_DOUBLE_EQ(ft.accuracy, expected);
  EXPECT_DOUBLE_EQ(ft.train_accuracy, expected);
}

TEST(Finetune, MixupOffGivesPlainCrossEntropy) {
  Config c = tiny_config();
  c.set("finetune.mixup", "false");
  c.set("finetune.total_steps", "1");
  c.set("finetune.batch_size", "8");
  const auto data = testing::synthetic_samples(8, 16);
  const FinetuneRunResult ft = run_finetune(c, nullptr, data, {});
  ASSERT_EQ(ft.reports.size(), 1u);
  // The single batch is a permutation of the whole set, so the mean CE matches.
  const Classifier fresh(train_config(c));
  const double ce = soft_target_cross_entropy(fresh.predict(stack_pixels(data)), sample_labels(data, 8));
  EXPECT_NEAR(ft.reports[0].lf, ce, 1e-12);
}

TEST(Finetune, MetricsAndLabelErrors) {
  const fs::path dir = scratch_dir("finetune");
  Config c = tiny_config();
  auto data = testing::synthetic_samples(8, 16);
  const FinetuneRunResult ft = run_finetune(c, nullptr, data, {}, {dir, 32});
  EXPECT_EQ(lines_of(dir / "finetune_metrics.csv").size(), 4u);
  EXPECT_TRUE(fs::exists(dir / "finetune.ckpt"));
  EXPECT_GE(ft.accuracy, 0.0);
  EXPECT_LE(ft.accuracy, 1.0);

  c.set("finetune.num_classes", "4");
  EXPECT_THROW(run_finetune(c, nullptr, data, {}), Error);
  data[2].label.reset();
  EXPECT_THROW(sample_labels(data, 8), Error);
}

TEST(GradientCheck, EveryComponentPasses) {
  for (const std::string& name : gradcheck_components()) {
    const GradCheckResult r = gradient_check(name);
    EXPECT_LT(r.max_rel_error, 1e-4) << name << " worst " << r.worst;
    EXPECT_GT(r.probes, 0u) << name;
  }
  EXPECT_LT(gradient_check("linear_toy").max_rel_error, 1e-8);
  EXPECT_LT(gradient_check("gamma3", GradCheckSize{4, 4, 2, 7}).max_rel_error, 1e-4);
  EXPECT_THROW(gradient_check("nope"), Error);
}

}  // namespace
}  // namespace uniemo
