// Copyright 2026 The DebiasQE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "qe/codec.hpp"
#include "qe/error.hpp"
#include "qe/trainer.hpp"
#include "testing.hpp"

namespace qe {
namespace {

using testing::TempDir;

std::vector<ImageTriplet> tiny_corpus(int n = 4) {
  std::vector<ImageTriplet> out;
  for (int i = 0; i < n; ++i) {
    ImageTriplet t;
    t.raw = synthetic_image(24, 24, 50 + i);
    const auto c = compress(t.raw, {CodecId::Jpeg, 10});
    t.compressed = c.image;
    t.bpp = c.bpp;
    t.codec = {CodecId::Jpeg, 10};
    t.source_id = "s" + std::to_string(i);
    out.push_back(std::move(t));
  }
  return out;
}

TrainConfig tiny_config(Ablation a = Ablation::Full) {
  TrainConfig c;
  c.steps = 10;
  c.batch_size = 2;
  c.patch_size = 16;
  c.seed = 9;
  c.ablation = a;
  c.generator.channels = 4;
  c.generator.num_blocks = 1;
  c.discriminator.channels = 4;
  c.discriminator.num_stages = 1;
  c.taps = {{Backbone::Vgg19, 2, true}};
  return c;
}

const FeatureExtractor& tiny_extractor() {
  static const FeatureExtractor ex(
      std::make_shared<VggBackbone>(VggBackbone::seeded({{1, 1}, {4, 6}}, 1)));
  return ex;
}

struct RunLog {
  std::vector<StepRecord> records;
  std::uint64_t g_digest = 0;
  std::uint64_t d_digest = 0;
};

RunLog run(TrainState& s, const TrainConfig& cfg, const std::vector<ImageTriplet>& data, int to) {
  RunLog r;
  TrainHooks h;
  h.on_step = [&](const StepRecord& rec) { r.records.push_back(rec); };
  train_steps(s, cfg, data, &tiny_extractor(), to, h);
  r.g_digest = weights_digest(s.generator.parameters());
  r.d_digest = weights_digest(s.discriminator.parameters());
  return r;
}

bool same_reports(const LossReport& a, const LossReport& b) {
  return a.recon == b.recon && a.percept == b.percept && a.discrim == b.discrim &&
         a.domain_div == b.domain_div && a.total == b.total && a.d_cr == b.d_cr && a.d_ce == b.d_ce;
}

TEST(TrainerTest, ZeroStepsLeavesInitialState) {
  const auto data = tiny_corpus();
  auto cfg = tiny_config();
  cfg.steps = 0;
  TrainState a = init_train_state(cfg);
  const TrainState b = init_train_state(cfg);
  run(a, cfg, data, 0);
  EXPECT_EQ(a.step, 0);
  EXPECT_EQ(weights_digest(a.generator.parameters()), weights_digest(b.generator.parameters()));
}

TEST(TrainerTest, SeededRunsAreIdentical) {
  const auto data = tiny_corpus();
  const auto cfg = tiny_config();
  TrainState a = init_train_state(cfg), b = init_train_state(cfg);
  const RunLog ra = run(a, cfg, data, 10), rb = run(b, cfg, data, 10);
  EXPECT_EQ(ra.g_digest, rb.g_digest);
  EXPECT_EQ(ra.d_digest, rb.d_digest);
  ASSERT_EQ(ra.records.size(), 10u);
  for (std::size_t i = 0; i < ra.records.size(); ++i) {
    EXPECT_TRUE(same_reports(ra.records[i].gen, rb.records[i].gen)) << "step " << i + 1;
    EXPECT_EQ(ra.records[i].disc_objective, rb.records[i].disc_objective);
  }
  auto other = cfg;
  other.seed = 10;
  TrainState c = init_train_state(other);
  EXPECT_NE(run(c, other, data, 10).g_digest, ra.g_digest);
}

TEST(TrainerTest, ResumeContinuesBitForBit) {
  TempDir dir("resume");
  const auto data = tiny_corpus();
  auto cfg = tiny_config();
  cfg.discriminator.spectral_norm = true;
  TrainState full = init_train_state(cfg);
  const RunLog uninterrupted = run(full, cfg, data, 10);

  TrainState half = init_train_state(cfg);
  run(half, cfg, data, 5);
  save_checkpoint(half, cfg, dir / "step_5.ckpt");
  TrainState resumed = resume(dir / "step_5.ckpt", cfg);
  EXPECT_EQ(resumed.step, 5);
  const RunLog tail = run(resumed, cfg, data, 10);
  EXPECT_EQ(tail.g_digest, uninterrupted.g_digest);
  EXPECT_EQ(tail.d_digest, uninterrupted.d_digest);
  for (int i = 0; i < 5; ++i) {
    EXPECT_TRUE(same_reports(tail.records[i].gen, uninterrupted.records[i + 5].gen));
  }
}

TEST(TrainerTest, ResumeRejectsMismatchAndCorruption) {
  TempDir dir("resume_err");
  const auto data = tiny_corpus();
  const auto cfg = tiny_config();
  TrainState s = init_train_state(cfg);
  run(s, cfg, data, 2);
  save_checkpoint(s, cfg, dir / "c.ckpt");
  auto wider = cfg;
  wider.generator.channels = 8;
  try {
    resume(dir / "c.ckpt", wider);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("architecture mismatch"), std::string::npos);
  }
  const auto size = std::filesystem::file_size(dir / "c.ckpt");
  std::filesystem::copy_file(dir / "c.ckpt", dir / "t.ckpt");
  std::filesystem::resize_file(dir / "t.ckpt", size / 2);
  try {
    resume(dir / "t.ckpt", cfg);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos);
  }
}

TEST(TrainerTest, AblationGatingOfRegularizer) {
  const auto data = tiny_corpus();
  for (Ablation a : {Ablation::Vanilla, Ablation::CondDOnly, Ablation::RegOnly, Ablation::Full}) {
    const auto cfg = tiny_config(a);
    TrainState s = init_train_state(cfg);
    EXPECT_EQ(s.discriminator.config().conditional, cfg.conditional());
    EXPECT_EQ(s.discriminator.first_layer_in_channels(), cfg.conditional() ? 6 : 3);
    const RunLog r = run(s, cfg, data, 4);
    bool any_reg = false;
    for (const auto& rec : r.records) {
      if (cfg.regularized()) {
        any_reg |= rec.gen.domain_div > 0;
        EXPECT_DOUBLE_EQ(rec.gen.domain_div, std::max(0.0, rec.gen.d_cr - rec.gen.d_ce));
      } else {
        EXPECT_EQ(rec.gen.domain_div, 0.0);
      }
    }
    EXPECT_EQ(any_reg, cfg.regularized()) << ablation_name(a);
  }
}

TEST(TrainerTest, RegularizerOffMatchesZeroLambda) {
  // With the hinge gated out, VANILLA equals REG_ONLY whose λ_R contributes
  // nothing; compare against a run with the regularizer weight at zero.
  const auto data = tiny_corpus();
  auto vanilla = tiny_config(Ablation::Vanilla);
  auto cond = tiny_config(Ablation::CondDOnly);
  TrainState a = init_train_state(vanilla);
  const RunLog ra = run(a, vanilla, data, 3);
  vanilla.weights.lambda_R = 0.5;  // ignored under VANILLA
  TrainState b = init_train_state(vanilla);
  EXPECT_EQ(run(b, vanilla, data, 3).g_digest, ra.g_digest);
  TrainState c = init_train_state(cond);
  EXPECT_NE(run(c, cond, data, 3).d_digest, ra.d_digest);
}

TEST(TrainerTest, WarmupSkipsDiscriminatorUpdates) {
  const auto data = tiny_corpus();
  auto cfg = tiny_config();
  cfg.warmup_steps = 3;
  TrainState s = init_train_state(cfg);
  const auto d0 = weights_digest(s.discriminator.parameters());
  const auto g0 = weights_digest(s.generator.parameters());
  const RunLog r = run(s, cfg, data, 3);
  EXPECT_EQ(r.d_digest, d0);
  EXPECT_NE(r.g_digest, g0);
  for (const auto& rec : r.records) {
    EXPECT_TRUE(rec.warmup);
    EXPECT_EQ(rec.gen.percept, 0.0);
    EXPECT_EQ(rec.gen.discrim, 0.0);
  }
  const RunLog after = run(s, cfg, data, 4);
  EXPECT_NE(after.d_digest, d0);
}

TEST(TrainerTest, LogsAndCheckpointLayout) {
  TempDir dir("train_out");
  const auto data = tiny_corpus();
  auto cfg = tiny_config();
  cfg.checkpoint_every = 2;
  TrainState s = init_train_state(cfg);
  TrainHooks h;
  h.out_dir = dir.path();
  train_steps(s, cfg, data, &tiny_extractor(), 5, h);
  for (int step : {2, 4, 5}) EXPECT_TRUE(std::filesystem::exists(checkpoint_name(dir / "checkpoints", step)));
  EXPECT_FALSE(std::filesystem::exists(checkpoint_name(dir / "checkpoints", 3)));
  std::ifstream in(dir / "train_log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), lines + 1);
    for (const char* k : {"recon", "percept", "discrim", "domain_div", "total", "d_cr", "d_ce"}) {
      EXPECT_TRUE(j.contains(k)) << k;
    }
  }
  EXPECT_EQ(lines, 5);
  // The generator alone reloads from a checkpoint.
  const Generator g = load_generator(checkpoint_name(dir / "checkpoints", 5));
  EXPECT_EQ(weights_digest(g.parameters()), weights_digest(s.generator.parameters()));
}

TEST(TrainerTest, ConfigErrors) {
  auto cfg = tiny_config(Ablation::Full);
  cfg.weights.lambda_R = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  TrainState s = init_train_state(cfg);
  EXPECT_THROW(train_steps(s, cfg, {}, &tiny_extractor(), 1), Error);
  EXPECT_THROW(train_steps(s, cfg, tiny_corpus(), nullptr, 1), Error);
  EXPECT_EQ(parse_ablation("cond_d_only"), Ablation::CondDOnly);
  EXPECT_EQ(parse_ablation("FULL"), Ablation::Full);
  EXPECT_THROW(parse_ablation("half"), ConfigError);
}

}  // namespace
}  // namespace qe
