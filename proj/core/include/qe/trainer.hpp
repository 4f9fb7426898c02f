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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qe/features.hpp"
#include "qe/losses.hpp"
#include "qe/manifest.hpp"
#include "qe/networks.hpp"

namespace qe {

enum class Ablation { Vanilla, CondDOnly, RegOnly, Full };
std::string_view ablation_name(Ablation a);
Ablation parse_ablation(std::string_view name);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  int patch_size = 128;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::Full;
  LossWeights weights;
  AdvLossKind adv_kind = AdvLossKind::Vanilla;
  GeneratorConfig generator;
  /// `conditional` is overridden by the ablation.
  DiscriminatorConfig discriminator;
  std::vector<FeatureTapSpec> taps{FeatureTapSpec{}};
  /// Leading pixel-loss-only steps (no D updates).
  int warmup_steps = 0;
  bool random_flip = true;
  /// 0 disables periodic checkpoints; the final step is always saved when
  /// an output directory is given.
  int checkpoint_every = 0;

  bool conditional() const { return ablation == Ablation::CondDOnly || ablation == Ablation::Full; }
  bool regularized() const { return ablation == Ablation::RegOnly || ablation == Ablation::Full; }
  double effective_lambda_R() const { return regularized() ? weights.lambda_R : 0.0; }
  DiscriminatorConfig effective_discriminator() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

struct TrainState {
  int step = 0;
  Generator generator{GeneratorConfig{}};
  Discriminator discriminator{DiscriminatorConfig{}};
  nn::Adam opt_g;
  nn::Adam opt_d;
  std::mt19937_64 rng;

  TrainState() = default;
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;
  TrainState(TrainState&&) = default;
  TrainState& operator=(TrainState&&) = default;
};

struct StepRecord {
  int step = 0;
  LossReport gen;
  /// Discriminator objective value (maximized); 0 during warmup.
  double disc_objective = 0.0;
  bool warmup = false;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  /// When set, per-step JSON lines go to `train_log.jsonl` and checkpoints to
  /// `checkpoints/step_{N}.ckpt` under this directory.
  std::filesystem::path out_dir;
};

/// Freshly seeded state at step 0.
TrainState init_train_state(const TrainConfig& cfg);

/// Advances `state` until `state.step == target_step`. Each iteration draws a
/// batch of aligned random crops, takes one generator step and then one
/// discriminator step on the detached generator output.
void train_steps(TrainState& state, const TrainConfig& cfg, std::span<const ImageTriplet> data,
                 const FeatureExtractor* extractor, int target_step, const TrainHooks& hooks = {});

/// Loads the manifest and runs cfg.steps iterations from a fresh state.
TrainState train(const Manifest& manifest, const TrainConfig& cfg,
                 const FeatureExtractor* extractor, const TrainHooks& hooks = {});

void save_checkpoint(TrainState& state, const TrainConfig& cfg,
                     const std::filesystem::path& path);
/// Restores a checkpoint written with a compatible config. Throws
/// IoError("corrupt checkpoint ...") or IoError("architecture mismatch ...").
TrainState resume(const std::filesystem::path& checkpoint, const TrainConfig& cfg);

/// Generator alone, with its architecture read from the checkpoint.
Generator load_generator(const std::filesystem::path& checkpoint);
Discriminator load_discriminator(const std::filesystem::path& checkpoint);
/// Writes a generator-only checkpoint (usable by enhance).
void save_generator(const Generator& g, const std::filesystem::path& path);

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, int step);

/// Order-sensitive FNV-1a digest of parameter bytes, for determinism checks.
std::uint64_t weights_digest(const nn::ParameterList& params);

}  // namespace qe
