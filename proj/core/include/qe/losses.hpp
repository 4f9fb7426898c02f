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

#include <functional>
#include <optional>
#include <span>
#include <string>

#include "qe/features.hpp"
#include "qe/networks.hpp"

namespace qe {

struct LossWeights {
  double lambda_r = 1e-2;
  double lambda_p = 1.0;
  double lambda_d = 5e-3;
  double lambda_R = 1e-1;

  static LossWeights esrgan() { return {1e-2, 1.0, 5e-3, 1e-1}; }
  static LossWeights real_esrgan() { return {1.0, 1.0, 1e-1, 1e-1}; }
  /// Throws ConfigError on a negative or non-finite weight.
  void validate() const;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

enum class AdvLossKind { Vanilla, RelativisticAvg };
std::string_view adv_kind_name(AdvLossKind kind);
AdvLossKind parse_adv_kind(std::string_view name);

/// Discriminator outputs are clamped to [kProbEps, 1 - kProbEps] before logs.
inline constexpr double kProbEps = 1e-7;

struct LossReport {
  double recon = 0.0;
  double percept = 0.0;
  double discrim = 0.0;
  double domain_div = 0.0;
  double total = 0.0;
  double d_cr = 0.0;
  double d_ce = 0.0;
};

/// Maps an image batch to features. Must be a pure function of its input.
using FeatureFn = std::function<nn::Tensor(const nn::Tensor&)>;

FeatureFn vgg_feature_fn(const FeatureExtractor& extractor, const FeatureTapSpec& tap);

/// mean |I_E - I_R|.
nn::Tensor recon_loss(const nn::Tensor& enhanced, const nn::Tensor& raw);

/// mean |ψ(I_E) - ψ(I_R)|, summed over taps. I_R is detached.
nn::Tensor percept_loss(const nn::Tensor& enhanced, const nn::Tensor& raw, const FeatureFn& psi);
nn::Tensor percept_loss(const nn::Tensor& enhanced, const nn::Tensor& raw,
                        const FeatureExtractor& extractor, std::span<const FeatureTapSpec> taps);

struct DomainDivergence {
  nn::Tensor loss;  // max(0, d_cr - d_ce); gradient reaches I_E only
  double d_cr = 0.0;
  double d_ce = 0.0;
};

/// d_cr = mean |ψ(I_R) - ψ(I_C)|, d_ce = mean |ψ(I_E) - ψ(I_C)|.
DomainDivergence domain_div_loss(const nn::Tensor& enhanced, const nn::Tensor& raw,
                                 const nn::Tensor& compressed, const FeatureFn& psi);
/// Several taps: hinges and distances are summed over taps.
DomainDivergence domain_div_loss(const nn::Tensor& enhanced, const nn::Tensor& raw,
                                 const nn::Tensor& compressed, const FeatureExtractor& extractor,
                                 std::span<const FeatureTapSpec> taps);

/// Value of the discriminator objective (to be maximized) from logits.
/// Vanilla: mean log D(R) + mean log(1 - D(E)). RaGAN replaces D(x) with
/// sigmoid(C(x) - mean C(other domain)).
nn::Tensor disc_objective(const nn::Tensor& real_logits, const nn::Tensor& fake_logits,
                          AdvLossKind kind);
/// Generator adversarial loss (to be minimized). Vanilla: -mean log D(E).
/// RaGAN: -mean log(1 - D_ra(R, E)) - mean log D_ra(E, R).
nn::Tensor gen_adv_objective(const nn::Tensor& real_logits, const nn::Tensor& fake_logits,
                             AdvLossKind kind);

/// Evaluates D on (I_R | I_C) and on detached (I_E | I_C) and returns the
/// objective to maximize. `conditional` must match the discriminator.
nn::Tensor disc_loss(Discriminator& d, const nn::Tensor& enhanced, const nn::Tensor& raw,
                     const nn::Tensor& compressed, AdvLossKind kind, bool conditional,
                     bool update_sn = false);
/// Generator-side counterpart; gradient reaches I_E. The real-branch logits
/// are computed without a graph.
nn::Tensor gen_adv_loss(Discriminator& d, const nn::Tensor& enhanced, const nn::Tensor& raw,
                        const nn::Tensor& compressed, AdvLossKind kind, bool conditional);

struct LossTerms {
  double recon = 0.0;
  double percept = 0.0;
  double discrim = 0.0;
  double domain_div = 0.0;
  double d_cr = 0.0;
  double d_ce = 0.0;
};

/// total = λ_r recon + λ_p percept + λ_d discrim + λ_R domain_div. Throws
/// NumericError("non-finite loss: <component>") on NaN/Inf inputs.
LossReport gen_total_loss(const LossTerms& terms, const LossWeights& w);

struct GeneratorLoss {
  nn::Tensor total;
  LossReport report;
};

/// Differentiable weighted sum. Undefined tensors count as 0 and are skipped.
GeneratorLoss gen_total_loss(const nn::Tensor& recon, const nn::Tensor& percept,
                             const nn::Tensor& discrim, const DomainDivergence& div,
                             const LossWeights& w);

}  // namespace qe
