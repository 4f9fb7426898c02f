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

#include "qe/losses.hpp"

#include <cmath>
#include <vector>

#include "qe/error.hpp"

namespace qe {
namespace {

using nn::Tensor;

Tensor log_prob(const Tensor& logits) {
  return nn::log(nn::clamp(nn::sigmoid(logits), kProbEps, 1.0 - kProbEps));
}

Tensor log_one_minus_prob(const Tensor& logits) {
  // 1 - sigmoid(z) = sigmoid(-z); clamp keeps the same [eps, 1 - eps] window.
  return nn::log(nn::clamp(nn::sigmoid(nn::mul_scalar(logits, -1.0)), kProbEps, 1.0 - kProbEps));
}

// C(x) - mean C(y), with the mean as a differentiable scalar.
Tensor relativistic(const Tensor& x, const Tensor& y) { return nn::sub_broadcast(x, nn::mean(y)); }

double scalar_of(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

void check_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss: ") + name);
}

void check_conditional(const Discriminator& d, bool conditional) {
  if (d.config().conditional != conditional) {
    throw Error(std::string("loss configured as ") + (conditional ? "conditional" : "unconditional") +
                " but the discriminator is " + (d.config().conditional ? "conditional" : "unconditional"));
  }
}

std::optional<Tensor> condition_for(bool conditional, const Tensor& compressed) {
  if (!conditional) return std::nullopt;
  return compressed.detach();
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {lambda_r, lambda_p, lambda_d, lambda_R}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
}

std::string_view adv_kind_name(AdvLossKind kind) {
  return kind == AdvLossKind::Vanilla ? "vanilla" : "relativistic_avg";
}

AdvLossKind parse_adv_kind(std::string_view name) {
  if (name == "vanilla" || name == "VANILLA") return AdvLossKind::Vanilla;
  if (name == "relativistic_avg" || name == "RELATIVISTIC_AVG" || name == "ragan") {
    return AdvLossKind::RelativisticAvg;
  }
  throw ConfigError("unknown adversarial loss kind '" + std::string(name) + "'");
}

FeatureFn vgg_feature_fn(const FeatureExtractor& extractor, const FeatureTapSpec& tap) {
  return [&extractor, tap](const Tensor& x) { return extractor.features(x, tap); };
}

Tensor recon_loss(const Tensor& enhanced, const Tensor& raw) {
  if (enhanced.shape() != raw.shape()) {
    throw ShapeError("recon_loss: shape mismatch " + enhanced.shape().str() + " vs " +
                     raw.shape().str());
  }
  return nn::mean(nn::abs(nn::sub(enhanced, raw.detach())));
}

Tensor percept_loss(const Tensor& enhanced, const Tensor& raw, const FeatureFn& psi) {
  if (enhanced.shape() != raw.shape()) throw ShapeError("percept_loss: shape mismatch");
  Tensor fr;
  {
    nn::NoGradGuard no_grad;
    fr = psi(raw.detach());
  }
  return nn::mean(nn::abs(nn::sub(psi(enhanced), fr)));
}

Tensor percept_loss(const Tensor& enhanced, const Tensor& raw, const FeatureExtractor& extractor,
                    std::span<const FeatureTapSpec> taps) {
  Tensor total;
  for (const auto& tap : taps) {
    Tensor t = percept_loss(enhanced, raw, vgg_feature_fn(extractor, tap));
    total = total.defined() ? nn::add(total, t) : t;
  }
  if (!total.defined()) throw ConfigError("percept_loss: no feature taps configured");
  return total;
}

DomainDivergence domain_div_loss(const Tensor& enhanced, const Tensor& raw,
                                 const Tensor& compressed, const FeatureFn& psi) {
  if (enhanced.shape() != raw.shape() || enhanced.shape() != compressed.shape()) {
    throw ShapeError("domain_div_loss: shape mismatch");
  }
  Tensor fr, fc;
  double d_cr;
  {
    nn::NoGradGuard no_grad;
    fr = psi(raw.detach());
    fc = psi(compressed.detach());
    d_cr = nn::mean(nn::abs(nn::sub(fr, fc))).item();
  }
  Tensor d_ce = nn::mean(nn::abs(nn::sub(psi(enhanced), fc)));
  DomainDivergence out;
  out.d_cr = d_cr;
  out.d_ce = d_ce.item();
  if (out.d_ce < d_cr) {
    // Active hinge: d_cr - d_ce, differentiable through d_ce.
    out.loss = nn::add_scalar(nn::mul_scalar(d_ce, -1.0), d_cr);
  } else {
    // Inactive: exactly zero, still attached so backward is a no-op.
    out.loss = nn::mul_scalar(d_ce, 0.0);
  }
  return out;
}

DomainDivergence domain_div_loss(const Tensor& enhanced, const Tensor& raw,
                                 const Tensor& compressed, const FeatureExtractor& extractor,
                                 std::span<const FeatureTapSpec> taps) {
  DomainDivergence total;
  for (const auto& tap : taps) {
    DomainDivergence d = domain_div_loss(enhanced, raw, compressed, vgg_feature_fn(extractor, tap));
    total.loss = total.loss.defined() ? nn::add(total.loss, d.loss) : d.loss;
    total.d_cr += d.d_cr;
    total.d_ce += d.d_ce;
  }
  if (!total.loss.defined()) throw ConfigError("domain_div_loss: no feature taps configured");
  return total;
}

Tensor disc_objective(const Tensor& real_logits, const Tensor& fake_logits, AdvLossKind kind) {
  if (kind == AdvLossKind::Vanilla) {
    return nn::add(nn::mean(log_prob(real_logits)), nn::mean(log_one_minus_prob(fake_logits)));
  }
  return nn::add(nn::mean(log_prob(relativistic(real_logits, fake_logits))),
                 nn::mean(log_one_minus_prob(relativistic(fake_logits, real_logits))));
}

Tensor gen_adv_objective(const Tensor& real_logits, const Tensor& fake_logits, AdvLossKind kind) {
  if (kind == AdvLossKind::Vanilla) return nn::mul_scalar(nn::mean(log_prob(fake_logits)), -1.0);
  Tensor a = nn::mean(log_one_minus_prob(relativistic(real_logits, fake_logits)));
  Tensor b = nn::mean(log_prob(relativistic(fake_logits, real_logits)));
  return nn::mul_scalar(nn::add(a, b), -1.0);
}

Tensor disc_loss(Discriminator& d, const Tensor& enhanced, const Tensor& raw,
                 const Tensor& compressed, AdvLossKind kind, bool conditional, bool update_sn) {
  check_conditional(d, conditional);
  if (enhanced.shape() != raw.shape() || enhanced.shape() != compressed.shape()) {
    throw ShapeError("disc_loss: shape mismatch");
  }
  const auto cond = condition_for(conditional, compressed);
  Tensor real = d.forward(raw.detach(), cond, update_sn);
  Tensor fake = d.forward(enhanced.detach(), cond, false);
  return disc_objective(real, fake, kind);
}

Tensor gen_adv_loss(Discriminator& d, const Tensor& enhanced, const Tensor& raw,
                    const Tensor& compressed, AdvLossKind kind, bool conditional) {
  check_conditional(d, conditional);
  if (enhanced.shape() != raw.shape() || enhanced.shape() != compressed.shape()) {
    throw ShapeError("gen_adv_loss: shape mismatch");
  }
  const auto cond = condition_for(conditional, compressed);
  Tensor fake = d.forward(enhanced, cond, false);
  Tensor real;
  if (kind == AdvLossKind::Vanilla) {
    real = fake;  // unused by the vanilla generator loss
  } else {
    nn::NoGradGuard no_grad;
    real = d.forward(raw.detach(), cond, false);
  }
  return gen_adv_objective(real, fake, kind);
}

LossReport gen_total_loss(const LossTerms& t, const LossWeights& w) {
  check_finite(t.recon, "recon");
  check_finite(t.percept, "percept");
  check_finite(t.discrim, "discrim");
  check_finite(t.domain_div, "domain_div");
  LossReport r;
  r.recon = t.recon;
  r.percept = t.percept;
  r.discrim = t.discrim;
  r.domain_div = t.domain_div;
  r.d_cr = t.d_cr;
  r.d_ce = t.d_ce;
  r.total = w.lambda_r * t.recon + w.lambda_p * t.percept + w.lambda_d * t.discrim +
            w.lambda_R * t.domain_div;
  return r;
}

GeneratorLoss gen_total_loss(const Tensor& recon, const Tensor& percept, const Tensor& discrim,
                             const DomainDivergence& div, const LossWeights& w) {
  LossTerms terms{scalar_of(recon), scalar_of(percept), scalar_of(discrim), scalar_of(div.loss),
                  div.d_cr, div.d_ce};
  GeneratorLoss out;
  out.report = gen_total_loss(terms, w);
  Tensor total;
  auto accumulate = [&](const Tensor& t, double lambda) {
    if (!t.defined() || lambda == 0.0) return;
    Tensor s = nn::mul_scalar(t, lambda);
    total = total.defined() ? nn::add(total, s) : s;
  };
  accumulate(recon, w.lambda_r);
  accumulate(percept, w.lambda_p);
  accumulate(discrim, w.lambda_d);
  accumulate(div.loss, w.lambda_R);
  out.total = total.defined() ? total : Tensor::scalar(0.0);
  return out;
}

}  // namespace qe
