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

#include <cmath>

#include "qe/error.hpp"
#include "qe/losses.hpp"
#include "qe/nn/layers.hpp"
#include "testing.hpp"

namespace qe {
namespace {

using nn::Tensor;
using testing::grad_check;
using testing::random_tensor;

// Frozen random conv + leaky ReLU; features keep spatial size.
FeatureFn toy_extractor(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = std::make_shared<Tensor>(random_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5));
  auto b = std::make_shared<Tensor>(random_tensor(rng, {1, 4, 1, 1}, -0.1, 0.1));
  return [w, b](const Tensor& x) {
    return nn::leaky_relu(nn::conv2d(x, *w, *b, {1, 1, 1, 1}), 0.2);
  };
}

Tensor scalar4(double v) { return Tensor({1, 1, 1, 1}, std::vector<double>{v}); }

TEST(ReconLossTest, Examples) {
  std::mt19937_64 rng(1);
  const auto a = random_tensor(rng, {2, 3, 5, 5}, 0, 1);
  EXPECT_EQ(recon_loss(a, a).item(), 0.0);
  EXPECT_NEAR(recon_loss(nn::add_scalar(a, 0.5), a).item(), 0.5, 1e-15);
  const auto b = random_tensor(rng, {2, 3, 5, 5}, 0, 1);
  double brute = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) brute += std::abs(a.values()[i] - b.values()[i]);
  EXPECT_NEAR(recon_loss(a, b).item(), brute / a.numel(), 1e-7);
  EXPECT_THROW(recon_loss(a, random_tensor(rng, {2, 3, 5, 4})), ShapeError);
}

TEST(PerceptLossTest, CompositionalOracleAndIdentity) {
  auto vgg = std::make_shared<VggBackbone>(VggBackbone::seeded({{1, 1}, {4, 6}}, 3));
  FeatureExtractor ex(vgg);
  const FeatureTapSpec tap{Backbone::Vgg19, 2, true};
  std::mt19937_64 rng(2);
  const auto a = testing::random_image(rng, 8, 8), b = testing::random_image(rng, 8, 8);
  const Tensor ta = nn::image_to_tensor(a), tb = nn::image_to_tensor(b);
  EXPECT_EQ(percept_loss(ta, ta, vgg_feature_fn(ex, tap)).item(), 0.0);
  const FeatureMap fa = ex.extract(a, tap), fb = ex.extract(b, tap);
  double oracle = 0.0;
  for (std::size_t i = 0; i < fa.data.size(); ++i) oracle += std::abs(fa.data[i] - fb.data[i]);
  oracle /= static_cast<double>(fa.data.size());
  EXPECT_NEAR(percept_loss(ta, tb, vgg_feature_fn(ex, tap)).item(), oracle, 1e-12);
  const std::vector<FeatureTapSpec> taps{tap, {Backbone::Vgg19, 1, false}};
  const double two = percept_loss(ta, tb, ex, taps).item();
  EXPECT_GT(two, oracle);
}

TEST(PerceptLossTest, GradientMatchesFiniteDifferences) {
  const auto psi = toy_extractor(4);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto raw = random_tensor(rng, {1, 3, 8, 8}, 0, 1);
    auto f = [&](const std::vector<Tensor>& in) { return percept_loss(in[0], raw, psi); };
    EXPECT_LT(grad_check(f, {random_tensor(rng, {1, 3, 8, 8}, 0, 1)}).rel_error, 1e-3);
  }
}

TEST(DiscObjectiveTest, VanillaClosedForms) {
  const Tensor half = scalar4(0.0);
  EXPECT_NEAR(disc_objective(half, half, AdvLossKind::Vanilla).item(), 2 * std::log(0.5), 1e-12);
  EXPECT_NEAR(disc_objective(half, half, AdvLossKind::Vanilla).item(), -1.3863, 1e-4);
  // Saturated separation: probabilities clamp at 1 - eps and eps.
  const double v = disc_objective(scalar4(80.0), scalar4(-80.0), AdvLossKind::Vanilla).item();
  EXPECT_NEAR(v, 2 * std::log1p(-kProbEps), 1e-12);
  EXPECT_GT(v, -1e-6);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

TEST(DiscObjectiveTest, RelativisticFixedLogits) {
  const Tensor real = scalar4(2.0), fake = scalar4(-1.0);
  // D_ra(R, E) = sig(2 - (-1)), D_ra(E, R) = sig(-1 - 2).
  const double d = std::log(sig(3.0)) + std::log(1.0 - sig(-3.0));
  EXPECT_NEAR(disc_objective(real, fake, AdvLossKind::RelativisticAvg).item(), d, 1e-12);
  const double g = -std::log(1.0 - sig(3.0)) - std::log(sig(-3.0));
  EXPECT_NEAR(gen_adv_objective(real, fake, AdvLossKind::RelativisticAvg).item(), g, 1e-12);
  // Batch means enter the relativistic logits.
  const Tensor r2({2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  const Tensor f2({2, 1, 1, 1}, std::vector<double>{0.0, -2.0});
  const double rm = 2.0, fm = -1.0;
  const double d2 = (std::log(sig(1 - fm)) + std::log(sig(3 - fm))) / 2 +
                    (std::log(1 - sig(0 - rm)) + std::log(1 - sig(-2 - rm))) / 2;
  EXPECT_NEAR(disc_objective(r2, f2, AdvLossKind::RelativisticAvg).item(), d2, 1e-12);
}

TEST(GenAdvObjectiveTest, VanillaClosedForms) {
  EXPECT_NEAR(gen_adv_objective(scalar4(0), scalar4(0), AdvLossKind::Vanilla).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(gen_adv_objective(scalar4(0), scalar4(0), AdvLossKind::Vanilla).item(), 0.6931, 1e-4);
  EXPECT_NEAR(gen_adv_objective(scalar4(0), scalar4(80), AdvLossKind::Vanilla).item(), 0.0, 1e-6);
}

DiscriminatorConfig small_d(bool conditional) {
  DiscriminatorConfig c;
  c.conditional = conditional;
  c.channels = 4;
  c.num_stages = 1;
  return c;
}

TEST(GenAdvLossTest, GradientMatchesFiniteDifferencesBothKinds) {
  std::mt19937_64 rng(5);
  for (auto kind : {AdvLossKind::Vanilla, AdvLossKind::RelativisticAvg}) {
    for (bool cond : {false, true}) {
      Discriminator d(small_d(cond));
      d.init_random(rng);
      const auto raw = random_tensor(rng, {2, 3, 8, 8}, 0, 1);
      const auto comp = random_tensor(rng, {2, 3, 8, 8}, 0, 1);
      auto f = [&](const std::vector<Tensor>& in) {
        return gen_adv_loss(d, in[0], raw, comp, kind, cond);
      };
      const auto r = grad_check(f, {random_tensor(rng, {2, 3, 8, 8}, 0, 1)});
      EXPECT_LT(r.rel_error, 1e-3) << adv_kind_name(kind) << " conditional=" << cond;
    }
  }
}

TEST(DiscLossTest, GradientsStopAtInputs) {
  std::mt19937_64 rng(6);
  Discriminator d(small_d(true));
  d.init_random(rng);
  auto e = random_tensor(rng, {1, 3, 8, 8}, 0, 1);
  e.set_requires_grad();
  const auto r = random_tensor(rng, {1, 3, 8, 8}, 0, 1), c = random_tensor(rng, {1, 3, 8, 8}, 0, 1);
  nn::mul_scalar(disc_loss(d, e, r, c, AdvLossKind::Vanilla, true), -1.0).backward();
  EXPECT_FALSE(e.has_grad());
  bool any = false;
  for (auto& [name, p] : d.parameters()) any |= p.has_grad();
  EXPECT_TRUE(any);
}

TEST(DiscLossTest, ConditionalFlagMustMatch) {
  std::mt19937_64 rng(7);
  Discriminator d(small_d(true));
  const auto x = random_tensor(rng, {1, 3, 8, 8}, 0, 1);
  EXPECT_THROW(disc_loss(d, x, x, x, AdvLossKind::Vanilla, false), Error);
}

TEST(DiscLossTest, GridSearchOptimumSeparatesConditionedPairs) {
  // D_t(x | c) = sigmoid(k (||x - c||_1 / n - t)): raw pairs sit farther from
  // their condition than enhanced pairs, so the best threshold separates them.
  std::mt19937_64 rng(8);
  std::vector<double> raw_gap, enh_gap;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 6; ++i) {
    raw_gap.push_back(0.3 + 0.2 * u(rng));
    enh_gap.push_back(0.05 + 0.15 * u(rng));
  }
  const double k = 200.0;
  double best = -1e300, best_t = 0.0;
  for (int g = 0; g <= 1000; ++g) {
    const double t = g / 1000.0 * 0.6;
    std::vector<double> rl, fl;
    for (double v : raw_gap) rl.push_back(k * (v - t));
    for (double v : enh_gap) fl.push_back(k * (v - t));
    const double obj = disc_objective(Tensor({6, 1, 1, 1}, rl), Tensor({6, 1, 1, 1}, fl),
                                      AdvLossKind::Vanilla).item();
    if (obj > best) {
      best = obj;
      best_t = t;
    }
  }
  EXPECT_GT(best_t, *std::max_element(enh_gap.begin(), enh_gap.end()));
  EXPECT_LT(best_t, *std::min_element(raw_gap.begin(), raw_gap.end()));
  EXPECT_GT(best, -0.05);
}

TEST(DomainDivTest, BoundaryCases) {
  const auto psi = toy_extractor(9);
  std::mt19937_64 rng(10);
  const auto r = random_tensor(rng, {2, 3, 8, 8}, 0, 1), c = random_tensor(rng, {2, 3, 8, 8}, 0, 1);
  const auto at_raw = domain_div_loss(r, r, c, psi);
  EXPECT_EQ(at_raw.d_ce, at_raw.d_cr);
  EXPECT_EQ(at_raw.loss.item(), 0.0);
  const auto at_comp = domain_div_loss(c, r, c, psi);
  EXPECT_EQ(at_comp.d_ce, 0.0);
  EXPECT_EQ(at_comp.loss.item(), at_comp.d_cr);
}

TEST(DomainDivTest, ScalarToyHinge) {
  const FeatureFn id = [](const Tensor& x) { return x; };
  const auto d = domain_div_loss(scalar4(0.2), scalar4(0.5), scalar4(0.0), id);
  EXPECT_DOUBLE_EQ(d.d_cr, 0.5);
  EXPECT_DOUBLE_EQ(d.d_ce, 0.2);
  EXPECT_NEAR(d.loss.item(), 0.3, 1e-15);
}

TEST(DomainDivTest, HingePropertiesOnRandomInputs) {
  const auto psi = toy_extractor(11);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    auto e = random_tensor(rng, {1, 3, 6, 6}, 0, 1);
    const auto r = random_tensor(rng, {1, 3, 6, 6}, 0, 1), c = random_tensor(rng, {1, 3, 6, 6}, 0, 1);
    e.set_requires_grad();
    const auto d = domain_div_loss(e, r, c, psi);
    EXPECT_GE(d.loss.item(), 0.0);
    EXPECT_DOUBLE_EQ(d.loss.item(), std::max(0.0, d.d_cr - d.d_ce));
    d.loss.backward();
    if (d.d_ce >= d.d_cr) {
      for (double g : e.grad()) EXPECT_EQ(g, 0.0);
    }
  }
}

TEST(DomainDivTest, GradientStepIncreasesDce) {
  const auto psi = toy_extractor(13);
  std::mt19937_64 rng(14);
  int checked = 0;
  while (checked < 50) {
    const auto r = random_tensor(rng, {1, 3, 6, 6}, 0, 1), c = random_tensor(rng, {1, 3, 6, 6}, 0, 1);
    // Start near the compression domain so the hinge is active.
    std::vector<double> ev(c.values().begin(), c.values().end());
    std::normal_distribution<double> g(0.0, 0.02);
    for (auto& v : ev) v += g(rng);
    Tensor e({1, 3, 6, 6}, ev);
    e.set_requires_grad();
    const auto d = domain_div_loss(e, r, c, psi);
    if (!(d.d_ce < d.d_cr)) continue;
    d.loss.backward();
    std::vector<double> stepped(ev);
    for (std::size_t i = 0; i < ev.size(); ++i) stepped[i] -= 1e-3 * e.grad()[i];
    const auto after = domain_div_loss(Tensor({1, 3, 6, 6}, stepped), r, c, psi);
    EXPECT_GT(after.d_ce, d.d_ce);
    ++checked;
  }
}

TEST(DomainDivTest, OnlyEnhancedReceivesGradient) {
  const auto psi = toy_extractor(15);
  std::mt19937_64 rng(16);
  auto e = random_tensor(rng, {1, 3, 6, 6}, 0, 1), r = random_tensor(rng, {1, 3, 6, 6}, 0, 1);
  auto c = nn::add_scalar(e, 0.0).detach();
  e = nn::add_scalar(c, 0.01).detach();
  for (auto* t : {&e, &r, &c}) t->set_requires_grad();
  const auto d = domain_div_loss(e, r, c, psi);
  ASSERT_LT(d.d_ce, d.d_cr);
  d.loss.backward();
  EXPECT_TRUE(e.has_grad());
  EXPECT_FALSE(r.has_grad());
  EXPECT_FALSE(c.has_grad());
}

TEST(DomainDivTest, GradientMatchesFiniteDifferences) {
  const auto psi = toy_extractor(17);
  std::mt19937_64 rng(18);
  int checked = 0;
  while (checked < 5) {
    const auto r = random_tensor(rng, {1, 3, 8, 8}, 0, 1), c = random_tensor(rng, {1, 3, 8, 8}, 0, 1);
    auto e = nn::add(c, random_tensor(rng, {1, 3, 8, 8}, -0.1, 0.1)).detach();
    if (!(domain_div_loss(e, r, c, psi).d_ce < domain_div_loss(e, r, c, psi).d_cr)) continue;
    auto f = [&](const std::vector<Tensor>& in) { return domain_div_loss(in[0], r, c, psi).loss; };
    EXPECT_LT(grad_check(f, {e}).rel_error, 1e-3);
    ++checked;
  }
}

TEST(GenTotalLossTest, Examples) {
  const auto w = LossWeights::esrgan();
  EXPECT_NEAR(gen_total_loss(LossTerms{1, 1, 1, 1, 0, 0}, w).total, 1.115, 1e-12);
  LossWeights no_reg = w;
  no_reg.lambda_R = 0;
  const LossTerms t{0.3, 0.2, 0.7, 0.9, 0, 0};
  EXPECT_DOUBLE_EQ(gen_total_loss(t, no_reg).total, 1e-2 * 0.3 + 1.0 * 0.2 + 5e-3 * 0.7);
  EXPECT_EQ(gen_total_loss(LossTerms{}, w).total, 0.0);
}

TEST(GenTotalLossTest, NonFiniteComponentIsNamed) {
  LossTerms t{1, 1, 1, 1, 0, 0};
  t.percept = std::nan("");
  try {
    gen_total_loss(t, LossWeights::esrgan());
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss: percept"), std::string::npos);
  }
  t.percept = 1;
  t.domain_div = INFINITY;
  EXPECT_THROW(gen_total_loss(t, LossWeights::esrgan()), NumericError);
}

TEST(GenTotalLossTest, LinearInEachWeight) {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const LossTerms t{u(rng), u(rng), u(rng), u(rng), 0, 0};
    LossWeights base{u(rng), u(rng), u(rng), u(rng)};
    const double t0 = gen_total_loss(t, base).total;
    for (int k = 0; k < 4; ++k) {
      LossWeights w1 = base, w2 = base;
      double* f1[] = {&w1.lambda_r, &w1.lambda_p, &w1.lambda_d, &w1.lambda_R};
      double* f2[] = {&w2.lambda_r, &w2.lambda_p, &w2.lambda_d, &w2.lambda_R};
      *f1[k] += 1.0;
      *f2[k] += 2.0;
      const double d1 = gen_total_loss(t, w1).total - t0, d2 = gen_total_loss(t, w2).total - t0;
      EXPECT_NEAR(d2, 2.0 * d1, 1e-12);
    }
  }
}

TEST(GenTotalLossTest, TensorFormMatchesReport) {
  std::mt19937_64 rng(20);
  const auto psi = toy_extractor(21);
  auto e = random_tensor(rng, {1, 3, 6, 6}, 0, 1);
  const auto r = random_tensor(rng, {1, 3, 6, 6}, 0, 1), c = random_tensor(rng, {1, 3, 6, 6}, 0, 1);
  const auto rec = recon_loss(e, r), per = percept_loss(e, r, psi);
  const auto div = domain_div_loss(e, r, c, psi);
  const auto w = LossWeights::real_esrgan();
  const auto g = gen_total_loss(rec, per, Tensor(), div, w);
  EXPECT_NEAR(g.total.item(), w.lambda_r * rec.item() + w.lambda_p * per.item() + w.lambda_R * div.loss.item(), 1e-12);
  EXPECT_DOUBLE_EQ(g.report.total, g.total.item());
  EXPECT_EQ(g.report.discrim, 0.0);
  EXPECT_EQ(g.report.d_cr, div.d_cr);
}

TEST(LossWeightsTest, PresetsAndValidation) {
  EXPECT_EQ(LossWeights::esrgan(), (LossWeights{1e-2, 1, 5e-3, 1e-1}));
  EXPECT_EQ(LossWeights::real_esrgan(), (LossWeights{1, 1, 1e-1, 1e-1}));
  EXPECT_THROW((LossWeights{-1, 1, 1, 1}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{1, NAN, 1, 1}.validate()), ConfigError);
}

}  // namespace
}  // namespace qe
