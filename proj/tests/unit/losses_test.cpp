#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cyclecap/autodiff/grad_check.hpp"
#include "cyclecap/losses/losses.hpp"
#include "test_util.hpp"

namespace cyclecap::losses {
namespace {

using ad::Tensor;
using test_support::random_tensor;

constexpr int kSeeds = 20;

Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({n}, std::move(v));
}

// KL(N(mu, s2) || N(0, 1)) by composite Simpson over +-14 standard deviations.
double kl_quadrature(double mu, double s2) {
  const double s = std::sqrt(s2);
  const double lo = mu - 14 * s, hi = mu + 14 * s;
  const int n = 40000;
  const double h = (hi - lo) / n;
  auto f = [&](double x) {
    const double lp = -0.5 * (x - mu) * (x - mu) / s2 - 0.5 * std::log(2 * M_PI * s2);
    const double lq = -0.5 * x * x - 0.5 * std::log(2 * M_PI);
    return std::exp(lp) * (lp - lq);
  };
  double acc = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 ? 4 : 2);
  return acc * h / 3;
}

TEST(AdversarialLosses, ClosedFormValues) {
  EXPECT_NEAR(g_y_loss(vec({0.5})).item(), 0.0, 1e-15);
  EXPECT_NEAR(g_y_loss(vec({0.9})).item(), -std::log(9.0), 1e-12);
  EXPECT_NEAR(d_y_loss(vec({0.5}), vec({0.5})).item(), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(d_x_loss(vec({0.5}), vec({0.5})).item(), 2 * std::log(2.0), 1e-12);
  LossWeights w;
  EXPECT_NEAR(g_x_loss(vec({0.5}), vec({0.0}), vec({0.0}), w).item(), -std::log(2.0), 1e-12);
}

TEST(AdversarialLosses, DefaultWeights) {
  LossWeights w;
  EXPECT_EQ(w.lambda_kl, 2.0);
  EXPECT_EQ(w.lambda1, 1.0);
  EXPECT_EQ(w.lambda2, 1000.0);
  EXPECT_EQ(w.lambda3, 0.01);
  w.lambda3 = -1;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(AdversarialLosses, BatchMeanOfPerSampleTerms) {
  const double a = 0.3, b = 0.8, c = 0.6, d = 0.1;
  const double expect = -0.5 * (std::log(a) + std::log(1 - c) + std::log(b) + std::log(1 - d));
  EXPECT_NEAR(d_y_loss(vec({a, b}), vec({c, d})).item(), expect, 1e-12);
  EXPECT_THROW(d_y_loss(vec({a, b}), vec({c})), ad::ShapeError);
}

TEST(AdversarialLosses, ClampKeepsSaturatedScoresFinite) {
  auto real = Tensor<double>({2}, {0.0, 1.0}, true);
  auto fake = Tensor<double>({2}, {1.0, 0.0}, true);
  auto l = d_y_loss(real, fake);
  ad::backward(l);
  EXPECT_TRUE(std::isfinite(l.item()));
  EXPECT_NEAR(l.item(), -0.5 * (std::log(1e-7) + std::log(1e-7) + 2 * std::log(1 - 1e-7)), 1e-9);
  for (double g : real.grad()) EXPECT_TRUE(std::isfinite(g));
  EXPECT_TRUE(std::isfinite(g_y_loss(vec({0.0, 1.0})).item()));
}

TEST(KlDivergence, ExactZeroAndUnitShift) {
  EXPECT_EQ(kl_diag_gauss(vec({0, 0, 0}), vec({0, 0, 0})).item(), 0.0);
  EXPECT_NEAR(kl_diag_gauss(vec({1}), vec({0})).item(), 0.5, 1e-15);
  EXPECT_THROW(kl_diag_gauss(vec({1, 2}), vec({0})), ad::ShapeError);
}

TEST(KlDivergence, MatchesQuadratureOnRandomDraws) {
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> mu_d(-2, 2), lv_d(std::log(0.1), std::log(5.0));
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const double mu = mu_d(rng), lv = lv_d(rng);
    const double got = kl_diag_gauss(vec({mu}), vec({lv})).item();
    worst = std::max(worst, std::abs(got - kl_quadrature(mu, std::exp(lv))));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(KlDivergence, SumsDimensionsAndAveragesBatch) {
  std::mt19937_64 rng(5);
  auto mu = random_tensor<double>({3, 4}, rng);
  auto lv = random_tensor<double>({3, 4}, rng);
  double expect = 0;
  for (std::size_t i = 0; i < 12; ++i) expect += kl_quadrature(mu.at(i), std::exp(lv.at(i)));
  EXPECT_NEAR(kl_diag_gauss(mu, lv).item(), expect / 3, 1e-4);
}

// Straight-line reimplementation of the three cycle terms.
double cycle_oracle(const Tensor<double>& x, const Tensor<double>& xr, const Tensor<double>& fx,
                    const Tensor<double>& fr, const Tensor<double>& logits, const Tensor<double>& ref,
                    const LossWeights& w) {
  double pix = 0, feat = 0, text = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) pix += std::abs(xr.at(i) - x.at(i));
  for (std::size_t i = 0; i < fx.numel(); ++i) feat += std::abs(fr.at(i) - fx.at(i));
  const std::size_t b = logits.dim(0), t = logits.dim(1), v = logits.dim(2);
  for (std::size_t n = 0; n < b * t; ++n) {
    double mx = -1e300;
    for (std::size_t k = 0; k < v; ++k) mx = std::max(mx, logits.at(n * v + k));
    double z = 0;
    for (std::size_t k = 0; k < v; ++k) z += std::exp(logits.at(n * v + k) - mx);
    for (std::size_t k = 0; k < v; ++k) text -= ref.at(n * v + k) * (logits.at(n * v + k) - mx - std::log(z));
  }
  return w.lambda1 * pix / x.numel() + w.lambda2 * feat / fx.numel() + w.lambda3 * text / b;
}

Tensor<double> random_one_hot(std::size_t b, std::size_t t, std::size_t v, std::mt19937_64& rng) {
  std::vector<double> out(b * t * v, 0.0);
  std::uniform_int_distribution<std::size_t> pick(0, v - 1);
  for (std::size_t n = 0; n < b * t; ++n) out[n * v + pick(rng)] = 1.0;
  return Tensor<double>({b, t, v}, std::move(out));
}

TEST(CycleLoss, MatchesStraightLineOracle) {
  LossWeights w;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(300 + seed);
    auto x = random_tensor<double>({2, 3, 4, 4}, rng);
    auto xr = random_tensor<double>({2, 3, 4, 4}, rng);
    auto fx = random_tensor<double>({2, 8}, rng, 0.0, 1.0);
    auto fr = random_tensor<double>({2, 8}, rng, 0.0, 1.0);
    auto logits = random_tensor<double>({2, 5, 7}, rng, -3.0, 3.0);
    auto ref = random_one_hot(2, 5, 7, rng);
    auto terms = cycle_loss(x, xr, fx, fr, logits, ref, w);
    EXPECT_NEAR(terms.total.item(), cycle_oracle(x, xr, fx, fr, logits, ref, w), 1e-10);
  }
}

TEST(CycleLoss, VanishesOnPerfectReconstruction) {
  std::mt19937_64 rng(2);
  auto x = random_tensor<double>({1, 3, 4, 4}, rng);
  auto f = random_tensor<double>({1, 8}, rng);
  auto ref = random_one_hot(1, 5, 7, rng);
  auto logits = ad::scale(ref, 60.0);
  auto terms = cycle_loss(x, x, f, f, logits, ref, LossWeights{});
  EXPECT_EQ(terms.pixel.item(), 0.0);
  EXPECT_EQ(terms.feature.item(), 0.0);
  EXPECT_LT(terms.text.item(), 1e-20);
  EXPECT_LT(terms.total.item(), 1e-20);

  // Any wrong token keeps it away from zero.
  auto wrong = Tensor<double>(ref.shape(), std::vector<double>(ref.data().begin(), ref.data().end()));
  auto bad_logits = ad::scale(ad::sub(Tensor<double>::full(ref.shape(), 1.0), ref), 60.0);
  EXPECT_GT(cycle_loss(x, x, f, f, bad_logits, wrong, LossWeights{}).total.item(), 1.0);
}

TEST(CycleLoss, UndefinedDirectionContributesNothing) {
  std::mt19937_64 rng(8);
  auto logits = random_tensor<double>({2, 3, 5}, rng);
  auto ref = random_one_hot(2, 3, 5, rng);
  auto only_text = cycle_loss<double>({}, {}, {}, {}, logits, ref, LossWeights{});
  EXPECT_NEAR(only_text.total.item(), 0.01 * sequence_cross_entropy(logits, ref).item(), 1e-14);
  EXPECT_FALSE(only_text.pixel.defined());
}

TEST(CycleLoss, EncoderOverloadUsesFrozenFeatures) {
  auto cfg = models::ModelConfig::smoke(9);
  cfg.image_size = 8;
  cfg.fie_channels1 = 3;
  cfg.fie_channels2 = 4;
  cfg.fie_channels3 = 4;
  Rng init(4);
  models::ImageEncoder<double> fie(cfg, init);
  std::mt19937_64 rng(6);
  auto x = random_tensor<double>({2, 3, 8, 8}, rng);
  auto xr = random_tensor<double>({2, 3, 8, 8}, rng);
  auto logits = random_tensor<double>({2, 4, 9}, rng);
  std::vector<models::Caption> caps{{{5, 6, 0, 0}}, {{7, 3, 4, 0}}};
  EXPECT_THROW(cycle_loss(x, xr, logits, caps, fie, LossWeights{}), std::logic_error);
  fie.freeze();
  auto a = cycle_loss(x, xr, logits, caps, fie, LossWeights{});
  auto b = cycle_loss(x, xr, fie.features(x), fie.features(xr), logits, models::one_hot<double>(caps, 9),
                      LossWeights{});
  EXPECT_EQ(a.total.item(), b.total.item());
}

TEST(SequenceCrossEntropy, MaskStopsAfterFirstEos) {
  std::vector<models::Caption> caps{{{5, 0, 0, 0}}, {{4, 6, 7, 3}}};
  auto ref = models::one_hot<double>(caps, 8);
  auto mask = until_eos_mask(ref);
  EXPECT_EQ(std::vector<double>(mask.data().begin(), mask.data().end()), (std::vector<double>{1, 1, 0, 0, 1, 1, 1, 1}));
  std::mt19937_64 rng(1);
  auto logits = random_tensor<double>({2, 4, 8}, rng);
  auto full = sequence_cross_entropy(logits, ref).item();
  auto masked = sequence_cross_entropy(logits, ref, &mask).item();
  EXPECT_LT(masked, full);
  auto dropped = ad::slice(logits, 1, 2, 4);
  auto first = ad::slice(ad::slice(ref, 0, 0, 1), 1, 2, 4);
  EXPECT_NEAR(full - masked, sequence_cross_entropy(ad::slice(dropped, 0, 0, 1), first).item() / 2, 1e-12);
}

TEST(Totals, ZeroAdditivityAndNoCycle) {
  Components<double> zero{Tensor<double>::scalar(0), Tensor<double>::scalar(0), Tensor<double>::scalar(0),
                          Tensor<double>::scalar(0), Tensor<double>::scalar(0)};
  auto z = total_losses(zero, true);
  EXPECT_EQ(z.v_d.item(), 0.0);
  EXPECT_EQ(z.v_g.item(), 0.0);

  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 10; ++i) {
    const double dy = u(rng), dx = u(rng), gy = u(rng), gx = u(rng), cy = u(rng);
    Components<double> c{Tensor<double>::scalar(dy), Tensor<double>::scalar(dx), Tensor<double>::scalar(gy),
                         Tensor<double>::scalar(gx), Tensor<double>::scalar(cy)};
    auto t = total_losses(c, true);
    EXPECT_NEAR(t.v_d.item(), dy + dx, 1e-12);
    EXPECT_NEAR(t.v_g.item(), gy + gx + cy, 1e-12);
    auto off = total_losses(c, false);
    c.cycle = Tensor<double>::scalar(u(rng) * 1e6);
    EXPECT_EQ(total_losses(c, false).v_g.item(), off.v_g.item());
    EXPECT_NEAR(off.v_g.item(), gy + gx, 1e-12);
  }
}

TEST(Totals, NoCycleSendsNoGradientToCycleInputs) {
  auto cyc = Tensor<double>::scalar(2.0, true);
  auto gy = Tensor<double>::scalar(1.0, true);
  Components<double> c;
  c.g_y = gy;
  c.cycle = ad::scale(cyc, 3.0);
  ad::backward(total_losses(c, false).v_g);
  EXPECT_FALSE(cyc.has_grad() && cyc.grad()[0] != 0.0);
  EXPECT_EQ(gy.grad()[0], 1.0);
}

// Gradient suite: 20 seeds per loss, scores kept inside (0.05, 0.95).
TEST(LossGradients, AdversarialTerms) {
  LossWeights w;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    auto real = random_tensor<double>({4}, rng, 0.05, 0.95);
    auto fake = random_tensor<double>({4}, rng, 0.05, 0.95);
    auto mu = random_tensor<double>({4, 3}, rng);
    auto lv = random_tensor<double>({4, 3}, rng);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& s) { return d_y_loss(s, fake); }, real), 1e-4);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& s) { return d_x_loss(real, s); }, fake), 1e-4);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& s) { return g_y_loss(s); }, fake), 1e-4);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& s) { return g_x_loss(s, mu, lv, w); }, fake), 1e-4);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& m) { return g_x_loss(fake, m, lv, w); }, mu), 1e-4);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& l) { return kl_diag_gauss(mu, l); }, lv), 1e-4);
  }
}

TEST(LossGradients, CycleTerms) {
  LossWeights w;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(2000 + seed);
    auto x = random_tensor<double>({2, 3, 4, 4}, rng);
    // Offsets bounded away from zero keep |.| differentiable at the probe.
    auto xr = ad::add(x, test_support::away_from_zero({2, 3, 4, 4}, rng, 0.05, 0.5));
    auto fx = random_tensor<double>({2, 8}, rng);
    auto fr = ad::add(fx, test_support::away_from_zero({2, 8}, rng, 0.05, 0.5));
    auto logits = random_tensor<double>({2, 5, 7}, rng, -2.0, 2.0);
    auto ref = random_one_hot(2, 5, 7, rng);
    auto mask = until_eos_mask(ref);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& p) { return cycle_loss(x, p, fx, fr, logits, ref, w).total; },
                             xr.detach()),
              1e-4);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& p) { return cycle_loss(x, xr, fx, p, logits, ref, w).total; },
                             fr.detach()),
              1e-4);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& p) { return cycle_loss(x, xr, fx, fr, p, ref, w).total; },
                             logits),
              1e-4);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& p) { return sequence_cross_entropy(p, ref, &mask); }, logits),
              1e-4);
  }
}

}  // namespace
}  // namespace cyclecap::losses
