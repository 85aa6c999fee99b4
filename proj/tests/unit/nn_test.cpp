#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cyclecap/autodiff/grad_check.hpp"
#include "cyclecap/nn/layers.hpp"
#include "svd_oracle.hpp"
#include "test_util.hpp"

using namespace cyclecap;
using ad::Tensor;
using test_support::probe_weights;
using test_support::random_tensor;
using test_support::top_singular_value;
using test_support::weighted_sum;

namespace {

std::vector<double> to_vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

TEST(SvdOracle, DiagonalAndRankOne) {
  auto sv = test_support::jacobi_singular_values({3, 0, 0, 0, 1, 0, 0, 0, 2}, 3, 3);
  EXPECT_NEAR(sv[0], 3, 1e-12);
  EXPECT_NEAR(sv[1], 2, 1e-12);
  EXPECT_NEAR(sv[2], 1, 1e-12);
  // u v^T with |u| = sqrt(5), |v| = 5
  EXPECT_NEAR(top_singular_value({3, 4, 6, 8}, 2, 2), std::sqrt(5.0) * 5, 1e-12);
}

TEST(SpectralNorm, IdentityIsFixed) {
  Rng rng(1);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  std::vector<double> u{0.5, 0.5, 0.5, 0.5};
  auto est = nn::power_iteration<double>(eye, 4, 4, u, 1);
  EXPECT_NEAR(est.sigma, 1.0, 1e-12);
  auto w = nn::spectral_normalize(Tensor<double>({4, 4}, eye), est);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(w.at(i), eye[i], 1e-12);
}

TEST(SpectralNorm, DiagonalCase) {
  std::vector<double> w{3, 0, 0, 1};
  std::vector<double> aligned{1, 0};
  EXPECT_DOUBLE_EQ(nn::power_iteration<double>(w, 2, 2, aligned, 1).sigma, 3.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> u{n(rng), n(rng)};
    const double len = std::hypot(u[0], u[1]);
    u[0] /= len;
    u[1] /= len;
    EXPECT_NEAR(nn::power_iteration<double>(w, 2, 2, u, 50).sigma, 3.0, 1e-3);
  }
}

TEST(SpectralNorm, RandomMatrixMatchesJacobiOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto w = random_tensor<double>({16, 16}, rng);
    auto u = to_vec(random_tensor<double>({16}, rng));
    double len = 0;
    for (double x : u) len += x * x;
    for (double& x : u) x /= std::sqrt(len);
    const double oracle = top_singular_value(to_vec(w), 16, 16);
    auto converged = nn::power_iteration_converged<double>(w.data(), 16, 16, u);
    EXPECT_NEAR(converged.sigma, oracle, 1e-3);
    auto normalized = nn::spectral_normalize(w, converged);
    EXPECT_LE(top_singular_value(to_vec(normalized), 16, 16), 1.0 + 1e-3);
  }
}

TEST(SpectralNorm, HundredIterationsOnWellSeparatedSpectrum) {
  // Random 16x16 plus a rank-one spike so the top gap makes 100 rounds enough.
  std::mt19937_64 rng(5);
  auto a = random_tensor<double>({16, 16}, rng);
  auto p = to_vec(random_tensor<double>({16}, rng));
  auto q = to_vec(random_tensor<double>({16}, rng));
  auto w = to_vec(a);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) w[r * 16 + c] += p[r] * q[c];
  std::vector<double> u(16, 0.25);
  EXPECT_NEAR(nn::power_iteration<double>(w, 16, 16, u, 100).sigma, top_singular_value(w, 16, 16), 1e-3);
}

TEST(SpectralNorm, ZeroMatrixIsFlagged) {
  std::vector<double> w(6, 0.0);
  std::vector<double> u{1, 0};
  auto est = nn::power_iteration<double>(w, 2, 3, u, 3);
  EXPECT_TRUE(est.degenerate);
  EXPECT_GT(est.sigma, 0.0);
  auto out = nn::spectral_normalize(Tensor<double>({2, 3}, w), est);
  for (double x : out.data()) EXPECT_TRUE(std::isfinite(x));
}

TEST(SpectralNorm, PersistentVectorAndGradient) {
  Rng rng(3);
  nn::SpectralNorm<double> sn(4, rng);
  std::mt19937_64 g(3);
  auto w = random_tensor<double>({4, 6}, g);
  const auto u0 = to_vec(sn.u());
  sn.apply(w, nn::Mode::train);
  EXPECT_NE(to_vec(sn.u()), u0);
  const auto u1 = to_vec(sn.u());
  sn.apply(w, nn::Mode::eval);
  EXPECT_EQ(to_vec(sn.u()), u1);

  // u and v are constants of the op, so probe with a frozen estimate.
  auto est = nn::power_iteration<double>(w.data(), 4, 6, sn.u().data(), 3);
  auto probe = probe_weights({4, 6}, g);
  auto f = [&](const Tensor<double>& x) {
    auto e = est;  // sigma recomputed as u^T x v, matching the op's derivative model
    e.sigma = 0;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 6; ++c) e.sigma += e.u[r] * x.at(r * 6 + c) * e.v[c];
    return weighted_sum(nn::spectral_normalize(x, e), probe);
  };
  auto x = w.clone();
  x.set_requires_grad(true);
  EXPECT_LT(ad::grad_check(f, x), 1e-4);
}

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  Rng rng(1);
  nn::LstmCell<double> cell(3, 5, rng);
  for (auto* t : {&cell.w_input, &cell.w_hidden, &cell.bias})
    for (auto& v : t->mutable_data()) v = 0;
  std::mt19937_64 g(2);
  auto x = random_tensor<double>({2, 3}, g);
  auto from_zero = cell.step(x, nn::LstmState<double>::zeros(2, 5));
  for (double h : from_zero.hidden.data()) EXPECT_EQ(h, 0.0);
}

TEST(Lstm, PureAndRejectsMismatch) {
  Rng rng(1);
  nn::LstmCell<double> cell(3, 4, rng);
  std::mt19937_64 g(2);
  auto x = random_tensor<double>({2, 3}, g);
  auto s = nn::LstmState<double>::zeros(2, 4);
  EXPECT_EQ(to_vec(cell.step(x, s).hidden), to_vec(cell.step(x, s).hidden));
  EXPECT_THROW(cell.step(random_tensor<double>({3, 3}, g), s), ad::ShapeError);
  EXPECT_THROW(cell.step(random_tensor<double>({2, 2}, g), s), ad::ShapeError);
}

TEST(Lstm, GradientThroughThreeSteps) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    nn::LstmCell<double> cell(3, 4, rng);
    std::mt19937_64 g(seed);
    auto x = random_tensor<double>({2, 3}, g);
    auto f = [&](const Tensor<double>& in) {
      auto s = nn::LstmState<double>::zeros(2, 4);
      for (int t = 0; t < 3; ++t) s = cell.step(in, s);
      return ad::mean(s.hidden);
    };
    EXPECT_LT(ad::grad_check(f, x), 1e-4) << "seed " << seed;
  }
}

TEST(BiLstm, OutputDimensionAndWrongLength) {
  Rng rng(1);
  nn::BiLstmEncoder<double> enc(7, 5, 6, 4, rng);
  std::mt19937_64 g(1);
  auto tokens = ad::softmax(random_tensor<double>({3, 4, 7}, g), 2);
  auto out = enc.encode(tokens);
  EXPECT_EQ(out.shape(), (ad::Shape{3, 12}));
  EXPECT_EQ(enc.output_dim(), 12u);
  EXPECT_THROW(enc.encode(ad::softmax(random_tensor<double>({3, 5, 7}, g), 2)), ad::ShapeError);
}

TEST(BiLstm, ReversalSwapsHalvesWithSwappedCells) {
  Rng rng(4);
  nn::BiLstmEncoder<double> enc(6, 3, 5, 4, rng);
  nn::BiLstmEncoder<double> swapped = enc;
  std::swap(swapped.forward_cell, swapped.backward_cell);
  std::mt19937_64 g(9);
  auto tokens = ad::softmax(random_tensor<double>({2, 4, 6}, g), 2);
  std::vector<Tensor<double>> steps;
  for (std::size_t t = 4; t-- > 0;) steps.push_back(ad::slice(tokens, 1, t, t + 1));
  auto reversed = ad::concat(steps, 1);
  auto a = enc.encode(tokens);
  auto b = swapped.encode(reversed);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(a.at(n * 10 + i), b.at(n * 10 + 5 + i), 1e-14);
      EXPECT_NEAR(a.at(n * 10 + 5 + i), b.at(n * 10 + i), 1e-14);
    }
}

TEST(BiLstm, GradientWrtSoftTokens) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    nn::BiLstmEncoder<double> enc(5, 3, 4, 3, rng);
    std::mt19937_64 g(seed);
    auto tokens = ad::softmax(random_tensor<double>({2, 3, 5}, g), 2).detach();
    auto w = probe_weights({2, 8}, g);
    auto f = [&](const Tensor<double>& x) { return weighted_sum(enc.encode(x), w); };
    EXPECT_LT(ad::grad_check(f, tokens), 1e-4) << "seed " << seed;
  }
}

TEST(BatchNorm, ConstantChannelGivesShift) {
  nn::BatchNorm<double> bn(2);
  bn.beta.mutable_data()[0] = 0.7;
  bn.beta.mutable_data()[1] = -0.2;
  bn.gamma.mutable_data()[0] = 3.0;
  Tensor<double> x({3, 2}, {5, 1, 5, 2, 5, 3});
  auto y = bn.forward(x, nn::Mode::train);
  for (int n = 0; n < 3; ++n) EXPECT_NEAR(y.at(n * 2), 0.7, 1e-12);
}

TEST(BatchNorm, TrainModeStandardizes) {
  nn::BatchNorm<double> bn(3);
  std::mt19937_64 g(2);
  auto x = random_tensor<double>({4, 3, 5, 5}, g, -3.0, 7.0);
  auto y = bn.forward(x, nn::Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t s = 0; s < 25; ++s) mean += y.at((n * 3 + c) * 25 + s);
    mean /= 100;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t s = 0; s < 25; ++s) var += std::pow(y.at((n * 3 + c) * 25 + s) - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(var / 100, 1.0, 1e-3);
  }
  EXPECT_NE(bn.running_mean.at(0), 0.0);
}

TEST(BatchNorm, RejectsSingleSampleInTraining) {
  nn::BatchNorm<double> bn(2);
  Tensor<double> x({1, 2}, {1, 2});
  EXPECT_THROW(bn.forward(x, nn::Mode::train), std::invalid_argument);
  EXPECT_NO_THROW(bn.forward(x, nn::Mode::eval));
}

TEST(BatchNorm, GradientBothModes) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 g(seed);
    nn::BatchNorm<double> bn(2);
    for (auto& v : bn.gamma.mutable_data()) v = std::uniform_real_distribution<double>(0.5, 2)(g);
    auto x = random_tensor<double>({3, 2, 2, 2}, g);
    auto w = probe_weights({3, 2, 2, 2}, g);
    for (auto mode : {nn::Mode::train, nn::Mode::eval}) {
      auto f = [&](const Tensor<double>& in) { return weighted_sum(bn.forward(in, mode), w); };
      EXPECT_LT(ad::grad_check(f, x), 1e-4) << "seed " << seed;
    }
    auto fg = [&](const Tensor<double>& gamma) {
      nn::BatchNorm<double> copy = bn;
      copy.gamma = gamma;
      return weighted_sum(copy.forward(x, nn::Mode::train), w);
    };
    EXPECT_LT(ad::grad_check(fg, bn.gamma.clone()), 1e-4);
  }
}

TEST(Layers, LinearAndConvGradients) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::mt19937_64 g(seed);
    nn::Linear<double> lin(4, 3, rng, true);
    auto x = random_tensor<double>({2, 4}, g);
    auto w = probe_weights({2, 3}, g);
    auto f = [&](const Tensor<double>& in) { return weighted_sum(lin.forward(in, nn::Mode::eval), w); };
    EXPECT_LT(ad::grad_check(f, x), 1e-4);

    nn::Conv2d<double> conv(2, 3, 3, {2, 1}, rng, true);
    auto img = random_tensor<double>({1, 2, 6, 6}, g);
    auto wc = probe_weights({1, 3, 3, 3}, g);
    auto fc = [&](const Tensor<double>& in) { return weighted_sum(conv.forward(in, nn::Mode::eval), wc); };
    EXPECT_LT(ad::grad_check(fc, img), 1e-4);

    nn::ConvTranspose2d<double> deconv(2, 1, 4, {2, 1}, rng);
    auto wd = probe_weights({1, 1, 12, 12}, g);
    auto fd = [&](const Tensor<double>& in) { return weighted_sum(deconv.forward(in), wd); };
    EXPECT_LT(ad::grad_check(fd, img), 1e-4);
  }
}

TEST(Layers, ParamsHaveUniqueNames) {
  Rng rng(1);
  nn::Linear<double> lin(4, 3, rng, true);
  nn::BatchNorm<double> bn(3);
  nn::LayerParams<double> p;
  lin.collect("lin.", p);
  bn.collect("bn.", p);
  auto named = p.by_name();
  EXPECT_EQ(named.size(), 7u);
  EXPECT_TRUE(named.count("lin.sn_u"));
  lin.collect("lin.", p);
  EXPECT_THROW(p.by_name(), std::logic_error);
}

TEST(Layers, CopyValuesAcrossPrecision) {
  Rng r1(1), r2(2);
  nn::Linear<double> a(3, 2, r1);
  nn::Linear<float> b(3, 2, r2);
  nn::LayerParams<double> pa;
  nn::LayerParams<float> pb;
  a.collect("", pa);
  b.collect("", pb);
  nn::copy_values(pb, pa);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_FLOAT_EQ(b.weight.at(i), static_cast<float>(a.weight.at(i)));
}

}  // namespace
