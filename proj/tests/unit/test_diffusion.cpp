#include <gtest/gtest.h>

#include <cmath>

#include "../support/fixtures.hpp"
#include "shapeguide/diffusion.hpp"

using namespace shapeguide;

namespace {

using D = Tensor<double>;

struct Moments {
  double mean = 0, var = 0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= v.size();
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= (v.size() - 1);
  return m;
}

}  // namespace

TEST(Schedule, StandardShape) {
  const auto s = NoiseSchedule::standard(128);
  EXPECT_EQ(s.alpha_bar[0], 1.0);
  for (std::size_t t = 1; t <= s.T; ++t) {
    EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
    EXPECT_NEAR(s.alpha[t], 1 - s.beta[t], 1e-15);
  }
  EXPECT_NEAR(s.beta[1], 1e-4 * 1000 / 128, 1e-15);
  EXPECT_NEAR(s.beta[128], 0.02 * 1000 / 128, 1e-15);
  EXPECT_LT(s.alpha_bar[128], 1e-4);
  EXPECT_GT(s.alpha_bar[128], 1e-5);
}

TEST(Schedule, ThousandStepsIsTheUsualLinearRange) {
  const auto a = NoiseSchedule::standard(1000), b = NoiseSchedule::linear(1000, 1e-4, 0.02);
  for (std::size_t t = 0; t <= 1000; ++t) EXPECT_DOUBLE_EQ(a.alpha_bar[t], b.alpha_bar[t]);
}

TEST(Schedule, Errors) {
  EXPECT_THROW(NoiseSchedule::linear(0, 1e-4, 0.02), DiffusionError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.5, 0.1), DiffusionError);
  const auto s = NoiseSchedule::standard(16);
  EXPECT_THROW(s.check_t(0), DiffusionError);
  EXPECT_THROW(s.check_t(17), DiffusionError);
}

TEST(ForwardNoise, MatchesClosedFormMoments) {
  const auto s = NoiseSchedule::standard(64);
  Rng rng(1);
  const std::size_t n = 20000;
  for (std::size_t t : {std::size_t{1}, std::size_t{32}, std::size_t{64}}) {
    const D z0 = D::full(n, 1, 0.7);
    const D eps = D::normal(n, 1, 1.0, rng);
    const auto zt = forward_noise(s, z0, {t}, eps, n);
    const auto m = moments(zt.data());
    const double var = 1 - s.alpha_bar[t];
    EXPECT_NEAR(m.mean, std::sqrt(s.alpha_bar[t]) * 0.7, 4 * std::sqrt(var / n)) << t;
    EXPECT_NEAR(m.var, var, 4 * var * std::sqrt(2.0 / (n - 1))) << t;
  }
}

TEST(ForwardNoise, PerItemTimesteps) {
  const auto s = NoiseSchedule::standard(16);
  const D z0 = D::full(4, 2, 1.0), eps = D::zeros(4, 2);
  const auto zt = forward_noise(s, z0, {1, 16}, eps, 2);
  EXPECT_DOUBLE_EQ(zt.at(0, 0), std::sqrt(s.alpha_bar[1]));
  EXPECT_DOUBLE_EQ(zt.at(3, 1), std::sqrt(s.alpha_bar[16]));
  EXPECT_THROW(forward_noise(s, z0, {1}, eps, 2), DiffusionError);
}

TEST(Strided, EndpointsOrderAndErrors) {
  EXPECT_EQ(strided_timesteps(10, 10), (std::vector<std::size_t>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1}));
  EXPECT_EQ(strided_timesteps(128, 1), std::vector<std::size_t>{128});
  for (std::size_t n = 2; n <= 64; ++n) {
    const auto ts = strided_timesteps(128, n);
    ASSERT_EQ(ts.size(), n);
    EXPECT_EQ(ts.front(), 128u);
    EXPECT_EQ(ts.back(), 1u);
    for (std::size_t i = 1; i < n; ++i) EXPECT_LT(ts[i], ts[i - 1]);
  }
  EXPECT_THROW(strided_timesteps(8, 9), DiffusionError);
  EXPECT_THROW(strided_timesteps(8, 0), DiffusionError);
}

TEST(Cfg, CombineFormula) {
  const D c = D::from(1, 3, {1, 2, 3}), u = D::from(1, 3, {0, 1, 1});
  const auto r = cfg_combine(c, u, 3.0);
  EXPECT_EQ(r.at(0, 0), 3.0);
  EXPECT_EQ(r.at(0, 1), 4.0);
  EXPECT_EQ(r.at(0, 2), 7.0);
  EXPECT_EQ(fixture::linf(cfg_combine(c, u, 1.0).data(), c.data()), 0.0);
}

TEST(Cfg, PredictorUsesEmptyPromptAsUnconditional) {
  Rng rng(2);
  const auto c = fixture::small_config();
  const auto m = Denoiser<double>::backbone(c, rng);
  auto in = fixture::random_input<double>(c, 2, rng);
  in.prompts = {"the legs are taller", "a red chair with thin legs and two arms"};
  in.z_c = D();
  const auto pred = model_predictor(m, D(), 2.5);
  const auto got = pred(in.z_t, in.t, in.prompts);
  const auto cond = m.forward(in);
  auto un = in;
  un.prompts = {"", ""};
  const auto uncond = m.forward(un);
  EXPECT_LE(fixture::linf(got.data(), cfg_combine(cond, uncond, 2.5).data()), 1e-12);
}

// With an oracle x0 predictor, one strided posterior step from z_T lands on
// the forward marginal q(z_t' | x0).
TEST(Sampler, PosteriorStepMatchesForwardMarginal) {
  const auto s = NoiseSchedule::standard(64);
  Rng rng(3);
  const std::size_t n = 20000;
  const D x0 = D::full(n, 1, -0.4);
  const D zT = forward_noise(s, x0, {64}, D::normal(n, 1, 1.0, rng), n);
  D seen;
  Predictor<double> oracle = [&](const D& z, const std::vector<double>& t, const auto&) {
    if (t[0] == 20) seen = z.detach();
    return x0;
  };
  const auto out = denoise_from(oracle, s, zT, {64, 20}, {""}, n, 0.0, rng);
  EXPECT_EQ(fixture::linf(out.data(), x0.data()), 0.0);
  const auto m = moments(seen.data());
  const double var = 1 - s.alpha_bar[20];
  EXPECT_NEAR(m.mean, std::sqrt(s.alpha_bar[20]) * -0.4, 4 * std::sqrt(var / n));
  EXPECT_NEAR(m.var, var, 4 * var * std::sqrt(2.0 / (n - 1)));
}

TEST(Sampler, ClipAndOrdering) {
  const auto s = NoiseSchedule::standard(16);
  Rng rng(4);
  Predictor<double> big = [](const D& z, const auto&, const auto&) { return D::full(z.rows(), z.cols(), 5.0); };
  const auto out = denoise_from(big, s, D::zeros(2, 2), {16, 8, 1}, {""}, 2, 1.5, rng);
  for (double v : out.data()) EXPECT_EQ(v, 1.5);
  EXPECT_THROW(denoise_from(big, s, D::zeros(2, 2), {8, 8}, {""}, 2, 0.0, rng), DiffusionError);
}

TEST(Sampler, SeededSamplesReproduce) {
  Rng init(5);
  const auto c = fixture::small_config();
  const auto m = Denoiser<double>::backbone(c, init);
  const auto s = NoiseSchedule::standard(c.n_steps);
  SampleOptions o;
  o.n_steps = 8;
  o.cfg_scale = 2.0;
  Rng a(9), b(9);
  const auto x = sample(m, s, {"a red chair with thin legs and two arms"}, D(), o, a);
  const auto y = sample(m, s, {"a red chair with thin legs and two arms"}, D(), o, b);
  EXPECT_EQ(fixture::linf(x.data(), y.data()), 0.0);
  auto cond = Denoiser<double>::from_pretrained(Variant::CrossEntity, m, init);
  EXPECT_THROW(sample(cond, s, {""}, D(), o, a), ModelError);
}

TEST(Sdedit, StrengthControlsStartingPoint) {
  Rng init(6);
  const auto c = fixture::small_config();
  const auto m = Denoiser<double>::backbone(c, init);
  const auto s = NoiseSchedule::standard(c.n_steps);
  const D zc = D::normal(c.n_latent, c.latent_dim, 1.0, init);
  SampleOptions o;
  o.n_steps = 8;
  Rng rng(1);
  EXPECT_EQ(fixture::linf(sdedit_sample(m, s, zc, {""}, 0.01, o, rng).data(), zc.data()), 0.0);
  EXPECT_THROW(sdedit_sample(m, s, zc, {""}, 0.0, o, rng), DiffusionError);
  EXPECT_THROW(sdedit_sample(m, s, zc, {""}, 1.5, o, rng), DiffusionError);
  const auto out = sdedit_sample(m, s, zc, {""}, kDefaultSdeditStrength, o, rng);
  EXPECT_EQ(out.rows(), zc.rows());
}

TEST(Loss, ZeroWhenPredictionIsExact) {
  Rng rng(7);
  const auto c = fixture::micro_config();
  auto m = Denoiser<double>::backbone(c, rng);
  // final.out with zero weight and a bias equal to the constant target.
  for (auto& v : m.param("final.out.weight").mutable_data()) v = 0;
  for (auto& v : m.param("final.out.bias").mutable_data()) v = 0.25;
  const auto s = NoiseSchedule::standard(c.n_steps);
  TrainingBatch<double> batch{D::full(2 * c.n_latent, c.latent_dim, 0.25), {"", ""}, D()};
  EXPECT_EQ(training_loss(m, s, batch, rng).item(), 0.0);
}
