#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "../support/fixtures.hpp"
#include "shapeguide/diffusion.hpp"

using namespace shapeguide;
using fixture::linf;

namespace {

using D = Tensor<double>;

bool starts_with(const std::string& s, std::string_view p) { return s.rfind(p, 0) == 0; }

}  // namespace

TEST(Variant, NamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_EQ(variant_name(Variant::CrossEntity), "cross_entity");
  EXPECT_EQ(variant_name(Variant::QcOnly), "qc_only");
  EXPECT_THROW(parse_variant("spice"), ModelError);
  EXPECT_FALSE(is_conditional(Variant::TextOnly));
  EXPECT_TRUE(is_conditional(Variant::ControlNet));
}

TEST(Tokenizer, VocabularyAndErrors) {
  Tokenizer tok;
  EXPECT_EQ(tok.vocab_size(), vocabulary().size());
  EXPECT_EQ(tok.encode(""), std::vector<std::size_t>{tok.null_index()});
  EXPECT_EQ(tok.encode("a red chair").size(), 3u);
  EXPECT_THROW(tok.encode("a sofa"), ModelError);
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig c = fixture::micro_config();
  c.n_heads = 3;
  Rng rng(1);
  EXPECT_THROW(Denoiser<double>::backbone(c, rng), ModelError);
}

TEST(Backbone, DefaultParameterCount) {
  Rng rng(0);
  const auto m = Denoiser<float>::backbone(BackboneConfig{}, rng);
  EXPECT_EQ(m.parameter_count(), 84352u);
  EXPECT_EQ(m.parameter_count(true), m.parameter_count());
}

TEST(Backbone, ShapeErrors) {
  Rng rng(2);
  const auto c = fixture::micro_config();
  const auto m = Denoiser<double>::backbone(c, rng);
  auto in = fixture::random_input<double>(c, 2, rng);
  in.prompts.pop_back();
  EXPECT_THROW(m.forward(in), ModelError);
  auto cond = Denoiser<double>::from_pretrained(Variant::CrossEntity, m, rng);
  auto in2 = fixture::random_input<double>(c, 2, rng);
  in2.z_c = D();
  EXPECT_THROW(cond.forward(in2), ModelError);
  EXPECT_THROW(Denoiser<double>::from_pretrained(Variant::KCross, cond, rng), ModelError);
}

TEST(Backbone, BatchItemsAreIndependent) {
  Rng rng(3);
  const auto c = fixture::small_config();
  const auto m = Denoiser<double>::backbone(c, rng);
  const auto in = fixture::random_input<double>(c, 3, rng);
  const auto full = m.forward(in);
  for (std::size_t i = 0; i < 3; ++i) {
    DenoiseInput<double> one;
    const std::size_t s = c.n_latent, d = c.latent_dim;
    one.z_t = D::from(s, d, {in.z_t.data().begin() + i * s * d, in.z_t.data().begin() + (i + 1) * s * d});
    one.t = {in.t[i]};
    one.prompts = {in.prompts[i]};
    const auto out = m.forward(one);
    EXPECT_LE(linf(out.data(), full.data().subspan(i * s * d, s * d)), 1e-12);
  }
}

TEST(Variants, ParameterAudit) {
  Rng rng(4);
  const auto c = fixture::small_config();
  const auto base = Denoiser<double>::backbone(c, rng);
  for (Variant v : kAllVariants) {
    const auto m = Denoiser<double>::from_pretrained(v, base, rng);
    EXPECT_EQ(m.variant(), v);
    for (const auto& p : base.params())
      EXPECT_EQ(fixture::linf(m.param(p.name).data(), p.value.data()), 0.0) << p.name;
    const auto added = new_parameter_names(m, base);
    std::set<std::string> kinds;
    for (const auto& n : added) {
      if (n == "guide.input.weight" || n == "guide.input.bias") continue;
      const auto dot = n.rfind('.');
      const auto mid = n.rfind('.', dot - 1);
      kinds.insert(starts_with(n, "ctrl.") ? n.substr(0, 5) : n.substr(mid + 1, dot - mid - 1));
    }
    switch (v) {
      case Variant::TextOnly: EXPECT_TRUE(added.empty()); break;
      case Variant::CrossEntity:
      case Variant::QcOnly: EXPECT_EQ(kinds, (std::set<std::string>{"qc", "zero"})); break;
      case Variant::NoZeroConv: EXPECT_EQ(kinds, (std::set<std::string>{"qc"})); break;
      case Variant::KCross: EXPECT_EQ(kinds, (std::set<std::string>{"kc", "zero"})); break;
      case Variant::VCross: EXPECT_EQ(kinds, (std::set<std::string>{"vc", "zero"})); break;
      case Variant::ControlNet: EXPECT_EQ(kinds, (std::set<std::string>{"ctrl."})); break;
    }
    for (const auto& p : m.params()) {
      const bool is_new = std::find(added.begin(), added.end(), p.name) != added.end();
      // Only the ControlNet-style variant freezes the pretrained weights.
      EXPECT_EQ(p.trainable, is_new || v != Variant::ControlNet) << p.name;
      if (starts_with(p.name, "ctrl.zero") || p.name.find(".zero.") != std::string::npos)
        for (double x : p.value.data()) ASSERT_EQ(x, 0.0) << p.name;
    }
  }
}

TEST(Variants, ControlNetCopiesBlocks) {
  Rng rng(5);
  const auto c = fixture::small_config();
  const auto base = Denoiser<double>::backbone(c, rng);
  const auto m = Denoiser<double>::from_pretrained(Variant::ControlNet, base, rng);
  EXPECT_EQ(linf(m.param("ctrl.blocks.1.mlp.fc.weight").data(),
                 base.param("blocks.1.mlp.fc.weight").data()),
            0.0);
  EXPECT_EQ(m.parameter_count(true), m.parameter_count() - base.parameter_count());
}

// Zero maps make every guided variant reproduce the pretrained model at
// construction; removing them, or replacing the query outright, does not.
TEST(Variants, ZeroInitInvariance) {
  Rng rng(6);
  const auto c = fixture::small_config();
  auto base = Denoiser<double>::backbone(c, rng);
  fixture::randomize(base, rng, 0.3);
  for (Variant v : kAllVariants) {
    const auto m = Denoiser<double>::from_pretrained(v, base, rng);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto in = fixture::random_input<double>(c, 2, rng);
      worst = std::max(worst, linf(m.forward(in).data(), base.forward(in).data()));
    }
    if (v == Variant::NoZeroConv || v == Variant::QcOnly)
      EXPECT_GT(worst, 1e-3) << variant_name(v);
    else
      EXPECT_LE(worst, 1e-12) << variant_name(v);
  }
}

TEST(Variants, GuidanceChangesOutputOnceZeroMapsTrain) {
  Rng rng(7);
  const auto c = fixture::small_config();
  const auto base = Denoiser<double>::backbone(c, rng);
  for (Variant v : {Variant::CrossEntity, Variant::ControlNet, Variant::KCross, Variant::VCross}) {
    auto m = Denoiser<double>::from_pretrained(v, base, rng);
    for (auto& p : m.params())
      if (p.name.find("zero") != std::string::npos)
        for (auto& x : p.value.mutable_data()) x = 0.1 * rng.normal();
    auto in = fixture::random_input<double>(c, 1, rng);
    const auto a = m.forward(in);
    in.z_c = D::normal(in.z_c.rows(), in.z_c.cols(), 1.0, rng);
    EXPECT_GT(linf(a.data(), m.forward(in).data()), 1e-6) << variant_name(v);
  }
}

TEST(Variants, CastPreservesOutputs) {
  Rng rng(8);
  const auto c = fixture::small_config();
  const auto base = Denoiser<double>::backbone(c, rng);
  const auto m = Denoiser<double>::from_pretrained(Variant::CrossEntity, base, rng);
  const auto f = m.cast<float>();
  const auto in = fixture::random_input<double>(c, 2, rng);
  DenoiseInput<float> fin{in.z_t.cast<float>(), in.t, in.prompts, in.z_c.cast<float>()};
  const auto a = m.forward(in);
  const auto b = f.forward(fin).cast<double>();
  EXPECT_LE(linf(a.data(), b.data()), 1e-4);
}

// Full denoising loss against central differences, every parameter of every
// variant with all weights (including zero maps) randomized.
class LossGradient : public ::testing::TestWithParam<int> {};

TEST_P(LossGradient, EveryParameterEveryVariant) {
  Rng rng(GetParam());
  const auto c = fixture::micro_config();
  const auto schedule = NoiseSchedule::standard(c.n_steps);
  const auto base = Denoiser<double>::backbone(c, rng);
  for (Variant v : kAllVariants) {
    auto m = Denoiser<double>::from_pretrained(v, base, rng);
    fixture::randomize(m, rng);
    const std::size_t b = 2;
    TrainingBatch<double> batch;
    batch.z0 = D::normal(b * c.n_latent, c.latent_dim, 1.0, rng);
    batch.z_c = D::normal(b * c.n_latent, c.latent_dim, 1.0, rng);
    batch.prompts = {fixture::random_prompt(rng), fixture::random_prompt(rng)};
    const auto noise = draw_noise<double>(schedule, b, c.n_latent, c.latent_dim, rng);
    for (const auto& p : m.params()) {
      const std::string name = p.name;
      const double err = finite_diff_check(
          [&](const D& x) {
            Denoiser<double> probe = m;
            probe.param(name) = x;
            return training_loss(probe, schedule, batch, noise);
          },
          p.value.detach(), 1e-5);
      EXPECT_LE(err, 1e-4) << variant_name(v) << " " << name;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradient, ::testing::Range(0, 3));

TEST(TimeFeatures, RangeAndDistinctness) {
  const auto a = time_features(1, 8, 128), b = time_features(2, 8, 128);
  EXPECT_EQ(a.size(), 8u);
  for (double x : a) EXPECT_LE(std::abs(x), 1.0);
  EXPECT_GT(linf(a, b), 1e-3);
}
