#pragma once

// Small models and inputs shared by unit and acceptance tests.

#include <string>
#include <vector>

#include "shapeguide/diffusion.hpp"
#include "shapeguide/model.hpp"
#include "shapeguide/shapes.hpp"

namespace fixture {

using namespace shapeguide;

// Two latent tokens plus text and time: four tokens per item.
inline BackboneConfig micro_config() {
  BackboneConfig c;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.d_model = 4;
  c.mlp_ratio = 2;
  c.n_latent = 2;
  c.latent_dim = 3;
  c.n_steps = 16;
  return c;
}

inline BackboneConfig small_config() {
  BackboneConfig c;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.mlp_ratio = 2;
  c.n_latent = 8;
  c.latent_dim = 8;
  c.n_steps = 32;
  return c;
}

inline std::string random_prompt(Rng& rng) {
  const Category c = kAllCategories[rng.below(3)];
  const auto spec = sample_shape(rng, c);
  switch (rng.below(3)) {
    case 0: return "";
    case 1: return render_text(spec);
    default: {
      const auto& attrs = schema(c).attributes;
      return edit_prompt(c, attrs[rng.below(attrs.size())].name, rng.below(2) ? 1 : -1);
    }
  }
}

template <typename Real>
DenoiseInput<Real> random_input(const BackboneConfig& c, std::size_t batch, Rng& rng) {
  DenoiseInput<Real> in;
  in.z_t = Tensor<Real>::normal(batch * c.n_latent, c.latent_dim, Real(1), rng);
  in.z_c = Tensor<Real>::normal(batch * c.n_latent, c.latent_dim, Real(1), rng);
  for (std::size_t i = 0; i < batch; ++i) {
    in.t.push_back(static_cast<double>(1 + rng.below(c.n_steps)));
    in.prompts.push_back(random_prompt(rng));
  }
  return in;
}

// Overwrites every parameter (including zero maps) with N(0, stddev^2) values.
template <typename Real>
void randomize(Denoiser<Real>& m, Rng& rng, double stddev = 0.5) {
  for (auto& p : m.params())
    for (auto& v : p.value.mutable_data()) v = static_cast<Real>(stddev * rng.normal());
}

inline double linf(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace fixture
