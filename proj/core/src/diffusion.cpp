#include "shapeguide/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace shapeguide {

NoiseSchedule NoiseSchedule::linear(std::size_t T, double beta_1, double beta_T) {
  if (T == 0) throw DiffusionError("schedule needs at least one step");
  if (!(beta_1 > 0 && beta_T < 1 && beta_1 <= beta_T))
    throw DiffusionError("betas must satisfy 0 < beta_1 <= beta_T < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  for (std::size_t t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
    s.beta[t] = beta_1 + (beta_T - beta_1) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

NoiseSchedule NoiseSchedule::standard(std::size_t T) {
  const double k = 1000.0 / static_cast<double>(T);
  return linear(T, 1e-4 * k, std::min(0.02 * k, 0.999));
}

void NoiseSchedule::check_t(std::size_t t) const {
  if (t < 1 || t > T)
    throw DiffusionError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

template <typename Real>
Tensor<Real> forward_noise(const NoiseSchedule& s, const Tensor<Real>& z0,
                           const std::vector<std::size_t>& t, const Tensor<Real>& eps,
                           std::size_t rows_per_item) {
  if (z0.shape() != eps.shape()) throw DiffusionError("noise shape differs from latent shape");
  if (rows_per_item == 0 || t.size() * rows_per_item != z0.rows())
    throw DiffusionError("one timestep per item required");
  std::vector<Real> out(z0.size());
  const std::size_t per_item = rows_per_item * z0.cols();
  for (std::size_t b = 0; b < t.size(); ++b) {
    s.check_t(t[b]);
    const Real a = static_cast<Real>(std::sqrt(s.alpha_bar[t[b]]));
    const Real c = static_cast<Real>(std::sqrt(1.0 - s.alpha_bar[t[b]]));
    for (std::size_t i = b * per_item; i < (b + 1) * per_item; ++i)
      out[i] = a * z0.data()[i] + c * eps.data()[i];
  }
  return Tensor<Real>::from(z0.rows(), z0.cols(), std::move(out));
}

template <typename Real>
NoiseDraw<Real> draw_noise(const NoiseSchedule& s, std::size_t batch, std::size_t rows_per_item,
                           std::size_t cols, Rng& rng) {
  NoiseDraw<Real> d;
  d.t.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) d.t.push_back(1 + rng.below(s.T));
  d.eps = Tensor<Real>::normal(batch * rows_per_item, cols, Real(1), rng);
  return d;
}

template <typename Real>
Tensor<Real> training_loss(const Denoiser<Real>& model, const NoiseSchedule& s,
                           const TrainingBatch<Real>& batch, const NoiseDraw<Real>& noise) {
  const std::size_t rows = model.config().n_latent;
  DenoiseInput<Real> in;
  in.z_t = forward_noise(s, batch.z0, noise.t, noise.eps, rows);
  in.t.assign(noise.t.begin(), noise.t.end());
  in.prompts = batch.prompts;
  in.z_c = batch.z_c;
  return mse(model.forward(in), batch.z0);
}

template <typename Real>
Tensor<Real> training_loss(const Denoiser<Real>& model, const NoiseSchedule& s,
                           const TrainingBatch<Real>& batch, Rng& rng) {
  const std::size_t rows = model.config().n_latent;
  const NoiseDraw<Real> noise =
      draw_noise<Real>(s, batch.prompts.size(), rows, batch.z0.cols(), rng);
  return training_loss(model, s, batch, noise);
}

std::vector<std::size_t> strided_timesteps(std::size_t t_max, std::size_t n) {
  if (n == 0) throw DiffusionError("at least one sampling step required");
  if (n > t_max) throw DiffusionError("steps exceed schedule");
  std::vector<std::size_t> ts;
  ts.reserve(n);
  if (n == 1) return {t_max};
  for (std::size_t k = n; k-- > 0;) {
    const double v = 1.0 + static_cast<double>(t_max - 1) * static_cast<double>(k) /
                               static_cast<double>(n - 1);
    ts.push_back(static_cast<std::size_t>(std::llround(v)));
  }
  return ts;
}

template <typename Real>
Tensor<Real> cfg_combine(const Tensor<Real>& cond, const Tensor<Real>& uncond, Real scale) {
  return add(uncond, shapeguide::scale(sub(cond, uncond), scale));
}

template <typename Real>
Predictor<Real> model_predictor(const Denoiser<Real>& model, Tensor<Real> z_c, double cfg_scale) {
  return [&model, z_c, cfg_scale](const Tensor<Real>& z_t, const std::vector<double>& t,
                                  const std::vector<std::string>& prompts) {
    NoGradGuard guard;
    const bool use_c = is_conditional(model.variant());
    if (cfg_scale == 1.0) {
      return model.forward(DenoiseInput<Real>{z_t, t, prompts, use_c ? z_c : Tensor<Real>()});
    }
    std::vector<double> t2 = t;
    t2.insert(t2.end(), t.begin(), t.end());
    std::vector<std::string> p2 = prompts;
    p2.resize(prompts.size() * 2);
    DenoiseInput<Real> in{concat_rows<Real>({z_t, z_t}), t2, p2,
                          use_c ? concat_rows<Real>({z_c, z_c}) : Tensor<Real>()};
    const Tensor<Real> both = model.forward(in);
    const std::size_t half = z_t.rows();
    std::vector<std::size_t> first(half), second(half);
    for (std::size_t i = 0; i < half; ++i) {
      first[i] = i;
      second[i] = half + i;
    }
    return cfg_combine(gather_rows<Real>(both, first), gather_rows<Real>(both, second),
                       static_cast<Real>(cfg_scale));
  };
}

template <typename Real>
Tensor<Real> denoise_from(const Predictor<Real>& predict, const NoiseSchedule& s,
                          Tensor<Real> z, const std::vector<std::size_t>& timesteps,
                          const std::vector<std::string>& prompts, std::size_t rows_per_item,
                          double clip, Rng& rng) {
  if (timesteps.empty()) throw DiffusionError("no timesteps to denoise");
  if (prompts.size() * rows_per_item != z.rows()) throw DiffusionError("one prompt per item required");
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    const std::size_t t = timesteps[i];
    s.check_t(t);
    Tensor<Real> x0 = predict(z, std::vector<double>(prompts.size(), static_cast<double>(t)), prompts);
    if (clip > 0) {
      std::vector<Real> v(x0.data().begin(), x0.data().end());
      for (Real& e : v) e = std::clamp(e, static_cast<Real>(-clip), static_cast<Real>(clip));
      x0 = Tensor<Real>::from(x0.rows(), x0.cols(), std::move(v));
    }
    if (i + 1 == timesteps.size()) return x0;

    const std::size_t tp = timesteps[i + 1];
    if (tp >= t) throw DiffusionError("timesteps must be strictly decreasing");
    const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[tp];
    const double beta = 1.0 - ab / ab_prev;  // respaced
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
    std::vector<Real> next(z.size());
    for (std::size_t k = 0; k < next.size(); ++k)
      next[k] = static_cast<Real>(c0 * x0.data()[k] + ct * z.data()[k] + sigma * rng.normal());
    z = Tensor<Real>::from(z.rows(), z.cols(), std::move(next));
  }
  return z;  // unreachable
}

template <typename Real>
Tensor<Real> sample(const Denoiser<Real>& model, const NoiseSchedule& s,
                    const std::vector<std::string>& prompts, const Tensor<Real>& z_c,
                    const SampleOptions& options, Rng& rng) {
  const auto& cfg = model.config();
  const auto timesteps = strided_timesteps(s.T, options.n_steps);
  if (is_conditional(model.variant()) && !z_c.defined())
    throw ModelError("guidance latent required for variant " +
                     std::string(variant_name(model.variant())));
  Tensor<Real> z = Tensor<Real>::normal(prompts.size() * cfg.n_latent, cfg.latent_dim, Real(1), rng);
  return denoise_from(model_predictor(model, z_c, options.cfg_scale), s, std::move(z), timesteps,
                      prompts, cfg.n_latent, options.clip, rng);
}

template <typename Real>
Tensor<Real> sdedit_sample(const Denoiser<Real>& text_model, const NoiseSchedule& s,
                           const Tensor<Real>& z_c, const std::vector<std::string>& prompts,
                           double strength, const SampleOptions& options, Rng& rng) {
  if (!(strength > 0.0 && strength <= 1.0)) throw DiffusionError("strength must be in (0, 1]");
  if (options.n_steps > s.T) throw DiffusionError("steps exceed schedule");
  const std::size_t t0 = static_cast<std::size_t>(std::llround(strength * static_cast<double>(s.T)));
  if (t0 == 0) return z_c.detach();
  const std::size_t rows = text_model.config().n_latent;
  const std::size_t n = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(static_cast<double>(options.n_steps * t0) / s.T)), 1, t0);
  const Tensor<Real> eps = Tensor<Real>::normal(z_c.rows(), z_c.cols(), Real(1), rng);
  Tensor<Real> z = forward_noise(s, z_c, std::vector<std::size_t>(prompts.size(), t0), eps, rows);
  return denoise_from(model_predictor(text_model, Tensor<Real>(), options.cfg_scale), s, std::move(z),
                      strided_timesteps(t0, n), prompts, rows, options.clip, rng);
}

#define SHAPEGUIDE_INSTANTIATE(Real)                                                              \
  template Tensor<Real> forward_noise(const NoiseSchedule&, const Tensor<Real>&,                  \
                                      const std::vector<std::size_t>&, const Tensor<Real>&,       \
                                      std::size_t);                                               \
  template NoiseDraw<Real> draw_noise<Real>(const NoiseSchedule&, std::size_t, std::size_t,       \
                                            std::size_t, Rng&);                                   \
  template Tensor<Real> training_loss(const Denoiser<Real>&, const NoiseSchedule&,                \
                                      const TrainingBatch<Real>&, const NoiseDraw<Real>&);        \
  template Tensor<Real> training_loss(const Denoiser<Real>&, const NoiseSchedule&,                \
                                      const TrainingBatch<Real>&, Rng&);                          \
  template Tensor<Real> cfg_combine(const Tensor<Real>&, const Tensor<Real>&, Real);              \
  template Predictor<Real> model_predictor(const Denoiser<Real>&, Tensor<Real>, double);          \
  template Tensor<Real> denoise_from(const Predictor<Real>&, const NoiseSchedule&, Tensor<Real>,  \
                                     const std::vector<std::size_t>&,                             \
                                     const std::vector<std::string>&, std::size_t, double, Rng&); \
  template Tensor<Real> sample(const Denoiser<Real>&, const NoiseSchedule&,                       \
                               const std::vector<std::string>&, const Tensor<Real>&,              \
                               const SampleOptions&, Rng&);                                       \
  template Tensor<Real> sdedit_sample(const Denoiser<Real>&, const NoiseSchedule&,                \
                                      const Tensor<Real>&, const std::vector<std::string>&,       \
                                      double, const SampleOptions&, Rng&);

SHAPEGUIDE_INSTANTIATE(float)
SHAPEGUIDE_INSTANTIATE(double)

#undef SHAPEGUIDE_INSTANTIATE

}  // namespace shapeguide
