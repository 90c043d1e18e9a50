#pragma once

// Gaussian diffusion over latents with clean-latent (x0) prediction.

#include <cstddef>
#include <vector>

#include "shapeguide/model.hpp"
#include "shapeguide/rng.hpp"
#include "shapeguide/tensor.hpp"

namespace shapeguide {

class DiffusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Arrays are indexed by t = 0..T; entry 0 is the noise-free state (alpha_bar = 1).
struct NoiseSchedule {
  std::size_t T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// beta linear from beta_1 to beta_T.
  static NoiseSchedule linear(std::size_t T, double beta_1, double beta_T);
  /// Linear 1e-4 .. 0.02 rescaled by 1000 / T, so short schedules still end near pure noise.
  static NoiseSchedule standard(std::size_t T = 128);

  void check_t(std::size_t t) const;
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, with one timestep per block of `rows_per_item` rows.
template <typename Real>
Tensor<Real> forward_noise(const NoiseSchedule& s, const Tensor<Real>& z0,
                           const std::vector<std::size_t>& t, const Tensor<Real>& eps,
                           std::size_t rows_per_item);

template <typename Real>
struct TrainingBatch {
  Tensor<Real> z0;                   // (B*S) x D clean latents
  std::vector<std::string> prompts;  // B
  Tensor<Real> z_c;                  // (B*S) x D guidance, undefined for text-only
};

/// Per-item timesteps and noise for one loss evaluation.
template <typename Real>
struct NoiseDraw {
  std::vector<std::size_t> t;
  Tensor<Real> eps;
};

template <typename Real>
NoiseDraw<Real> draw_noise(const NoiseSchedule& s, std::size_t batch, std::size_t rows_per_item,
                           std::size_t cols, Rng& rng);

/// mean((model(z_t, t, prompt, z_c) - z0)^2) for a fixed noise draw.
template <typename Real>
Tensor<Real> training_loss(const Denoiser<Real>& model, const NoiseSchedule& s,
                           const TrainingBatch<Real>& batch, const NoiseDraw<Real>& noise);

/// Same with t ~ U{1..T} and eps ~ N(0, I) drawn from `rng`.
template <typename Real>
Tensor<Real> training_loss(const Denoiser<Real>& model, const NoiseSchedule& s,
                           const TrainingBatch<Real>& batch, Rng& rng);

/// n timesteps evenly spaced over [1, t_max], both ends included, in descending order.
std::vector<std::size_t> strided_timesteps(std::size_t t_max, std::size_t n);

template <typename Real>
Tensor<Real> cfg_combine(const Tensor<Real>& cond, const Tensor<Real>& uncond, Real scale);

struct SampleOptions {
  std::size_t n_steps = 64;
  double cfg_scale = 1.0;
  /// Predicted clean latents are clamped to [-clip, clip]; non-positive disables.
  double clip = 0.0;
};

/// Any x0 predictor; the model-backed one is built by `model_predictor`.
template <typename Real>
using Predictor = std::function<Tensor<Real>(const Tensor<Real>& z_t, const std::vector<double>& t,
                                             const std::vector<std::string>& prompts)>;

/// Wraps a denoiser, fixing the guidance latent (may be undefined) and applying
/// classifier-free guidance when cfg_scale != 1 (unconditional = empty prompt).
template <typename Real>
Predictor<Real> model_predictor(const Denoiser<Real>& model, Tensor<Real> z_c, double cfg_scale);

/// Ancestral sampling over strided timesteps starting from `z_start` at `t_start`.
/// Returns the final predicted clean latent.
template <typename Real>
Tensor<Real> denoise_from(const Predictor<Real>& predict, const NoiseSchedule& s,
                          Tensor<Real> z_start, const std::vector<std::size_t>& timesteps,
                          const std::vector<std::string>& prompts, std::size_t rows_per_item,
                          double clip, Rng& rng);

/// Full sample from z_T ~ N(0, I). `z_c` is required for conditional models.
template <typename Real>
Tensor<Real> sample(const Denoiser<Real>& model, const NoiseSchedule& s,
                    const std::vector<std::string>& prompts, const Tensor<Real>& z_c,
                    const SampleOptions& options, Rng& rng);

/// Partial noising of the guidance latent to t0 = round(strength * T), then
/// text-only denoising from t0. strength must be in (0, 1]; t0 = 0 returns z_c.
template <typename Real>
Tensor<Real> sdedit_sample(const Denoiser<Real>& text_model, const NoiseSchedule& s,
                           const Tensor<Real>& z_c, const std::vector<std::string>& prompts,
                           double strength, const SampleOptions& options, Rng& rng);

inline constexpr double kDefaultSdeditStrength = 0.6;

}  // namespace shapeguide
