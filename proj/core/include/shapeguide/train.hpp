#pragma once

// Pretraining, task finetuning, Adam, and the checkpoint container.
//
// Checkpoint layout (little-endian):
//   "SGCK" | u32 version | str header (key=value lines)
//   u32 n_params | n x (str name | u32 rows | u32 cols | u8 trainable | f32 values..)
//   u8 has_adam | [u64 adam_step | n x (f32 m.. | f32 v..)]
//   u64 FNV-1a of everything above

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "shapeguide/codec.hpp"
#include "shapeguide/dataset.hpp"
#include "shapeguide/diffusion.hpp"
#include "shapeguide/model.hpp"

namespace shapeguide {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a dataset task, variant and training stage do not fit together.
class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Task task = Task::Pretrain;
  Variant variant = Variant::TextOnly;
  double lr = 1e-3;
  std::size_t batch = 8;
  std::size_t steps = 3000;
  double text_drop_p = 0.1;
  double guidance_swap_p = 0.0;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 250;  // 0 = only at the start and the end
  std::size_t eval_items = 64;
  BackboneConfig backbone;

  /// Task policy defaults: pretraining drops text with p = 0.1; abstraction and
  /// stylization drop text with p = 0.5 for guided variants; editing never drops
  /// text and swaps the guidance for the target with p = 0.5.
  static TrainConfig defaults(Task task, Variant variant);
  void validate() const;
  std::map<std::string, std::string> to_map() const;
};

/// key=value lines; '#' starts a comment. Keys not present keep the value in `base`.
TrainConfig parse_train_config(const std::string& text, TrainConfig base);
TrainConfig load_train_config(const std::string& path, TrainConfig base);

/// Latents for one split, prepared once before training.
struct TrainingData {
  Task task = Task::Pretrain;
  std::size_t items = 0;
  std::size_t rows = 0;  // latent tokens per item
  std::size_t dim = 0;
  std::vector<float> z0;  // items x rows x dim
  std::vector<float> zc;  // same layout; empty for pretraining
  std::vector<std::string> prompts;

  double latent_std() const;
};

TrainingData prepare_data(const Dataset& ds, Split split, const Codec& codec);

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

struct TrainState {
  Denoiser<float> model;
  AdamState adam;
  std::uint64_t step = 0;
  double latent_std = 1.0;
  TrainConfig config;
};

struct LogRow {
  std::uint64_t step;
  double loss;
  double lr;
  double eval_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
  std::vector<LogRow> rows;

  /// Step-indexed minibatch losses.
  std::vector<double> losses() const;
  /// (step, eval loss) pairs in order.
  std::vector<std::pair<std::uint64_t, double>> evals() const;
  void write_csv(const std::string& path) const;
};

/// Assembles the minibatch for `step` under the config's task policy.
TrainingBatch<float> make_batch(const TrainingData& data, const TrainConfig& cfg, std::uint64_t step,
                                Rng& rng);

/// Frozen evaluation batch: the first eval_items items, text kept, guidance
/// not swapped, noise drawn from a fixed stream.
struct EvalBatch {
  TrainingBatch<float> batch;
  NoiseDraw<float> noise;
};
EvalBatch make_eval_batch(const TrainingData& data, const TrainConfig& cfg,
                          const NoiseSchedule& schedule);
double eval_loss(const Denoiser<float>& model, const EvalBatch& eval, const NoiseSchedule& schedule);

/// Global-norm gradient clipping; returns the norm before clipping.
double clip_gradients(Denoiser<float>& model, double max_norm);
void adam_update(Denoiser<float>& model, AdamState& adam, double lr);

/// Runs `n` optimizer steps starting at state.step. Each step's randomness comes
/// from Rng(seed).fork(step), so a resumed run matches an uninterrupted one.
void train_steps(TrainState& state, const TrainingData& data, std::size_t n, TrainLog* log,
                 const NoiseSchedule& schedule);

/// Fresh text-only backbone trained for cfg.steps.
TrainState pretrain_backbone(const Dataset& ds, const TrainConfig& cfg, const Codec& codec,
                             TrainLog* log);
/// Builds cfg.variant from the pretrained backbone and trains it on the task.
TrainState finetune(const TrainState& pretrained, const Dataset& ds, const TrainConfig& cfg,
                    const Codec& codec, TrainLog* log);

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const TrainState& state, const std::string& path);
/// Throws MismatchError when `expected` is given and differs from the stored variant.
TrainState load_checkpoint(const std::string& path, std::optional<Variant> expected = std::nullopt);

}  // namespace shapeguide
