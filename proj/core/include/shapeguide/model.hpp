#pragma once

// Transformer denoiser over latent tokens with text and timestep tokens
// prepended, plus the guidance-conditioned variants.
//
// Sequence per item: [text; time; latent_1 .. latent_S] + learned positions.
// Blocks are pre-norm: x += out(attn(LN(x))); x += mlp(LN(x)).
//
// Guidance variants add a second, constant stream
//   phi_c = [text; time; guide.input(z_c)] + positions
// computed once per forward pass and read by every block:
//   cross_entity  q = f_Q(LN x) + f_Qc(Z(phi_c))
//   no_zeroconv   q = f_Q(LN x) + f_Qc(phi_c)
//   k_cross       k = f_K(LN x) + f_Kc(Z(phi_c))
//   v_cross       v = f_V(LN x) + f_Vc(Z(phi_c))
//   qc_only       q = f_Qc(Z(phi_c))
//   controlnet    frozen backbone blocks B_i plus trainable copies C_i:
//                 y_0 = C_0(Z_0(phi_c) + x_0), y_i = C_i(y_{i-1}),
//                 x_{i+1} = B_i(x_i) + Z_{i+1}(y_i)
// Z maps are per-token linear maps with zero weight and bias at construction.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "shapeguide/rng.hpp"
#include "shapeguide/tensor.hpp"

namespace shapeguide {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant : std::uint8_t {
  TextOnly = 0,
  CrossEntity = 1,
  ControlNet = 2,
  NoZeroConv = 3,
  KCross = 4,
  VCross = 5,
  QcOnly = 6,
};
std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
/// Every variant except TextOnly reads a guidance latent.
bool is_conditional(Variant v);
inline constexpr std::array<Variant, 7> kAllVariants = {
    Variant::TextOnly, Variant::CrossEntity, Variant::ControlNet, Variant::NoZeroConv,
    Variant::KCross,   Variant::VCross,      Variant::QcOnly};

struct BackboneConfig {
  std::size_t n_blocks = 6;
  std::size_t n_heads = 4;
  std::size_t d_model = 32;
  std::size_t mlp_ratio = 4;
  std::size_t n_latent = 64;    // latent tokens S
  std::size_t latent_dim = 32;  // latent width D
  std::size_t n_steps = 128;    // diffusion steps T, used to scale the time features

  static constexpr std::size_t kPrepended = 2;
  std::size_t seq_len() const { return n_latent + kPrepended; }
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

/// Maps prompts to bags of vocabulary indices; the empty prompt maps to the null row.
class Tokenizer {
 public:
  Tokenizer();
  std::size_t vocab_size() const { return words_.size(); }
  std::size_t null_index() const { return words_.size(); }
  /// Throws ModelError on out-of-vocabulary words.
  std::vector<std::size_t> encode(std::string_view prompt) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Real>
struct Param {
  std::string name;
  Tensor<Real> value;
  bool trainable = true;
};

/// One denoiser call over a batch of B items.
template <typename Real>
struct DenoiseInput {
  Tensor<Real> z_t;                  // (B*S) x D
  std::vector<double> t;             // B timesteps
  std::vector<std::string> prompts;  // B prompts ("" = unconditional)
  Tensor<Real> z_c;                  // (B*S) x D, undefined for text-only models
};

template <typename Real>
class Denoiser {
 public:
  /// Randomly initialized text-only backbone.
  static Denoiser backbone(const BackboneConfig& config, Rng& rng);
  /// Builds `variant` from a text-only model. Pretrained weights are copied;
  /// new parameters are drawn from `rng`.
  static Denoiser from_pretrained(Variant variant, const Denoiser& pretrained, Rng& rng);

  Variant variant() const { return variant_; }
  const BackboneConfig& config() const { return config_; }

  /// Predicted clean latent, (B*S) x D.
  Tensor<Real> forward(const DenoiseInput<Real>& input) const;

  std::vector<Param<Real>>& params() { return params_; }
  const std::vector<Param<Real>>& params() const { return params_; }
  const Tensor<Real>& param(std::string_view name) const;
  Tensor<Real>& param(std::string_view name);
  bool has_param(std::string_view name) const;
  std::size_t parameter_count(bool trainable_only = false) const;
  void set_requires_grad(bool on);
  void zero_grad();

  template <typename Other>
  Denoiser<Other> cast() const {
    Denoiser<Other> out;
    out.restore(config_, variant_);
    for (const auto& p : params_) out.add_param(p.name, p.value.template cast<Other>(), p.trainable);
    return out;
  }

  /// Checkpoint helpers: empty model of the given shape, then parameters appended in order.
  void restore(const BackboneConfig& config, Variant variant) {
    config_ = config;
    variant_ = variant;
    params_.clear();
    index_.clear();
  }
  void add_param(std::string name, Tensor<Real> value, bool trainable);

  Tensor<Real> text_tokens(const std::vector<std::string>& prompts) const;  // B x d
  Tensor<Real> time_tokens(const std::vector<double>& t) const;             // B x d
  /// [text; time; projected latent] + positions, (B*(S+2)) x d.
  Tensor<Real> assemble(const Tensor<Real>& latent, std::string_view projection,
                        const Tensor<Real>& text, const Tensor<Real>& time) const;
  Tensor<Real> block(const std::string& prefix, const Tensor<Real>& x,
                     const Tensor<Real>& guidance) const;

 private:
  const Tokenizer& tokenizer() const;
  Tensor<Real> lin(const std::string& prefix, const Tensor<Real>& x) const;

  BackboneConfig config_;
  Variant variant_ = Variant::TextOnly;
  std::vector<Param<Real>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Sinusoidal features of timestep t, `width` entries (sin half then cos half).
std::vector<double> time_features(double t, std::size_t width, std::size_t n_steps);

/// Names of parameters present in `model` but not in `pretrained`.
template <typename Real>
std::vector<std::string> new_parameter_names(const Denoiser<Real>& model,
                                             const Denoiser<Real>& pretrained);

}  // namespace shapeguide
