#include "shapeguide/model.hpp"

#include <cmath>
#include <numbers>

#include "shapeguide/shapes.hpp"

namespace shapeguide {

namespace {

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }
std::string ctrl_prefix(std::size_t i) { return "ctrl.blocks." + std::to_string(i) + "."; }
std::string ctrl_zero(std::size_t i) { return "ctrl.zero." + std::to_string(i); }

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::TextOnly: return "text_only";
    case Variant::CrossEntity: return "cross_entity";
    case Variant::ControlNet: return "controlnet";
    case Variant::NoZeroConv: return "no_zeroconv";
    case Variant::KCross: return "k_cross";
    case Variant::VCross: return "v_cross";
    case Variant::QcOnly: return "qc_only";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ModelError("unknown variant '" + std::string(name) + "'");
}

bool is_conditional(Variant v) { return v != Variant::TextOnly; }

void BackboneConfig::validate() const {
  if (n_blocks == 0 || n_heads == 0 || d_model == 0 || n_latent == 0 || latent_dim == 0 ||
      mlp_ratio == 0 || n_steps == 0)
    throw ModelError("backbone dimensions must be positive");
  if (d_model % n_heads != 0) throw ModelError("d_model must be divisible by n_heads");
  if (d_model < 2) throw ModelError("d_model must be at least 2");
}

Tokenizer::Tokenizer() : words_(vocabulary()) {
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
}

std::vector<std::size_t> Tokenizer::encode(std::string_view prompt) const {
  std::vector<std::size_t> ids;
  for (const auto& w : tokenize(prompt)) {
    auto it = index_.find(w);
    if (it == index_.end()) throw ModelError("out-of-vocabulary word '" + w + "'");
    ids.push_back(it->second);
  }
  if (ids.empty()) ids.push_back(null_index());
  return ids;
}

std::vector<double> time_features(double t, std::size_t width, std::size_t n_steps) {
  std::vector<double> f(width, 0.0);
  const std::size_t half = width / 2;
  // Timesteps are rescaled to [0, 1000] so the frequency band does not depend on T.
  const double s = t * 1000.0 / static_cast<double>(n_steps);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
    f[k] = std::sin(s * freq);
    f[half + k] = std::cos(s * freq);
  }
  return f;
}

// ---- construction -----------------------------------------------------------

template <typename Real>
void Denoiser<Real>::add_param(std::string name, Tensor<Real> value, bool trainable) {
  if (index_.count(name)) throw ModelError("duplicate parameter " + name);
  value.set_requires_grad(trainable);
  index_.emplace(name, params_.size());
  params_.push_back(Param<Real>{std::move(name), std::move(value), trainable});
}

namespace {

template <typename Real>
struct Init {
  Denoiser<Real>& m;
  Rng& rng;

  void linear(const std::string& name, std::size_t in, std::size_t out, bool zero_bias = false) {
    const Real bound = Real(1) / std::sqrt(static_cast<Real>(in));
    m.add_param(name + ".weight", Tensor<Real>::uniform(in, out, bound, rng), true);
    m.add_param(name + ".bias",
                zero_bias ? Tensor<Real>::zeros(1, out) : Tensor<Real>::uniform(1, out, bound, rng),
                true);
  }
  void zero_linear(const std::string& name, std::size_t in, std::size_t out) {
    m.add_param(name + ".weight", Tensor<Real>::zeros(in, out), true);
    m.add_param(name + ".bias", Tensor<Real>::zeros(1, out), true);
  }
  void norm(const std::string& name, std::size_t d) {
    m.add_param(name + ".gain", Tensor<Real>::full(1, d, Real(1)), true);
    m.add_param(name + ".bias", Tensor<Real>::zeros(1, d), true);
  }
  void embedding(const std::string& name, std::size_t rows, std::size_t d) {
    m.add_param(name, Tensor<Real>::normal(rows, d, Real(0.02), rng), true);
  }
};

}  // namespace

template <typename Real>
Denoiser<Real> Denoiser<Real>::backbone(const BackboneConfig& config, Rng& rng) {
  config.validate();
  Denoiser m;
  m.restore(config, Variant::TextOnly);
  Init<Real> init{m, rng};
  const std::size_t d = config.d_model;
  init.embedding("text.embed", m.tokenizer().vocab_size() + 1, d);
  init.linear("text.proj", d, d);
  init.linear("time.proj", d, d);
  init.linear("latent.input", config.latent_dim, d);
  init.embedding("pos", config.seq_len(), d);
  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    const std::string p = block_prefix(i);
    init.norm(p + "ln1", d);
    init.linear(p + "q", d, d);
    init.linear(p + "k", d, d);
    init.linear(p + "v", d, d);
    init.linear(p + "out", d, d);
    init.norm(p + "ln2", d);
    init.linear(p + "mlp.fc", d, d * config.mlp_ratio);
    init.linear(p + "mlp.proj", d * config.mlp_ratio, d);
  }
  init.norm("final.ln", d);
  init.linear("final.out", d, config.latent_dim);
  return m;
}

template <typename Real>
Denoiser<Real> Denoiser<Real>::from_pretrained(Variant variant, const Denoiser& pretrained,
                                               Rng& rng) {
  if (pretrained.variant() != Variant::TextOnly)
    throw ModelError("variants are built from a text_only model, got " +
                     std::string(variant_name(pretrained.variant())));
  const BackboneConfig& config = pretrained.config();
  const std::size_t d = config.d_model;
  Denoiser m;
  m.restore(config, variant);
  const bool frozen_backbone = variant == Variant::ControlNet;
  for (const auto& p : pretrained.params()) m.add_param(p.name, p.value.detach(), !frozen_backbone);
  if (variant == Variant::TextOnly) return m;

  Init<Real> init{m, rng};
  init.linear("guide.input", config.latent_dim, d);
  if (variant == Variant::ControlNet) {
    for (std::size_t i = 0; i < config.n_blocks; ++i) {
      const std::string from = block_prefix(i);
      for (const auto& p : pretrained.params())
        if (p.name.rfind(from, 0) == 0)
          m.add_param(ctrl_prefix(i) + p.name.substr(from.size()), p.value.detach(), true);
    }
    for (std::size_t j = 0; j <= config.n_blocks; ++j) init.zero_linear(ctrl_zero(j), d, d);
    return m;
  }
  const char* path = variant == Variant::KCross ? "kc" : variant == Variant::VCross ? "vc" : "qc";
  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    const std::string p = block_prefix(i);
    if (variant != Variant::NoZeroConv) init.zero_linear(p + "zero", d, d);
    init.linear(p + path, d, d, /*zero_bias=*/true);
  }
  return m;
}

// ---- access -----------------------------------------------------------------

template <typename Real>
const Tensor<Real>& Denoiser<Real>::param(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ModelError("no parameter named " + std::string(name));
  return params_[it->second].value;
}

template <typename Real>
Tensor<Real>& Denoiser<Real>::param(std::string_view name) {
  return const_cast<Tensor<Real>&>(std::as_const(*this).param(name));
}

template <typename Real>
bool Denoiser<Real>::has_param(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename Real>
std::size_t Denoiser<Real>::parameter_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (!trainable_only || p.trainable) n += p.value.size();
  return n;
}

template <typename Real>
void Denoiser<Real>::set_requires_grad(bool on) {
  for (auto& p : params_) p.value.set_requires_grad(on && p.trainable);
}

template <typename Real>
void Denoiser<Real>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename Real>
const Tokenizer& Denoiser<Real>::tokenizer() const {
  static const Tokenizer tok;
  return tok;
}

// ---- forward ----------------------------------------------------------------

template <typename Real>
Tensor<Real> Denoiser<Real>::lin(const std::string& prefix, const Tensor<Real>& x) const {
  return linear(x, param(prefix + ".weight"), param(prefix + ".bias"));
}

template <typename Real>
Tensor<Real> Denoiser<Real>::text_tokens(const std::vector<std::string>& prompts) const {
  std::vector<std::vector<std::size_t>> bags;
  bags.reserve(prompts.size());
  for (const auto& p : prompts) bags.push_back(tokenizer().encode(p));
  return lin("text.proj", embedding_mean(param("text.embed"), bags));
}

template <typename Real>
Tensor<Real> Denoiser<Real>::time_tokens(const std::vector<double>& t) const {
  const std::size_t d = config_.d_model;
  std::vector<Real> feats;
  feats.reserve(t.size() * d);
  for (double ti : t)
    for (double f : time_features(ti, d, config_.n_steps)) feats.push_back(static_cast<Real>(f));
  return lin("time.proj", Tensor<Real>::from(t.size(), d, std::move(feats)));
}

template <typename Real>
Tensor<Real> Denoiser<Real>::assemble(const Tensor<Real>& latent, std::string_view projection,
                                      const Tensor<Real>& text, const Tensor<Real>& time) const {
  const std::size_t b = text.rows(), s = config_.n_latent, l = config_.seq_len();
  const Tensor<Real> lat = lin(std::string(projection), latent);
  std::vector<std::size_t> order;
  order.reserve(b * l);
  for (std::size_t i = 0; i < b; ++i) {
    order.push_back(i);
    order.push_back(b + i);
    for (std::size_t k = 0; k < s; ++k) order.push_back(2 * b + i * s + k);
  }
  return add_tiled(gather_rows<Real>(concat_rows<Real>({text, time, lat}), order), param("pos"));
}

template <typename Real>
Tensor<Real> Denoiser<Real>::block(const std::string& prefix, const Tensor<Real>& x,
                                   const Tensor<Real>& guidance) const {
  const Real eps = Real(1e-5);
  const Tensor<Real> h = layer_norm(x, param(prefix + "ln1.gain"), param(prefix + "ln1.bias"), eps);
  Tensor<Real> q, k = lin(prefix + "k", h), v = lin(prefix + "v", h);
  const bool guided = guidance.defined();
  if (!(guided && variant_ == Variant::QcOnly)) q = lin(prefix + "q", h);
  if (guided) {
    auto gated = [&] { return lin(prefix + "zero", guidance); };
    switch (variant_) {
      case Variant::CrossEntity: q = add(q, lin(prefix + "qc", gated())); break;
      case Variant::NoZeroConv: q = add(q, lin(prefix + "qc", guidance)); break;
      case Variant::KCross: k = add(k, lin(prefix + "kc", gated())); break;
      case Variant::VCross: v = add(v, lin(prefix + "vc", gated())); break;
      case Variant::QcOnly: q = lin(prefix + "qc", gated()); break;
      default: break;
    }
  }
  const Tensor<Real> a = attention(q, k, v, config_.n_heads, config_.seq_len());
  const Tensor<Real> x1 = add(x, lin(prefix + "out", a));
  const Tensor<Real> m = layer_norm(x1, param(prefix + "ln2.gain"), param(prefix + "ln2.bias"), eps);
  return add(x1, lin(prefix + "mlp.proj", gelu(lin(prefix + "mlp.fc", m))));
}

template <typename Real>
Tensor<Real> Denoiser<Real>::forward(const DenoiseInput<Real>& in) const {
  const std::size_t b = in.t.size(), s = config_.n_latent, l = config_.seq_len();
  if (b == 0) throw ModelError("empty batch");
  if (in.prompts.size() != b) throw ModelError("need one prompt per batch item");
  auto check = [&](const Tensor<Real>& z, const char* what) {
    if (!z.defined() || z.rows() != b * s || z.cols() != config_.latent_dim)
      throw ModelError(std::string(what) + " must be " + std::to_string(b * s) + "x" +
                       std::to_string(config_.latent_dim));
  };
  check(in.z_t, "noisy latent");
  const bool conditional = is_conditional(variant_);
  if (conditional) {
    if (!in.z_c.defined())
      throw ModelError("guidance latent required for variant " + std::string(variant_name(variant_)));
    check(in.z_c, "guidance latent");
  }

  const Tensor<Real> text = text_tokens(in.prompts);
  const Tensor<Real> time = time_tokens(in.t);
  Tensor<Real> x = assemble(in.z_t, "latent.input", text, time);
  Tensor<Real> guidance;
  if (conditional) guidance = assemble(in.z_c, "guide.input", text, time);

  if (variant_ == Variant::ControlNet) {
    Tensor<Real> y = block(ctrl_prefix(0), add(x, lin(ctrl_zero(0), guidance)), {});
    for (std::size_t i = 0; i < config_.n_blocks; ++i) {
      if (i > 0) y = block(ctrl_prefix(i), y, {});
      x = add(block(block_prefix(i), x, {}), lin(ctrl_zero(i + 1), y));
    }
  } else {
    for (std::size_t i = 0; i < config_.n_blocks; ++i) x = block(block_prefix(i), x, guidance);
  }

  std::vector<std::size_t> rows;
  rows.reserve(b * s);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < s; ++k) rows.push_back(i * l + BackboneConfig::kPrepended + k);
  const Tensor<Real> latent_rows = gather_rows<Real>(x, rows);
  const Tensor<Real> normed =
      layer_norm(latent_rows, param("final.ln.gain"), param("final.ln.bias"), Real(1e-5));
  return lin("final.out", normed);
}

template <typename Real>
std::vector<std::string> new_parameter_names(const Denoiser<Real>& model,
                                             const Denoiser<Real>& pretrained) {
  std::vector<std::string> out;
  for (const auto& p : model.params())
    if (!pretrained.has_param(p.name)) out.push_back(p.name);
  return out;
}

template class Denoiser<float>;
template class Denoiser<double>;
template std::vector<std::string> new_parameter_names(const Denoiser<float>&, const Denoiser<float>&);
template std::vector<std::string> new_parameter_names(const Denoiser<double>&,
                                                      const Denoiser<double>&);

}  // namespace shapeguide
