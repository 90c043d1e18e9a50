#include "shapeguide/train.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "shapeguide/binio.hpp"

namespace shapeguide {

namespace {

constexpr std::uint64_t kInitStream = 0x1f1f1f1f;
constexpr std::uint64_t kEvalStream = 0xe7a1e7a1;
constexpr std::string_view kMagic = "SGCK";
constexpr std::uint32_t kVersion = 1;

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': not a number: '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': not a non-negative integer: '" + v + "'");
  return out;
}

void apply(TrainConfig& c, const std::string& key, const std::string& value) {
  try {
    if (key == "task") c.task = parse_task(value);
    else if (key == "variant") c.variant = parse_variant(value);
    else if (key == "lr") c.lr = to_double(key, value);
    else if (key == "batch") c.batch = to_uint(key, value);
    else if (key == "steps") c.steps = to_uint(key, value);
    else if (key == "text_drop_p") c.text_drop_p = to_double(key, value);
    else if (key == "guidance_swap_p") c.guidance_swap_p = to_double(key, value);
    else if (key == "grad_clip") c.grad_clip = to_double(key, value);
    else if (key == "seed") c.seed = to_uint(key, value);
    else if (key == "eval_every") c.eval_every = to_uint(key, value);
    else if (key == "eval_items") c.eval_items = to_uint(key, value);
    else if (key == "n_blocks") c.backbone.n_blocks = to_uint(key, value);
    else if (key == "n_heads") c.backbone.n_heads = to_uint(key, value);
    else if (key == "d_model") c.backbone.d_model = to_uint(key, value);
    else if (key == "mlp_ratio") c.backbone.mlp_ratio = to_uint(key, value);
    else if (key == "n_latent") c.backbone.n_latent = to_uint(key, value);
    else if (key == "latent_dim") c.backbone.latent_dim = to_uint(key, value);
    else if (key == "diffusion_steps") c.backbone.n_steps = to_uint(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

// ---- config -----------------------------------------------------------------

TrainConfig TrainConfig::defaults(Task task, Variant variant) {
  TrainConfig c;
  c.task = task;
  c.variant = variant;
  const bool guided = is_conditional(variant);
  switch (task) {
    case Task::Pretrain:
      c.text_drop_p = 0.1;
      break;
    case Task::Abstraction:
    case Task::Stylization:
      c.text_drop_p = guided ? 0.5 : 0.0;
      break;
    case Task::Editing:
      c.text_drop_p = 0.0;
      c.guidance_swap_p = guided ? 0.5 : 0.0;
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be in [0, 1]");
  };
  prob(text_drop_p, "text_drop_p");
  prob(guidance_swap_p, "guidance_swap_p");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (batch == 0) throw ConfigError("batch must be positive");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
  if (task == Task::Editing && text_drop_p != 0.0)
    throw ConfigError("the editing task never drops the guidance text (text_drop_p must be 0)");
  if (task == Task::Pretrain && variant != Variant::TextOnly)
    throw MismatchError("pretraining only applies to the text_only variant, got " +
                        std::string(variant_name(variant)));
  if (task != Task::Editing && guidance_swap_p != 0.0)
    throw ConfigError("guidance_swap_p only applies to the editing task");
  try {
    backbone.validate();
  } catch (const ModelError& e) {
    throw ConfigError(e.what());
  }
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"task", std::string(task_name(task))},
      {"variant", std::string(variant_name(variant))},
      {"lr", fmt_double(lr)},
      {"batch", std::to_string(batch)},
      {"steps", std::to_string(steps)},
      {"text_drop_p", fmt_double(text_drop_p)},
      {"guidance_swap_p", fmt_double(guidance_swap_p)},
      {"grad_clip", fmt_double(grad_clip)},
      {"seed", std::to_string(seed)},
      {"eval_every", std::to_string(eval_every)},
      {"eval_items", std::to_string(eval_items)},
      {"n_blocks", std::to_string(backbone.n_blocks)},
      {"n_heads", std::to_string(backbone.n_heads)},
      {"d_model", std::to_string(backbone.d_model)},
      {"mlp_ratio", std::to_string(backbone.mlp_ratio)},
      {"n_latent", std::to_string(backbone.n_latent)},
      {"latent_dim", std::to_string(backbone.latent_dim)},
      {"diffusion_steps", std::to_string(backbone.n_steps)},
  };
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    apply(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
  const auto bytes = read_file_bytes(path);
  return parse_train_config(std::string(bytes.begin(), bytes.end()), base);
}

// ---- data -------------------------------------------------------------------

double TrainingData::latent_std() const {
  if (z0.empty()) return 1.0;
  double mean = 0, sq = 0;
  for (float v : z0) mean += v;
  mean /= static_cast<double>(z0.size());
  for (float v : z0) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / static_cast<double>(z0.size()));
}

TrainingData prepare_data(const Dataset& ds, Split split, const Codec& codec) {
  TrainingData d;
  d.task = ds.task;
  d.rows = codec.tokens();
  d.dim = codec.dim();
  for (const auto* item : ds.split(split)) {
    const Latent z = codec.encode(voxelize(item->shape, codec.resolution()));
    d.z0.insert(d.z0.end(), z.values.begin(), z.values.end());
    if (ds.task != Task::Pretrain) {
      if (!item->guide) throw MismatchError("dataset item without guidance shape");
      const Latent c = codec.encode(voxelize(*item->guide, codec.resolution()));
      d.zc.insert(d.zc.end(), c.values.begin(), c.values.end());
    }
    d.prompts.push_back(item->prompt);
    ++d.items;
  }
  return d;
}

TrainingBatch<float> make_batch(const TrainingData& data, const TrainConfig& cfg, std::uint64_t,
                                Rng& rng) {
  if (data.items == 0) throw std::invalid_argument("empty dataset");
  const std::size_t per = data.rows * data.dim;
  const bool guided = is_conditional(cfg.variant);
  if (guided && data.zc.empty()) throw MismatchError("guided variant needs guidance latents");
  std::vector<float> z0, zc;
  z0.reserve(cfg.batch * per);
  if (guided) zc.reserve(cfg.batch * per);
  std::vector<std::string> prompts;
  for (std::size_t b = 0; b < cfg.batch; ++b) {
    const std::size_t i = rng.below(data.items);
    const auto first = data.z0.begin() + static_cast<std::ptrdiff_t>(i * per);
    z0.insert(z0.end(), first, first + static_cast<std::ptrdiff_t>(per));
    prompts.push_back(rng.bernoulli(cfg.text_drop_p) ? std::string() : data.prompts[i]);
    if (guided) {
      const bool swap = rng.bernoulli(cfg.guidance_swap_p);
      const auto& src = swap ? data.z0 : data.zc;
      const auto g = src.begin() + static_cast<std::ptrdiff_t>(i * per);
      zc.insert(zc.end(), g, g + static_cast<std::ptrdiff_t>(per));
    }
  }
  TrainingBatch<float> batch;
  batch.z0 = Tensor<float>::from(cfg.batch * data.rows, data.dim, std::move(z0));
  batch.prompts = std::move(prompts);
  if (guided) batch.z_c = Tensor<float>::from(cfg.batch * data.rows, data.dim, std::move(zc));
  return batch;
}

EvalBatch make_eval_batch(const TrainingData& data, const TrainConfig& cfg,
                          const NoiseSchedule& schedule) {
  if (data.items == 0) throw std::invalid_argument("empty dataset");
  const std::size_t n = std::min(std::max<std::size_t>(cfg.eval_items, 1), data.items);
  const std::size_t per = data.rows * data.dim;
  const bool guided = is_conditional(cfg.variant);
  EvalBatch e;
  e.batch.z0 = Tensor<float>::from(
      n * data.rows, data.dim, std::vector<float>(data.z0.begin(), data.z0.begin() + n * per));
  e.batch.prompts.assign(data.prompts.begin(), data.prompts.begin() + n);
  if (guided)
    e.batch.z_c = Tensor<float>::from(
        n * data.rows, data.dim, std::vector<float>(data.zc.begin(), data.zc.begin() + n * per));
  Rng rng = Rng(cfg.seed).fork(kEvalStream);
  e.noise = draw_noise<float>(schedule, n, data.rows, data.dim, rng);
  return e;
}

double eval_loss(const Denoiser<float>& model, const EvalBatch& eval, const NoiseSchedule& schedule) {
  NoGradGuard guard;
  // Chunked so memory stays flat for large evaluation sets.
  const std::size_t n = eval.batch.prompts.size(), rows = model.config().n_latent;
  const std::size_t chunk = 16;
  double total = 0;
  for (std::size_t s = 0; s < n; s += chunk) {
    const std::size_t e = std::min(n, s + chunk);
    std::vector<std::size_t> idx;
    for (std::size_t r = s * rows; r < e * rows; ++r) idx.push_back(r);
    TrainingBatch<float> b;
    b.z0 = gather_rows<float>(eval.batch.z0, idx);
    b.prompts.assign(eval.batch.prompts.begin() + s, eval.batch.prompts.begin() + e);
    if (eval.batch.z_c.defined()) b.z_c = gather_rows<float>(eval.batch.z_c, idx);
    NoiseDraw<float> nd;
    nd.t.assign(eval.noise.t.begin() + s, eval.noise.t.begin() + e);
    nd.eps = gather_rows<float>(eval.noise.eps, idx);
    total += training_loss(model, schedule, b, nd).item() * static_cast<double>(e - s);
  }
  return total / static_cast<double>(n);
}

// ---- optimization -----------------------------------------------------------

double clip_gradients(Denoiser<float>& model, double max_norm) {
  double sq = 0;
  for (auto& p : model.params())
    if (p.trainable && p.value.has_grad())
      for (float g : p.value.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& p : model.params())
      if (p.trainable && p.value.has_grad())
        for (float& g : p.value.mutable_grad()) g *= s;
  }
  return norm;
}

void adam_update(Denoiser<float>& model, AdamState& adam, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto& params = model.params();
  if (adam.m.size() != params.size()) {
    adam.m.assign(params.size(), {});
    adam.v.assign(params.size(), {});
  }
  ++adam.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.trainable) continue;
    auto& m = adam.m[k];
    auto& v = adam.v[k];
    if (m.size() != p.value.size()) {
      m.assign(p.value.size(), 0.0f);
      v.assign(p.value.size(), 0.0f);
    }
    auto w = p.value.mutable_data();
    const bool has = p.value.has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float g = has ? p.value.grad()[i] : 0.0f;
      m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * g);
      v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * static_cast<double>(g) * g);
      const double mh = m[i] / c1, vh = v[i] / c2;
      w[i] = static_cast<float>(w[i] - lr * mh / (std::sqrt(vh) + eps));
    }
  }
}

void train_steps(TrainState& state, const TrainingData& data, std::size_t n, TrainLog* log,
                 const NoiseSchedule& schedule) {
  const TrainConfig& cfg = state.config;
  if (data.items == 0) throw std::invalid_argument("empty dataset");
  std::optional<EvalBatch> eval;
  if (log) {
    eval = make_eval_batch(data, cfg, schedule);
    if (state.step == 0)
      log->rows.push_back({0, std::numeric_limits<double>::quiet_NaN(), cfg.lr,
                           eval_loss(state.model, *eval, schedule)});
  }
  state.model.set_requires_grad(true);
  const std::uint64_t end = state.step + n;
  while (state.step < end) {
    Rng rng = Rng(cfg.seed).fork(state.step);
    const TrainingBatch<float> batch = make_batch(data, cfg, state.step, rng);
    const NoiseDraw<float> noise =
        draw_noise<float>(schedule, cfg.batch, data.rows, data.dim, rng);
    state.model.zero_grad();
    const Tensor<float> loss = training_loss(state.model, schedule, batch, noise);
    backward(loss);
    clip_gradients(state.model, cfg.grad_clip);
    adam_update(state.model, state.adam, cfg.lr);
    ++state.step;
    if (log) {
      LogRow row{state.step, loss.item(), cfg.lr};
      const bool last = state.step == end;
      if (last || (cfg.eval_every > 0 && state.step % cfg.eval_every == 0))
        row.eval_loss = eval_loss(state.model, *eval, schedule);
      log->rows.push_back(row);
    }
  }
  state.model.zero_grad();
  state.model.set_requires_grad(false);
}

TrainState pretrain_backbone(const Dataset& ds, const TrainConfig& cfg, const Codec& codec,
                             TrainLog* log) {
  cfg.validate();
  if (cfg.task != Task::Pretrain) throw MismatchError("pretraining needs task=pretrain");
  if (ds.task != Task::Pretrain)
    throw MismatchError("pretraining needs a pretrain dataset, got " + std::string(task_name(ds.task)));
  const TrainingData data = prepare_data(ds, Split::Train, codec);
  if (data.items == 0) throw std::invalid_argument("empty dataset");
  if (data.rows != cfg.backbone.n_latent || data.dim != cfg.backbone.latent_dim)
    throw ConfigError("backbone latent shape does not match the codec");
  Rng init = Rng(cfg.seed).fork(kInitStream);
  TrainState state{Denoiser<float>::backbone(cfg.backbone, init), {}, 0, data.latent_std(), cfg};
  const NoiseSchedule schedule = NoiseSchedule::standard(cfg.backbone.n_steps);
  train_steps(state, data, cfg.steps, log, schedule);
  return state;
}

TrainState finetune(const TrainState& pretrained, const Dataset& ds, const TrainConfig& cfg_in,
                    const Codec& codec, TrainLog* log) {
  TrainConfig cfg = cfg_in;
  cfg.backbone = pretrained.model.config();
  cfg.validate();
  if (cfg.task == Task::Pretrain) throw MismatchError("finetuning needs a downstream task");
  if (ds.task != cfg.task)
    throw MismatchError("dataset task " + std::string(task_name(ds.task)) + " does not match " +
                        std::string(task_name(cfg.task)));
  if (pretrained.model.variant() != Variant::TextOnly)
    throw MismatchError("finetuning starts from a text_only checkpoint");
  const TrainingData data = prepare_data(ds, Split::Train, codec);
  if (data.items == 0) throw std::invalid_argument("empty dataset");
  Rng init = Rng(cfg.seed).fork(kInitStream);
  TrainState state{Denoiser<float>::from_pretrained(cfg.variant, pretrained.model, init), {}, 0,
                   data.latent_std(), cfg};
  const NoiseSchedule schedule = NoiseSchedule::standard(cfg.backbone.n_steps);
  train_steps(state, data, cfg.steps, log, schedule);
  return state;
}

// ---- log --------------------------------------------------------------------

std::vector<double> TrainLog::losses() const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (!std::isnan(r.loss)) out.push_back(r.loss);
  return out;
}

std::vector<std::pair<std::uint64_t, double>> TrainLog::evals() const {
  std::vector<std::pair<std::uint64_t, double>> out;
  for (const auto& r : rows)
    if (!std::isnan(r.eval_loss)) out.emplace_back(r.step, r.eval_loss);
  return out;
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,loss,lr,eval_loss\n";
  for (const auto& r : rows) {
    out << r.step << ',';
    if (!std::isnan(r.loss)) out << fmt_double(r.loss);
    out << ',' << fmt_double(r.lr) << ',';
    if (!std::isnan(r.eval_loss)) out << fmt_double(r.eval_loss);
    out << '\n';
  }
}

// ---- checkpoint -------------------------------------------------------------

std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state) {
  ByteWriter w;
  w.put_raw(kMagic);
  w.put<std::uint32_t>(kVersion);
  auto header = state.config.to_map();
  header["variant"] = std::string(variant_name(state.model.variant()));
  header["step"] = std::to_string(state.step);
  header["latent_std"] = fmt_double(state.latent_std);
  std::string text;
  for (const auto& [k, v] : header) text += k + "=" + v + "\n";
  w.put_string(text);
  const auto& params = state.model.params();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put_string(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.cols()));
    w.put<std::uint8_t>(p.trainable ? 1 : 0);
    w.put_array<float>(p.value.data());
  }
  const bool has_adam = state.adam.m.size() == params.size();
  w.put<std::uint8_t>(has_adam ? 1 : 0);
  if (has_adam) {
    w.put<std::uint64_t>(state.adam.step);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const std::size_t n = state.adam.m[k].empty() ? 0 : params[k].value.size();
      w.put<std::uint32_t>(static_cast<std::uint32_t>(n));
      if (n) {
        w.put_array<float>(state.adam.m[k]);
        w.put_array<float>(state.adam.v[k]);
      }
    }
  }
  w.seal();
  return w.bytes();
}

TrainState deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  if (bytes.size() < kMagic.size() || r.get_raw(kMagic.size()) != kMagic) r.fail("bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  r = ByteReader(bytes, "checkpoint");
  r.check_seal();
  r.get_raw(kMagic.size());
  r.get<std::uint32_t>();

  const std::string header = r.get_string();
  std::map<std::string, std::string> kv;
  {
    std::istringstream in(header);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  TrainState state;
  std::string cfg_text;
  for (const auto& [k, v] : kv)
    if (k != "step" && k != "latent_std") cfg_text += k + "=" + v + "\n";
  state.config = parse_train_config(cfg_text, TrainConfig{});
  state.step = to_uint("step", kv.at("step"));
  state.latent_std = to_double("latent_std", kv.at("latent_std"));

  state.model.restore(state.config.backbone, state.config.variant);
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string();
    const auto rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
    const bool trainable = r.get<std::uint8_t>() != 0;
    auto values = r.get_array<float>(static_cast<std::size_t>(rows) * cols);
    state.model.add_param(std::move(name), Tensor<float>::from(rows, cols, std::move(values)),
                          trainable);
  }
  if (r.get<std::uint8_t>()) {
    state.adam.step = r.get<std::uint64_t>();
    state.adam.m.resize(n);
    state.adam.v.resize(n);
    for (std::uint32_t k = 0; k < n; ++k) {
      const auto len = r.get<std::uint32_t>();
      if (len == 0) continue;
      if (len != state.model.params()[k].value.size()) r.fail("optimizer state size mismatch");
      state.adam.m[k] = r.get_array<float>(len);
      state.adam.v[k] = r.get_array<float>(len);
    }
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  state.model.set_requires_grad(false);
  return state;
}

void save_checkpoint(const TrainState& state, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(state));
}

TrainState load_checkpoint(const std::string& path, std::optional<Variant> expected) {
  TrainState s = deserialize_checkpoint(read_file_bytes(path));
  if (expected && *expected != s.model.variant())
    throw MismatchError("checkpoint " + path + " holds variant " +
                        std::string(variant_name(s.model.variant())) + ", expected " +
                        std::string(variant_name(*expected)));
  return s;
}

}  // namespace shapeguide
