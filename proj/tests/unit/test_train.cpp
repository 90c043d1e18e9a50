#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "../support/fixtures.hpp"
#include "shapeguide/binio.hpp"
#include "shapeguide/train.hpp"

using namespace shapeguide;

namespace {

namespace fs = std::filesystem;

// Codec-shaped latents (64 x 32) with a very small transformer.
TrainConfig tiny(Task task, Variant variant) {
  TrainConfig c = TrainConfig::defaults(task, variant);
  c.backbone.n_blocks = 1;
  c.backbone.n_heads = 2;
  c.backbone.d_model = 8;
  c.backbone.mlp_ratio = 2;
  c.batch = 4;
  c.steps = 6;
  c.eval_items = 8;
  c.eval_every = 3;
  c.seed = 17;
  return c;
}

Dataset small_dataset(Task task, std::size_t n = 24) {
  DatasetOptions o;
  o.task = task;
  o.n_train = n;
  o.n_test = 4;
  o.seed = 5;
  return generate_dataset(o);
}

const Codec& codec() {
  static const Codec c;
  return c;
}

void expect_same_params(const Denoiser<float>& a, const Denoiser<float>& b) {
  ASSERT_EQ(a.params().size(), b.params().size());
  for (std::size_t k = 0; k < a.params().size(); ++k) {
    const auto& pa = a.params()[k];
    const auto& pb = b.params()[k];
    EXPECT_EQ(pa.name, pb.name);
    EXPECT_EQ(pa.trainable, pb.trainable);
    ASSERT_EQ(pa.value.size(), pb.value.size());
    for (std::size_t i = 0; i < pa.value.size(); ++i)
      ASSERT_EQ(pa.value.data()[i], pb.value.data()[i]) << pa.name;
  }
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("sg_train_" + name); }

}  // namespace

TEST(TrainConfig, TaskPolicies) {
  EXPECT_EQ(TrainConfig::defaults(Task::Pretrain, Variant::TextOnly).text_drop_p, 0.1);
  EXPECT_EQ(TrainConfig::defaults(Task::Abstraction, Variant::CrossEntity).text_drop_p, 0.5);
  EXPECT_EQ(TrainConfig::defaults(Task::Abstraction, Variant::TextOnly).text_drop_p, 0.0);
  EXPECT_EQ(TrainConfig::defaults(Task::Stylization, Variant::ControlNet).text_drop_p, 0.5);
  const auto e = TrainConfig::defaults(Task::Editing, Variant::CrossEntity);
  EXPECT_EQ(e.text_drop_p, 0.0);
  EXPECT_EQ(e.guidance_swap_p, 0.5);
  EXPECT_EQ(TrainConfig::defaults(Task::Editing, Variant::TextOnly).guidance_swap_p, 0.0);
}

TEST(TrainConfig, ParseAndRoundTrip) {
  const auto c = parse_train_config("# comment\nlr = 0.002  # trailing\n\nsteps=10\nvariant=k_cross\n",
                                    TrainConfig{});
  EXPECT_EQ(c.lr, 0.002);
  EXPECT_EQ(c.steps, 10u);
  EXPECT_EQ(c.variant, Variant::KCross);
  std::string text;
  for (const auto& [k, v] : c.to_map()) text += k + "=" + v + "\n";
  EXPECT_EQ(parse_train_config(text, TrainConfig{}).to_map(), c.to_map());
}

TEST(TrainConfig, Errors) {
  EXPECT_THROW(parse_train_config("learning_rate=1", {}), ConfigError);
  EXPECT_THROW(parse_train_config("lr=fast", {}), ConfigError);
  EXPECT_THROW(parse_train_config("steps=-3", {}), ConfigError);
  EXPECT_THROW(parse_train_config("just words", {}), ConfigError);
  EXPECT_THROW(parse_train_config("variant=spice", {}), ConfigError);
  auto c = TrainConfig::defaults(Task::Editing, Variant::CrossEntity);
  c.text_drop_p = 0.2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig::defaults(Task::Pretrain, Variant::CrossEntity);
  EXPECT_THROW(c.validate(), MismatchError);
  c = TrainConfig::defaults(Task::Abstraction, Variant::CrossEntity);
  c.backbone.n_heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(load_train_config("/nonexistent/train.cfg", {}), MissingFileError);
}

TEST(Batches, PoliciesHoldStatistically) {
  const auto ds = small_dataset(Task::Editing, 48);
  const auto data = prepare_data(ds, Split::Train, codec());
  auto cfg = tiny(Task::Editing, Variant::CrossEntity);
  cfg.batch = 1;
  int swapped = 0, dropped = 0;
  const int n = 2000;
  const std::size_t per = data.rows * data.dim;
  for (int s = 0; s < n; ++s) {
    Rng rng = Rng(3).fork(s);
    const auto b = make_batch(data, cfg, s, rng);
    dropped += b.prompts[0].empty();
    bool same = true;
    for (std::size_t i = 0; i < per && same; ++i) same = b.z_c.data()[i] == b.z0.data()[i];
    swapped += same;
  }
  EXPECT_EQ(dropped, 0);
  EXPECT_NEAR(swapped / double(n), 0.5, 0.05);

  const auto ads = small_dataset(Task::Abstraction, 48);
  const auto adata = prepare_data(ads, Split::Train, codec());
  auto acfg = tiny(Task::Abstraction, Variant::CrossEntity);
  acfg.batch = 1;
  dropped = 0;
  for (int s = 0; s < n; ++s) {
    Rng rng = Rng(4).fork(s);
    dropped += make_batch(adata, acfg, s, rng).prompts[0].empty();
  }
  EXPECT_NEAR(dropped / double(n), 0.5, 0.05);
}

TEST(Optimizer, ClipAndFirstAdamStep) {
  Rng rng(1);
  auto m = Denoiser<float>::backbone(fixture::micro_config(), rng);
  m.set_requires_grad(true);
  for (auto& p : m.params())
    for (auto& g : p.value.mutable_grad()) g = 3.0f;
  double expect = 0;
  for (const auto& p : m.params()) expect += 9.0 * p.value.size();
  expect = std::sqrt(expect);
  EXPECT_NEAR(clip_gradients(m, 1.0), expect, 1e-3 * expect);
  double after = 0;
  for (const auto& p : m.params())
    for (float g : p.value.grad()) after += double(g) * g;
  EXPECT_NEAR(std::sqrt(after), 1.0, 1e-4);

  // First Adam step moves every weight by lr * sign(g) (up to eps).
  const auto before = m.param("final.out.weight").detach();
  AdamState adam;
  adam_update(m, adam, 0.01);
  const auto& w = m.param("final.out.weight");
  for (std::size_t i = 0; i < w.size(); ++i)
    EXPECT_NEAR(before.data()[i] - w.data()[i], 0.01, 1e-5);
  EXPECT_EQ(adam.step, 1u);
}

TEST(Training, ResumeIsBitwiseIdentical) {
  const auto ds = small_dataset(Task::Pretrain);
  const auto cfg = tiny(Task::Pretrain, Variant::TextOnly);
  TrainLog full_log;
  const auto full = pretrain_backbone(ds, cfg, codec(), &full_log);
  EXPECT_EQ(full.step, 6u);

  auto half_cfg = cfg;
  half_cfg.steps = 3;
  TrainLog log_a;
  auto half = pretrain_backbone(ds, half_cfg, codec(), &log_a);
  const auto path = temp_path("resume.ckpt");
  save_checkpoint(half, path.string());
  auto resumed = load_checkpoint(path.string(), Variant::TextOnly);
  resumed.config.steps = 6;
  const auto data = prepare_data(ds, Split::Train, codec());
  TrainLog log_b;
  train_steps(resumed, data, 3, &log_b, NoiseSchedule::standard(cfg.backbone.n_steps));
  expect_same_params(full.model, resumed.model);
  EXPECT_EQ(resumed.adam.step, full.adam.step);

  auto losses = log_a.losses();
  for (double l : log_b.losses()) losses.push_back(l);
  EXPECT_EQ(losses, full_log.losses());
  fs::remove(path);
}

TEST(Training, SeededRerunsReproduce) {
  const auto ds = small_dataset(Task::Pretrain);
  const auto cfg = tiny(Task::Pretrain, Variant::TextOnly);
  TrainLog a, b;
  const auto x = pretrain_backbone(ds, cfg, codec(), &a);
  const auto y = pretrain_backbone(ds, cfg, codec(), &b);
  EXPECT_EQ(a.losses(), b.losses());
  expect_same_params(x.model, y.model);
  ASSERT_EQ(a.evals().size(), 3u);  // step 0, 3 and 6
  EXPECT_EQ(a.evals()[0].first, 0u);
}

TEST(Training, FinetuneStartsAtThePretrainedLoss) {
  const auto pre = pretrain_backbone(small_dataset(Task::Pretrain), tiny(Task::Pretrain, Variant::TextOnly),
                                     codec(), nullptr);
  const auto ds = small_dataset(Task::Abstraction);
  double base = 0;
  for (Variant v : {Variant::TextOnly, Variant::CrossEntity, Variant::ControlNet, Variant::KCross,
                    Variant::VCross}) {
    auto cfg = tiny(Task::Abstraction, v);
    cfg.steps = 1;
    TrainLog log;
    finetune(pre, ds, cfg, codec(), &log);
    const double step0 = log.evals()[0].second;
    if (v == Variant::TextOnly) base = step0;
    EXPECT_NEAR(step0, base, 1e-6 * base) << variant_name(v);
  }
}

TEST(Training, FrozenParametersStayFixed) {
  const auto pre = pretrain_backbone(small_dataset(Task::Pretrain), tiny(Task::Pretrain, Variant::TextOnly),
                                     codec(), nullptr);
  const auto tuned = finetune(pre, small_dataset(Task::Abstraction),
                              tiny(Task::Abstraction, Variant::ControlNet), codec(), nullptr);
  for (const auto& p : pre.model.params())
    for (std::size_t i = 0; i < p.value.size(); ++i)
      ASSERT_EQ(tuned.model.param(p.name).data()[i], p.value.data()[i]) << p.name;
  EXPECT_NE(tuned.model.param("ctrl.zero.1.weight").data()[0], 0.0f);
}

TEST(Training, MismatchesAreRejected) {
  const auto pre_ds = small_dataset(Task::Pretrain);
  const auto pre = pretrain_backbone(pre_ds, tiny(Task::Pretrain, Variant::TextOnly), codec(), nullptr);
  EXPECT_THROW(finetune(pre, pre_ds, tiny(Task::Abstraction, Variant::CrossEntity), codec(), nullptr),
               MismatchError);
  EXPECT_THROW(pretrain_backbone(small_dataset(Task::Editing), tiny(Task::Pretrain, Variant::TextOnly),
                                 codec(), nullptr),
               MismatchError);
  const auto tuned =
      finetune(pre, small_dataset(Task::Abstraction), tiny(Task::Abstraction, Variant::KCross), codec(), nullptr);
  EXPECT_THROW(finetune(tuned, small_dataset(Task::Abstraction), tiny(Task::Abstraction, Variant::VCross),
                        codec(), nullptr),
               MismatchError);
  const auto path = temp_path("variant.ckpt");
  save_checkpoint(tuned, path.string());
  EXPECT_THROW(load_checkpoint(path.string(), Variant::CrossEntity), MismatchError);
  EXPECT_EQ(load_checkpoint(path.string()).model.variant(), Variant::KCross);
  fs::remove(path);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto st = pretrain_backbone(small_dataset(Task::Pretrain), tiny(Task::Pretrain, Variant::TextOnly),
                                    codec(), nullptr);
  auto bytes = serialize_checkpoint(st);
  const auto back = deserialize_checkpoint(bytes);
  expect_same_params(st.model, back.model);
  EXPECT_EQ(back.step, st.step);
  EXPECT_EQ(back.latent_std, st.latent_std);
  EXPECT_EQ(back.config.to_map(), st.config.to_map());
  EXPECT_EQ(serialize_checkpoint(back), bytes);

  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  EXPECT_THROW(deserialize_checkpoint(flipped), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  EXPECT_THROW(deserialize_checkpoint(truncated), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), MissingFileError);
}

TEST(TrainLog, CsvHasHeaderAndRows) {
  TrainLog log;
  log.rows.push_back({0, std::nan(""), 0.001, 0.5});
  log.rows.push_back({1, 0.4, 0.001});
  const auto path = temp_path("log.csv");
  log.write_csv(path.string());
  const auto bytes = read_file_bytes(path.string());
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_EQ(text, "step,loss,lr,eval_loss\n0,,0.001,0.5\n1,0.40000000000000002,0.001,\n");
  fs::remove(path);
}
