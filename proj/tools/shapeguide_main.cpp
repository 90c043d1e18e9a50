#include <iostream>

#include "CLI11.hpp"
#include "cli/commands.hpp"

using namespace shapeguide;
using namespace shapeguide::cli;

namespace {

// Name parsers throw library errors; surface them as usage errors.
template <typename Parse>
auto as_usage(Parse parse, const std::string& s) {
  try {
    return parse(s);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

template <typename T, typename Parse>
CLI::Option* add_enum(CLI::App* app, const std::string& name, T& target, Parse parse, const std::string& help) {
  return app
      ->add_option_function<std::string>(
          name, [&target, parse](const std::string& s) { target = as_usage(parse, s); }, help)
      ->type_name("NAME");
}

void add_suite_options(CLI::App* app, SuiteArgs& s) {
  app->add_option("--items", s.items, "Number of test items")->capture_default_str();
  app->add_option("--steps", s.steps, "Denoising steps")->capture_default_str();
  app->add_option("--cfg", s.cfg, "Classifier-free guidance scale")->capture_default_str();
  app->add_option("--clip", s.clip, "Clamp for predicted latents (default 3 x latent std)");
  app->add_option("--seed", s.seed, "Sampling seed")->capture_default_str();
  app->add_option("--threads", s.threads, "Worker threads (default SHAPEGUIDE_THREADS or all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided latent diffusion on procedural voxel shapes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version());
  Invocation inv;
  for (int i = 0; i < argc; ++i) inv.argv.emplace_back(argv[i]);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a task dataset");
  add_enum(g, "--task", gen.task, parse_task, "pretrain, abstraction, editing or stylization")->capture_default_str();
  g->add_option_function<std::vector<std::string>>(
       "--categories",
       [&](const std::vector<std::string>& v) {
         gen.categories.clear();
         for (const auto& c : v) gen.categories.push_back(as_usage(parse_category, c));
       },
       "Comma-separated categories (default all)")
      ->delimiter(',');
  g->add_option("--count", gen.count, "Training items")->capture_default_str();
  g->add_option("--test-count", gen.test_count, "Held-out items")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_flag("--force", gen.force, "Write into a non-empty output directory");

  TrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Train the text-conditional backbone");
  p->add_option("--data", pre.data, "Dataset file or gen-data directory")->required();
  p->add_option("--config", pre.config, "key=value config file");
  p->add_option("--set", pre.set, "Config override key=value (repeatable)");
  p->add_option("--out", pre.out, "Output directory")->required();
  p->add_flag("--force", pre.force, "Write into a non-empty output directory");

  TrainArgs ft;
  auto* f = app.add_subcommand("finetune", "Finetune a guided variant from a pretrained backbone");
  add_enum(f, "--task", ft.task, parse_task, "abstraction, editing or stylization")->required();
  add_enum(f, "--variant", ft.variant, parse_variant, "cross_entity, text_only, controlnet, no_zeroconv, k_cross, "
                                                      "v_cross or qc_only")
      ->required();
  f->add_option("--pretrained", ft.pretrained, "Pretrained checkpoint or its directory")->required();
  f->add_option("--data", ft.data, "Dataset file or gen-data directory")->required();
  f->add_option("--config", ft.config, "key=value config file");
  f->add_option("--set", ft.set, "Config override key=value (repeatable)");
  f->add_option("--out", ft.out, "Output directory")->required();
  f->add_flag("--force", ft.force, "Write into a non-empty output directory");

  SampleArgs sa;
  auto* s = app.add_subcommand("sample", "Sample one shape");
  s->add_option("--checkpoint", sa.checkpoint, "Checkpoint or its directory")->required();
  s->add_option("--guidance", sa.guidance, "Dataset item id (with --data) or a grid file");
  s->add_option("--data", sa.data, "Dataset for --guidance item ids");
  s->add_option("--prompt", sa.prompt, "Text prompt (default: the item's prompt, else empty)");
  s->add_option("--steps", sa.steps, "Denoising steps")->capture_default_str();
  s->add_option("--cfg", sa.cfg, "Classifier-free guidance scale")->capture_default_str();
  s->add_option("--seed", sa.seed, "Sampling seed")->capture_default_str();
  s->add_option("--export", sa.export_format, "ply or obj")->capture_default_str();
  s->add_option("--points", sa.points, "Points in PLY exports")->capture_default_str();
  s->add_option("--sdedit", sa.sdedit, "Partial-noising strength in (0, 1] (text_only checkpoints)");
  s->add_option("--clip", sa.clip, "Clamp for predicted latents (default 3 x latent std)");
  s->add_option("--out", sa.out, "Output directory")->required();
  s->add_flag("--force", sa.force, "Write into a non-empty output directory");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Sample and score checkpoints on held-out items");
  e->add_option("--checkpoints", ev.checkpoints, "Checkpoints as path or name=path")->required();
  e->add_option("--data", ev.data, "Dataset file or gen-data directory")->required();
  e->add_option_function<std::string>("--task", [&](const std::string& v) { ev.task = as_usage(parse_task, v); },
                                      "Expected dataset task");
  e->add_flag("--identity", ev.identity, "Also score the unchanged input");
  e->add_flag("!--no-sdedit", ev.sdedit, "Skip the sdedit baseline for text_only checkpoints");
  e->add_option("--sdedit-strength", ev.sdedit_strength, "Strength for the sdedit baseline")->capture_default_str();
  add_suite_options(e, ev.suite);
  e->add_option("--out", ev.out, "Aggregate report CSV")->required();
  e->add_flag("--force", ev.force, "Overwrite existing report files");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Finetune and evaluate the baseline and ablation grid");
  a->add_option("--pretrained", ab.pretrained, "Pretrained checkpoint or its directory")->required();
  a->add_option("--data", ab.data, "Dataset file or gen-data directory")->required();
  a->add_option("--config", ab.config, "key=value config file for every finetune");
  a->add_option("--set", ab.set, "Config override key=value (repeatable)");
  a->add_option("--variants", ab.variants, "all or a comma-separated subset")->delimiter(',')->capture_default_str();
  a->add_option("--sweep", ab.sweep, "sdedit strengths to sweep")->delimiter(',')->capture_default_str();
  add_suite_options(a, ab.suite);
  a->add_option("--out", ab.out, "Output directory")->required();
  a->add_flag("--force", ab.force, "Write into a non-empty output directory");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Bar charts and summary from a report CSV");
  r->add_option("--in", rp.in, "Aggregate report CSV")->required();
  r->add_option("--out", rp.out, "Output directory")->required();
  r->add_flag("--force", rp.force, "Write into a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "shapeguide: usage: " << ex.what() << "\n";
    return kUsage;
  } catch (const std::exception& ex) {
    // Enum callbacks run during parsing.
    std::cerr << "shapeguide: " << error_kind(ex) << ": " << ex.what() << "\n";
    return exit_code(ex);
  }

  try {
    auto* sub = app.get_subcommands().front();
    inv.command = sub->get_name();
    if (sub == g) gen_data(gen, inv);
    else if (sub == p) pretrain(pre, inv);
    else if (sub == f) finetune(ft, inv);
    else if (sub == s) sample(sa, inv);
    else if (sub == e) eval(ev, inv);
    else if (sub == a) ablate(ab, inv);
    else if (sub == r) report(rp, inv);
  } catch (const std::exception& ex) {
    std::cerr << "shapeguide: " << error_kind(ex) << ": " << ex.what() << "\n";
    return exit_code(ex);
  }
  return kOk;
}
