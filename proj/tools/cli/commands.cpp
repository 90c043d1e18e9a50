#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "shapeguide/binio.hpp"
#include "shapeguide/harness.hpp"
#include "shapeguide/train.hpp"
#include "svg.hpp"

namespace shapeguide::cli {

namespace {

void note(const std::string& s) { std::cerr << s << std::endl; }

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string fixed(double v, int digits = 5) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Dataset load_data(const std::string& path, fs::path* resolved = nullptr) {
  const fs::path p = resolve_input(path, kDatasetFile);
  if (resolved) *resolved = p;
  return read_dataset(p.string());
}

TrainConfig build_config(Task task, Variant variant, const std::string& file,
                         const std::vector<std::string>& set) {
  TrainConfig base = TrainConfig::defaults(task, variant);
  std::string text;
  if (!file.empty()) {
    std::ifstream in(resolve_input(file, "config.txt"));
    text.assign(std::istreambuf_iterator<char>(in), {});
    text += '\n';
  }
  for (const auto& kv : set) {
    if (kv.find('=') == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    text += kv + '\n';
  }
  TrainConfig cfg = parse_train_config(text, base);
  if (cfg.task != task || cfg.variant != variant)
    throw MismatchError("config sets " + std::string(task_name(cfg.task)) + "/" +
                        std::string(variant_name(cfg.variant)) + " but the command runs " +
                        std::string(task_name(task)) + "/" + std::string(variant_name(variant)));
  cfg.validate();
  return cfg;
}

void record_training(Manifest& m, const TrainConfig& cfg, const TrainLog& log) {
  m.config(cfg.to_map());
  m.seed("train", cfg.seed);
  const auto losses = log.losses();
  const auto evals = log.evals();
  if (!losses.empty()) {
    m.result()["first_loss"] = losses.front();
    m.result()["last_loss"] = losses.back();
  }
  if (!evals.empty()) {
    m.result()["first_eval_loss"] = evals.front().second;
    m.result()["last_eval_loss"] = evals.back().second;
  }
}

std::string training_line(const std::string& what, const TrainConfig& cfg, const TrainLog& log) {
  const auto evals = log.evals();
  std::string s = what + ": " + std::to_string(cfg.steps) + " steps";
  if (!evals.empty())
    s += ", eval loss " + fixed(evals.front().second) + " -> " + fixed(evals.back().second);
  return s;
}

/// Trains one variant into `dir` (model.ckpt, train_log.csv, manifest.json).
TrainState train_into(const fs::path& dir, const TrainState& pre, const Dataset& ds, const TrainConfig& cfg,
                      const Invocation& inv, const fs::path& data_path, const fs::path& pre_path) {
  Manifest m(inv);
  m.input("data", data_path);
  m.input("pretrained", pre_path);
  TrainLog log;
  TrainState st = shapeguide::finetune(pre, ds, cfg, Codec(), &log);
  save_checkpoint(st, (dir / kCheckpointFile).string());
  log.write_csv((dir / "train_log.csv").string());
  record_training(m, cfg, log);
  m.output(dir / kCheckpointFile);
  m.output(dir / "train_log.csv");
  m.write(dir / kManifestFile);
  std::cout << training_line(std::string(variant_name(cfg.variant)), cfg, log) << std::endl;
  return st;
}

SuiteOptions suite_options(const SuiteArgs& a, double latent_std) {
  SuiteOptions o;
  o.n_items = a.items;
  o.steps = a.steps;
  o.cfg_scale = a.cfg;
  o.clip = a.clip.value_or(3.0 * latent_std);
  o.seed = a.seed;
  o.threads = a.threads;
  if (o.n_items == 0) throw UsageError("--items must be positive");
  return o;
}

void suite_manifest(Manifest& m, const SuiteOptions& o) {
  m.config()["items"] = o.n_items;
  m.config()["steps"] = o.steps;
  m.config()["cfg"] = o.cfg_scale;
  m.config()["clip"] = o.clip;
  m.config()["cloud_points"] = o.cloud_points;
  m.seed("sample", o.seed);
}

MetricReport only(const MetricReport& r, const std::string& method) {
  MetricReport out;
  out.task = r.task;
  out.options = r.options;
  for (const auto& a : r.aggregates)
    if (a.method == method) out.aggregates.push_back(a);
  return out;
}

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

void export_grid(const VoxelGrid& grid, const fs::path& stem, const std::string& format, std::size_t points,
                 Rng rng, Manifest& m) {
  fs::path p = stem;
  p += "." + format;
  if (format == "obj") {
    write_obj(grid, p.string());
  } else {
    write_ply(grid.occupied_count() ? point_cloud(grid, points, rng) : PointCloud{}, p.string());
  }
  m.output(p);
}

}  // namespace

int exit_code(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ModelError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e))
    return kUsage;
  if (dynamic_cast<const MissingFileError*>(&e)) return kMissingFile;
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
  if (dynamic_cast<const FormatError*>(&e)) return kFormatError;
  if (dynamic_cast<const MismatchError*>(&e)) return kMismatch;
  if (dynamic_cast<const PreconditionError*>(&e) || dynamic_cast<const DiffusionError*>(&e))
    return kPrecondition;
  if (dynamic_cast<const OutputExistsError*>(&e)) return kOutputExists;
  return kFailure;
}

std::string error_kind(const std::exception& e) {
  switch (exit_code(e)) {
    case kUsage: return "usage";
    case kMissingFile: return "missing file";
    case kConfigError: return "config";
    case kFormatError: return "corrupt file";
    case kMismatch: return "mismatch";
    case kPrecondition: return "precondition";
    case kOutputExists: return "output exists";
    default: return "error";
  }
}

const std::vector<std::string>& ablation_methods() {
  static const std::vector<std::string> names{"cross_entity", "text_only", "sdedit",  "controlnet",
                                              "no_zeroconv",  "k_cross",   "v_cross", "qc_only"};
  return names;
}

void gen_data(const GenDataArgs& a, const Invocation& inv) {
  if (a.count == 0) throw UsageError("--count must be positive");
  if (a.categories.empty()) throw UsageError("--categories is empty");
  const fs::path dir(a.out);
  prepare_output_dir(dir, a.force);
  Manifest m(inv);
  DatasetOptions o;
  o.task = a.task;
  o.categories = a.categories;
  o.n_train = a.count;
  o.n_test = a.test_count;
  o.seed = a.seed;
  const Dataset ds = generate_dataset(o);
  write_dataset(ds, (dir / kDatasetFile).string());

  std::vector<std::string> cats;
  for (Category c : a.categories) cats.emplace_back(category_name(c));
  m.config()["task"] = std::string(task_name(a.task));
  m.config()["categories"] = cats;
  m.config()["count"] = a.count;
  m.config()["test_count"] = a.test_count;
  m.seed("data", a.seed);
  m.output(dir / kDatasetFile);
  m.result()["items"] = ds.items.size();
  m.write(dir / kManifestFile);
  std::cout << "gen-data: " << ds.items.size() << " " << task_name(a.task) << " items ("
            << a.count << " train, " << a.test_count << " test) -> " << (dir / kDatasetFile).string()
            << std::endl;
}

void pretrain(const TrainArgs& a, const Invocation& inv) {
  fs::path data_path;
  const Dataset ds = load_data(a.data, &data_path);
  const TrainConfig cfg = build_config(Task::Pretrain, Variant::TextOnly, a.config, a.set);
  const fs::path dir(a.out);
  prepare_output_dir(dir, a.force);
  Manifest m(inv);
  m.input("data", data_path);
  note("pretrain: " + std::to_string(cfg.steps) + " steps on " + std::to_string(ds.split(Split::Train).size()) +
       " shapes");
  TrainLog log;
  const TrainState st = pretrain_backbone(ds, cfg, Codec(), &log);
  save_checkpoint(st, (dir / kCheckpointFile).string());
  log.write_csv((dir / "train_log.csv").string());
  record_training(m, cfg, log);
  m.output(dir / kCheckpointFile);
  m.output(dir / "train_log.csv");
  m.write(dir / kManifestFile);
  std::cout << training_line("pretrain", cfg, log) << std::endl;
}

void finetune(const TrainArgs& a, const Invocation& inv) {
  fs::path data_path;
  const Dataset ds = load_data(a.data, &data_path);
  const fs::path pre_path = resolve_input(a.pretrained, kCheckpointFile);
  if (ds.task != a.task)
    throw MismatchError("dataset holds " + std::string(task_name(ds.task)) + " items, --task is " +
                        std::string(task_name(a.task)));
  const TrainConfig cfg = build_config(a.task, a.variant, a.config, a.set);
  const TrainState pre = load_checkpoint(pre_path.string(), Variant::TextOnly);
  const fs::path dir(a.out);
  prepare_output_dir(dir, a.force);
  note("finetune: " + std::string(variant_name(a.variant)) + " on " + std::string(task_name(a.task)) + ", " +
       std::to_string(cfg.steps) + " steps");
  train_into(dir, pre, ds, cfg, inv, data_path, pre_path);
}

void sample(const SampleArgs& a, const Invocation& inv) {
  if (a.export_format != "ply" && a.export_format != "obj") throw UsageError("--export must be ply or obj");
  const fs::path ck = resolve_input(a.checkpoint, kCheckpointFile);
  const TrainState st = load_checkpoint(ck.string());
  const Denoiser<float>& model = st.model;
  const auto schedule = NoiseSchedule::standard(model.config().n_steps);
  if (a.steps == 0) throw UsageError("--steps must be positive");
  if (a.steps > schedule.T) throw DiffusionError("steps exceed schedule");
  if (a.sdedit && model.variant() != Variant::TextOnly)
    throw MismatchError("--sdedit needs a text_only checkpoint, got " + std::string(variant_name(model.variant())));

  Manifest m(inv);
  m.input("checkpoint", ck);
  std::optional<VoxelGrid> guide;
  std::string prompt = a.prompt.value_or("");
  if (!a.guidance.empty()) {
    if (all_digits(a.guidance) && !fs::exists(a.guidance)) {
      if (a.data.empty()) throw UsageError("--guidance given as an item id needs --data");
      fs::path data_path;
      const Dataset ds = load_data(a.data, &data_path);
      const std::uint64_t id = std::stoull(a.guidance);
      const auto it = std::find_if(ds.items.begin(), ds.items.end(), [&](const auto& x) { return x.id == id; });
      if (it == ds.items.end()) throw UsageError("dataset has no item " + a.guidance);
      guide = voxelize(it->guide ? *it->guide : it->shape);
      if (!a.prompt) prompt = it->prompt;
      m.input("data", data_path);
      m.config()["item"] = id;
    } else {
      const fs::path gp = resolve_input(a.guidance, "output.grid");
      guide = read_grid(gp);
      m.input("guidance", gp);
    }
  }
  const bool needs_guide = is_conditional(model.variant()) || a.sdedit.has_value();
  if (needs_guide && !guide)
    throw UsageError("--guidance is required for " +
                     std::string(a.sdedit ? "sdedit" : variant_name(model.variant())));

  const fs::path dir(a.out);
  prepare_output_dir(dir, a.force);
  const Codec codec;
  if (guide && guide->resolution != codec.resolution()) throw MismatchError("guidance grid resolution differs");
  SampleOptions so;
  so.n_steps = a.steps;
  so.cfg_scale = a.cfg;
  so.clip = a.clip.value_or(3.0 * st.latent_std);
  Rng rng(a.seed);
  Tensor<float> z_c;
  if (guide) z_c = codec.encode(*guide).tensor<float>();
  Tensor<float> z;
  if (a.sdedit) {
    z = sdedit_sample(model, schedule, z_c, {prompt}, *a.sdedit, so, rng);
  } else {
    z = shapeguide::sample(model, schedule, {prompt}, is_conditional(model.variant()) ? z_c : Tensor<float>(), so,
                           rng);
  }
  const VoxelGrid out = codec.decode(Latent::from_tensor(z));

  write_grid(out, dir / "output.grid");
  m.output(dir / "output.grid");
  const Rng export_rng = Rng(a.seed).fork(0xe4e4);
  export_grid(out, dir / "output", a.export_format, a.points, export_rng.fork(1), m);
  if (guide) export_grid(*guide, dir / "guidance", a.export_format, a.points, export_rng.fork(2), m);

  m.config()["prompt"] = prompt;
  m.config()["steps"] = a.steps;
  m.config()["cfg"] = a.cfg;
  m.config()["clip"] = so.clip;
  m.config()["export"] = a.export_format;
  if (a.sdedit) m.config()["sdedit_strength"] = *a.sdedit;
  m.seed("sample", a.seed);
  m.result()["occupied_voxels"] = out.occupied_count();
  if (guide && guide->occupied_count() && out.occupied_count()) {
    Rng r1 = export_rng.fork(3), r2 = export_rng.fork(4);
    m.result()["gd_to_guidance"] = chamfer(point_cloud(out, kDefaultCloudPoints, r1),
                                           point_cloud(*guide, kDefaultCloudPoints, r2));
  }
  m.write(dir / kManifestFile);
  std::cout << "sample: " << variant_name(model.variant()) << (a.sdedit ? " (sdedit)" : "") << ", "
            << out.occupied_count() << " occupied voxels -> " << dir.string() << std::endl;
}

void eval(const EvalArgs& a, const Invocation& inv) {
  if (a.out.empty()) throw UsageError("--out is required");
  fs::path data_path;
  const Dataset ds = load_data(a.data, &data_path);
  if (a.task && *a.task != ds.task)
    throw MismatchError("dataset holds " + std::string(task_name(ds.task)) + " items, --task is " +
                        std::string(task_name(*a.task)));
  if (ds.task == Task::Pretrain) throw MismatchError("eval needs a downstream task dataset");
  const fs::path out(a.out);
  const fs::path stem = out.parent_path() / out.stem();
  auto sibling = [&](const char* suffix) {
    fs::path p = stem;
    p += suffix;
    return p;
  };
  for (const auto& p : {out, sibling("_items.csv"), sibling("_summary.txt"), sibling(".manifest.json")})
    prepare_output_file(p, a.force);

  Manifest m(inv);
  m.input("data", data_path);
  std::vector<TrainState> states;
  states.reserve(a.checkpoints.size());
  std::vector<Method> methods;
  std::vector<std::string> missing;
  std::set<std::string> names;
  const TrainState* text_only = nullptr;
  for (const auto& spec : a.checkpoints) {
    const auto eq = spec.find('=');
    std::string name = eq == std::string::npos ? "" : spec.substr(0, eq);
    const fs::path path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    const fs::path file = fs::is_directory(path) ? path / kCheckpointFile : path;
    if (!fs::exists(file)) {
      missing.push_back((name.empty() ? path.filename().string() : name) + ": missing checkpoint " + file.string());
      continue;
    }
    states.push_back(load_checkpoint(file.string()));
    const TrainState& st = states.back();
    if (st.config.task != Task::Pretrain && st.config.task != ds.task)
      throw MismatchError(file.string() + " was trained on " + std::string(task_name(st.config.task)) +
                          ", dataset holds " + std::string(task_name(ds.task)));
    if (name.empty()) name = std::string(variant_name(st.model.variant()));
    if (!names.insert(name).second) throw UsageError("duplicate method name '" + name + "' (use name=path)");
    methods.push_back({name, MethodKind::Model, &st.model});
    m.input(name, file);
    if (st.model.variant() == Variant::TextOnly && !text_only) text_only = &st;
  }
  if (a.sdedit && text_only) {
    if (!names.insert("sdedit").second) throw UsageError("duplicate method name 'sdedit'");
    methods.push_back({"sdedit", MethodKind::Sdedit, &text_only->model, a.sdedit_strength});
    m.config()["sdedit_strength"] = a.sdedit_strength;
  }
  if (a.identity) methods.push_back({"identity", MethodKind::Identity});
  if (methods.empty()) throw MissingFileError("no checkpoint could be loaded" +
                                              (missing.empty() ? std::string() : ": " + join(missing, "; ")));

  const SuiteOptions so = suite_options(a.suite, states.empty() ? 0.0 : states.front().latent_std);
  note("eval: " + std::to_string(methods.size()) + " methods on " + std::to_string(so.n_items) + " " +
       std::string(task_name(ds.task)) + " items");
  MetricReport r = run_suite(methods, ds, Codec(), so);
  r.skipped.insert(r.skipped.begin(), missing.begin(), missing.end());

  write_aggregates_csv(r, out.string());
  write_items_csv(r, sibling("_items.csv").string());
  const std::string text = summary_text(r);
  std::ofstream(sibling("_summary.txt")) << text;
  suite_manifest(m, so);
  m.config()["task"] = std::string(task_name(ds.task));
  m.result()["skipped"] = r.skipped;
  for (const auto& p : {out, sibling("_items.csv"), sibling("_summary.txt")}) m.output(p);
  m.write(sibling(".manifest.json"));
  std::cout << text;
}

void ablate(const AblateArgs& a, const Invocation& inv) {
  const auto& grid = ablation_methods();
  std::vector<std::string> wanted;
  for (const auto& v : a.variants) {
    if (v == "all") {
      wanted = grid;
      break;
    }
    if (std::find(grid.begin(), grid.end(), v) == grid.end())
      throw UsageError("unknown ablation variant '" + v + "' (expected all or one of " + join(grid, ", ") + ")");
    if (std::find(wanted.begin(), wanted.end(), v) == wanted.end()) wanted.push_back(v);
  }
  if (wanted.empty()) throw UsageError("--variants is empty");
  for (double s : a.sweep)
    if (!(s > 0 && s <= 1)) throw UsageError("sdedit sweep strengths must lie in (0, 1]");

  fs::path data_path;
  const Dataset ds = load_data(a.data, &data_path);
  if (ds.task == Task::Pretrain) throw MismatchError("ablate needs a downstream task dataset");
  const fs::path pre_path = resolve_input(a.pretrained, kCheckpointFile);
  const TrainState pre = load_checkpoint(pre_path.string(), Variant::TextOnly);
  // Validate every config before spending time on training.
  std::map<std::string, TrainConfig> configs;
  const bool need_text_only =
      std::find(wanted.begin(), wanted.end(), "sdedit") != wanted.end() ||
      std::find(wanted.begin(), wanted.end(), "text_only") != wanted.end();
  for (const auto& name : wanted)
    if (name != "sdedit") configs[name] = build_config(ds.task, parse_variant(name), a.config, a.set);
  if (need_text_only && !configs.count("text_only"))
    configs["text_only"] = build_config(ds.task, Variant::TextOnly, a.config, a.set);

  const fs::path dir(a.out);
  prepare_output_dir(dir, a.force);
  Manifest m(inv);
  m.input("data", data_path);
  m.input("pretrained", pre_path);

  std::map<std::string, TrainState> states;
  for (const auto& name : wanted) {
    if (name == "sdedit") continue;
    fs::create_directories(dir / name);
    note("ablate: finetuning " + name + " (" + std::to_string(configs[name].steps) + " steps)");
    states.emplace(name, train_into(dir / name, pre, ds, configs[name], inv, data_path, pre_path));
  }
  const bool sdedit = std::find(wanted.begin(), wanted.end(), "sdedit") != wanted.end();
  if (sdedit) fs::create_directories(dir / "sdedit");
  if (sdedit && !states.count("text_only")) {
    note("ablate: finetuning text_only for sdedit");
    fs::create_directories(dir / "sdedit" / "text_only");
    states.emplace("text_only", train_into(dir / "sdedit" / "text_only", pre, ds, configs["text_only"], inv,
                                           data_path, pre_path));
  }

  std::vector<Method> methods;
  for (const auto& name : wanted) {
    if (name == "sdedit")
      methods.push_back({name, MethodKind::Sdedit, &states.at("text_only").model, kDefaultSdeditStrength});
    else
      methods.push_back({name, MethodKind::Model, &states.at(name).model});
  }
  methods.push_back({"identity", MethodKind::Identity});
  const SuiteOptions so = suite_options(a.suite, pre.latent_std);
  note("ablate: evaluating " + std::to_string(methods.size()) + " methods on " + std::to_string(so.n_items) +
       " items");
  const auto eval_start = std::chrono::steady_clock::now();
  const MetricReport r = run_suite(methods, ds, Codec(), so);
  m.result()["eval_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - eval_start).count();
  write_aggregates_csv(r, (dir / "report.csv").string());
  write_items_csv(r, (dir / "items.csv").string());
  for (const auto& name : wanted) write_aggregates_csv(only(r, name), (dir / name / "metrics.csv").string());

  std::string text = summary_text(r);
  if (sdedit && !a.sweep.empty()) {
    std::vector<Method> sweep;
    for (double s : a.sweep)
      sweep.push_back({"sdedit@" + fixed(s, 2), MethodKind::Sdedit, &states.at("text_only").model, s});
    note("ablate: sdedit strength sweep");
    const MetricReport sr = run_suite(sweep, ds, Codec(), so);
    write_aggregates_csv(sr, (dir / "sdedit" / "sweep.csv").string());
    text += "\nsdedit strength sweep\n" + summary_text(sr.aggregates);
    m.output(dir / "sdedit" / "sweep.csv");
  }
  if (sdedit) {
    Manifest sm(inv);
    const bool own = std::find(wanted.begin(), wanted.end(), "text_only") == wanted.end();
    sm.input("text_only", (own ? dir / "sdedit" / "text_only" : dir / "text_only") / kCheckpointFile);
    sm.config()["strength"] = kDefaultSdeditStrength;
    sm.config()["sweep"] = a.sweep;
    sm.output(dir / "sdedit" / "metrics.csv");
    if (!a.sweep.empty()) sm.output(dir / "sdedit" / "sweep.csv");
    sm.write(dir / "sdedit" / kManifestFile);
  }
  std::ofstream(dir / "summary.txt") << text;

  suite_manifest(m, so);
  m.config()["task"] = std::string(task_name(ds.task));
  m.config()["variants"] = wanted;
  m.config()["overrides"] = a.set;
  for (const auto& f : {"report.csv", "items.csv", "summary.txt"}) m.output(dir / f);
  m.write(dir / kManifestFile);
  std::cout << text;
}

void report(const ReportArgs& a, const Invocation& inv) {
  const fs::path in = resolve_input(a.in, "report.csv");
  const auto aggs = read_aggregates_csv(in.string());
  if (aggs.empty()) throw FormatError(in.string() + ": no rows");
  const fs::path dir(a.out);
  prepare_output_dir(dir, a.force);
  Manifest m(inv);
  m.input("report", in);

  std::vector<std::string> methods, groups{"all"};
  for (const auto& x : aggs) {
    if (std::find(methods.begin(), methods.end(), x.method) == methods.end()) methods.push_back(x.method);
    if (std::find(groups.begin(), groups.end(), x.category) == groups.end()) groups.push_back(x.category);
  }
  auto chart = [&](const std::string& title, const std::string& label, double Aggregate::*field) {
    BarChart c{title, label, methods, groups, {}};
    for (const auto& meth : methods) {
      std::vector<double> row(groups.size(), std::numeric_limits<double>::quiet_NaN());
      for (const auto& x : aggs)
        if (x.method == meth)
          row[std::find(groups.begin(), groups.end(), x.category) - groups.begin()] = x.*field;
      c.values.push_back(row);
    }
    return render_svg(c);
  };
  const std::vector<std::tuple<std::string, std::string, double Aggregate::*>> plots{
      {"gd.svg", "Geometric difference to the guidance (lower is better)", &Aggregate::gd},
      {"sim.svg", "Prompt similarity (higher is better)", &Aggregate::sim},
      {"lab.svg", "Association boost over the input", &Aggregate::lab},
  };
  for (const auto& [file, title, field] : plots) {
    std::ofstream(dir / file) << chart(title, std::string(file.substr(0, file.find('.'))), field);
    m.output(dir / file);
  }
  const std::string text = summary_text(aggs);
  std::ofstream(dir / "summary.txt") << text;
  m.output(dir / "summary.txt");
  m.write(dir / kManifestFile);
  std::cout << text;
}

}  // namespace shapeguide::cli
