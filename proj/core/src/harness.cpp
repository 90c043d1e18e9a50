#include "shapeguide/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "shapeguide/binio.hpp"
#include "shapeguide/train.hpp"

namespace shapeguide {

namespace {

constexpr std::uint64_t kGuideCloud = 1, kOutputCloud = 2;

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

PointCloud cloud_or_center(const VoxelGrid& grid, std::size_t n, Rng rng) {
  if (grid.occupied_count() == 0) {
    PointCloud c;
    c.points.push_back({0.5, 0.5, 0.5});
    return c;
  }
  return point_cloud(grid, n, rng);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

const Aggregate& MetricReport::aggregate(std::string_view method, std::string_view category) const {
  for (const auto& a : aggregates)
    if (a.method == method && a.category == category) return a;
  throw std::out_of_range("no aggregate for " + std::string(method) + "/" + std::string(category));
}

std::vector<std::string> MetricReport::methods() const {
  std::vector<std::string> out;
  for (const auto& a : aggregates)
    if (a.category == "all") out.push_back(a.method);
  return out;
}

std::size_t default_threads() {
  if (const char* env = std::getenv("SHAPEGUIDE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<const DatasetItem*> test_items(const Dataset& ds, std::size_t n_items) {
  auto items = ds.split(Split::Test);
  if (items.size() > n_items) items.resize(n_items);
  for (const auto* it : items)
    if (!it->guide) throw MismatchError("test item " + std::to_string(it->id) + " has no guidance shape");
  return items;
}

std::vector<VoxelGrid> run_method(const Method& method, const std::vector<const DatasetItem*>& items,
                                  const Codec& codec, const SuiteOptions& options) {
  if (method.kind != MethodKind::Identity && method.model == nullptr)
    throw std::invalid_argument("method " + method.name + " has no model");
  if (method.kind == MethodKind::Sdedit && method.model->variant() != Variant::TextOnly)
    throw MismatchError("sdedit runs on a text_only model");
  std::vector<VoxelGrid> out(items.size());
  std::optional<NoiseSchedule> schedule;
  if (method.model) schedule = NoiseSchedule::standard(method.model->config().n_steps);
  SampleOptions so;
  so.n_steps = options.steps;
  so.cfg_scale = options.cfg_scale;
  so.clip = options.clip;
  if (method.model && so.n_steps > schedule->T) throw DiffusionError("steps exceed schedule");

  parallel_for(items.size(), options.threads ? options.threads : default_threads(), [&](std::size_t k) {
    const DatasetItem& item = *items[k];
    const VoxelGrid guide = voxelize(*item.guide, codec.resolution());
    if (method.kind == MethodKind::Identity) {
      out[k] = guide;
      return;
    }
    Rng rng = Rng(options.seed).fork(item.id);
    const Tensor<float> z_c = codec.encode(guide).tensor<float>();
    Tensor<float> z;
    if (method.kind == MethodKind::Sdedit) {
      z = sdedit_sample(*method.model, *schedule, z_c, {item.prompt}, method.strength, so, rng);
    } else {
      z = sample(*method.model, *schedule, {item.prompt},
                 is_conditional(method.model->variant()) ? z_c : Tensor<float>(), so, rng);
    }
    out[k] = codec.decode(Latent::from_tensor(z));
  });
  return out;
}

ItemResult score_item(const DatasetItem& item, const VoxelGrid& output, std::string method,
                      const SuiteOptions& options) {
  if (!item.guide) throw MismatchError("item without guidance shape");
  const Category c = item.shape.category;
  const VoxelGrid input = voxelize(*item.guide, output.resolution);
  const Rng base = Rng(options.seed).fork(item.id);
  const PointCloud in_cloud = cloud_or_center(input, options.cloud_points, base.fork(kGuideCloud));
  const PointCloud out_cloud = cloud_or_center(output, options.cloud_points, base.fork(kOutputCloud));

  ItemResult r;
  r.method = std::move(method);
  r.item = item.id;
  r.category = c;
  r.empty = output.occupied_count() == 0;
  r.gd = chamfer(out_cloud, in_cloud);
  if (!item.edited_attribute.empty() && !r.empty)
    r.lgd = local_gd(in_cloud, out_cloud, c, item.edited_attribute);
  r.sim = sim(output, item.prompt, c).value_or(0.0);
  r.lab = lab_analog(input, output, item.prompt, c);
  r.dir = dir_sim(input, output, item.source_prompt, item.prompt, c);
  r.cd = class_distortion(input, output, c);
  return r;
}

std::vector<Aggregate> aggregate(const std::vector<ItemResult>& items,
                                 const std::vector<const DatasetItem*>& test,
                                 const std::vector<std::pair<std::string, std::vector<VoxelGrid>>>& outputs) {
  std::vector<Aggregate> out;
  for (const auto& [name, grids] : outputs) {
    // FPD per category against the ground-truth shapes of the same items.
    std::map<Category, double> fpd;
    for (Category c : kAllCategories) {
      std::vector<VoxelGrid> gen, ref;
      for (std::size_t k = 0; k < test.size() && k < grids.size(); ++k)
        if (test[k]->shape.category == c) {
          gen.push_back(grids[k]);
          ref.push_back(voxelize(test[k]->shape, grids[k].resolution));
        }
      if (gen.size() >= 2) fpd[c] = fpd_analog(gen, ref, c);
    }
    std::vector<std::string> groups{"all"};
    for (Category c : kAllCategories) groups.emplace_back(category_name(c));
    for (const auto& group : groups) {
      Aggregate a;
      a.method = name;
      a.category = group;
      std::vector<double> gd, lgd, sm, lab, dir, cd;
      for (const auto& r : items) {
        if (r.method != name) continue;
        if (group != "all" && category_name(r.category) != group) continue;
        ++a.n;
        gd.push_back(r.gd);
        if (r.lgd) lgd.push_back(*r.lgd);
        sm.push_back(r.sim);
        lab.push_back(r.lab);
        if (r.dir.defined) dir.push_back(r.dir.value);
        cd.push_back(r.cd);
        a.empty += r.empty ? 1 : 0;
      }
      if (a.n == 0) continue;
      a.gd = mean_of(gd);
      a.lgd = mean_of(lgd);
      a.lgd_n = lgd.size();
      a.sim = mean_of(sm);
      a.lab = mean_of(lab);
      a.dir_sim = mean_of(dir);
      a.dir_n = dir.size();
      a.cd = mean_of(cd);
      if (group == "all") {
        std::vector<double> f;
        for (const auto& [c, v] : fpd) f.push_back(v);
        a.fpd = mean_of(f);
      } else if (auto it = fpd.find(parse_category(group)); it != fpd.end()) {
        a.fpd = it->second;
      }
      out.push_back(a);
    }
  }
  return out;
}

MetricReport run_suite(const std::vector<Method>& methods, const Dataset& ds, const Codec& codec,
                       const SuiteOptions& options) {
  MetricReport report;
  report.task = ds.task;
  report.options = options;
  const auto test = test_items(ds, options.n_items);
  if (test.empty()) throw std::invalid_argument("dataset has no test items");
  std::vector<std::pair<std::string, std::vector<VoxelGrid>>> outputs;
  for (const auto& m : methods) {
    if (m.kind != MethodKind::Identity && m.model == nullptr) {
      report.skipped.push_back(m.name + ": no checkpoint");
      continue;
    }
    auto grids = run_method(m, test, codec, options);
    std::vector<ItemResult> scored(test.size());
    parallel_for(test.size(), options.threads ? options.threads : default_threads(),
                 [&](std::size_t k) { scored[k] = score_item(*test[k], grids[k], m.name, options); });
    report.items.insert(report.items.end(), scored.begin(), scored.end());
    outputs.emplace_back(m.name, std::move(grids));
  }
  report.aggregates = aggregate(report.items, test, outputs);
  return report;
}

void write_items_csv(const MetricReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "method,item,category,gd,lgd,lgd_defined,sim,lab,dir_sim,dir_defined,cd,empty\n";
  for (const auto& r : report.items)
    out << r.method << ',' << r.item << ',' << category_name(r.category) << ',' << num(r.gd) << ','
        << (r.lgd ? num(*r.lgd) : "") << ',' << (r.lgd ? 1 : 0) << ',' << num(r.sim) << ','
        << num(r.lab) << ',' << num(r.dir.value) << ',' << (r.dir.defined ? 1 : 0) << ','
        << num(r.cd) << ',' << (r.empty ? 1 : 0) << '\n';
}

void write_aggregates_csv(const MetricReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "method,category,n,gd,lgd,lgd_n,sim,lab,dir_sim,dir_n,cd,fpd,empty\n";
  for (const auto& a : report.aggregates)
    out << a.method << ',' << a.category << ',' << a.n << ',' << num(a.gd) << ',' << num(a.lgd) << ','
        << a.lgd_n << ',' << num(a.sim) << ',' << num(a.lab) << ',' << num(a.dir_sim) << ','
        << a.dir_n << ',' << num(a.cd) << ',' << num(a.fpd) << ',' << a.empty << '\n';
}

std::vector<Aggregate> read_aggregates_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("method,category,n,gd", 0) != 0)
    throw FormatError(path + ": not an aggregate report (unexpected header)");
  auto to_d = [](const std::string& s) {
    return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
  };
  std::vector<Aggregate> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 13) throw FormatError(path + ": line " + std::to_string(lineno) + " has " +
                                          std::to_string(f.size()) + " columns, expected 13");
    try {
      Aggregate a;
      a.method = f[0];
      a.category = f[1];
      a.n = std::stoul(f[2]);
      a.gd = to_d(f[3]);
      a.lgd = to_d(f[4]);
      a.lgd_n = std::stoul(f[5]);
      a.sim = to_d(f[6]);
      a.lab = to_d(f[7]);
      a.dir_sim = to_d(f[8]);
      a.dir_n = std::stoul(f[9]);
      a.cd = to_d(f[10]);
      a.fpd = to_d(f[11]);
      a.empty = std::stoul(f[12]);
      out.push_back(a);
    } catch (const std::logic_error&) {
      throw FormatError(path + ": line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

std::string summary_text(const std::vector<Aggregate>& aggregates) {
  std::vector<const Aggregate*> rows;
  for (const auto& a : aggregates)
    if (a.category == "all") rows.push_back(&a);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Aggregate* a, const Aggregate* b) { return a->gd < b->gd; });
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %5s %9s %9s %7s %8s %8s %7s %8s %5s\n", "method", "n", "gd",
                "lgd", "sim", "lab", "dir_sim", "cd", "fpd", "empty");
  out << buf;
  for (const auto* a : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %5zu %9.5f %9.5f %7.4f %8.4f %8.4f %7.4f %8.4f %5zu\n",
                  a->method.c_str(), a->n, a->gd, a->lgd, a->sim, a->lab, a->dir_sim, a->cd, a->fpd,
                  a->empty);
    out << buf;
  }
  return out.str();
}

std::string summary_text(const MetricReport& report) {
  std::string s = "task " + std::string(task_name(report.task)) + ", " +
                  std::to_string(report.options.n_items) + " items, seed " +
                  std::to_string(report.options.seed) + ", ordered by gd\n";
  s += summary_text(report.aggregates);
  for (const auto& k : report.skipped) s += "skipped " + k + "\n";
  return s;
}

double sign_test_p(std::size_t positives, std::size_t negatives) {
  const std::size_t n = positives + negatives;
  if (n == 0) return 1.0;
  double p = 0;
  for (std::size_t k = positives; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                  static_cast<double>(n) * std::log(2.0));
  return std::min(1.0, p);
}

}  // namespace shapeguide
