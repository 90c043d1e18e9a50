#pragma once

// Baseline / ablation experiment harness: samples every method on the same
// test items with per-item seeds, scores the outputs and aggregates.
//
// Per-item metrics compare the output with the item's guidance shape:
//   gd        chamfer(output cloud, guidance cloud)
//   lgd       local_gd on parts the edit does not touch (editing items only)
//   sim       sim(output, prompt)
//   lab       sim(output, prompt) - sim(guidance, prompt)
//   dir_sim   dir_sim(guidance, output, source prompt, prompt)
//   cd        class_distortion(guidance, output)
// An empty output is scored against a single point at the grid center and
// flagged; it stays in every aggregate.
//
// CSV columns
//   items:      method,item,category,gd,lgd,lgd_defined,sim,lab,dir_sim,dir_defined,cd,empty
//   aggregates: method,category,n,gd,lgd,lgd_n,sim,lab,dir_sim,dir_n,cd,fpd,empty
// Means over optional columns (lgd, dir_sim) use only the defined items.

#include <optional>
#include <string>
#include <vector>

#include "shapeguide/codec.hpp"
#include "shapeguide/dataset.hpp"
#include "shapeguide/diffusion.hpp"
#include "shapeguide/metrics.hpp"
#include "shapeguide/model.hpp"

namespace shapeguide {

enum class MethodKind { Model, Sdedit, Identity };

struct Method {
  std::string name;
  MethodKind kind = MethodKind::Model;
  const Denoiser<float>* model = nullptr;  // text_only model for Sdedit, unused for Identity
  double strength = kDefaultSdeditStrength;
};

struct SuiteOptions {
  std::size_t n_items = 64;
  std::size_t steps = 64;
  double cfg_scale = 1.0;
  double clip = 0.0;
  std::size_t cloud_points = kDefaultCloudPoints;
  std::uint64_t seed = 0;
  /// 0 = SHAPEGUIDE_THREADS, else hardware concurrency.
  std::size_t threads = 0;
};

struct ItemResult {
  std::string method;
  std::uint64_t item = 0;
  Category category = Category::Table;
  double gd = 0;
  std::optional<double> lgd;
  double sim = 0;
  double lab = 0;
  DirSim dir;
  double cd = 0;
  bool empty = false;
};

struct Aggregate {
  std::string method;
  std::string category;  // "all" or a category name
  std::size_t n = 0;
  double gd = 0;
  double lgd = 0;
  std::size_t lgd_n = 0;
  double sim = 0;
  double lab = 0;
  double dir_sim = 0;
  std::size_t dir_n = 0;
  double cd = 0;
  double fpd = std::numeric_limits<double>::quiet_NaN();
  std::size_t empty = 0;
};

struct MetricReport {
  Task task = Task::Abstraction;
  SuiteOptions options;
  std::vector<ItemResult> items;
  std::vector<Aggregate> aggregates;
  std::vector<std::string> skipped;  // "name: reason"

  const Aggregate& aggregate(std::string_view method, std::string_view category = "all") const;
  std::vector<std::string> methods() const;
};

std::size_t default_threads();

/// The first n_items test items of `ds`.
std::vector<const DatasetItem*> test_items(const Dataset& ds, std::size_t n_items);

/// Decoded output grid per item; item k is sampled from Rng(seed).fork(id).
std::vector<VoxelGrid> run_method(const Method& method, const std::vector<const DatasetItem*>& items,
                                  const Codec& codec, const SuiteOptions& options);

ItemResult score_item(const DatasetItem& item, const VoxelGrid& output, std::string method,
                      const SuiteOptions& options);

/// Aggregates per method (all items, then each category present).
std::vector<Aggregate> aggregate(const std::vector<ItemResult>& items,
                                 const std::vector<const DatasetItem*>& test,
                                 const std::vector<std::pair<std::string, std::vector<VoxelGrid>>>& outputs);

/// Runs and scores every method on the same items.
MetricReport run_suite(const std::vector<Method>& methods, const Dataset& ds, const Codec& codec,
                       const SuiteOptions& options);

void write_items_csv(const MetricReport& report, const std::string& path);
void write_aggregates_csv(const MetricReport& report, const std::string& path);
std::vector<Aggregate> read_aggregates_csv(const std::string& path);
/// Methods ordered by mean GD with the main aggregate columns.
std::string summary_text(const MetricReport& report);
std::string summary_text(const std::vector<Aggregate>& aggregates);

/// One-sided sign test: P(X >= positives) for X ~ Binomial(positives + negatives, 1/2).
double sign_test_p(std::size_t positives, std::size_t negatives);

}  // namespace shapeguide
