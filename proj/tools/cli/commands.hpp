#pragma once

// The shapeguide subcommands as library functions. Each validates its inputs,
// writes its artifacts and a manifest.json, and reports failures by throwing;
// `exit_code` maps the exception to the documented process exit status.
//
// Exit codes
//   0 ok                 4 config parse error     7 precondition violated
//   1 other failure      5 corrupt input file     8 output exists (no --force)
//   2 usage error        6 task/variant mismatch
//   3 missing file

#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "artifacts.hpp"
#include "shapeguide/dataset.hpp"
#include "shapeguide/diffusion.hpp"
#include "shapeguide/model.hpp"

namespace shapeguide::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kMissingFile = 3,
  kConfigError = 4,
  kFormatError = 5,
  kMismatch = 6,
  kPrecondition = 7,
  kOutputExists = 8,
};

int exit_code(const std::exception& e);
/// Short error class name used in the one-line diagnostic.
std::string error_kind(const std::exception& e);

struct GenDataArgs {
  Task task = Task::Pretrain;
  std::vector<Category> categories{kAllCategories.begin(), kAllCategories.end()};
  std::size_t count = 4096;
  std::size_t test_count = 512;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
};

struct TrainArgs {
  std::string data;
  std::string config;            // optional key=value file
  std::vector<std::string> set;  // key=value overrides applied after the file
  std::string pretrained;        // finetune only
  Task task = Task::Abstraction; // finetune only
  Variant variant = Variant::CrossEntity;
  std::string out;
  bool force = false;
};

struct SampleArgs {
  std::string checkpoint;
  std::string guidance;  // dataset item id (with --data) or a grid file
  std::string data;
  std::optional<std::string> prompt;
  std::size_t steps = 64;
  double cfg = 1.0;
  std::uint64_t seed = 0;
  std::string export_format = "ply";
  std::optional<double> sdedit;  // strength; text_only checkpoints only
  std::optional<double> clip;    // default 3 x the checkpoint's latent std
  std::size_t points = 2048;
  std::string out;
  bool force = false;
};

struct SuiteArgs {
  std::size_t items = 64;
  std::size_t steps = 64;
  double cfg = 1.0;
  std::optional<double> clip;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

struct EvalArgs {
  /// "path" or "name=path"; the default name is the checkpoint's variant.
  std::vector<std::string> checkpoints;
  std::string data;
  std::optional<Task> task;
  bool identity = false;
  bool sdedit = true;  // add sdedit when a text_only checkpoint is given
  double sdedit_strength = kDefaultSdeditStrength;
  SuiteArgs suite;
  std::string out;  // report.csv
  bool force = false;
};

struct AblateArgs {
  std::string pretrained;
  std::string data;
  std::string config;
  std::vector<std::string> set;
  std::vector<std::string> variants{"all"};
  std::vector<double> sweep{0.2, 0.4, 0.6, 0.8, 1.0};
  SuiteArgs suite;
  std::string out;
  bool force = false;
};

struct ReportArgs {
  std::string in;
  std::string out;
  bool force = false;
};

/// Method names of the ablation grid in report order.
const std::vector<std::string>& ablation_methods();

void gen_data(const GenDataArgs& a, const Invocation& inv);
void pretrain(const TrainArgs& a, const Invocation& inv);
void finetune(const TrainArgs& a, const Invocation& inv);
void sample(const SampleArgs& a, const Invocation& inv);
void eval(const EvalArgs& a, const Invocation& inv);
void ablate(const AblateArgs& a, const Invocation& inv);
void report(const ReportArgs& a, const Invocation& inv);

}  // namespace shapeguide::cli
