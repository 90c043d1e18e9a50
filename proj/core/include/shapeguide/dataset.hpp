#pragma once

// Generated task datasets and their binary container.
//
// Layout (little-endian):
//   "SGDS" | u32 version | u8 task | u64 seed | u64 count
//   count x item:
//     u64 id | u8 split | spec shape | u8 has_guide | [spec guide]
//     str prompt | str source_prompt | str edited_attribute
//   u64 FNV-1a of everything above
// spec: u8 category | u32 n_levels | i32 levels.. | i32 color | u64 seed |
//       u32 n_parts | part.. | u32 n_attr | f64 values.. | u8 valid..
// part: u8 primitive | 9 x f64 (center, half_extents, color) | str label
// str:  u32 length | bytes

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shapeguide/shapes.hpp"

namespace shapeguide {

enum class Task : std::uint8_t { Pretrain = 0, Abstraction = 1, Editing = 2, Stylization = 3 };
std::string_view task_name(Task t);
Task parse_task(std::string_view name);

enum class Split : std::uint8_t { Train = 0, Test = 1 };

/// One training or evaluation example.
///
///   pretrain     shape = X, no guide, prompt = render_text(X)
///   abstraction  shape = X, guide = abstract_shape(X), prompt = render_text(X),
///                source_prompt = render_text(guide)
///   editing      shape = target, guide = distractor, prompt = edit prompt,
///                source_prompt = render_text(distractor)
///   stylization  shape = X, guide = strip_style(X), prompt = render_text(X),
///                source_prompt = render_text(guide)
struct DatasetItem {
  std::uint64_t id = 0;
  Split split = Split::Train;
  ShapeSpec shape;
  std::optional<ShapeSpec> guide;
  std::string prompt;
  std::string source_prompt;
  std::string edited_attribute;

  bool operator==(const DatasetItem&) const = default;
};

struct Dataset {
  Task task = Task::Pretrain;
  std::uint64_t seed = 0;
  std::vector<DatasetItem> items;

  std::vector<const DatasetItem*> split(Split s) const;
  bool operator==(const Dataset&) const = default;
};

struct DatasetOptions {
  Task task = Task::Pretrain;
  std::vector<Category> categories{kAllCategories.begin(), kAllCategories.end()};
  std::size_t n_train = 4096;
  std::size_t n_test = 512;
  std::uint64_t seed = 0;
};

/// Item i is generated from Rng(seed).fork(i) with category categories[i % n];
/// the first n_train items are the train split.
Dataset generate_dataset(const DatasetOptions& options);
DatasetItem make_item(Task task, Category category, std::uint64_t id, Split split, Rng rng);

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace shapeguide
