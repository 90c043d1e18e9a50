#include <gtest/gtest.h>

#include <filesystem>

#include "shapeguide/binio.hpp"
#include "shapeguide/dataset.hpp"

using namespace shapeguide;

namespace {

DatasetOptions small(Task task, std::uint64_t seed) {
  DatasetOptions o;
  o.task = task;
  o.n_train = 24;
  o.n_test = 6;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(Dataset, RoundTripEveryTask) {
  for (Task t : {Task::Pretrain, Task::Abstraction, Task::Editing, Task::Stylization}) {
    const Dataset ds = generate_dataset(small(t, 3));
    EXPECT_EQ(deserialize_dataset(serialize_dataset(ds)), ds);
  }
}

TEST(Dataset, SameSeedIsByteIdentical) {
  EXPECT_EQ(serialize_dataset(generate_dataset(small(Task::Editing, 7))),
            serialize_dataset(generate_dataset(small(Task::Editing, 7))));
  EXPECT_NE(serialize_dataset(generate_dataset(small(Task::Editing, 7))),
            serialize_dataset(generate_dataset(small(Task::Editing, 8))));
}

TEST(Dataset, SplitsAndTaskPayloads) {
  const Dataset ds = generate_dataset(small(Task::Abstraction, 1));
  EXPECT_EQ(ds.split(Split::Train).size(), 24u);
  EXPECT_EQ(ds.split(Split::Test).size(), 6u);
  for (const auto& it : ds.items) {
    ASSERT_TRUE(it.guide.has_value());
    EXPECT_EQ(*it.guide, abstract_shape(it.shape));
    EXPECT_EQ(it.prompt, render_text(it.shape));
  }
  const Dataset ed = generate_dataset(small(Task::Editing, 1));
  for (const auto& it : ed.items) {
    EXPECT_FALSE(it.edited_attribute.empty());
    EXPECT_EQ(parse_prompt(it.prompt).edit_attribute, it.edited_attribute);
  }
  const Dataset pre = generate_dataset(small(Task::Pretrain, 1));
  for (const auto& it : pre.items) EXPECT_FALSE(it.guide.has_value());
}

TEST(Dataset, RejectsCorruption) {
  auto bytes = serialize_dataset(generate_dataset(small(Task::Stylization, 2)));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_dataset(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 99;
  EXPECT_THROW(deserialize_dataset(bad_version), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(deserialize_dataset(truncated), FormatError);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(deserialize_dataset(flipped), FormatError);
}

TEST(Dataset, FileRoundTripAndMissingFile) {
  const auto path = (std::filesystem::temp_directory_path() / "sg_dataset.bin").string();
  const Dataset ds = generate_dataset(small(Task::Pretrain, 4));
  write_dataset(ds, path);
  EXPECT_EQ(read_dataset(path), ds);
  EXPECT_THROW(read_dataset(path + ".missing"), MissingFileError);
}

// Documented bound: under 1.6 KiB per editing item (two specs with up to 8 parts).
TEST(Dataset, SizeBound) {
  DatasetOptions o = small(Task::Editing, 5);
  o.n_train = 10000;
  o.n_test = 0;
  const auto bytes = serialize_dataset(generate_dataset(o));
  EXPECT_LT(bytes.size(), 10000u * 1600u);
}
