#include "shapeguide/dataset.hpp"

#include <fstream>
#include <iterator>

#include "shapeguide/binio.hpp"

namespace shapeguide {

namespace {

constexpr std::string_view kMagic = "SGDS";
constexpr std::uint32_t kVersion = 1;

void put_spec(ByteWriter& w, const ShapeSpec& s) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.category));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.levels.size()));
  for (int l : s.levels) w.put<std::int32_t>(l);
  w.put<std::int32_t>(s.color);
  w.put<std::uint64_t>(s.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.parts.size()));
  for (const Part& p : s.parts) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.primitive));
    for (const Vec3* v : {&p.center, &p.half_extents, &p.color})
      for (double x : *v) w.put<double>(x);
    w.put_string(p.label);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.attributes.size()));
  w.put_array<double>(s.attributes.values);
  w.put_array<std::uint8_t>(s.attributes.valid);
}

ShapeSpec get_spec(ByteReader& r) {
  ShapeSpec s;
  const auto cat = r.get<std::uint8_t>();
  if (cat > 2) r.fail("bad category tag");
  s.category = static_cast<Category>(cat);
  const auto n_levels = r.get<std::uint32_t>();
  if (n_levels != schema(s.category).attributes.size()) r.fail("level count does not match schema");
  for (std::uint32_t i = 0; i < n_levels; ++i) s.levels.push_back(r.get<std::int32_t>());
  s.color = r.get<std::int32_t>();
  s.seed = r.get<std::uint64_t>();
  const auto n_parts = r.get<std::uint32_t>();
  if (n_parts > 64) r.fail("implausible part count");
  for (std::uint32_t i = 0; i < n_parts; ++i) {
    Part p;
    const auto prim = r.get<std::uint8_t>();
    if (prim > 2) r.fail("bad primitive tag");
    p.primitive = static_cast<Primitive>(prim);
    for (Vec3* v : {&p.center, &p.half_extents, &p.color})
      for (double& x : *v) x = r.get<double>();
    p.label = r.get_string();
    s.parts.push_back(std::move(p));
  }
  const auto n_attr = r.get<std::uint32_t>();
  if (n_attr != schema(s.category).width()) r.fail("attribute width does not match schema");
  s.attributes.category = s.category;
  s.attributes.values = r.get_array<double>(n_attr);
  s.attributes.valid = r.get_array<std::uint8_t>(n_attr);
  return s;
}

}  // namespace

std::string_view task_name(Task t) {
  switch (t) {
    case Task::Pretrain: return "pretrain";
    case Task::Abstraction: return "abstraction";
    case Task::Editing: return "editing";
    case Task::Stylization: return "stylization";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  for (Task t : {Task::Pretrain, Task::Abstraction, Task::Editing, Task::Stylization})
    if (task_name(t) == name) return t;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

std::vector<const DatasetItem*> Dataset::split(Split s) const {
  std::vector<const DatasetItem*> out;
  for (const auto& it : items)
    if (it.split == s) out.push_back(&it);
  return out;
}

DatasetItem make_item(Task task, Category category, std::uint64_t id, Split split, Rng rng) {
  DatasetItem item;
  item.id = id;
  item.split = split;
  const ShapeSpec shape = sample_shape(rng, category);
  switch (task) {
    case Task::Pretrain:
      item.shape = shape;
      item.prompt = render_text(shape);
      break;
    case Task::Abstraction:
      item.shape = shape;
      item.guide = abstract_shape(shape);
      item.prompt = render_text(shape);
      item.source_prompt = render_text(*item.guide);
      break;
    case Task::Editing: {
      EditPair pair = make_edit_pair(rng, shape);
      item.shape = std::move(pair.target);
      item.guide = std::move(pair.distractor);
      item.prompt = std::move(pair.prompt);
      item.source_prompt = render_text(*item.guide);
      item.edited_attribute = std::move(pair.edited_attribute);
      break;
    }
    case Task::Stylization:
      item.shape = shape;
      item.guide = strip_style(shape);
      item.prompt = render_text(shape);
      item.source_prompt = render_text(*item.guide);
      break;
  }
  return item;
}

Dataset generate_dataset(const DatasetOptions& options) {
  if (options.categories.empty()) throw std::invalid_argument("no categories requested");
  Dataset ds;
  ds.task = options.task;
  ds.seed = options.seed;
  const Rng root(options.seed);
  const std::size_t total = options.n_train + options.n_test;
  ds.items.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const Category c = options.categories[i % options.categories.size()];
    ds.items.push_back(make_item(options.task, c, i, i < options.n_train ? Split::Train : Split::Test,
                                 root.fork(i)));
  }
  return ds;
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  ByteWriter w;
  w.put_raw(kMagic);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ds.task));
  w.put<std::uint64_t>(ds.seed);
  w.put<std::uint64_t>(ds.items.size());
  for (const auto& it : ds.items) {
    w.put<std::uint64_t>(it.id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(it.split));
    put_spec(w, it.shape);
    w.put<std::uint8_t>(it.guide ? 1 : 0);
    if (it.guide) put_spec(w, *it.guide);
    w.put_string(it.prompt);
    w.put_string(it.source_prompt);
    w.put_string(it.edited_attribute);
  }
  w.seal();
  return w.bytes();
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset");
  if (bytes.size() < kMagic.size() || r.get_raw(kMagic.size()) != kMagic) r.fail("bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  ByteReader body(bytes, "dataset");
  body.check_seal();
  body.get_raw(kMagic.size());
  body.get<std::uint32_t>();

  Dataset ds;
  const auto task = body.get<std::uint8_t>();
  if (task > 3) body.fail("bad task tag");
  ds.task = static_cast<Task>(task);
  ds.seed = body.get<std::uint64_t>();
  const auto count = body.get<std::uint64_t>();
  if (count > body.remaining()) body.fail("item count exceeds file size");
  ds.items.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    DatasetItem it;
    it.id = body.get<std::uint64_t>();
    const auto split = body.get<std::uint8_t>();
    if (split > 1) body.fail("bad split tag");
    it.split = static_cast<Split>(split);
    it.shape = get_spec(body);
    if (body.get<std::uint8_t>()) it.guide = get_spec(body);
    it.prompt = body.get_string();
    it.source_prompt = body.get_string();
    it.edited_attribute = body.get_string();
    ds.items.push_back(std::move(it));
  }
  if (body.remaining() != 0) body.fail("trailing bytes");
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  write_file_bytes(path, serialize_dataset(ds));
}

Dataset read_dataset(const std::string& path) { return deserialize_dataset(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace shapeguide
