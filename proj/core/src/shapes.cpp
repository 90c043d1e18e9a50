#include "shapeguide/shapes.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace shapeguide {

namespace {

constexpr double kVoxel = 1.0 / kLattice;
constexpr Vec3 kNeutralGray{0.5, 0.5, 0.5};

constexpr std::array<PaletteColor, 9> kPalette = {{
    {"red", {0.9, 0.1, 0.1}},
    {"green", {0.1, 0.75, 0.2}},
    {"blue", {0.1, 0.2, 0.9}},
    {"yellow", {0.95, 0.85, 0.1}},
    {"white", {0.95, 0.95, 0.95}},
    {"black", {0.05, 0.05, 0.05}},
    {"orange", {0.95, 0.5, 0.05}},
    {"purple", {0.55, 0.1, 0.75}},
    {"gray", {0.5, 0.5, 0.5}},
}};

// Description templates. A slot either names an attribute (words indexed by
// level position) or is the color slot "$color"; anything else is literal.
struct Slot {
  std::string_view attribute;  // empty for literals
  std::vector<std::string_view> words;
};

struct DescriptionTemplate {
  std::vector<Slot> slots;
};

Slot lit(std::string_view w) { return Slot{{}, {w}}; }
Slot color_slot() { return Slot{"$color", {}}; }
Slot attr(std::string_view name, std::vector<std::string_view> words) {
  return Slot{name, std::move(words)};
}

const std::vector<CategorySchema>& all_schemas() {
  static const std::vector<CategorySchema> schemas = [] {
    std::vector<CategorySchema> s(3);
    s[0] = CategorySchema{
        Category::Table,
        {
            {"n_legs", {3, 4}, 1.0, {"leg"}, "it has more legs", "it has fewer legs"},
            {"leg_height", {2, 3, 4, 5}, kVoxel, {"leg"}, "the legs are taller",
             "the legs are shorter"},
            {"leg_thickness", {1, 2}, kVoxel, {"leg"}, "the legs are thicker",
             "the legs are thinner"},
            {"top_thickness", {1, 2}, kVoxel, {"top"}, "the top is thicker", "the top is thinner"},
            {"top_width", {6, 7, 8}, kVoxel, {"top"}, "the top is wider", "the top is narrower"},
            {"top_roundness", {0, 1}, 1.0, {"top"}, "the top is rounded", "the top is square"},
        },
        {"top", "leg"}};
    s[1] = CategorySchema{
        Category::Chair,
        {
            {"leg_height", {2, 3, 4}, kVoxel, {"leg"}, "the legs are taller",
             "the legs are shorter"},
            {"leg_thickness", {1, 2}, kVoxel, {"leg"}, "the legs are thicker",
             "the legs are thinner"},
            {"seat_width", {5, 6, 7}, kVoxel, {"seat", "leg", "back", "arm"}, "the seat is wider",
             "the seat is narrower"},
            {"back_height", {1, 2, 3}, kVoxel, {"back"}, "the back is taller",
             "the back is shorter"},
            {"has_arms", {0, 1}, 1.0, {"arm"}, "it has arms", "it has no arms"},
        },
        {"seat", "back", "leg", "arm"}};
    s[2] = CategorySchema{
        Category::Lamp,
        {
            {"base_width", {3, 4, 5}, kVoxel, {"base"}, "the base is wider",
             "the base is narrower"},
            {"base_height", {1, 2}, kVoxel, {"base"}, "the base is taller", "the base is flatter"},
            {"pole_thickness", {1, 2}, kVoxel, {"pole"}, "the pole is thicker",
             "the pole is thinner"},
            {"shade_size", {3, 4, 5}, kVoxel, {"shade", "pole"}, "the shade is bigger",
             "the shade is smaller"},
            {"shade_round", {0, 1}, 1.0, {"shade"}, "the shade is rounded",
             "the shade is cylindrical"},
        },
        {"base", "pole", "shade"}};
    return s;
  }();
  return schemas;
}

const DescriptionTemplate& description_template(Category c) {
  static const std::array<DescriptionTemplate, 3> templates = [] {
    std::array<DescriptionTemplate, 3> t;
    t[0].slots = {lit("a"),     color_slot(), lit("table"), lit("with"),
                  attr("n_legs", {"three", "four"}), attr("leg_thickness", {"thin", "thick"}),
                  lit("legs"),  lit("and"),       lit("a"),
                  attr("top_roundness", {"square", "round"}), lit("top")};
    t[1].slots = {lit("a"),    color_slot(),
                  lit("chair"), lit("with"),
                  attr("leg_thickness", {"thin", "thick"}),
                  lit("legs"), lit("and"),
                  attr("has_arms", {"no", "two"}), lit("arms")};
    t[2].slots = {lit("a"),   color_slot(),
                  lit("lamp"), lit("with"),
                  lit("a"),   attr("pole_thickness", {"slender", "sturdy"}),
                  lit("pole"), lit("and"),
                  lit("a"),   attr("shade_round", {"drum", "globe"}),
                  lit("shade")};
    return t;
  }();
  return templates[static_cast<std::size_t>(c)];
}

int level_position(const AttributeDef& def, int level) {
  auto it = std::find(def.levels.begin(), def.levels.end(), level);
  if (it == def.levels.end())
    throw ShapeError("level " + std::to_string(level) + " not valid for " + std::string(def.name));
  return static_cast<int>(it - def.levels.begin());
}

// Per-part jitter stream; `slot` identifies the part role so that rebuilding a
// shape with different levels reuses the same jitter for unchanged parts.
struct Jitter {
  Rng rng;
  Jitter(std::uint64_t seed, std::uint64_t slot) : rng(Rng(seed).fork(slot)) {}
  double next() { return rng.uniform(-kJitter, kJitter); }
};

// Part covering the lattice box [lo, hi) (in voxel units), jittered.
Part lattice_part(Primitive prim, Vec3 lo, Vec3 hi, const Vec3& color, std::string label,
                  std::uint64_t seed, std::uint64_t slot) {
  Jitter j(seed, slot);
  Part p;
  p.primitive = prim;
  p.color = color;
  p.label = std::move(label);
  for (int a = 0; a < 3; ++a) {
    p.center[a] = 0.5 * (lo[a] + hi[a]) * kVoxel + j.next();
    p.half_extents[a] = 0.5 * (hi[a] - lo[a]) * kVoxel;
  }
  const double dr = j.next();
  const double dy = j.next();
  if (prim == Primitive::Sphere) {
    for (double& h : p.half_extents) h += dr;
  } else if (prim == Primitive::Cylinder) {
    p.half_extents[0] += dr;
    p.half_extents[2] += dr;
    p.half_extents[1] += dy;
  } else {
    p.half_extents[0] += dr;
    p.half_extents[1] += dy;
    p.half_extents[2] += j.next();
  }
  // Stay inside the unit cube by shrinking; radial extents shrink together.
  Vec3 room;
  for (int a = 0; a < 3; ++a) {
    p.center[a] = std::clamp(p.center[a], 0.0, 1.0);
    room[a] = std::min(p.center[a], 1.0 - p.center[a]);
  }
  if (prim == Primitive::Sphere) {
    const double r = std::min({p.half_extents[0], room[0], room[1], room[2]});
    p.half_extents = {r, r, r};
  } else if (prim == Primitive::Cylinder) {
    const double r = std::min({p.half_extents[0], room[0], room[2]});
    p.half_extents[0] = p.half_extents[2] = r;
    p.half_extents[1] = std::min(p.half_extents[1], room[1]);
  } else {
    for (int a = 0; a < 3; ++a) p.half_extents[a] = std::min(p.half_extents[a], room[a]);
  }
  return p;
}

// Lattice interval of length n centered on `mid` (voxel units): even lengths are
// centered on a voxel boundary, odd lengths on a voxel center.
std::pair<double, double> centered(int n, double mid) {
  const double c = (n % 2 == 0) ? mid : mid + 0.5;
  return {c - 0.5 * n, c + 0.5 * n};
}

std::vector<Part> table_parts(const std::vector<int>& lv, const Vec3& color, std::uint64_t seed) {
  const int n_legs = lv[0], leg_h = lv[1], leg_t = lv[2], top_t = lv[3], top_w = lv[4];
  const bool round = lv[5] != 0;
  std::vector<Part> parts;
  const double x0 = (kLattice - top_w + 1) / 2;
  const double top_lo = 5.0;
  parts.push_back(lattice_part(round ? Primitive::Cylinder : Primitive::Cuboid,
                               {x0, top_lo, x0}, {x0 + top_w, top_lo + top_t, x0 + top_w}, color,
                               "top", seed, 1));
  // Legs hang from the top over a fixed footprint [1, 7).
  const double y_lo = top_lo - leg_h;
  const double near = 1.0, far = 7.0 - leg_t;
  std::vector<std::pair<double, double>> corners;
  if (n_legs == 4) {
    corners = {{near, near}, {far, near}, {near, far}, {far, far}};
  } else {
    corners = {{near, near}, {far, near}, {4.0 - (leg_t + 1) / 2, far}};
  }
  for (std::size_t k = 0; k < corners.size(); ++k) {
    const auto [x, z] = corners[k];
    parts.push_back(lattice_part(Primitive::Cuboid, {x, y_lo, z}, {x + leg_t, top_lo, z + leg_t},
                                 color, "leg", seed, 10 + k));
  }
  return parts;
}

std::vector<Part> chair_parts(const std::vector<int>& lv, const Vec3& color, std::uint64_t seed) {
  const int leg_h = lv[0], leg_t = lv[1], seat_w = lv[2], back_h = lv[3];
  const bool arms = lv[4] != 0;
  std::vector<Part> parts;
  const double x0 = (kLattice - seat_w + 1) / 2;
  const double x1 = x0 + seat_w;
  const double seat_lo = 4.0;
  parts.push_back(lattice_part(Primitive::Cuboid, {x0, seat_lo, x0}, {x1, seat_lo + 1, x1}, color,
                               "seat", seed, 1));
  parts.push_back(lattice_part(Primitive::Cuboid, {x0, seat_lo + 1, x1 - 1},
                               {x1, seat_lo + 1 + back_h, x1}, color, "back", seed, 2));
  const std::array<double, 2> edge = {x0, x1 - leg_t};
  std::uint64_t slot = 10;
  for (double z : edge)
    for (double x : edge)
      parts.push_back(lattice_part(Primitive::Cuboid, {x, seat_lo - leg_h, z},
                                   {x + leg_t, seat_lo, z + leg_t}, color, "leg", seed, slot++));
  if (arms) {
    parts.push_back(lattice_part(Primitive::Cuboid, {x0, seat_lo + 1, x0},
                                 {x0 + 1, seat_lo + 2, x1 - 1}, color, "arm", seed, 20));
    parts.push_back(lattice_part(Primitive::Cuboid, {x1 - 1, seat_lo + 1, x0},
                                 {x1, seat_lo + 2, x1 - 1}, color, "arm", seed, 21));
  }
  return parts;
}

std::vector<Part> lamp_parts(const std::vector<int>& lv, const Vec3& color, std::uint64_t seed) {
  const int base_w = lv[0], base_h = lv[1], pole_t = lv[2], shade = lv[3];
  const bool globe = lv[4] != 0;
  std::vector<Part> parts;
  const auto [b0, b1] = centered(base_w, 4.0);
  parts.push_back(lattice_part(Primitive::Cylinder, {b0, 0.0, b0}, {b1, double(base_h), b1}, color,
                               "base", seed, 1));
  const auto [p0, p1] = centered(pole_t, 4.0);
  parts.push_back(lattice_part(Primitive::Cuboid, {p0, 0.0, p0}, {p1, double(kLattice - shade), p1},
                               color, "pole", seed, 2));
  const auto [s0, s1] = centered(shade, 4.0);
  parts.push_back(lattice_part(globe ? Primitive::Sphere : Primitive::Cylinder,
                               {s0, double(kLattice - shade), s0}, {s1, double(kLattice), s1}, color,
                               "shade", seed, 3));
  return parts;
}

const Part& first_labeled(const std::vector<Part>& parts, std::string_view label) {
  for (const auto& p : parts)
    if (p.label == label) return p;
  throw ShapeError("shape has no part labeled " + std::string(label));
}

// Continuous attribute values measured from the parts themselves.
AttributeVector measure(Category c, const std::vector<int>& lv, const std::vector<Part>& parts,
                        const Vec3& color) {
  const auto& sc = schema(c);
  AttributeVector av;
  av.category = c;
  av.values.assign(sc.width(), 0.0);
  av.valid.assign(sc.width(), 1);
  auto set = [&](std::string_view name, double v) { av.values[sc.index_of(name)] = v; };
  auto full = [](const Part& p, int axis) { return 2.0 * p.half_extents[axis]; };
  switch (c) {
    case Category::Table: {
      const Part& top = first_labeled(parts, "top");
      const Part& leg = first_labeled(parts, "leg");
      set("n_legs", static_cast<double>(std::count_if(
                        parts.begin(), parts.end(), [](const Part& p) { return p.label == "leg"; })));
      set("leg_height", full(leg, 1));
      set("leg_thickness", full(leg, 0));
      set("top_thickness", full(top, 1));
      set("top_width", full(top, 0));
      set("top_roundness", top.primitive == Primitive::Cuboid ? 0.0 : 1.0);
      break;
    }
    case Category::Chair: {
      const Part& leg = first_labeled(parts, "leg");
      set("leg_height", full(leg, 1));
      set("leg_thickness", full(leg, 0));
      set("seat_width", full(first_labeled(parts, "seat"), 0));
      set("back_height", full(first_labeled(parts, "back"), 1));
      set("has_arms", lv[4] != 0 ? 1.0 : 0.0);
      break;
    }
    case Category::Lamp: {
      const Part& base = first_labeled(parts, "base");
      const Part& shade = first_labeled(parts, "shade");
      set("base_width", full(base, 0));
      set("base_height", full(base, 1));
      set("pole_thickness", full(first_labeled(parts, "pole"), 0));
      set("shade_size", full(shade, 0));
      set("shade_round", shade.primitive == Primitive::Sphere ? 1.0 : 0.0);
      break;
    }
  }
  const std::size_t k = sc.attributes.size();
  for (int a = 0; a < 3; ++a) av.values[k + a] = color[a];
  return av;
}

}  // namespace

// ---- names ------------------------------------------------------------------

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Table: return "table";
    case Category::Chair: return "chair";
    case Category::Lamp: return "lamp";
  }
  return "?";
}

Category parse_category(std::string_view name) {
  for (Category c : kAllCategories)
    if (category_name(c) == name) return c;
  throw ShapeError("unknown category '" + std::string(name) + "'");
}

std::span<const PaletteColor> palette() { return kPalette; }

int color_index(std::string_view name) {
  for (std::size_t i = 0; i < kPalette.size(); ++i)
    if (kPalette[i].name == name) return static_cast<int>(i);
  return -1;
}

int CategorySchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < attributes.size(); ++i)
    if (attributes[i].name == name) return static_cast<int>(i);
  if (name == "color_r") return static_cast<int>(attributes.size());
  if (name == "color_g") return static_cast<int>(attributes.size() + 1);
  if (name == "color_b") return static_cast<int>(attributes.size() + 2);
  return -1;
}

std::string CategorySchema::entry_name(std::size_t entry) const {
  if (entry < attributes.size()) return std::string(attributes[entry].name);
  static constexpr std::array<const char*, 3> rgb = {"color_r", "color_g", "color_b"};
  return rgb.at(entry - attributes.size());
}

const CategorySchema& schema(Category c) { return all_schemas()[static_cast<std::size_t>(c)]; }

AttributeVector AttributeVector::masked(Category c) {
  AttributeVector av;
  av.category = c;
  av.values.assign(schema(c).width(), 0.0);
  av.valid.assign(schema(c).width(), 0);
  return av;
}

std::size_t AttributeVector::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

// ---- generation -------------------------------------------------------------

ShapeSpec build_shape(Category category, std::vector<int> levels, int color, std::uint64_t seed) {
  const auto& sc = schema(category);
  if (levels.size() != sc.attributes.size())
    throw ShapeError("expected " + std::to_string(sc.attributes.size()) + " levels for " +
                     std::string(category_name(category)));
  for (std::size_t i = 0; i < levels.size(); ++i) level_position(sc.attributes[i], levels[i]);
  if (color < 0 || color >= static_cast<int>(kPalette.size()))
    throw ShapeError("color index out of range");

  const Vec3 rgb = kPalette[color].rgb;
  ShapeSpec spec;
  spec.category = category;
  spec.levels = std::move(levels);
  spec.color = color;
  spec.seed = seed;
  switch (category) {
    case Category::Table: spec.parts = table_parts(spec.levels, rgb, seed); break;
    case Category::Chair: spec.parts = chair_parts(spec.levels, rgb, seed); break;
    case Category::Lamp: spec.parts = lamp_parts(spec.levels, rgb, seed); break;
  }
  spec.attributes = measure(category, spec.levels, spec.parts, rgb);
  return spec;
}

ShapeSpec sample_shape(Rng& rng, Category category) {
  const auto& sc = schema(category);
  std::vector<int> levels;
  levels.reserve(sc.attributes.size());
  for (const auto& def : sc.attributes) levels.push_back(def.levels[rng.below(def.levels.size())]);
  const int color = static_cast<int>(rng.below(kGray));
  const std::uint64_t seed = rng.next_u64();
  return build_shape(category, std::move(levels), color, seed);
}

ShapeSpec abstract_shape(const ShapeSpec& spec) {
  ShapeSpec out = spec;
  out.color = kGray;
  for (auto& p : out.parts) {
    p.primitive = Primitive::Cuboid;  // bounding box half extents are unchanged
    p.color = kNeutralGray;
  }
  const auto& sc = schema(spec.category);
  for (std::string_view flag : {"top_roundness", "shade_round"}) {
    const int i = sc.index_of(flag);
    if (i >= 0) {
      out.levels[i] = 0;
      out.attributes.values[i] = 0.0;
    }
  }
  const std::size_t k = sc.attributes.size();
  for (int a = 0; a < 3; ++a) out.attributes.values[k + a] = kNeutralGray[a];
  return out;
}

ShapeSpec strip_style(const ShapeSpec& spec) {
  ShapeSpec out = spec;
  out.color = kGray;
  for (auto& p : out.parts) p.color = kNeutralGray;
  const std::size_t k = schema(spec.category).attributes.size();
  for (int a = 0; a < 3; ++a) out.attributes.values[k + a] = kNeutralGray[a];
  return out;
}

EditPair make_edit_pair(Rng& rng, const ShapeSpec& spec) {
  const auto& sc = schema(spec.category);
  if (sc.attributes.empty()) throw ShapeError("no editable attribute");
  const std::size_t a = rng.below(sc.attributes.size());
  const auto& def = sc.attributes[a];
  const int current = level_position(def, spec.levels[a]);
  std::size_t pick = rng.below(def.levels.size() - 1);
  if (static_cast<int>(pick) >= current) ++pick;  // always a different quantized level
  std::vector<int> levels = spec.levels;
  levels[a] = def.levels[pick];

  EditPair pair;
  pair.distractor = spec;
  pair.target = build_shape(spec.category, std::move(levels), spec.color, spec.seed);
  pair.edited_attribute = std::string(def.name);
  pair.prompt = std::string(static_cast<int>(pick) > current ? def.increase : def.decrease);
  return pair;
}

// ---- text -------------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view prompt) {
  std::vector<std::string> words;
  std::istringstream in{std::string(prompt)};
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string render_text(const ShapeSpec& spec) {
  const auto& sc = schema(spec.category);
  std::string out;
  for (const Slot& slot : description_template(spec.category).slots) {
    std::string_view word;
    if (slot.attribute.empty()) {
      word = slot.words[0];
    } else if (slot.attribute == "$color") {
      word = kPalette.at(spec.color).name;
    } else {
      const int i = sc.index_of(slot.attribute);
      word = slot.words.at(level_position(sc.attributes[i], spec.levels[i]));
    }
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

std::string edit_prompt(Category category, std::string_view attribute, int direction) {
  const auto& sc = schema(category);
  const int i = sc.index_of(attribute);
  if (i < 0 || i >= static_cast<int>(sc.attributes.size()))
    throw ShapeError("no editable attribute '" + std::string(attribute) + "' for " +
                     std::string(category_name(category)));
  return std::string(direction > 0 ? sc.attributes[i].increase : sc.attributes[i].decrease);
}

ParsedPrompt parse_prompt(std::string_view prompt) {
  ParsedPrompt parsed;
  const auto words = tokenize(prompt);
  if (words.empty()) return parsed;

  std::string joined;
  for (const auto& w : words) joined += (joined.empty() ? "" : " ") + w;
  for (const auto& sc : all_schemas()) {
    for (const auto& def : sc.attributes) {
      if (joined == def.increase || joined == def.decrease) {
        parsed.kind = ParsedPrompt::Kind::Edit;
        parsed.edit_attribute = std::string(def.name);
        parsed.edit_direction = joined == def.increase ? +1 : -1;
        return parsed;
      }
    }
  }

  for (Category c : kAllCategories) {
    const auto& slots = description_template(c).slots;
    if (slots.size() != words.size()) continue;
    ParsedPrompt candidate;
    candidate.kind = ParsedPrompt::Kind::Description;
    candidate.category = c;
    bool ok = true;
    for (std::size_t s = 0; s < slots.size() && ok; ++s) {
      const Slot& slot = slots[s];
      if (slot.attribute.empty()) {
        ok = words[s] == slot.words[0];
      } else if (slot.attribute == "$color") {
        const int ci = color_index(words[s]);
        ok = ci >= 0;
        candidate.color = ci;
      } else {
        auto it = std::find(slot.words.begin(), slot.words.end(), words[s]);
        ok = it != slot.words.end();
        if (ok) {
          const auto& def = schema(c).attributes[schema(c).index_of(slot.attribute)];
          candidate.levels.emplace_back(std::string(slot.attribute),
                                        def.levels[it - slot.words.begin()]);
        }
      }
    }
    if (ok) return candidate;
  }
  throw ShapeError("prompt outside the template grammar: '" + std::string(prompt) + "'");
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::set<std::string> words;
    for (const auto& c : kPalette) words.insert(std::string(c.name));
    for (Category c : kAllCategories) {
      for (const Slot& slot : description_template(c).slots)
        for (auto w : slot.words) words.insert(std::string(w));
      for (const auto& def : schema(c).attributes)
        for (auto phrase : {def.increase, def.decrease})
          for (auto& w : tokenize(phrase)) words.insert(w);
    }
    return std::vector<std::string>(words.begin(), words.end());
  }();
  return vocab;
}

}  // namespace shapeguide
