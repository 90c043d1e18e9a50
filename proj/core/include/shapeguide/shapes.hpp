#pragma once

// Procedural furniture-like shapes built from cuboid, cylinder and sphere
// parts, plus their cuboid abstractions, uncolored variants, edit pairs and
// templated text.
//
// Geometry lives in the unit cube with +y up. Every part face sits on the
// 1/8 lattice (up to a sub-voxel jitter of at most kJitter), so voxelizing at
// the default resolution reproduces the quantized attribute levels exactly.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "shapeguide/rng.hpp"

namespace shapeguide {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Category : std::uint8_t { Table = 0, Chair = 1, Lamp = 2 };
inline constexpr std::array<Category, 3> kAllCategories = {Category::Table, Category::Chair,
                                                           Category::Lamp};
std::string_view category_name(Category c);
Category parse_category(std::string_view name);

enum class Primitive : std::uint8_t { Cuboid = 0, Cylinder = 1, Sphere = 2 };

using Vec3 = std::array<double, 3>;

/// Lattice the generator snaps to (voxels per unit length).
inline constexpr int kLattice = 8;
/// Maximum absolute jitter applied to part centers and half extents.
inline constexpr double kJitter = 0.004;

struct Part {
  Primitive primitive = Primitive::Cuboid;
  Vec3 center{};
  /// Cylinders use (radius, half height, radius) with the axis along y;
  /// spheres use (radius, radius, radius).
  Vec3 half_extents{};
  Vec3 color{};
  std::string label;

  bool operator==(const Part&) const = default;
};

/// Palette used for colored shapes; index kGray is the neutral style color.
struct PaletteColor {
  std::string_view name;
  Vec3 rgb;
};
inline constexpr int kGray = 8;
std::span<const PaletteColor> palette();  // 9 entries, the last is gray
int color_index(std::string_view name);

/// One geometric attribute of a category schema.
struct AttributeDef {
  std::string_view name;
  std::vector<int> levels;       // allowed quantized values (voxel counts, counts or 0/1 flags)
  double unit;                   // continuous value = level * unit
  std::vector<std::string_view> touches;  // part labels whose geometry depends on it
  std::string_view increase;     // edit prompt for a higher level
  std::string_view decrease;     // edit prompt for a lower level
};

struct CategorySchema {
  Category category;
  std::vector<AttributeDef> attributes;  // geometric attributes; color is appended as r,g,b
  std::vector<std::string_view> part_labels;

  /// Number of AttributeVector entries (geometric attributes + 3 color channels).
  std::size_t width() const { return attributes.size() + 3; }
  int index_of(std::string_view name) const;  // -1 when absent
  std::string entry_name(std::size_t entry) const;
};
const CategorySchema& schema(Category c);

/// Fixed per-category attribute schema of reals with a validity mask.
struct AttributeVector {
  Category category = Category::Table;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  static AttributeVector masked(Category c);
  std::size_t size() const { return values.size(); }
  std::size_t valid_count() const;
  bool operator==(const AttributeVector&) const = default;
};

struct ShapeSpec {
  Category category = Category::Table;
  std::vector<int> levels;  // one per geometric schema attribute
  int color = 0;            // palette index
  std::vector<Part> parts;
  AttributeVector attributes;  // continuous values measured from the parts
  std::uint64_t seed = 0;

  bool operator==(const ShapeSpec&) const = default;
};

/// Builds parts and attributes from quantized levels; the jitter stream is keyed by `seed`.
ShapeSpec build_shape(Category category, std::vector<int> levels, int color, std::uint64_t seed);
ShapeSpec sample_shape(Rng& rng, Category category);

/// Every part replaced by its axis-aligned bounding cuboid, colored neutral gray.
ShapeSpec abstract_shape(const ShapeSpec& spec);
/// Geometry unchanged, every color set to neutral gray.
ShapeSpec strip_style(const ShapeSpec& spec);

struct EditPair {
  ShapeSpec distractor;
  ShapeSpec target;
  std::string edited_attribute;
  std::string prompt;

  bool operator==(const EditPair&) const = default;
};

EditPair make_edit_pair(Rng& rng, const ShapeSpec& spec);

// ---- text -------------------------------------------------------------------

/// Deterministic description mentioning category, color and a per-category
/// subset of attributes, e.g. "a red table with four thin legs and a round top".
std::string render_text(const ShapeSpec& spec);
std::string edit_prompt(Category category, std::string_view attribute, int direction);

struct ParsedPrompt {
  enum class Kind { Empty, Description, Edit };
  Kind kind = Kind::Empty;
  std::optional<Category> category;                // Description only
  std::optional<int> color;                        // Description only
  std::vector<std::pair<std::string, int>> levels;  // Description: mentioned attribute levels
  std::string edit_attribute;                      // Edit only
  int edit_direction = 0;                          // Edit only: +1 / -1
};

/// Inverse of render_text / edit_prompt. Throws ShapeError on text outside the grammar.
ParsedPrompt parse_prompt(std::string_view prompt);
std::vector<std::string> tokenize(std::string_view prompt);

/// Closed vocabulary: every word any template can emit, sorted.
const std::vector<std::string>& vocabulary();

}  // namespace shapeguide
