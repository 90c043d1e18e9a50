#pragma once

// Geometric and semantic metrics over grids, point clouds and prompts.
//
// Attribute analysis (attr_of_grid) works on horizontal occupancy slices:
//   table  top = run of layers from the highest occupied layer down with area >= 20;
//          top_thickness = run length, top_width = x extent of the highest layer,
//          top_roundness = isoperimetric ratio 4 pi A / P^2 of that layer < 0.74;
//          legs = 4-connected components of the layer below the top (count,
//          widest x extent), leg_height = occupied layers below the top.
//   chair  seat = layer of largest area (highest on ties); seat_width = its x
//          extent; legs as for tables below the seat; back_height = occupied
//          layers above the seat; has_arms = the layer above the seat holds
//          voxels in front of its back row.
//   lamp   base = run of bottom layers with x extent >= 3; pole = x extent of the
//          first layer above the base; shade_size = widest x extent above the
//          base; shade_round = area(highest layer) / area(widest layer) < 0.8.
//   color  occupancy-weighted mean RGB.
// Lengths are voxel counts / resolution, matching AttributeDef::unit.
//
// Semantic similarity embeds every normalized entry u in [0, 1] as the unit
// vector (cos(pi u / 2), sin(pi u / 2)); sim is the cosine between two such
// embeddings over the jointly valid entries, i.e. mean cos(pi/2 (u_a - u_b)).

#include <optional>
#include <string>
#include <vector>

#include "shapeguide/codec.hpp"
#include "shapeguide/shapes.hpp"

namespace shapeguide {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean squared nearest-neighbour distance a->b plus b->a. Exact; uses a
/// uniform bucket grid over b (brute force for small clouds).
double chamfer(const PointCloud& a, const PointCloud& b);
double chamfer_brute_force(const PointCloud& a, const PointCloud& b);

/// Copies each point's label from its nearest labeled point in `reference`.
PointCloud transfer_labels(const PointCloud& cloud, const PointCloud& reference);

/// Keeps points whose label is not touched by `edited_attribute`.
PointCloud unrelated_points(const PointCloud& cloud, Category category,
                            std::string_view edited_attribute);

/// Chamfer restricted to parts the edit does not touch; nullopt when either
/// side has no such points (the item is excluded from aggregates).
std::optional<double> local_gd(const PointCloud& a, const PointCloud& b, Category category,
                               std::string_view edited_attribute);

AttributeVector attr_of_grid(const VoxelGrid& grid, Category category);
/// Descriptions set the mentioned attributes and the color; edit prompts set
/// the edited attribute to its extreme level in the edit direction; everything
/// else is masked.
AttributeVector attr_of_text(std::string_view prompt, Category category);
/// Quantized attributes of a generated spec in the same units (all valid).
AttributeVector attr_of_spec(const ShapeSpec& spec);

/// Entry values mapped to [0, 1] using the schema's level range.
std::vector<double> normalized(const AttributeVector& v);

std::optional<double> masked_similarity(const AttributeVector& a, const AttributeVector& b);
std::optional<double> sim(const VoxelGrid& grid, std::string_view prompt, Category category);

struct DirSim {
  double value = 0.0;
  bool defined = false;  // false when either direction vector is zero
};
/// Cosine between the shape change (out - in) and the text change. For an
/// edit prompt the text change is the edit direction on the edited entry.
DirSim dir_sim(const VoxelGrid& grid_in, const VoxelGrid& grid_out, std::string_view prompt_in,
               std::string_view prompt_out, Category category);

/// sim(out, prompt) - sim(in, prompt).
double lab_analog(const VoxelGrid& grid_in, const VoxelGrid& grid_out, std::string_view prompt,
                  Category category);

/// Rule scores per category from category-agnostic slice features.
std::array<double, 3> category_scores(const VoxelGrid& grid);
/// softmax(3 * scores).
std::array<double, 3> category_probabilities(const VoxelGrid& grid);
/// |p_c(in) - p_c(out)| for the input's category c.
double class_distortion(const VoxelGrid& grid_in, const VoxelGrid& grid_out, Category category);

/// Frechet distance between Gaussians fit to two sets of feature vectors.
double frechet_distance(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b);
/// Frechet distance on normalized attribute vectors of two grid sets of one category.
double fpd_analog(const std::vector<VoxelGrid>& a, const std::vector<VoxelGrid>& b,
                  Category category);

}  // namespace shapeguide
