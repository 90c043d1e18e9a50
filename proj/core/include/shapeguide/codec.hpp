#pragma once

// Voxelization, the orthogonal voxel <-> latent transform, and point sampling.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shapeguide/rng.hpp"
#include "shapeguide/shapes.hpp"
#include "shapeguide/tensor.hpp"

namespace shapeguide {

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Occupancy + RGB on an R^3 grid. Voxel (x, y, z) of channel c lives at
/// values[c * R^3 + (x * R + y) * R + z]; voxel centers are at (i + 0.5) / R.
struct VoxelGrid {
  static constexpr int kChannels = 4;

  int resolution = kLattice;
  std::vector<double> values;
  /// Index into label_names of the part that colored each voxel, -1 if none.
  std::vector<std::int16_t> label;
  std::vector<std::string> label_names;

  static VoxelGrid empty(int resolution);
  std::size_t voxels() const { return static_cast<std::size_t>(resolution) * resolution * resolution; }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * resolution + y) * resolution + z;
  }
  double& at(int c, int x, int y, int z) { return values[c * voxels() + index(x, y, z)]; }
  double at(int c, int x, int y, int z) const { return values[c * voxels() + index(x, y, z)]; }
  bool occupied(int x, int y, int z) const { return at(0, x, y, z) >= 0.5; }
  std::size_t occupied_count() const;
};

/// S x D token matrix.
struct Latent {
  std::size_t tokens = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  template <typename Real>
  Tensor<Real> tensor() const {
    std::vector<Real> v(values.begin(), values.end());
    return Tensor<Real>::from(tokens, dim, std::move(v));
  }
  template <typename Real>
  static Latent from_tensor(const Tensor<Real>& t) {
    return Latent{t.rows(), t.cols(), std::vector<double>(t.data().begin(), t.data().end())};
  }
};

/// Signed depth of point p inside a part: positive inside, zero on the boundary.
double part_depth(const Part& part, const Vec3& p);

/// A voxel is occupied iff its center lies inside some part; its color and label
/// come from the covering part with the largest depth (lowest index on ties).
VoxelGrid voxelize(const ShapeSpec& spec, int resolution = kLattice);

class Codec {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x0c0dec;

  explicit Codec(int resolution = kLattice, int patch = 2, std::uint64_t seed = kDefaultSeed);

  int resolution() const { return resolution_; }
  int patch() const { return patch_; }
  std::size_t tokens() const { return tokens_; }
  std::size_t dim() const { return dim_; }
  /// Row-major dim x dim orthogonal matrix.
  const std::vector<double>& basis() const { return basis_; }

  Latent encode(const VoxelGrid& grid) const;
  /// Exact inverse of encode (no clamping).
  VoxelGrid decode_raw(const Latent& latent) const;
  /// decode_raw, then clamp to [0, 1], binarize occupancy at 0.5 and zero
  /// color wherever the voxel is empty.
  VoxelGrid decode(const Latent& latent) const;

 private:
  void check_latent(const Latent& latent) const;

  int resolution_;
  int patch_;
  std::size_t tokens_;
  std::size_t dim_;
  std::vector<double> basis_;
};

using Point3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> points;
  /// Per-point index into label_names, -1 when unknown; empty when unlabeled.
  std::vector<std::int16_t> labels;
  std::vector<std::string> label_names;

  std::size_t size() const { return points.size(); }
};

inline constexpr std::size_t kDefaultCloudPoints = 1024;

/// Occupied voxels with at least one empty (or out-of-grid) 6-neighbour.
std::vector<std::array<int, 3>> surface_voxels(const VoxelGrid& grid);

/// n points drawn uniformly over surface voxels and jittered inside the voxel.
/// Throws CodecError("empty shape") when the grid has no occupied voxel.
PointCloud point_cloud(const VoxelGrid& grid, std::size_t n, Rng& rng);

/// ASCII PLY: header then "x y z" per point (plus "label" when labeled).
void write_ply(const PointCloud& cloud, const std::string& path);
/// One axis-aligned cube per occupied voxel; vertex lines carry "v x y z r g b".
void write_obj(const VoxelGrid& grid, const std::string& path);

}  // namespace shapeguide
