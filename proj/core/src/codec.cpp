#include "shapeguide/codec.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace shapeguide {

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CodecError("cannot write " + path);
  return out;
}

}  // namespace

VoxelGrid VoxelGrid::empty(int resolution) {
  VoxelGrid g;
  g.resolution = resolution;
  g.values.assign(kChannels * g.voxels(), 0.0);
  g.label.assign(g.voxels(), -1);
  return g;
}

std::size_t VoxelGrid::occupied_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < voxels(); ++i) n += values[i] >= 0.5 ? 1 : 0;
  return n;
}

double part_depth(const Part& part, const Vec3& p) {
  const Vec3 d{p[0] - part.center[0], p[1] - part.center[1], p[2] - part.center[2]};
  const Vec3& h = part.half_extents;
  switch (part.primitive) {
    case Primitive::Cuboid:
      return std::min({h[0] - std::abs(d[0]), h[1] - std::abs(d[1]), h[2] - std::abs(d[2])});
    case Primitive::Cylinder:
      return std::min(h[0] - std::hypot(d[0], d[2]), h[1] - std::abs(d[1]));
    case Primitive::Sphere:
      return h[0] - std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  }
  return -1.0;
}

VoxelGrid voxelize(const ShapeSpec& spec, int resolution) {
  if (resolution != 8 && resolution != 16)
    throw CodecError("resolution must be 8 or 16, got " + std::to_string(resolution));
  VoxelGrid g = VoxelGrid::empty(resolution);
  std::vector<std::int16_t> label_of_part;
  for (const Part& part : spec.parts) {
    auto it = std::find(g.label_names.begin(), g.label_names.end(), part.label);
    if (it == g.label_names.end()) {
      g.label_names.push_back(part.label);
      it = g.label_names.end() - 1;
    }
    label_of_part.push_back(static_cast<std::int16_t>(it - g.label_names.begin()));
  }
  const double inv = 1.0 / resolution;
  for (int x = 0; x < resolution; ++x)
    for (int y = 0; y < resolution; ++y)
      for (int z = 0; z < resolution; ++z) {
        const Vec3 p{(x + 0.5) * inv, (y + 0.5) * inv, (z + 0.5) * inv};
        double best = -std::numeric_limits<double>::infinity();
        int owner = -1;
        for (std::size_t k = 0; k < spec.parts.size(); ++k) {
          const double depth = part_depth(spec.parts[k], p);
          if (depth >= 0.0 && depth > best) {
            best = depth;
            owner = static_cast<int>(k);
          }
        }
        if (owner < 0) continue;
        const Part& part = spec.parts[owner];
        g.at(0, x, y, z) = 1.0;
        for (int c = 0; c < 3; ++c) g.at(c + 1, x, y, z) = part.color[c];
        g.label[g.index(x, y, z)] = label_of_part[owner];
      }
  return g;
}

Codec::Codec(int resolution, int patch, std::uint64_t seed)
    : resolution_(resolution), patch_(patch) {
  if (patch <= 0 || resolution % patch != 0)
    throw CodecError("patch size must divide the resolution");
  const std::size_t per_axis = resolution / patch;
  tokens_ = per_axis * per_axis * per_axis;
  dim_ = static_cast<std::size_t>(patch) * patch * patch * VoxelGrid::kChannels;

  Rng rng(seed);
  MatD gauss(dim_, dim_);
  for (Eigen::Index i = 0; i < gauss.size(); ++i) gauss.data()[i] = rng.normal();
  Eigen::HouseholderQR<MatD> qr(gauss);
  MatD q = qr.householderQ();
  const MatD r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < dim_; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  basis_.assign(q.data(), q.data() + q.size());
}

Latent Codec::encode(const VoxelGrid& grid) const {
  if (grid.resolution != resolution_ || grid.values.size() != VoxelGrid::kChannels * grid.voxels())
    throw CodecError("grid does not match codec resolution " + std::to_string(resolution_));
  const int per_axis = resolution_ / patch_;
  MatD flat(tokens_, dim_);
  std::size_t t = 0;
  for (int px = 0; px < per_axis; ++px)
    for (int py = 0; py < per_axis; ++py)
      for (int pz = 0; pz < per_axis; ++pz, ++t) {
        std::size_t d = 0;
        for (int c = 0; c < VoxelGrid::kChannels; ++c)
          for (int dx = 0; dx < patch_; ++dx)
            for (int dy = 0; dy < patch_; ++dy)
              for (int dz = 0; dz < patch_; ++dz, ++d)
                flat(t, d) = grid.at(c, px * patch_ + dx, py * patch_ + dy, pz * patch_ + dz);
      }
  const Eigen::Map<const MatD> o(basis_.data(), dim_, dim_);
  MatD z = flat * o;
  return Latent{tokens_, dim_, std::vector<double>(z.data(), z.data() + z.size())};
}

void Codec::check_latent(const Latent& latent) const {
  if (latent.tokens != tokens_ || latent.dim != dim_ || latent.values.size() != tokens_ * dim_)
    throw CodecError("latent must be " + std::to_string(tokens_) + "x" + std::to_string(dim_));
}

VoxelGrid Codec::decode_raw(const Latent& latent) const {
  check_latent(latent);
  const Eigen::Map<const MatD> z(latent.values.data(), tokens_, dim_);
  const Eigen::Map<const MatD> o(basis_.data(), dim_, dim_);
  const MatD flat = z * o.transpose();
  VoxelGrid g = VoxelGrid::empty(resolution_);
  const int per_axis = resolution_ / patch_;
  std::size_t t = 0;
  for (int px = 0; px < per_axis; ++px)
    for (int py = 0; py < per_axis; ++py)
      for (int pz = 0; pz < per_axis; ++pz, ++t) {
        std::size_t d = 0;
        for (int c = 0; c < VoxelGrid::kChannels; ++c)
          for (int dx = 0; dx < patch_; ++dx)
            for (int dy = 0; dy < patch_; ++dy)
              for (int dz = 0; dz < patch_; ++dz, ++d)
                g.at(c, px * patch_ + dx, py * patch_ + dy, pz * patch_ + dz) = flat(t, d);
      }
  return g;
}

VoxelGrid Codec::decode(const Latent& latent) const {
  VoxelGrid g = decode_raw(latent);
  const std::size_t n = g.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    const bool occ = g.values[i] >= 0.5;
    g.values[i] = occ ? 1.0 : 0.0;
    for (int c = 1; c < VoxelGrid::kChannels; ++c) {
      double& v = g.values[c * n + i];
      v = occ ? std::clamp(v, 0.0, 1.0) : 0.0;
    }
  }
  return g;
}

std::vector<std::array<int, 3>> surface_voxels(const VoxelGrid& grid) {
  const int r = grid.resolution;
  auto occ = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= r || y >= r || z >= r) return false;
    return grid.occupied(x, y, z);
  };
  std::vector<std::array<int, 3>> out;
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z) {
        if (!occ(x, y, z)) continue;
        if (!occ(x - 1, y, z) || !occ(x + 1, y, z) || !occ(x, y - 1, z) || !occ(x, y + 1, z) ||
            !occ(x, y, z - 1) || !occ(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

PointCloud point_cloud(const VoxelGrid& grid, std::size_t n, Rng& rng) {
  const auto shell = surface_voxels(grid);
  if (shell.empty()) throw CodecError("empty shape");
  PointCloud cloud;
  cloud.points.reserve(n);
  const bool labeled = !grid.label_names.empty();
  if (labeled) {
    cloud.label_names = grid.label_names;
    cloud.labels.reserve(n);
  }
  const double inv = 1.0 / grid.resolution;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = shell[rng.below(shell.size())];
    Point3 p;
    for (int a = 0; a < 3; ++a) p[a] = (v[a] + rng.uniform()) * inv;
    cloud.points.push_back(p);
    if (labeled) cloud.labels.push_back(grid.label[grid.index(v[0], v[1], v[2])]);
  }
  return cloud;
}

void write_ply(const PointCloud& cloud, const std::string& path) {
  auto out = open_out(path);
  const bool labeled = cloud.labels.size() == cloud.points.size() && !cloud.points.empty();
  out << "ply\nformat ascii 1.0\n";
  for (std::size_t i = 0; i < cloud.label_names.size(); ++i)
    out << "comment label " << i << ' ' << cloud.label_names[i] << '\n';
  out << "element vertex " << cloud.points.size() << '\n'
      << "property float x\nproperty float y\nproperty float z\n";
  if (labeled) out << "property int label\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    out << p[0] << ' ' << p[1] << ' ' << p[2];
    if (labeled) out << ' ' << cloud.labels[i];
    out << '\n';
  }
}

void write_obj(const VoxelGrid& grid, const std::string& path) {
  auto out = open_out(path);
  const int r = grid.resolution;
  const double s = 1.0 / r;
  static constexpr int kFaces[6][4] = {{1, 2, 4, 3}, {5, 7, 8, 6}, {1, 5, 6, 2},
                                       {3, 4, 8, 7}, {1, 3, 7, 5}, {2, 6, 8, 4}};
  out << "# voxel cubes, resolution " << r << '\n';
  std::size_t base = 0;
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z) {
        if (!grid.occupied(x, y, z)) continue;
        for (int corner = 0; corner < 8; ++corner) {
          const int cx = x + ((corner >> 2) & 1), cy = y + ((corner >> 1) & 1), cz = z + (corner & 1);
          out << "v " << cx * s << ' ' << cy * s << ' ' << cz * s << ' ' << grid.at(1, x, y, z)
              << ' ' << grid.at(2, x, y, z) << ' ' << grid.at(3, x, y, z) << '\n';
        }
        for (const auto& f : kFaces)
          out << "f " << base + f[0] << ' ' << base + f[1] << ' ' << base + f[2] << ' '
              << base + f[3] << '\n';
        base += 8;
      }
}

}  // namespace shapeguide
