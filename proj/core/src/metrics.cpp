#include "shapeguide/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace shapeguide {

namespace {

double dist2(const Point3& p, const Point3& q) {
  return (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
         (p[2] - q[2]) * (p[2] - q[2]);
}

// Exact nearest-neighbour queries over a fixed point subset, bucketed on a
// uniform grid and searched in growing Chebyshev rings around the query cell.
class NearestIndex {
 public:
  NearestIndex(const std::vector<Point3>& points, std::vector<std::size_t> subset)
      : points_(points), subset_(std::move(subset)) {
    if (subset_.empty()) throw MetricError("nearest neighbour over an empty set");
    lo_ = hi_ = points_[subset_[0]];
    for (std::size_t i : subset_)
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], points_[i][a]);
        hi_[a] = std::max(hi_[a], points_[i][a]);
      }
    const double k = std::clamp(std::ceil(std::cbrt(subset_.size() / 2.0)), 1.0, 64.0);
    double ext = 0;
    for (int a = 0; a < 3; ++a) ext = std::max(ext, hi_[a] - lo_[a]);
    h_ = ext > 0 ? ext / k : 1.0;
    for (int a = 0; a < 3; ++a)
      n_[a] = std::max(1, static_cast<int>(std::ceil((hi_[a] - lo_[a]) / h_)));
    cells_.assign(static_cast<std::size_t>(n_[0]) * n_[1] * n_[2], {});
    for (std::size_t i : subset_) cells_[cell_index(cell_of(points_[i]))].push_back(i);
  }

  // (squared distance, point index); ties keep the lowest-index point within a cell.
  std::pair<double, std::size_t> nearest(const Point3& q) const {
    const auto c = cell_of(q);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    const int max_r = std::max({n_[0], n_[1], n_[2]});
    for (int r = 0; r <= max_r; ++r) {
      visit_ring(c, r, [&](std::size_t i) {
        const double d = dist2(q, points_[i]);
        if (d < best || (d == best && i < arg)) {
          best = d;
          arg = i;
        }
      });
      // Everything unvisited lies beyond a face of the visited box.
      double bound = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) {
        if (c[a] - r > 0) bound = std::min(bound, q[a] - (lo_[a] + (c[a] - r) * h_));
        if (c[a] + r + 1 < n_[a]) bound = std::min(bound, lo_[a] + (c[a] + r + 1) * h_ - q[a]);
      }
      if (bound == std::numeric_limits<double>::infinity()) break;
      if (bound > 0 && best <= bound * bound) break;
    }
    return {best, arg};
  }

 private:
  std::array<int, 3> cell_of(const Point3& p) const {
    std::array<int, 3> c;
    for (int a = 0; a < 3; ++a)
      c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / h_)), 0, n_[a] - 1);
    return c;
  }
  std::size_t cell_index(const std::array<int, 3>& c) const {
    return (static_cast<std::size_t>(c[0]) * n_[1] + c[1]) * n_[2] + c[2];
  }

  template <typename F>
  void visit_ring(const std::array<int, 3>& c, int r, F&& f) const {
    for (int x = std::max(0, c[0] - r); x <= std::min(n_[0] - 1, c[0] + r); ++x)
      for (int y = std::max(0, c[1] - r); y <= std::min(n_[1] - 1, c[1] + r); ++y)
        for (int z = std::max(0, c[2] - r); z <= std::min(n_[2] - 1, c[2] + r); ++z) {
          if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != r) continue;
          for (std::size_t i : cells_[cell_index({x, y, z})]) f(i);
        }
  }

  const std::vector<Point3>& points_;
  std::vector<std::size_t> subset_;
  Point3 lo_, hi_;
  double h_ = 1.0;
  std::array<int, 3> n_{};
  std::vector<std::vector<std::size_t>> cells_;
};

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

double one_way(const PointCloud& a, const PointCloud& b) {
  double total = 0;
  if (b.size() < 64) {
    for (const auto& p : a.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : b.points) best = std::min(best, dist2(p, q));
      total += best;
    }
  } else {
    const NearestIndex index(b.points, iota_n(b.size()));
    for (const auto& p : a.points) total += index.nearest(p).first;
  }
  return total / static_cast<double>(a.size());
}

void check_nonempty(const PointCloud& a, const PointCloud& b) {
  if (a.size() == 0 || b.size() == 0) throw MetricError("chamfer of an empty point cloud");
}

// ---- slice analysis ---------------------------------------------------------

struct Component {
  int area = 0;
  int x_extent = 0;
  int perimeter = 0;  // exposed 4-neighbour edges
  int min_z = 0, max_z = 0;
};

struct Layer {
  int occupied = 0;
  std::vector<Component> components;  // largest area first

  const Component* largest() const { return components.empty() ? nullptr : &components[0]; }
  int largest_area() const { return components.empty() ? 0 : components[0].area; }
  int largest_extent() const { return components.empty() ? 0 : components[0].x_extent; }
  int max_extent() const {
    int e = 0;
    for (const auto& c : components) e = std::max(e, c.x_extent);
    return e;
  }
};

std::vector<Layer> slice(const VoxelGrid& grid) {
  const int R = grid.resolution;
  std::vector<Layer> layers(R);
  std::vector<int> seen(static_cast<std::size_t>(R) * R);
  for (int y = 0; y < R; ++y) {
    auto occ = [&](int x, int z) {
      return x >= 0 && z >= 0 && x < R && z < R && grid.occupied(x, y, z);
    };
    std::fill(seen.begin(), seen.end(), 0);
    Layer& layer = layers[y];
    for (int x = 0; x < R; ++x)
      for (int z = 0; z < R; ++z) {
        if (!occ(x, z)) continue;
        ++layer.occupied;
        if (seen[x * R + z]) continue;
        Component comp;
        int min_x = x, max_x = x;
        comp.min_z = comp.max_z = z;
        std::vector<std::pair<int, int>> stack{{x, z}};
        seen[x * R + z] = 1;
        while (!stack.empty()) {
          const auto [cx, cz] = stack.back();
          stack.pop_back();
          ++comp.area;
          min_x = std::min(min_x, cx);
          max_x = std::max(max_x, cx);
          comp.min_z = std::min(comp.min_z, cz);
          comp.max_z = std::max(comp.max_z, cz);
          constexpr std::array<std::pair<int, int>, 4> steps = {{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
          for (const auto& [dx, dz] : steps) {
            const int nx = cx + dx, nz = cz + dz;
            if (!occ(nx, nz)) {
              ++comp.perimeter;
            } else if (!seen[nx * R + nz]) {
              seen[nx * R + nz] = 1;
              stack.emplace_back(nx, nz);
            }
          }
        }
        comp.x_extent = max_x - min_x + 1;
        layer.components.push_back(comp);
      }
    std::stable_sort(layer.components.begin(), layer.components.end(),
                     [](const Component& a, const Component& b) { return a.area > b.area; });
  }
  return layers;
}

// Highest layer with the largest dominant-component area; -1 for an empty grid.
int widest_layer(const std::vector<Layer>& layers) {
  int best = -1;
  for (int y = 0; y < static_cast<int>(layers.size()); ++y)
    if (layers[y].occupied > 0 && (best < 0 || layers[y].largest_area() >= layers[best].largest_area()))
      best = y;
  return best;
}

// Length of the run of occupied layers starting at `y` and moving by `step`.
int occupied_run(const std::vector<Layer>& layers, int y, int step) {
  int n = 0;
  for (; y >= 0 && y < static_cast<int>(layers.size()) && layers[y].occupied > 0; y += step) ++n;
  return n;
}

double isoperimetric(const Component& c) {
  return 4.0 * std::numbers::pi * c.area / (static_cast<double>(c.perimeter) * c.perimeter);
}

void set_legs(AttributeVector& av, const CategorySchema& sc, const std::vector<Layer>& layers,
              int y_below, double voxel) {
  int count = 0, thickness = 0, height = 0;
  if (y_below >= 0 && layers[y_below].occupied > 0) {
    count = static_cast<int>(layers[y_below].components.size());
    thickness = layers[y_below].max_extent();
    height = occupied_run(layers, y_below, -1);
  }
  if (int i = sc.index_of("n_legs"); i >= 0) {
    av.values[i] = count;
    av.valid[i] = 1;
  }
  av.values[sc.index_of("leg_thickness")] = thickness * voxel;
  av.values[sc.index_of("leg_height")] = height * voxel;
  av.valid[sc.index_of("leg_thickness")] = av.valid[sc.index_of("leg_height")] = 1;
}

void set_entry(AttributeVector& av, const CategorySchema& sc, std::string_view name, double v) {
  const int i = sc.index_of(name);
  av.values[i] = v;
  av.valid[i] = 1;
}

const AttributeDef& attribute_def(const CategorySchema& sc, std::string_view name) {
  const int i = sc.index_of(name);
  if (i < 0 || i >= static_cast<int>(sc.attributes.size()))
    throw MetricError("attribute '" + std::string(name) + "' is not part of the " +
                      std::string(category_name(sc.category)) + " schema");
  return sc.attributes[i];
}

}  // namespace

// ---- Chamfer ----------------------------------------------------------------

double chamfer(const PointCloud& a, const PointCloud& b) {
  check_nonempty(a, b);
  return one_way(a, b) + one_way(b, a);
}

double chamfer_brute_force(const PointCloud& a, const PointCloud& b) {
  check_nonempty(a, b);
  auto brute = [](const PointCloud& x, const PointCloud& y) {
    double total = 0;
    for (const auto& p : x.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : y.points) best = std::min(best, dist2(p, q));
      total += best;
    }
    return total / static_cast<double>(x.size());
  };
  return brute(a, b) + brute(b, a);
}

PointCloud transfer_labels(const PointCloud& cloud, const PointCloud& reference) {
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < reference.labels.size(); ++i)
    if (reference.labels[i] >= 0) labeled.push_back(i);
  if (labeled.empty()) throw MetricError("reference cloud carries no labels");
  const NearestIndex index(reference.points, std::move(labeled));
  PointCloud out;
  out.points = cloud.points;
  out.label_names = reference.label_names;
  out.labels.reserve(cloud.size());
  for (const auto& p : cloud.points) out.labels.push_back(reference.labels[index.nearest(p).second]);
  return out;
}

PointCloud unrelated_points(const PointCloud& cloud, Category category,
                            std::string_view edited_attribute) {
  if (cloud.labels.size() != cloud.size()) throw MetricError("point cloud is not labeled");
  const auto& touches = attribute_def(schema(category), edited_attribute).touches;
  PointCloud out;
  out.label_names = cloud.label_names;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int l = cloud.labels[i];
    if (l < 0) continue;
    const auto& name = cloud.label_names.at(l);
    if (std::find(touches.begin(), touches.end(), name) != touches.end()) continue;
    out.points.push_back(cloud.points[i]);
    out.labels.push_back(cloud.labels[i]);
  }
  return out;
}

std::optional<double> local_gd(const PointCloud& a, const PointCloud& b, Category category,
                               std::string_view edited_attribute) {
  const bool la = a.labels.size() == a.size() && a.size() > 0;
  const bool lb = b.labels.size() == b.size() && b.size() > 0;
  if (!la && !lb) throw MetricError("local_gd needs at least one labeled cloud");
  const PointCloud a_l = la ? a : transfer_labels(a, b);
  const PointCloud b_l = lb ? b : transfer_labels(b, a);
  const auto ua = unrelated_points(a_l, category, edited_attribute);
  const auto ub = unrelated_points(b_l, category, edited_attribute);
  if (ua.size() == 0 || ub.size() == 0) return std::nullopt;
  return chamfer(ua, ub);
}

// ---- attributes -------------------------------------------------------------

namespace {

// attr_of_grid without the emptiness check: an empty grid reads as fully masked.
AttributeVector grid_attributes(const VoxelGrid& grid, Category category) {
  const auto& sc = schema(category);
  AttributeVector av = AttributeVector::masked(category);
  const int R = grid.resolution;
  const double voxel = 1.0 / R;
  const double s = R / static_cast<double>(kLattice);
  const auto layers = slice(grid);

  std::array<double, 3> rgb{};
  std::size_t n = 0;
  for (int x = 0; x < R; ++x)
    for (int y = 0; y < R; ++y)
      for (int z = 0; z < R; ++z)
        if (grid.occupied(x, y, z)) {
          for (int c = 0; c < 3; ++c) rgb[c] += grid.at(c + 1, x, y, z);
          ++n;
        }
  if (n == 0) return av;
  const std::size_t k = sc.attributes.size();
  for (int c = 0; c < 3; ++c) {
    av.values[k + c] = rgb[c] / static_cast<double>(n);
    av.valid[k + c] = 1;
  }

  switch (category) {
    case Category::Table: {
      const int min_area = static_cast<int>(std::lround(20 * s * s));
      int y_top = -1;
      for (int y = R - 1; y >= 0 && y_top < 0; --y)
        if (layers[y].largest_area() >= min_area) y_top = y;
      if (y_top < 0) break;
      int y_bot = y_top;
      int width = layers[y_top].largest_extent();
      while (y_bot - 1 >= 0 && layers[y_bot - 1].largest_area() >= min_area) {
        --y_bot;
        width = std::max(width, layers[y_bot].largest_extent());
      }
      set_entry(av, sc, "top_thickness", (y_top - y_bot + 1) * voxel);
      set_entry(av, sc, "top_width", width * voxel);
      set_entry(av, sc, "top_roundness", isoperimetric(*layers[y_top].largest()) < 0.74 ? 1.0 : 0.0);
      set_legs(av, sc, layers, y_bot - 1, voxel);
      break;
    }
    case Category::Chair: {
      const int y_seat = widest_layer(layers);
      const Layer& seat = layers[y_seat];
      set_entry(av, sc, "seat_width", seat.largest_extent() * voxel);
      set_entry(av, sc, "back_height", occupied_run(layers, y_seat + 1, +1) * voxel);
      bool arms = false;
      if (y_seat + 1 < R && layers[y_seat + 1].occupied > 0) {
        int back_z = 0;
        for (const auto& c : layers[y_seat + 1].components) back_z = std::max(back_z, c.max_z);
        int in_front = 0;
        for (int x = 0; x < R; ++x)
          for (int z = 0; z < back_z; ++z) in_front += grid.occupied(x, y_seat + 1, z) ? 1 : 0;
        arms = in_front >= static_cast<int>(std::lround(2 * s));
      }
      set_entry(av, sc, "has_arms", arms ? 1.0 : 0.0);
      set_legs(av, sc, layers, y_seat - 1, voxel);
      break;
    }
    case Category::Lamp: {
      int y0 = 0;
      while (layers[y0].occupied == 0) ++y0;
      const int min_base = static_cast<int>(std::lround(3 * s));
      int y = y0, base_w = 0;
      while (y < R && layers[y].occupied > 0 && layers[y].largest_extent() >= min_base) {
        base_w = std::max(base_w, layers[y].largest_extent());
        ++y;
      }
      set_entry(av, sc, "base_width", base_w * voxel);
      set_entry(av, sc, "base_height", (y - y0) * voxel);
      set_entry(av, sc, "pole_thickness", (y < R ? layers[y].largest_extent() : 0) * voxel);
      int shade = 0, widest = -1, highest = -1;
      for (int u = y; u < R; ++u) {
        if (layers[u].occupied == 0) continue;
        shade = std::max(shade, layers[u].largest_extent());
        if (widest < 0 || layers[u].largest_area() >= layers[widest].largest_area()) widest = u;
        highest = u;
      }
      set_entry(av, sc, "shade_size", shade * voxel);
      const bool round = widest >= 0 && layers[highest].largest_area() <
                                            0.8 * layers[widest].largest_area();
      set_entry(av, sc, "shade_round", round ? 1.0 : 0.0);
      break;
    }
  }
  return av;
}

}  // namespace

AttributeVector attr_of_grid(const VoxelGrid& grid, Category category) {
  if (grid.occupied_count() == 0) throw MetricError("cannot read attributes of an empty grid");
  return grid_attributes(grid, category);
}

AttributeVector attr_of_text(std::string_view prompt, Category category) {
  const auto& sc = schema(category);
  AttributeVector av = AttributeVector::masked(category);
  const ParsedPrompt parsed = parse_prompt(prompt);
  switch (parsed.kind) {
    case ParsedPrompt::Kind::Empty: break;
    case ParsedPrompt::Kind::Description: {
      if (parsed.category != category)
        throw MetricError("prompt describes a " + std::string(category_name(*parsed.category)) +
                          ", expected a " + std::string(category_name(category)));
      for (const auto& [name, level] : parsed.levels)
        set_entry(av, sc, name, level * attribute_def(sc, name).unit);
      if (parsed.color) {
        const auto rgb = palette()[*parsed.color].rgb;
        const std::size_t k = sc.attributes.size();
        for (int c = 0; c < 3; ++c) {
          av.values[k + c] = rgb[c];
          av.valid[k + c] = 1;
        }
      }
      break;
    }
    case ParsedPrompt::Kind::Edit: {
      const auto& def = attribute_def(sc, parsed.edit_attribute);
      const int level = parsed.edit_direction > 0 ? def.levels.back() : def.levels.front();
      set_entry(av, sc, def.name, level * def.unit);
      break;
    }
  }
  return av;
}

AttributeVector attr_of_spec(const ShapeSpec& spec) {
  const auto& sc = schema(spec.category);
  AttributeVector av = AttributeVector::masked(spec.category);
  for (std::size_t i = 0; i < sc.attributes.size(); ++i) {
    av.values[i] = spec.levels[i] * sc.attributes[i].unit;
    av.valid[i] = 1;
  }
  const std::size_t k = sc.attributes.size();
  std::array<double, 3> rgb{};
  for (const auto& p : spec.parts)
    for (int c = 0; c < 3; ++c) rgb[c] = p.color[c];
  for (int c = 0; c < 3; ++c) {
    av.values[k + c] = rgb[c];
    av.valid[k + c] = 1;
  }
  return av;
}

std::vector<double> normalized(const AttributeVector& v) {
  const auto& sc = schema(v.category);
  std::vector<double> u(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i < sc.attributes.size()) {
      const auto& def = sc.attributes[i];
      const double lo = def.levels.front() * def.unit, hi = def.levels.back() * def.unit;
      u[i] = std::clamp((v.values[i] - lo) / (hi - lo), 0.0, 1.0);
    } else {
      u[i] = std::clamp(v.values[i], 0.0, 1.0);
    }
  }
  return u;
}

std::optional<double> masked_similarity(const AttributeVector& a, const AttributeVector& b) {
  if (a.category != b.category || a.size() != b.size())
    throw MetricError("attribute vectors of different schemas");
  const auto ua = normalized(a), ub = normalized(b);
  double total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!b.valid[i]) continue;
    ++n;
    if (a.valid[i]) total += std::cos(0.5 * std::numbers::pi * (ua[i] - ub[i]));
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

std::optional<double> sim(const VoxelGrid& grid, std::string_view prompt, Category category) {
  return masked_similarity(grid_attributes(grid, category), attr_of_text(prompt, category));
}

DirSim dir_sim(const VoxelGrid& grid_in, const VoxelGrid& grid_out, std::string_view prompt_in,
               std::string_view prompt_out, Category category) {
  const auto& sc = schema(category);
  const auto a_in = grid_attributes(grid_in, category);
  const auto a_out = grid_attributes(grid_out, category);
  const auto u_in = normalized(a_in), u_out = normalized(a_out);
  const std::size_t w = sc.width();
  std::vector<double> text(w, 0.0);
  std::vector<std::uint8_t> used(w, 0);
  const ParsedPrompt parsed = parse_prompt(prompt_out);
  if (parsed.kind == ParsedPrompt::Kind::Edit) {
    const int i = sc.index_of(parsed.edit_attribute);
    attribute_def(sc, parsed.edit_attribute);
    text[i] = parsed.edit_direction;
    used[i] = 1;
  } else {
    const auto t_in = attr_of_text(prompt_in, category), t_out = attr_of_text(prompt_out, category);
    const auto v_in = normalized(t_in), v_out = normalized(t_out);
    for (std::size_t i = 0; i < w; ++i)
      if (t_in.valid[i] && t_out.valid[i]) {
        text[i] = v_out[i] - v_in[i];
        used[i] = 1;
      }
  }
  double dot = 0, ns = 0, nt = 0;
  for (std::size_t i = 0; i < w; ++i) {
    if (!used[i]) continue;
    const double d = (a_in.valid[i] && a_out.valid[i]) ? u_out[i] - u_in[i] : 0.0;
    dot += d * text[i];
    ns += d * d;
    nt += text[i] * text[i];
  }
  if (ns == 0 || nt == 0) return {};
  return {dot / std::sqrt(ns * nt), true};
}

double lab_analog(const VoxelGrid& grid_in, const VoxelGrid& grid_out, std::string_view prompt,
                  Category category) {
  const auto s_out = sim(grid_out, prompt, category), s_in = sim(grid_in, prompt, category);
  if (!s_out || !s_in) throw MetricError("prompt constrains no attribute");
  return *s_out - *s_in;
}

// ---- class distortion -------------------------------------------------------

std::array<double, 3> category_scores(const VoxelGrid& grid) {
  const auto layers = slice(grid);
  const int top = widest_layer(layers);
  if (top < 0) return {0, 0, 0};
  const double s = grid.resolution / static_cast<double>(kLattice);
  const int R = grid.resolution;
  const bool broad = layers[top].largest_area() >= 20 * s * s;
  bool above = false;
  for (int y = top + 1; y < R; ++y) above = above || layers[y].occupied > 0;
  const std::size_t below = top > 0 ? layers[top - 1].components.size() : 0;
  bool thin_single = false;
  for (const auto& l : layers)
    thin_single = thin_single || (l.components.size() == 1 && l.occupied <= 4 * s * s);
  int y0 = 0;
  while (layers[y0].occupied == 0) ++y0;
  const bool solid_bottom = layers[y0].components.size() == 1 && layers[y0].occupied >= 9 * s * s;

  auto frac = [](std::initializer_list<bool> conds) {
    double n = 0;
    for (bool c : conds) n += c ? 1 : 0;
    return n / static_cast<double>(conds.size());
  };
  return {frac({broad, !above, below >= 3}), frac({broad, above, below >= 3}),
          frac({thin_single, solid_bottom, below <= 1})};
}

std::array<double, 3> category_probabilities(const VoxelGrid& grid) {
  const auto s = category_scores(grid);
  std::array<double, 3> p;
  const double top = 3.0 * *std::max_element(s.begin(), s.end());
  double z = 0;
  for (int i = 0; i < 3; ++i) z += p[i] = std::exp(3.0 * s[i] - top);
  for (double& x : p) x /= z;
  return p;
}

double class_distortion(const VoxelGrid& grid_in, const VoxelGrid& grid_out, Category category) {
  const auto c = static_cast<std::size_t>(category);
  return std::abs(category_probabilities(grid_in)[c] - category_probabilities(grid_out)[c]);
}

// ---- Frechet distance -------------------------------------------------------

double frechet_distance(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b) {
  if (a.size() < 2 || b.size() < 2) throw MetricError("frechet distance needs at least two samples per set");
  const std::size_t d = a[0].size();
  auto fit = [d](const std::vector<std::vector<double>>& x) {
    Eigen::MatrixXd m(x.size(), d);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].size() != d) throw MetricError("feature vectors of different widths");
      for (std::size_t j = 0; j < d; ++j) m(i, j) = x[i][j];
    }
    Eigen::VectorXd mu = m.colwise().mean();
    Eigen::MatrixXd c = m.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(x.size() - 1);
    return std::make_pair(mu, cov);
  };
  const auto [mu_a, cov_a] = fit(a);
  const auto [mu_b, cov_b] = fit(b);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(cov_a);
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  const Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double tr_sqrt = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
}

double fpd_analog(const std::vector<VoxelGrid>& a, const std::vector<VoxelGrid>& b,
                  Category category) {
  auto features = [category](const std::vector<VoxelGrid>& grids) {
    std::vector<std::vector<double>> f;
    f.reserve(grids.size());
    for (const auto& g : grids) {
      const auto av = grid_attributes(g, category);
      auto u = normalized(av);
      for (std::size_t i = 0; i < u.size(); ++i)
        if (!av.valid[i]) u[i] = 0.0;
      f.push_back(std::move(u));
    }
    return f;
  };
  return frechet_distance(features(a), features(b));
}

}  // namespace shapeguide
