#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "shapeguide/metrics.hpp"

using namespace shapeguide;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n, bool clustered) {
  PointCloud c;
  const Point3 center{rng.uniform(), rng.uniform(), rng.uniform()};
  for (std::size_t i = 0; i < n; ++i) {
    Point3 p;
    for (int a = 0; a < 3; ++a)
      p[a] = clustered ? center[a] + 0.05 * rng.normal() : rng.uniform(-0.2, 1.2);
    c.points.push_back(p);
  }
  return c;
}

std::vector<oracle::P3> as_oracle(const PointCloud& c) {
  return {c.points.begin(), c.points.end()};
}

ShapeSpec random_spec(Rng& rng) {
  return sample_shape(rng, kAllCategories[rng.below(3)]);
}

}  // namespace

TEST(Chamfer, EqualsBruteForceExactly) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_cloud(rng, 1 + rng.below(600), trial % 3 == 0);
    const auto b = random_cloud(rng, 1 + rng.below(600), trial % 4 == 0);
    const double want = oracle::chamfer(as_oracle(a), as_oracle(b));
    EXPECT_EQ(chamfer(a, b), want) << "trial " << trial;
    EXPECT_EQ(chamfer_brute_force(a, b), want);
  }
}

TEST(Chamfer, DuplicatePointsAndDegenerateBoxes) {
  PointCloud flat;
  for (int i = 0; i < 200; ++i) flat.points.push_back({i / 200.0, 0.5, 0.5});
  PointCloud same;
  for (int i = 0; i < 100; ++i) same.points.push_back({0.3, 0.3, 0.3});
  EXPECT_EQ(chamfer(flat, same), oracle::chamfer(as_oracle(flat), as_oracle(same)));
  EXPECT_EQ(chamfer(flat, flat), 0.0);
}

TEST(Chamfer, EmptyCloudThrows) {
  PointCloud a, b;
  b.points.push_back({0, 0, 0});
  EXPECT_THROW(chamfer(a, b), MetricError);
}

TEST(LabelTransfer, NearestLabeledPoint) {
  Rng rng(3);
  PointCloud ref = random_cloud(rng, 300, false);
  ref.label_names = {"a", "b", "c"};
  for (std::size_t i = 0; i < ref.size(); ++i) ref.labels.push_back(static_cast<std::int16_t>(i % 4) - 1);
  const PointCloud q = random_cloud(rng, 200, false);
  const auto out = transfer_labels(q, ref);
  ASSERT_EQ(out.labels.size(), q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    double best = 1e300;
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (ref.labels[j] < 0) continue;
      const double d = oracle::chamfer({q.points[i]}, {ref.points[j]}) / 2;
      best = std::min(best, d);
    }
    ASSERT_GE(out.labels[i], 0);
    bool found = false;
    for (std::size_t j = 0; j < ref.size(); ++j)
      if (ref.labels[j] == out.labels[i] &&
          oracle::chamfer({q.points[i]}, {ref.points[j]}) / 2 == best)
        found = true;
    EXPECT_TRUE(found) << i;
  }
}

TEST(AttrOfGrid, RecoversGeneratorLevels) {
  Rng rng(21);
  for (int i = 0; i < 600; ++i) {
    const auto spec = random_spec(rng);
    const auto measured = attr_of_grid(voxelize(spec), spec.category);
    const auto truth = attr_of_spec(spec);
    ASSERT_EQ(measured.valid_count(), measured.size());
    for (std::size_t e = 0; e < truth.size(); ++e)
      ASSERT_NEAR(measured.values[e], truth.values[e], 1e-12)
          << category_name(spec.category) << " " << schema(spec.category).entry_name(e) << " item "
          << i;
  }
}

TEST(AttrOfGrid, AbstractionsReadAsSquare) {
  Rng rng(22);
  for (int i = 0; i < 100; ++i) {
    const auto spec = abstract_shape(random_spec(rng));
    const auto measured = attr_of_grid(voxelize(spec), spec.category);
    EXPECT_EQ(measured, attr_of_spec(spec));
  }
}

TEST(AttrOfGrid, EmptyGridIsAnError) {
  EXPECT_THROW(attr_of_grid(VoxelGrid::empty(8), Category::Chair), MetricError);
}

TEST(AttrOfText, DescriptionAndEdit) {
  const auto d = attr_of_text("a green table with three thick legs and a round top", Category::Table);
  const auto& sc = schema(Category::Table);
  EXPECT_EQ(d.valid_count(), 6u);
  EXPECT_EQ(d.values[sc.index_of("n_legs")], 3.0);
  EXPECT_EQ(d.values[sc.index_of("leg_thickness")], 2.0 / 8);
  EXPECT_EQ(d.values[sc.index_of("top_roundness")], 1.0);

  const auto e = attr_of_text("the legs are taller", Category::Table);
  EXPECT_EQ(e.valid_count(), 1u);
  EXPECT_EQ(e.values[sc.index_of("leg_height")], 5.0 / 8);
  EXPECT_THROW(attr_of_text("the shade is bigger", Category::Table), MetricError);
  EXPECT_THROW(attr_of_text("a red lamp with a slender pole and a drum shade", Category::Chair),
               MetricError);
}

TEST(Sim, RenderedTextMatchesItsShape) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto spec = random_spec(rng);
    EXPECT_DOUBLE_EQ(*sim(voxelize(spec), render_text(spec), spec.category), 1.0);
  }
}

TEST(Sim, BoundedAndMissingEntriesScoreZero) {
  const auto s = sim(VoxelGrid::empty(8), "the legs are taller", Category::Chair);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(*s, 0.0);
  EXPECT_FALSE(sim(VoxelGrid::empty(8), "", Category::Chair).has_value());
}

TEST(LabAnalog, IdentityIsZeroAndEditPairsGain) {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const auto pair = make_edit_pair(rng, random_spec(rng));
    const auto c = pair.distractor.category;
    const auto gin = voxelize(pair.distractor), gout = voxelize(pair.target);
    EXPECT_EQ(lab_analog(gin, gin, pair.prompt, c), 0.0);
    EXPECT_GT(lab_analog(gin, gout, pair.prompt, c), 0.0) << pair.prompt;
    const auto d = dir_sim(gin, gout, "", pair.prompt, c);
    ASSERT_TRUE(d.defined);
    EXPECT_DOUBLE_EQ(d.value, 1.0);
  }
}

TEST(LabAnalog, AntisymmetryAndDirSimSignFlip) {
  Rng rng(9);
  int defined = 0;
  for (int i = 0; i < 1000; ++i) {
    const Category c = kAllCategories[rng.below(3)];
    const auto a = sample_shape(rng, c), b = sample_shape(rng, c);
    const auto ga = voxelize(a), gb = voxelize(b);
    const auto edit = make_edit_pair(rng, a);
    const std::string prompt = rng.below(2) ? edit.prompt : render_text(b);
    EXPECT_EQ(lab_analog(ga, gb, prompt, c), -lab_analog(gb, ga, prompt, c));

    const std::string p_in = render_text(a), p_out = rng.below(2) ? edit.prompt : render_text(b);
    const auto fwd = dir_sim(ga, gb, p_in, p_out, c);
    const auto rev = dir_sim(gb, ga, p_in, p_out, c);
    ASSERT_EQ(fwd.defined, rev.defined);
    if (fwd.defined) {
      ++defined;
      EXPECT_EQ(fwd.value, -rev.value);
      EXPECT_LE(std::abs(fwd.value), 1.0 + 1e-12);
    }
    if (p_out != edit.prompt) {
      const auto swapped = dir_sim(gb, ga, p_out, p_in, c);
      ASSERT_EQ(swapped.defined, fwd.defined);
      if (fwd.defined) EXPECT_DOUBLE_EQ(swapped.value, fwd.value);
    }
  }
  EXPECT_GT(defined, 500);
}

TEST(DirSim, ZeroChangeIsUndefined) {
  Rng rng(4);
  const auto spec = sample_shape(rng, Category::Lamp);
  const auto g = voxelize(spec);
  const auto d = dir_sim(g, g, "", "the shade is bigger", Category::Lamp);
  EXPECT_FALSE(d.defined);
  EXPECT_EQ(d.value, 0.0);
}

TEST(ClassDistortion, GeneratedShapesClassifyCorrectly) {
  Rng rng(31);
  for (int i = 0; i < 300; ++i) {
    const auto spec = random_spec(rng);
    for (const auto& s : {spec, abstract_shape(spec)}) {
      const auto p = category_probabilities(voxelize(s));
      const auto c = static_cast<std::size_t>(s.category);
      for (std::size_t k = 0; k < 3; ++k)
        if (k != c) EXPECT_GT(p[c], p[k]) << category_name(s.category) << " item " << i;
    }
  }
}

TEST(ClassDistortion, IdentityIsZeroAndEmptyLosesClass) {
  Rng rng(32);
  const auto spec = sample_shape(rng, Category::Chair);
  const auto g = voxelize(spec);
  EXPECT_EQ(class_distortion(g, g, Category::Chair), 0.0);
  EXPECT_GT(class_distortion(g, VoxelGrid::empty(8), Category::Chair), 0.2);
}

TEST(LocalGd, UnrelatedPartsOnly) {
  Rng rng(41);
  const auto spec = build_shape(Category::Lamp, {3, 1, 1, 3, 0}, 2, 7);
  const auto edited = build_shape(Category::Lamp, {3, 1, 1, 3, 1}, 2, 7);
  Rng s1(1), s2(2);
  const auto a = point_cloud(voxelize(spec), 4000, s1);
  const auto b = point_cloud(voxelize(edited), 4000, s2);
  const auto local = local_gd(a, b, Category::Lamp, "shade_round");
  ASSERT_TRUE(local.has_value());
  EXPECT_LT(*local, chamfer(a, b));
  // Unlabeled outputs borrow labels from the input.
  PointCloud bare;
  bare.points = b.points;
  const auto borrowed = local_gd(a, bare, Category::Lamp, "shade_round");
  ASSERT_TRUE(borrowed.has_value());
  EXPECT_LT(*borrowed, chamfer(a, b));
}

TEST(LocalGd, EditTouchingEveryPartIsExcluded) {
  Rng rng(42);
  const auto spec = sample_shape(rng, Category::Chair);
  const auto a = point_cloud(voxelize(spec), 500, rng);
  EXPECT_FALSE(local_gd(a, a, Category::Chair, "seat_width").has_value());
  EXPECT_EQ(*local_gd(a, a, Category::Chair, "back_height"), 0.0);
}

TEST(Frechet, RecoversMeanShift) {
  Rng rng(51);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 4;
    std::vector<double> shift(d);
    double want = 0;
    for (double& s : shift) {
      s = rng.uniform(-2.0, 2.0);
      want += s * s;
    }
    std::vector<std::vector<double>> a, b;
    for (int i = 0; i < 20000; ++i) {
      std::vector<double> x(d), y(d);
      for (std::size_t j = 0; j < d; ++j) {
        x[j] = rng.normal() * (1 + 0.3 * j);
        y[j] = rng.normal() * (1 + 0.3 * j) + shift[j];
      }
      a.push_back(x);
      b.push_back(y);
    }
    EXPECT_NEAR(frechet_distance(a, b), want, 0.05 * want);
  }
}

TEST(Frechet, DiagonalCovariancesClosedForm) {
  // Exact sample moments: two points per axis at mu +- sigma (n - 1 normalization).
  std::vector<std::vector<double>> a = {{1, 0}, {-1, 0}, {0, 2}, {0, -2}};
  std::vector<std::vector<double>> b = {{3, 0}, {-3, 0}, {0, 1}, {0, -1}};
  // cov_a = diag(2/3, 8/3), cov_b = diag(6, 2/3)
  const double ca0 = 2.0 / 3, ca1 = 8.0 / 3, cb0 = 6.0, cb1 = 2.0 / 3;
  const double want = ca0 + ca1 + cb0 + cb1 - 2 * (std::sqrt(ca0 * cb0) + std::sqrt(ca1 * cb1));
  EXPECT_NEAR(frechet_distance(a, b), want, 1e-12);
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-12);
}

TEST(Frechet, GridSetsOfOneCategory) {
  Rng rng(52);
  std::vector<VoxelGrid> a, b;
  for (int i = 0; i < 40; ++i) {
    a.push_back(voxelize(sample_shape(rng, Category::Table)));
    b.push_back(voxelize(sample_shape(rng, Category::Table)));
  }
  EXPECT_NEAR(fpd_analog(a, a, Category::Table), 0.0, 1e-9);
  EXPECT_GT(fpd_analog(a, b, Category::Table), 0.0);
}
