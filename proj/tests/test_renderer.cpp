#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "nidslam/renderer.hpp"

namespace nidslam {
namespace {

TEST(SampleRay, SurfaceSamplesHugTheSensorRange) {
  Config c;
  std::mt19937_64 rng(1);
  const auto d = sample_ray(2.0, c, rng);
  ASSERT_EQ(d.size(), 48u);
  int near_surface = 0;
  for (double x : d) near_surface += (x >= 1.95 && x <= 2.05);
  EXPECT_GE(near_surface, 16);
}

TEST(SampleRay, SurfaceSamplesAreWithinTau) {
  // Pin the single stratified draw inside the band too, so every sample must land there.
  Config c;
  c.m_strat = 1;
  c.strat_far_factor = 1.0;
  c.near = 1.96;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const auto d = sample_ray(2.0, c, rng);
    ASSERT_EQ(d.size(), 17u);
    for (double x : d) {
      EXPECT_GE(x, 1.95);
      EXPECT_LE(x, 2.05);
    }
  }
}

TEST(SampleRay, StratifiedWithoutRange) {
  Config c;
  std::mt19937_64 rng(2);
  const auto d = sample_ray(std::nullopt, c, rng);
  ASSERT_EQ(d.size(), 48u);
  const double step = (c.far - c.near) / 48.0;
  for (int i = 0; i < 48; ++i) {
    EXPECT_GE(d[i], c.near + i * step);
    EXPECT_LE(d[i], c.near + (i + 1) * step);
  }
}

TEST(SampleRay, SortedForAnySeed) {
  Config c;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const auto d = sample_ray(0.3 + 0.05 * seed, c, rng);
    EXPECT_TRUE(std::is_sorted(d.begin(), d.end()));
  }
}

SceneParams unit_box_scene() {
  Config c;
  c.feature_dim = 2;
  c.hidden = {4};
  c.geo_voxel = {0.5, 0.5, 0.5};
  c.color_voxel = 0.5;
  return init_scene({Vec3(0, 0, 0), Vec3(1, 1, 1)}, c, 1);
}

TEST(FilterPoints, AllInsideAndAllOutside) {
  const SceneParams s = unit_box_scene();
  const std::vector<Vec3> inside{Vec3(0.1, 0.2, 0.3), Vec3(0.9, 0.9, 0.9), Vec3(0.5, 0.5, 0.5)};
  EXPECT_EQ(filter_points(inside, s), (std::vector<std::size_t>{0, 1, 2}));
  const std::vector<Vec3> outside{Vec3(-0.1, 0.2, 0.3), Vec3(2, 2, 2)};
  EXPECT_TRUE(filter_points(outside, s).empty());
}

TEST(FilterPoints, StraddlingRayMatchesPerPointCheck) {
  const SceneParams s = unit_box_scene();
  const Ray ray{Vec3(-0.5, 0.3, 0.4), Vec3(1, 0.2, 0.1).normalized()};
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(ray.at(0.03 * i));
  std::vector<std::size_t> want;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3& p = pts[i];
    if (p.x() >= 0 && p.y() >= 0 && p.z() >= 0 && p.x() <= 1 && p.y() <= 1 && p.z() <= 1) {
      want.push_back(i);
    }
  }
  EXPECT_FALSE(want.empty());
  EXPECT_LT(want.size(), pts.size());
  EXPECT_EQ(filter_points(pts, s), want);
}

TEST(Composite, OpaqueFirstPoint) {
  const std::vector<double> d{1.0, 2.0, 3.0}, o{1.0, 0.7, 0.2};
  const std::vector<double> rgb{0.1, 0.2, 0.3, 0.9, 0.9, 0.9, 0.5, 0.5, 0.5};
  const Composite c = composite(d, o, rgb.data());
  EXPECT_EQ(c.weights, (std::vector<double>{1.0, 0.0, 0.0}));
  EXPECT_EQ(c.depth, 1.0);
  EXPECT_TRUE(c.rgb.isApprox(Vec3(0.1, 0.2, 0.3)));
  EXPECT_EQ(c.variance, 0.0);
}

TEST(Composite, HalfThenFull) {
  const std::vector<double> d{1.0, 3.0}, o{0.5, 1.0};
  const Composite c = composite(d, o, nullptr);
  EXPECT_DOUBLE_EQ(c.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(c.weights[1], 0.5);
  EXPECT_DOUBLE_EQ(c.depth, 2.0);
  EXPECT_DOUBLE_EQ(c.variance, 1.0);
}

TEST(Composite, EmptyOccupancyIsInvalid) {
  const std::vector<double> d{1.0, 2.0}, o{0.0, 0.0};
  EXPECT_FALSE(composite(d, o, nullptr).valid);
}

TEST(Composite, RandomInvariants) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> len(1, 40);
  for (int t = 0; t < 2000; ++t) {
    const int n = len(rng);
    std::vector<double> d(n), o(n), rgb(3 * n);
    for (int i = 0; i < n; ++i) {
      d[i] = 0.1 + 5 * u(rng);
      o[i] = u(rng) < 0.2 ? 0.0 : u(rng);
    }
    for (double& x : rgb) x = u(rng);
    std::sort(d.begin(), d.end());
    const Composite c = composite(d, o, rgb.data());
    EXPECT_LE(c.weight_sum, 1.0 + 1e-9);
    if (!c.valid) continue;
    double s = 0;
    for (double w : c.weights) s += w / c.weight_sum;
    EXPECT_NEAR(s, 1.0, 1e-9);
    EXPECT_GE(c.depth, d.front() - 1e-12);
    EXPECT_LE(c.depth, d.back() + 1e-12);
    for (int k = 0; k < 3; ++k) {
      double lo = 1, hi = 0;
      for (int i = 0; i < n; ++i) {
        if (c.weights[i] == 0) continue;
        lo = std::min(lo, rgb[3 * i + k]);
        hi = std::max(hi, rgb[3 * i + k]);
      }
      EXPECT_GE(c.rgb[k], lo - 1e-12);
      EXPECT_LE(c.rgb[k], hi + 1e-12);
    }
  }
}

TEST(Composite, OpaquePointTruncatesExactly) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 500; ++t) {
    const int n = 12;
    std::vector<double> d(n), o(n);
    for (int i = 0; i < n; ++i) {
      d[i] = 1 + i;
      o[i] = u(rng);
    }
    const int k = t % n;
    o[k] = 1.0;
    const Composite c = composite(d, o, nullptr);
    for (int j = k + 1; j < n; ++j) EXPECT_EQ(c.weights[j], 0.0);
  }
}

TEST(Composite, VarianceZeroIffSingleDepth) {
  const std::vector<double> d{2.0, 2.0, 2.0}, o{0.3, 0.4, 0.5};
  EXPECT_NEAR(composite(d, o, nullptr).variance, 0.0, 1e-12);
  const std::vector<double> d2{2.0, 2.5, 3.0}, o2{0.0, 0.4, 0.0};
  EXPECT_NEAR(composite(d2, o2, nullptr).variance, 0.0, 1e-12);
  const std::vector<double> d3{2.0, 2.5}, o3{0.3, 0.4};
  EXPECT_GT(composite(d3, o3, nullptr).variance, 1e-12);
}

// Occupancy = clamp(100 * (z - 2) + 1, 0, 1): fully opaque from z = 2 on.
SceneParams frontal_plane_scene() {
  Config c;
  c.feature_dim = 2;
  c.hidden = {2, 1};
  c.geo_voxel = {0.5, 0.5, 0.5};
  c.color_voxel = 0.5;
  SceneParams s = init_scene({Vec3(-3, -3, 0), Vec3(3, 3, 3)}, c, 1);
  for (auto* d : {&s.geo_decoders[0], &s.geo_decoders[1], &s.geo_decoders[2]}) {
    for (auto& l : d->layers()) {
      l.weight.setZero();
      l.bias.setZero();
    }
  }
  auto& L = s.geo_decoders[0].layers();
  const double a = 100.0;
  L[0].weight(0, 2) = a;  // input rows: x, y, z, features
  L[0].bias[0] = -2 * a + 1;
  L[0].weight(1, 2) = a;
  L[0].bias[1] = -2 * a;
  L[1].weight(0, 0) = 1;
  L[1].weight(0, 1) = -1;
  L[2].weight(0, 0) = 1;
  return s;
}

TEST(RenderImage, FrontalPlaneDepth) {
  const SceneParams s = frontal_plane_scene();
  const CameraIntrinsics intr{60, 60, 40, 30, 80, 60};
  Config c;
  c.m_strat = 140;
  c.far = 3.0;
  const RenderedImage img = render_image(Pose::identity(), intr, s, 1, c);
  int checked = 0;
  for (int r = 0; r < intr.height; ++r) {
    for (int col = 0; col < intr.width; ++col) {
      ASSERT_TRUE(img.valid(r, col));
      const double cosine = 1.0 / range_per_depth(col, r, intr);
      EXPECT_NEAR(img.range(r, col), 2.0 / cosine, 0.05);
      EXPECT_NEAR(img.depth(r, col), 2.0, 0.05);
      ++checked;
    }
  }
  EXPECT_EQ(checked, intr.width * intr.height);
}

TEST(RenderImage, FrontalPlaneDepthGuided) {
  const SceneParams s = frontal_plane_scene();
  const CameraIntrinsics intr{60, 60, 40, 30, 80, 60};
  const Config c;
  const DepthImage guide(intr.width, intr.height, 2.0);
  const RenderedImage img = render_image(Pose::identity(), intr, s, 1, c, &guide);
  for (int r = 0; r < intr.height; ++r) {
    for (int col = 0; col < intr.width; ++col) {
      EXPECT_NEAR(img.range(r, col), 2.0 * range_per_depth(col, r, intr), 0.05);
    }
  }
}

TEST(RenderImage, StrideShrinksGrid) {
  const SceneParams s = frontal_plane_scene();
  const CameraIntrinsics intr{500, 500, 320, 240, 640, 480};
  Config c;
  c.m_strat = 8;
  c.m_surf = 1;
  const RenderedImage img = render_image(Pose::identity(), intr, s, 4, c);
  EXPECT_EQ(img.depth.width(), 160);
  EXPECT_EQ(img.depth.height(), 120);
}

TEST(RenderImage, FixedSeedIsBitIdentical) {
  Config c;
  SceneParams s = init_scene({Vec3(-3, -3, 0), Vec3(3, 3, 3)}, c, 5);
  const CameraIntrinsics intr{30, 30, 15, 10, 30, 20};
  s.geo_decoders[0].layers().back().bias[0] = 0.05;
  const RenderedImage a = render_image(Pose::identity(), intr, s, 1, c);
  const RenderedImage b = render_image(Pose::identity(), intr, s, 1, c);
  EXPECT_EQ(a.range.data(), b.range.data());
  EXPECT_EQ(a.valid.data(), b.valid.data());
  for (std::size_t i = 0; i < a.rgb.data().size(); ++i) {
    EXPECT_EQ(a.rgb.data()[i], b.rgb.data()[i]);
  }
}

TEST(RenderRay, AgreesWithBatchedRendering) {
  Config c;
  SceneParams s = init_scene({Vec3(-1, -1, 0), Vec3(1, 1, 2)}, c, 6);
  s.geo_decoders[1].layers().back().bias[0] = 0.1;
  std::mt19937_64 rng(7);
  std::vector<RayRequest> req;
  for (int i = 0; i < 20; ++i) {
    const Ray ray{Vec3(0, 0, 0.1), Vec3(0.05 * i - 0.5, 0.2, 1).normalized()};
    req.push_back({ray, sample_ray(1.0 + 0.02 * i, c, rng)});
  }
  const auto batched = render_rays(req, s);
  for (std::size_t i = 0; i < req.size(); ++i) {
    const RaySample one = render_ray(req[i].ray, req[i].depths, s);
    ASSERT_EQ(one.valid, batched[i].valid);
    if (!one.valid) continue;
    EXPECT_NEAR(one.depth, batched[i].depth, 1e-12);
    EXPECT_NEAR(one.variance, batched[i].variance, 1e-12);
    EXPECT_LT((one.rgb - batched[i].rgb).norm(), 1e-12);
  }
}

}  // namespace
}  // namespace nidslam
