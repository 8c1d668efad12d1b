#include <algorithm>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "nidslam/keyframes.hpp"

namespace nidslam {
namespace {

const CameraIntrinsics kIntr{100, 100, 100, 75, 200, 150};

Frame plane(double depth) {
  Frame f;
  f.depth = DepthImage(kIntr.width, kIntr.height, depth);
  f.rgb = RgbImage(kIntr.width, kIntr.height, Vec3(0.5, 0.5, 0.5));
  return f;
}

Pose shifted(double x) { return {Mat3::Identity(), Vec3(x, 0, 0)}; }

TEST(Overlap, IdenticalViewIsOne) {
  const Frame f = plane(2.0);
  EXPECT_DOUBLE_EQ(overlap_ratio(f, Pose::identity(), f, Pose::identity(), kIntr), 1.0);
}

TEST(Overlap, OppositeViewIsZero) {
  const Frame f = plane(2.0);
  const Pose turned{so3_exp(Vec3(0, std::numbers::pi, 0)), Vec3::Zero()};
  EXPECT_DOUBLE_EQ(overlap_ratio(f, turned, f, Pose::identity(), kIntr), 0.0);
}

TEST(Overlap, HalfImageTranslationOnFrontalPlane) {
  // At depth 2 the image spans width * depth / fx = 4 m, so a 2 m slide keeps half in view.
  const Frame f = plane(2.0);
  const double half = 0.5 * kIntr.width * 2.0 / kIntr.fx;
  EXPECT_NEAR(overlap_ratio(f, shifted(half), f, Pose::identity(), kIntr), 0.5, 0.05);
}

TEST(Overlap, MaskedAndInvalidPixelsAreIgnored) {
  Frame f = plane(2.0);
  f.mask = MaskImage(kIntr.width, kIntr.height, 0);
  for (int r = 0; r < kIntr.height; ++r)
    for (int c = 0; c < kIntr.width / 2; ++c) (*f.mask)(r, c) = 1;
  // Shift so only the masked (left) half would have stayed in view.
  const double half = 0.5 * kIntr.width * 2.0 / kIntr.fx;
  EXPECT_NEAR(overlap_ratio(f, shifted(half), plane(2.0), Pose::identity(), kIntr), 0.0, 0.05);
  EXPECT_EQ(overlap_ratio(plane(0.0), Pose::identity(), plane(2.0), Pose::identity(), kIntr), 0.0);
}

TEST(ShouldInsert, HandCases) {
  EXPECT_FALSE(should_insert(0.9, 0.5, 0.85, false));
  EXPECT_TRUE(should_insert(0.0, 0.0, 0.85, false));
  EXPECT_FALSE(should_insert(0.35, 0.5, 0.85, false));
  EXPECT_TRUE(should_insert(0.9, 0.9, 0.85, true));
}

TEST(ShouldInsert, NeverAboveThreshold) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1), t(0.05, 2.0);
  for (int i = 0; i < 1000; ++i) {
    const double rd = u(rng), ro = u(rng), tau = t(rng);
    if (rd + ro >= tau) EXPECT_FALSE(should_insert(rd, ro, tau, false));
    EXPECT_EQ(should_insert(0.0, ro, tau, false), ro < tau);
  }
}

RefinedMask band_mask(double fraction) {
  MaskImage m(kIntr.width, kIntr.height, 0);
  const int cols = static_cast<int>(fraction * kIntr.width);
  for (int r = 0; r < kIntr.height; ++r)
    for (int c = kIntr.width - cols; c < kIntr.width; ++c) m(r, c) = 1;
  return refine_mask(m, DepthImage(kIntr.width, kIntr.height, 2.0));
}

TEST(MaybeInsert, DecisionFollowsRatios) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  const Bounds b{Vec3(-10, -10, -1), Vec3(10, 10, 5)};
  for (int trial = 0; trial < 200; ++trial) {
    KeyframeSet set(b, 0.5);
    const Frame f = plane(2.0);
    ASSERT_TRUE(set.maybe_insert(f, Pose::identity(), RefinedMask::empty(kIntr.width, kIntr.height),
                                 0.9, kIntr, 0).inserted);
    const RefinedMask mask = band_mask(0.5 * u(rng));
    Frame g = plane(2.0);
    g.mask = mask.bitmap;
    const double tau = 0.2 + 1.5 * u(rng);
    const InsertDecision d = set.maybe_insert(g, shifted(4.0 * u(rng)), mask, tau, kIntr, 1);
    EXPECT_EQ(d.inserted, d.dynamic_ratio + d.overlap_ratio < tau);
    EXPECT_EQ(set.size(), d.inserted ? 2u : 1u);
  }
}

TEST(MaybeInsert, StaticSceneReducesToOverlap) {
  const Bounds b{Vec3(-10, -10, -1), Vec3(10, 10, 5)};
  for (double x : {0.0, 0.5, 1.0, 2.0, 3.0, 5.0}) {
    KeyframeSet set(b, 0.5);
    const Frame f = plane(2.0);
    const RefinedMask none = RefinedMask::empty(kIntr.width, kIntr.height);
    set.maybe_insert(f, Pose::identity(), none, 0.9, kIntr, 0);
    const InsertDecision d = set.maybe_insert(f, shifted(x), none, 0.9, kIntr, 1);
    EXPECT_EQ(d.dynamic_ratio, 0.0);
    EXPECT_EQ(d.inserted, overlap_ratio(f, shifted(x), f, Pose::identity(), kIntr) < 0.9);
  }
}

Keyframe make_keyframe(const Frame& f, const Pose& p, std::size_t index) {
  return {f, p, RefinedMask::empty(f.width(), f.height()), 0.0, 0.0, index, {}};
}

TEST(Select, SingleKeyframe) {
  KeyframeSet set({Vec3(-10, -10, -1), Vec3(10, 10, 5)}, 0.5);
  set.insert(make_keyframe(plane(2.0), Pose::identity(), 0), kIntr);
  std::mt19937_64 rng(3);
  for (int call = 0; call < 3; ++call) {
    const MappingSelection s = set.select_for_mapping(plane(2.0), shifted(0.1), 5, 5, 2, kIntr, rng);
    EXPECT_EQ(s.keyframes, (std::vector<std::size_t>{0}));
    EXPECT_EQ(s.size(), 2u);
  }
}

TEST(Select, CoverageStepPicksBothDisjointHalves) {
  // Two keyframes facing opposite walls of a 6 m room; the current frame sees neither.
  KeyframeSet set({Vec3(-3, -3, -3), Vec3(3, 3, 3)}, 0.25);
  const Pose front = Pose::identity();
  const Pose back{so3_exp(Vec3(0, std::numbers::pi, 0)), Vec3::Zero()};
  const Pose side{so3_exp(Vec3(0, std::numbers::pi / 2, 0)), Vec3::Zero()};
  set.insert(make_keyframe(plane(2.0), front, 0), kIntr);
  set.insert(make_keyframe(plane(2.0), back, 1), kIntr);
  std::mt19937_64 rng(4);
  const MappingSelection s = set.select_for_mapping(plane(2.0), side, 2, 3, 10, kIntr, rng);
  ASSERT_TRUE(s.coverage_step);
  std::vector<std::size_t> got = s.keyframes;
  std::sort(got.begin(), got.end());
  EXPECT_EQ(got, (std::vector<std::size_t>{0, 1}));
}

TEST(Select, BoundedGreedyMonotoneAndSeeded) {
  const Bounds b{Vec3(-10, -10, -1), Vec3(10, 10, 5)};
  auto build = [&] {
    KeyframeSet set(b, 0.5);
    for (int i = 0; i < 8; ++i) set.insert(make_keyframe(plane(2.0), shifted(0.4 * i), i), kIntr);
    return set;
  };
  KeyframeSet a = build(), c = build();
  std::mt19937_64 ra(5), rc(5);
  for (int call = 0; call < 12; ++call) {
    const MappingSelection sa = a.select_for_mapping(plane(2.0), shifted(1.3), 8, 4, 5, kIntr, ra);
    const MappingSelection sc = c.select_for_mapping(plane(2.0), shifted(1.3), 8, 4, 5, kIntr, rc);
    EXPECT_EQ(sa.keyframes, sc.keyframes);
    EXPECT_LE(sa.size(), 4u);
    EXPECT_EQ(sa.coverage_step, call % 5 == 0);
    for (std::size_t i = 1; i < sa.gains.size(); ++i) EXPECT_LE(sa.gains[i], sa.gains[i - 1]);
    std::vector<std::size_t> unique = sa.keyframes;
    std::sort(unique.begin(), unique.end());
    EXPECT_EQ(std::unique(unique.begin(), unique.end()), unique.end());
  }
}

TEST(RecentSources, TakesTheNewest) {
  KeyframeSet set({Vec3(-10, -10, -1), Vec3(10, 10, 5)}, 0.5);
  for (int i = 0; i < 5; ++i) set.insert(make_keyframe(plane(2.0), shifted(i), i), kIntr);
  const auto src = recent_sources(set, 2);
  ASSERT_EQ(src.size(), 2u);
  EXPECT_EQ(src[0].pose->translation.x(), 3.0);
  EXPECT_EQ(src[1].pose->translation.x(), 4.0);
}

}  // namespace
}  // namespace nidslam
