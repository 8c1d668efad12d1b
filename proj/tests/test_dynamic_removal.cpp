#include <random>

#include <gtest/gtest.h>

#include "nidslam/dynamic_removal.hpp"
#include "nidslam/synthetic.hpp"

namespace nidslam {
namespace {

DepthImage row_image(std::initializer_list<double> values) {
  DepthImage d(static_cast<int>(values.size()), 1);
  int c = 0;
  for (double v : values) d(0, c++) = v;
  return d;
}

DepthImage random_depth(std::uint64_t seed, int w, int h) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 4.0), z(0, 1);
  DepthImage d(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) d(r, c) = z(rng) < 0.1 ? 0.0 : u(rng);
  return d;
}

TEST(ReviseDepth, HandRow) {
  const DepthImage out = revise_depth(row_image({1.0, 1.0, 3.0, 3.0}), 0.5);
  EXPECT_EQ(out(0, 0), 1.0);
  EXPECT_EQ(out(0, 1), 1.0);
  EXPECT_EQ(out(0, 2), 0.0);
  EXPECT_EQ(out(0, 3), 3.0);
}

TEST(ReviseDepth, HugeThresholdIsIdentity) {
  const DepthImage d = random_depth(1, 30, 20);
  EXPECT_EQ(revise_depth(d, 1e6).data(), d.data());
}

TEST(ReviseDepth, AllZeroStaysZero) {
  const DepthImage d(10, 8, 0.0);
  EXPECT_EQ(revise_depth(d, 0.1).data(), d.data());
}

TEST(ReviseDepth, IdempotentAndNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DepthImage d = random_depth(seed, 32, 24);
    const DepthImage once = revise_depth(d, 0.8);
    EXPECT_EQ(revise_depth(once, 0.8).data(), once.data());
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_TRUE(once.data()[i] == d.data()[i] || once.data()[i] == 0.0);
    }
  }
}

MaskImage square_mask(int w, int h, int r0, int c0, int size) {
  MaskImage m(w, h, 0);
  for (int r = r0; r < r0 + size; ++r)
    for (int c = c0; c < c0 + size; ++c) m(r, c) = 1;
  return m;
}

TEST(RefineMask, ConstantPlaneEqualsDiskDilation) {
  const MaskImage m = square_mask(40, 40, 15, 12, 10);
  const DepthImage depth(40, 40, 1.5);
  const RefinedMask out = refine_mask(m, depth);
  for (int r = 0; r < 40; ++r) {
    for (int c = 0; c < 40; ++c) {
      int best = 1 << 30;
      for (int rr = 15; rr < 25; ++rr)
        for (int cc = 12; cc < 22; ++cc) best = std::min(best, (r - rr) * (r - rr) + (c - cc) * (c - cc));
      EXPECT_EQ(out.bitmap(r, c), best <= 25 ? 1 : 0) << r << "," << c;
    }
  }
  EXPECT_GT(out.dynamic_ratio, 100.0 / 1600.0);
}

TEST(RefineMask, FullMaskUnchanged) {
  const MaskImage m(12, 9, 1);
  const RefinedMask out = refine_mask(m, DepthImage(12, 9, 2.0));
  EXPECT_EQ(out.bitmap.data(), m.data());
  EXPECT_TRUE(out.boundary.empty());
}

TEST(RefineMask, EmptyMaskUnchanged) {
  const MaskImage m(12, 9, 0);
  const RefinedMask out = refine_mask(m, DepthImage(12, 9, 2.0));
  EXPECT_EQ(out.bitmap.data(), m.data());
  EXPECT_EQ(out.dynamic_ratio, 0.0);
}

TEST(RefineMask, OutOfRangeDepthNotAdded) {
  const MaskImage m = square_mask(30, 30, 10, 10, 6);
  DepthImage depth(30, 30, 5.0);
  for (int r = 10; r < 16; ++r)
    for (int c = 10; c < 16; ++c) depth(r, c) = (r + c) % 2 ? 1.0 : 1.2;
  depth(12, 8) = 1.1;  // inside the range, two pixels left of the mask
  const RefinedMask out = refine_mask(m, depth);
  for (int r = 0; r < 30; ++r) {
    for (int c = 0; c < 30; ++c) {
      const bool want = m(r, c) || (r == 12 && c == 8);
      EXPECT_EQ(out.bitmap(r, c) != 0, want) << r << "," << c;
    }
  }
}

TEST(RefineMask, SupersetWithinRadiusOfBoundary) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pos(0, 40);
  for (int t = 0; t < 10; ++t) {
    MaskImage m(48, 48, 0);
    for (int k = 0; k < 3; ++k) {
      const int r0 = pos(rng), c0 = pos(rng);
      for (int r = r0; r < std::min(48, r0 + 7); ++r)
        for (int c = c0; c < std::min(48, c0 + 5); ++c) m(r, c) = 1;
    }
    const DepthImage depth = random_depth(t, 48, 48);
    const RefinedMask out = refine_mask(m, depth);
    const auto boundary = mask_boundary(m);
    EXPECT_GE(count_set(out.bitmap), count_set(m));
    for (int r = 0; r < 48; ++r) {
      for (int c = 0; c < 48; ++c) {
        if (m(r, c)) EXPECT_TRUE(out.bitmap(r, c));
        if (out.bitmap(r, c) && !m(r, c)) {
          bool close = false;
          for (const auto& [br, bc] : boundary) {
            close |= (r - br) * (r - br) + (c - bc) * (c - bc) <= 25;
          }
          EXPECT_TRUE(close);
        }
      }
    }
  }
}

// Camera facing the +y wall head-on and sliding along x. A dynamic box is out of view in
// frame 0 and in front of the wall in frame 1.
synth::Scene wall_scene() {
  synth::Scene s = synth::preset("static");
  s.objects.clear();
  synth::Object box{{Vec3(-1.4, 0.9, 0.9), Vec3(-1.0, 1.2, 1.5)}, Vec3(0.9, 0.1, 0.1)};
  box.velocity = Vec3(1.5, 0, 0);
  box.dynamic = true;
  s.objects.push_back(box);
  s.path.kind = synth::CameraPath::Kind::kLinear;
  s.path.center = Vec3(0, 0, 1.25);
  s.path.step = Vec3(0.3, 0, 0);
  s.path.target = Vec3(0, 1, 0);
  s.path.frame_interval = 1.0;
  return s;
}

TEST(Inpaint, WallBehindMovingBoxIsExact) {
  const synth::Scene scene = wall_scene();
  const CameraIntrinsics intr = synth::default_intrinsics();
  const synth::RenderedFrame prior = synth::render_frame(scene, intr, 0);
  const synth::RenderedFrame cur = synth::render_frame(scene, intr, 1);
  const synth::RenderedFrame truth = synth::render_frame(scene, intr, 1, true);
  ASSERT_GT(count_set(cur.dynamic), 500u);

  const RefinedMask mask = refine_mask(cur.dynamic, revise_depth(cur.frame.depth, 0.1));
  EXPECT_EQ(mask.bitmap.data(), cur.dynamic.data());
  const InpaintSource src{&prior.frame, &prior.pose, &prior.dynamic};
  const Frame out = inpaint_background(cur.frame, mask, std::span(&src, 1), cur.pose, intr);

  ASSERT_TRUE(out.inpaint_valid);
  std::size_t filled = 0;
  for (int r = 0; r < intr.height; ++r) {
    for (int c = 0; c < intr.width; ++c) {
      if (!mask.bitmap(r, c)) {
        EXPECT_EQ(out.depth(r, c), cur.frame.depth(r, c));
        EXPECT_EQ(out.rgb(r, c), cur.frame.rgb(r, c));
        EXPECT_FALSE((*out.inpaint_valid)(r, c));
        continue;
      }
      if (!(*out.inpaint_valid)(r, c)) continue;
      ++filled;
      EXPECT_NEAR(out.depth(r, c), truth.frame.depth(r, c), 1e-6);
      EXPECT_LT((out.rgb(r, c) - truth.frame.rgb(r, c)).norm(), 1e-6);
    }
  }
  EXPECT_EQ(filled, count_set(mask.bitmap));
}

TEST(Inpaint, PriorLookingAwayLeavesMaskInvalid) {
  const synth::Scene scene = wall_scene();
  const CameraIntrinsics intr = synth::default_intrinsics();
  const synth::RenderedFrame cur = synth::render_frame(scene, intr, 1);
  synth::Scene away = scene;
  away.path.target = Vec3(0, -1, 0);
  const synth::RenderedFrame prior = synth::render_frame(away, intr, 1);
  const RefinedMask mask = refine_mask(cur.dynamic, cur.frame.depth);
  const InpaintSource src{&prior.frame, &prior.pose, nullptr};
  const Frame out = inpaint_background(cur.frame, mask, std::span(&src, 1), cur.pose, intr);
  ASSERT_TRUE(out.inpaint_valid);
  EXPECT_EQ(count_set(*out.inpaint_valid), 0u);
  for (int r = 0; r < intr.height; ++r)
    for (int c = 0; c < intr.width; ++c)
      if (mask.bitmap(r, c)) EXPECT_EQ(out.depth(r, c), 0.0);
}

Frame flat_frame(int w, int h, double depth, const Vec3& rgb) {
  Frame f;
  f.depth = DepthImage(w, h, depth);
  f.rgb = RgbImage(w, h, rgb);
  return f;
}

TEST(Inpaint, ZBufferKeepsNearestPrior) {
  const CameraIntrinsics intr{20, 20, 10, 8, 20, 16};
  const Frame cur = flat_frame(20, 16, 1.0, Vec3(0, 0, 0));
  const Frame far = flat_frame(20, 16, 3.0, Vec3(1, 0, 0));
  const Frame near = flat_frame(20, 16, 2.0, Vec3(0, 0, 1));
  const Pose id = Pose::identity();
  const RefinedMask mask = refine_mask(square_mask(20, 16, 4, 6, 5), cur.depth);
  for (int order = 0; order < 2; ++order) {
    std::vector<InpaintSource> src{{&far, &id, nullptr}, {&near, &id, nullptr}};
    if (order) std::swap(src[0], src[1]);
    const Frame out = inpaint_background(cur, mask, src, id, intr);
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 20; ++c) {
        if (!mask.bitmap(r, c)) continue;
        EXPECT_EQ(out.depth(r, c), 2.0);
        EXPECT_EQ(out.rgb(r, c), Vec3(0, 0, 1));
      }
    }
  }
}

TEST(Inpaint, EmptyMaskReturnsInput) {
  const CameraIntrinsics intr{20, 20, 10, 8, 20, 16};
  const Frame cur = flat_frame(20, 16, 1.0, Vec3(0.2, 0.3, 0.4));
  const Frame out = inpaint_background(cur, RefinedMask::empty(20, 16), {}, Pose::identity(), intr);
  EXPECT_EQ(out.depth.data(), cur.depth.data());
  EXPECT_FALSE(out.inpaint_valid);
}

}  // namespace
}  // namespace nidslam
