#include <cmath>
#include <filesystem>
#include <random>

#include <unistd.h>

#include <gtest/gtest.h>

#include "nidslam/dataset_io.hpp"
#include "nidslam/dynamic_removal.hpp"
#include "nidslam/synthetic.hpp"

namespace nidslam {
namespace {

synth::Scene empty_room(const Bounds& room) {
  synth::Scene s;
  s.room = room;
  for (int f = 0; f < 6; ++f) s.face_albedo[f] = Vec3::Constant(0.1 * (f + 1));
  return s;
}

TEST(Raycast, WallStraightAhead) {
  const synth::Scene s = empty_room({Vec3(-1, -1, -1), Vec3(1, 1, 2)});
  const auto hit = synth::raycast({Vec3::Zero(), Vec3::UnitZ()}, s, 0.0);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->range, 2.0);
  EXPECT_EQ(hit->id, 0);
  EXPECT_EQ(hit->rgb, s.face_albedo[5]);
}

TEST(Raycast, BoxAlongDiagonal) {
  synth::Scene s = empty_room({Vec3(-5, -5, -5), Vec3(5, 5, 5)});
  s.objects.push_back({{Vec3::Constant(0.5), Vec3::Constant(1.5)}, Vec3(1, 0, 0)});
  const auto hit = synth::raycast({Vec3::Zero(), Vec3::Ones().normalized()}, s, 0.0);
  ASSERT_TRUE(hit);
  EXPECT_NEAR(hit->range, 0.5 * std::sqrt(3.0), 1e-12);
  EXPECT_EQ(hit->id, 1);
}

TEST(Raycast, OriginOutsideRoomMisses) {
  const synth::Scene s = empty_room({Vec3(-1, -1, -1), Vec3(1, 1, 1)});
  EXPECT_FALSE(synth::raycast({Vec3(3, 0, 0), Vec3::UnitZ()}, s, 0.0));
}

struct Candidate {
  double t = std::numeric_limits<double>::infinity();
  int id = -1;
  Vec3 rgb = Vec3::Zero();
};

// Tests each of the six face rectangles of every primitive independently.
void faces(const Ray& ray, const Bounds& box, bool room, int id,
           const std::array<Vec3, 6>& albedo, Candidate& best) {
  for (int a = 0; a < 3; ++a) {
    if (ray.direction[a] == 0.0) continue;
    for (int side = 0; side < 2; ++side) {
      const double plane = side ? box.max[a] : box.min[a];
      const double t = (plane - ray.origin[a]) / ray.direction[a];
      if (!(t > 0)) continue;
      const Vec3 p = ray.at(t);
      bool inside = true;
      for (int b = 0; b < 3; ++b) {
        if (b != a) inside &= p[b] >= box.min[b] - 1e-12 && p[b] <= box.max[b] + 1e-12;
      }
      if (inside && t < best.t) best = {t, id, room ? albedo[2 * a + side] : albedo[0]};
    }
  }
}

TEST(Raycast, MatchesExhaustiveFaceEnumeration) {
  synth::Scene s = synth::preset("dynamic");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1), time(0, 1.0);
  std::normal_distribution<double> n(0, 1);
  int object_hits = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const double t = time(rng);
    Vec3 o;
    bool free = false;
    while (!free) {
      o = s.room.min + (s.room.extent().array() * Vec3(u(rng), u(rng), u(rng)).array()).matrix();
      free = true;
      for (const auto& obj : s.objects) free &= !obj.at(t).contains(o);
    }
    const Ray ray{o, Vec3(n(rng), n(rng), n(rng)).normalized()};
    Candidate best;
    faces(ray, s.room, true, 0, s.face_albedo, best);
    for (std::size_t k = 0; k < s.objects.size(); ++k) {
      std::array<Vec3, 6> albedo;
      albedo.fill(s.objects[k].albedo);
      Candidate c;
      faces(ray, s.objects[k].at(t), false, static_cast<int>(k) + 1, albedo, c);
      if (c.t < best.t) best = c;
    }
    const auto hit = synth::raycast(ray, s, t);
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->range, best.t, 1e-9);
    EXPECT_EQ(hit->id, best.id);
    EXPECT_EQ(hit->rgb, best.rgb);
    object_hits += best.id > 0;
  }
  EXPECT_GT(object_hits, 500);
}

TEST(Render, StaticPresetHasEmptyMasks) {
  const synth::Scene s = synth::preset("static");
  const CameraIntrinsics intr = synth::default_intrinsics();
  for (std::size_t i = 0; i < 20; i += 5) EXPECT_EQ(count_set(synth::render_frame(s, intr, i).dynamic), 0u);
}

TEST(Render, MaskGrowsAsBoxEnters) {
  // Fixed camera facing +y; a box slides in from the left edge of the view.
  synth::Scene s = synth::preset("static");
  s.objects.clear();
  synth::Object box{{Vec3(-1.0, 0.9, 0.9), Vec3(-0.6, 1.2, 1.5)}, Vec3(0.9, 0.1, 0.1)};
  box.velocity = Vec3(0.1, 0, 0);
  box.dynamic = true;
  s.objects.push_back(box);
  s.path.kind = synth::CameraPath::Kind::kLinear;
  s.path.center = Vec3(0, 0, 1.25);
  s.path.step = Vec3::Zero();
  s.path.target = Vec3(0, 1, 0);
  s.path.frame_interval = 1.0;
  const CameraIntrinsics intr = synth::default_intrinsics();
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < 5; ++i) counts.push_back(count_set(synth::render_frame(s, intr, i).dynamic));
  for (std::size_t i = 1; i < counts.size(); ++i) EXPECT_GT(counts[i], counts[i - 1]) << i;
  EXPECT_GT(counts.front(), 0u);
}

TEST(Render, DepthIsRaycastDepth) {
  const synth::Scene s = synth::preset("dynamic");
  const CameraIntrinsics intr = synth::default_intrinsics();
  const synth::RenderedFrame f = synth::render_frame(s, intr, 3);
  for (int r = 0; r < intr.height; r += 7) {
    for (int c = 0; c < intr.width; c += 5) {
      const auto hit = synth::raycast(pixel_ray(c, r, f.pose, intr), s, s.path.timestamp(3));
      ASSERT_TRUE(hit);
      EXPECT_NEAR(f.frame.depth(r, c) * range_per_depth(c, r, intr), hit->range, 1e-12);
    }
  }
  // Exact GT depth has no depth jumps inside a face, so large-threshold revision leaves it alone.
  EXPECT_EQ(revise_depth(f.frame.depth, 10.0).data(), f.frame.depth.data());
}

TEST(Dataset, QuantizedDepthWithinScale) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("nidslam_synth_" + std::to_string(::getpid()));
  const synth::Scene s = synth::preset("dynamic");
  const CameraIntrinsics intr = synth::default_intrinsics();
  synth::generate_dataset(s, intr, 2, dir.string());
  Config cfg;
  const SequenceManifest m = load_sequence(dir.string(), cfg);
  ASSERT_EQ(m.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const Frame loaded = load_frame(m, i);
    const synth::RenderedFrame truth = synth::render_frame(s, intr, i);
    for (std::size_t k = 0; k < loaded.depth.size(); ++k) {
      EXPECT_LE(std::abs(loaded.depth.data()[k] - truth.frame.depth.data()[k]), 0.5 / cfg.depth_scale + 1e-12);
    }
    EXPECT_EQ(*loaded.mask, truth.dynamic);
  }
  fs::remove_all(dir);
}

TEST(Render, ReprojectionClosure) {
  const synth::Scene s = synth::preset("static");
  const CameraIntrinsics intr = synth::default_intrinsics();
  const double scale = 5000.0;
  const synth::RenderedFrame a = synth::render_frame(s, intr, 0);
  const synth::RenderedFrame b = synth::render_frame(s, intr, 6);
  int checked = 0;
  for (int r = 0; r < intr.height; r += 3) {
    for (int c = 0; c < intr.width; c += 3) {
      const double d = std::round(a.frame.depth(r, c) * scale) / scale;
      const Vec3 world = a.pose * backproject(c, r, d, intr);
      const Vec3 cam = b.pose.inverse() * world;
      if (!(cam.z() > 0)) continue;
      const auto uv = project(cam, intr);
      if (!uv) continue;
      const Ray ray = pixel_ray(uv->x(), uv->y(), b.pose, intr);
      const auto hit = synth::raycast(ray, s, 0.0);
      ASSERT_TRUE(hit);
      if (hit->range < cam.norm() - 0.01) continue;  // occluded in the second view
      EXPECT_NEAR(hit->range / range_per_depth(uv->x(), uv->y(), intr), cam.z(), 2.0 / scale);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Preset, UnknownNameThrows) {
  EXPECT_THROW(synth::preset("nope"), Error);
}

}  // namespace
}  // namespace nidslam
