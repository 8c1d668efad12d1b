// End-to-end mapping and tracking on the synthetic room. These take minutes.
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "nidslam/evaluation.hpp"
#include "nidslam/renderer.hpp"
#include "nidslam/slam.hpp"
#include "nidslam/synthetic.hpp"

namespace nidslam {
namespace {

constexpr double kDeg = 180.0 / 3.14159265358979323846;

struct Views {
  std::vector<Frame> frames;
  std::vector<Pose> poses;
  std::vector<DepthImage> depths;
};

Views render_views(const synth::Scene& scene, int n) {
  Views v;
  const CameraIntrinsics intr = synth::default_intrinsics();
  for (int i = 0; i < n; ++i) {
    synth::RenderedFrame f = synth::render_frame(scene, intr, static_cast<std::size_t>(i));
    f.frame.mask.reset();
    v.depths.push_back(f.frame.depth);
    v.frames.push_back(std::move(f.frame));
    v.poses.push_back(f.pose);
  }
  return v;
}

Config room_config() {
  Config c;
  c.bounds_min = {-2.1, -2.1, -0.1};
  c.bounds_max = {2.1, 2.1, 2.6};
  return c;
}

Bounds room_bounds() { return {Vec3(-2.1, -2.1, -0.1), Vec3(2.1, 2.1, 2.6)}; }

TEST(Mapping, SingleBoxSceneWithFixedPoses) {
  synth::Scene scene = synth::preset("static");
  scene.objects.resize(1);
  const Views v = render_views(scene, 10);
  const CameraIntrinsics intr = synth::default_intrinsics();
  const Config cfg = room_config();
  ASSERT_EQ(cfg.iters_a + cfg.iters_b + cfg.iters_c, 60);

  SceneParams map = init_scene(room_bounds(), cfg, cfg.seed);
  std::mt19937_64 rng(cfg.seed);
  map_init(map, v.frames[0], v.poses[0], intr, cfg, rng);
  for (int call = 0; call < 50; ++call) {
    std::vector<MapFrame> frames;
    for (int k = 0; k < cfg.keyframes_per_map; ++k) {
      const std::size_t i = static_cast<std::size_t>((call + 2 * k) % 10);
      frames.push_back({&v.frames[i], v.poses[i], false});
    }
    map_step(map, frames, intr, cfg, rng);
  }
  const DepthL1 l1 = depth_l1(map, v.poses, intr, v.depths, 1, cfg);
  std::printf("depth L1 over training views: %.3f cm\n", l1.centimeters);
  EXPECT_LT(l1.centimeters, 2.0);
}

// A map of the static room fitted with ground-truth poses, shared by the tracking tests.
class Tracking : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    views_ = std::make_unique<Views>(render_views(synth::preset("static"), 10));
    Config cfg = room_config();
    cfg.iters_c = 0;
    map_ = std::make_unique<SceneParams>(init_scene(room_bounds(), cfg, 0));
    std::mt19937_64 rng(1);
    const CameraIntrinsics intr = synth::default_intrinsics();
    map_init(*map_, views_->frames[0], views_->poses[0], intr, cfg, rng);
    for (std::size_t i = 0; i < 10; ++i) {
      std::vector<MapFrame> frames{{&views_->frames[i], views_->poses[i], false}};
      if (i > 0) frames.push_back({&views_->frames[0], views_->poses[0], false});
      if (i > 3) frames.push_back({&views_->frames[i / 2], views_->poses[i / 2], false});
      map_step(*map_, frames, intr, cfg, rng);
    }
  }
  static void TearDownTestSuite() {
    views_.reset();
    map_.reset();
  }

  static Config track_config() {
    Config c = room_config();
    c.lr_track = 2e-3;
    c.track_iters = 60;
    return c;
  }

  static std::unique_ptr<Views> views_;
  static std::unique_ptr<SceneParams> map_;
};

std::unique_ptr<Views> Tracking::views_;
std::unique_ptr<SceneParams> Tracking::map_;

TEST_F(Tracking, RecoversTwoCentimeterOneDegreePerturbation) {
  const CameraIntrinsics intr = synth::default_intrinsics();
  const Config cfg = track_config();
  // 1 degree of rotation and 2 cm of translation, spread over all axes.
  const double w = 1.0 / kDeg / std::sqrt(3.0), t = 0.02 / std::sqrt(3.0);
  const Vec6 xi = (Vec6() << w, -w, w, t, t, -t).finished();
  std::mt19937_64 rng(5);
  for (std::size_t i : {2u, 5u, 8u}) {
    const Pose init = se3_increment(views_->poses[i], xi);
    const TrackResult r = track_step(views_->frames[i], *map_, init, intr, cfg, rng);
    const Pose err = views_->poses[i].inverse() * r.pose;
    std::printf("frame %zu: %.2f mm %.3f deg\n", i, 1e3 * err.translation.norm(), err.angle() * kDeg);
    EXPECT_FALSE(r.lost);
    EXPECT_LT(err.translation.norm(), 0.005);
    EXPECT_LT(err.angle() * kDeg, 0.2);
  }
}

TEST_F(Tracking, GroundTruthIsStationaryWhenTheMapExplainsTheFrame) {
  // Depth and color are rendered from the map itself at the true pose, with the sampler guided by
  // the sensor depth as during tracking, so the true pose is where the map is converged.
  const CameraIntrinsics intr = synth::default_intrinsics();
  const Config cfg = track_config();
  std::mt19937_64 rng(5);
  for (std::size_t i : {2u, 5u, 8u}) {
    const RenderedImage img = render_image(views_->poses[i], intr, *map_, 1, cfg, &views_->frames[i].depth);
    Frame frame = views_->frames[i];
    frame.depth = img.depth;
    frame.rgb = img.rgb;
    const TrackResult r = track_step(frame, *map_, views_->poses[i], intr, cfg, rng);
    const Pose err = views_->poses[i].inverse() * r.pose;
    std::printf("frame %zu: %.4f mm %.5f deg (best iteration %d)\n", i, 1e3 * err.translation.norm(),
                err.angle() * kDeg, r.best_iteration);
    EXPECT_LT(err.translation.norm(), 1e-4);
    EXPECT_LT(err.angle() * kDeg, 0.01);
  }
}

}  // namespace
}  // namespace nidslam
