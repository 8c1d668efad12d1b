#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "nidslam/allocator.hpp"
#include "nidslam/config.hpp"
#include "nidslam/dataset_io.hpp"
#include "nidslam/dynamic_removal.hpp"
#include "nidslam/keyframes.hpp"
#include "nidslam/optimization.hpp"
#include "nidslam/scene.hpp"

namespace nidslam {

/// A frame taking part in one mapping call.
struct MapFrame {
  const Frame* frame = nullptr;
  Pose pose;
  bool trainable_pose = false;
};

struct MapStepResult {
  LossBreakdown stage_a, stage_b, stage_c;  // loss of the last iteration of each stage
  std::size_t iterations = 0;
};

/// Called after every optimizer step with the current parameters.
using MapObserver = std::function<void(const SceneParams&)>;

namespace detail {

inline LearningRates map_rates(const Config& c) { return {c.lr_features, c.lr_decoders, c.lr_poses}; }

/// Runs `iters` Adam steps on freshly drawn batches from the frames' supervisable pixels.
inline LossBreakdown run_stage(SceneParams& scene, std::vector<MapFrame>& frames, int iters,
                               const TrainMask& mask, const LossWeights& weights,
                               const CameraIntrinsics& intr, const Config& config,
                               std::mt19937_64& rng, OptimizerState& opt, const MapObserver& observe) {
  LossBreakdown last;
  if (iters <= 0) return last;
  std::vector<const Frame*> ptrs;
  std::vector<std::vector<std::uint32_t>> pools;
  for (const auto& f : frames) {
    ptrs.push_back(f.frame);
    pools.push_back(supervisable_pixels(*f.frame));
  }
  std::vector<Pose> poses;
  for (const auto& f : frames) poses.push_back(f.pose);
  for (int it = 0; it < iters; ++it) {
    const auto batch = sample_pixels(std::span<const Frame* const>(ptrs), pools,
                                     static_cast<std::size_t>(config.map_pixels), intr, config, rng);
    if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "no supervisable pixels in mapping frames");
    GradientSet g = compute_gradients(scene, poses, intr, batch, weights, mask, &last);
    g.check_finite();
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (!frames[i].trainable_pose) g.poses[i] = Vec6::Zero();
    }
    opt.apply(scene, poses, g, mask);
    if (observe) observe(scene);
  }
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i].pose = poses[i];
  return last;
}

}  // namespace detail

/// First-keyframe initialization: the geometric grids and decoders are fitted to the
/// free/occupied labelling of the frame's ray samples (see occupancy_fit). Starting the
/// rendering losses from this field avoids the diffuse low-occupancy solution they reach
/// from a random start. The coarse level is never trained afterwards.
inline double map_init(SceneParams& scene, const Frame& frame, const Pose& pose,
                       const CameraIntrinsics& intr, const Config& config, std::mt19937_64& rng,
                       const MapObserver& observe = {}) {
  tune_allocator();
  TrainMask mask;
  mask.geo_features = {true, true, true};
  mask.geo_decoders = {true, true, true};
  OptimizerState opt(scene, 1, detail::map_rates(config), config.adam_beta1, config.adam_beta2,
                     config.adam_eps);
  const auto pool = supervisable_pixels(frame);
  const Frame* ptr = &frame;
  std::vector<Pose> poses{pose};
  double loss = 0;
  for (int it = 0; it < config.init_iters; ++it) {
    const auto batch = sample_pixels(std::span<const Frame* const>(&ptr, 1),
                                     std::span<const std::vector<std::uint32_t>>(&pool, 1),
                                     static_cast<std::size_t>(config.map_pixels), intr, config, rng);
    if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "first keyframe has no supervisable pixels");
    GradientSet g = GradientSet::zeros_like(scene, 1);
    loss = occupancy_fit(scene, poses, intr, batch, mask, g);
    g.check_finite();
    opt.apply(scene, poses, g, mask);
    if (observe) observe(scene);
  }
  return loss;
}

/// Staged mapping: A) mid geometric features with L_g; B) mid + fine geometry, color grid and
/// their decoders with L_g + lambda_p L_p; C) as B plus the trainable frame poses.
inline MapStepResult map_step(SceneParams& scene, std::vector<MapFrame>& frames,
                              const CameraIntrinsics& intr, const Config& config,
                              std::mt19937_64& rng, const MapObserver& observe = {}) {
  tune_allocator();
  if (frames.empty()) throw Error(ErrorCode::kInvalidArgument, "map_step needs at least one frame");
  OptimizerState opt(scene, frames.size(), detail::map_rates(config), config.adam_beta1,
                     config.adam_beta2, config.adam_eps);
  MapStepResult r;
  TrainMask a;
  a.geo_features[1] = true;
  TrainMask b;
  b.geo_features = {false, true, true};
  b.geo_decoders = {false, true, true};
  b.color_features = b.color_decoder = true;
  TrainMask c = b;
  c.poses = true;
  const LossWeights lg = LossWeights::mapping(0.0);
  const LossWeights full = LossWeights::mapping(config.lambda_p);
  r.stage_a = detail::run_stage(scene, frames, config.iters_a, a, lg, intr, config, rng, opt, observe);
  r.stage_b = detail::run_stage(scene, frames, config.iters_b, b, full, intr, config, rng, opt, observe);
  r.stage_c = detail::run_stage(scene, frames, config.iters_c, c, full, intr, config, rng, opt, observe);
  r.iterations = static_cast<std::size_t>(config.iters_a + config.iters_b + config.iters_c);
  return r;
}

struct TrackResult {
  Pose pose;
  LossBreakdown loss;  // selection-batch loss of the returned pose
  bool lost = false;
  int best_iteration = 0;  // 0 = initial pose kept
};

/// Minimizes L_g_var + lambda_pt L_p over a left increment of `init` with N_t pixels drawn
/// afresh each iteration. Every iterate is scored on one fixed selection batch and the best
/// is returned. No valid ray at all marks tracking as lost and returns `init`.
inline TrackResult track_step(const Frame& frame, const SceneParams& scene, const Pose& init,
                              const CameraIntrinsics& intr, const Config& config,
                              std::mt19937_64& rng) {
  tune_allocator();
  TrackResult out;
  out.pose = init;
  const auto pool = supervisable_pixels(frame);
  const Frame* ptr = &frame;
  const std::span<const Frame* const> frames(&ptr, 1);
  const std::span<const std::vector<std::uint32_t>> pools(&pool, 1);
  const auto n = static_cast<std::size_t>(config.track_pixels);
  const LossWeights weights = LossWeights::tracking(config.lambda_pt);
  const TrainMask mask = TrainMask::only_poses();

  // Iterates are ranked by L_g on one fixed batch. L_g_var is
  // heavy-tailed where the predicted variance collapses and ranks poorly.
  const LossWeights ranking{1.0, 0.0, 0.0};
  const auto selection = sample_pixels(
      frames, pools, static_cast<std::size_t>(config.track_select_pixels), intr, config, rng);
  auto score = [&](const Pose& p) -> std::optional<LossBreakdown> {
    try {
      return losses(scene, std::span<const Pose>(&p, 1), intr, selection);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyBatch) throw;
      return std::nullopt;
    }
  };
  std::optional<LossBreakdown> best = selection.empty() ? std::nullopt : score(init);

  OptimizerState opt(scene, 1, {0.0, 0.0, config.lr_track}, config.adam_beta1, config.adam_beta2,
                     config.adam_eps);
  std::vector<Pose> pose{init};
  bool any_valid = best.has_value();
  for (int it = 1; it <= config.track_iters; ++it) {
    const auto batch = sample_pixels(frames, pools, n, intr, config, rng);
    if (batch.empty()) break;
    GradientSet g;
    try {
      g = compute_gradients(scene, pose, intr, batch, weights, mask);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyBatch) throw;
      continue;
    }
    any_valid = true;
    g.check_finite();
    opt.apply_poses(pose, g);
    if (auto s = score(pose[0]);
        s && (!best || s->objective(ranking) < best->objective(ranking))) {
      best = s;
      out.pose = pose[0];
      out.best_iteration = it;
    }
  }
  if (!any_valid || !best) {
    out.pose = init;
    out.lost = true;
    return out;
  }
  out.loss = *best;
  return out;
}

/// init_i = pose_{i-1} * (pose_{i-2}^-1 * pose_{i-1}); identity motion before two poses exist.
inline Pose constant_velocity(const std::vector<Pose>& previous) {
  if (previous.empty()) return Pose::identity();
  if (previous.size() == 1) return previous.back();
  const Pose& a = previous[previous.size() - 2];
  const Pose& b = previous.back();
  return b * (a.inverse() * b);
}

/// Frames to process, loaded on demand.
struct SlamInput {
  std::size_t size = 0;
  std::function<Frame(std::size_t)> load;
  CameraIntrinsics intr;
  std::vector<std::optional<Pose>> ground_truth;  // empty or one per frame

  static SlamInput from_manifest(const SequenceManifest& m);
  static SlamInput from_frames(std::vector<Frame> frames, const CameraIntrinsics& intr,
                               std::vector<std::optional<Pose>> gt = {});
};

inline SlamInput SlamInput::from_manifest(const SequenceManifest& m) {
  SlamInput in;
  in.size = m.size();
  auto shared = std::make_shared<SequenceManifest>(m);
  in.load = [shared](std::size_t i) { return load_frame(*shared, i); };
  if (!m.empty()) in.intr = manifest_intrinsics(m, load_frame(m, 0));
  for (const auto& e : m.entries) in.ground_truth.push_back(e.ground_truth);
  return in;
}

inline SlamInput SlamInput::from_frames(std::vector<Frame> frames, const CameraIntrinsics& intr,
                                        std::vector<std::optional<Pose>> gt) {
  SlamInput in;
  in.size = frames.size();
  auto shared = std::make_shared<std::vector<Frame>>(std::move(frames));
  in.load = [shared](std::size_t i) { return shared->at(i); };
  in.intr = intr;
  in.ground_truth = std::move(gt);
  return in;
}

struct FrameReport {
  std::size_t index = 0;
  double timestamp = 0;
  LossBreakdown tracking;
  bool tracking_lost = false;
  int tracking_best_iteration = 0;
  double dynamic_ratio = 0;
  double overlap_ratio = 0;
  bool keyframe = false;
  std::size_t keyframe_count = 0;
  bool mapped = false;
  bool coverage_step = false;
  std::vector<std::size_t> mapping_keyframes;  // frame indices
  LossBreakdown mapping;                       // last stage-C (or B) iteration
  std::size_t inpainted_pixels = 0;
  double tracking_seconds = 0;
  double mapping_seconds = 0;
};

enum class SlamMode { kInterleaved, kConcurrent };

struct SlamResult {
  std::vector<StampedPose> trajectory;
  SceneParams scene;
  std::vector<FrameReport> reports;
  std::vector<Keyframe> keyframes;
  Bounds bounds;
};

/// Scene bounds from the config, else the first frame's back-projected points plus margin.
inline Bounds scene_bounds(const Config& config, const Frame& first, const Pose& pose,
                           const CameraIntrinsics& intr) {
  if (config.bounds_min.size() == 3 && config.bounds_max.size() == 3) {
    return {Vec3(config.bounds_min[0], config.bounds_min[1], config.bounds_min[2]),
            Vec3(config.bounds_max[0], config.bounds_max[1], config.bounds_max[2])};
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  bool any = false;
  for (int r = 0; r < first.height(); ++r) {
    for (int c = 0; c < first.width(); ++c) {
      const double d = first.depth(r, c);
      if (!(d > 0) || first.masked(r, c)) continue;
      const Vec3 p = pose * backproject(c, r, d, intr);
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
      any = true;
    }
  }
  if (!any) throw Error(ErrorCode::kInsufficientData, "first frame has no valid depth");
  lo = lo.cwiseMin(pose.translation);
  hi = hi.cwiseMax(pose.translation);
  return {lo - Vec3::Constant(config.bounds_margin), hi + Vec3::Constant(config.bounds_margin)};
}

namespace detail {

/// Mask refinement on the revised depth; the sensor depth itself is kept for supervision.
inline RefinedMask remove_dynamic(Frame& frame, double tau1) {
  if (!frame.mask || count_set(*frame.mask) == 0) {
    frame.mask.reset();
    return RefinedMask::empty(frame.width(), frame.height());
  }
  RefinedMask m = refine_mask(*frame.mask, revise_depth(frame.depth, tau1));
  frame.mask = m.bitmap;
  return m;
}

/// Mapping side of the pipeline: inpainting, keyframe insertion and map optimization.
class Mapper {
 public:
  Mapper(const Config& config, const CameraIntrinsics& intr) : config_(config), intr_(intr) {}

  bool initialized() const { return initialized_; }
  const SceneParams& scene() const { return scene_; }
  const KeyframeSet& keyframes() const { return keyframes_; }
  const Bounds& bounds() const { return bounds_; }

  /// Consumes a tracked frame. `poses` is the shared trajectory; refined keyframe poses are
  /// written back into it under `lock`.
  void process(Frame frame, RefinedMask mask, std::size_t index, std::vector<Pose>& poses,
               std::mutex& lock, FrameReport& report, const MapObserver& observe) {
    Pose pose;
    {
      std::lock_guard<std::mutex> g(lock);
      pose = poses[index];
    }
    if (!initialized_) {
      bounds_ = scene_bounds(config_, frame, pose, intr_);
      scene_ = init_scene(bounds_, config_, config_.seed);
      keyframes_ = KeyframeSet(bounds_, config_.geo_voxel[0]);
      rng_.seed(config_.seed ^ 0x6d617070ULL);
      map_init(scene_, frame, pose, intr_, config_, rng_, observe);
      initialized_ = true;
    }
    if (mask.any()) {
      const auto sources = recent_sources(keyframes_, static_cast<std::size_t>(config_.inpaint_priors));
      frame = inpaint_background(frame, mask, sources, pose, intr_);
      if (frame.inpaint_valid) report.inpainted_pixels = count_set(*frame.inpaint_valid);
    }
    const InsertDecision d =
        keyframes_.maybe_insert(frame, pose, mask, config_.tau2, intr_, index, config_.overlap_grid);
    report.dynamic_ratio = d.dynamic_ratio;
    report.overlap_ratio = d.overlap_ratio;
    report.keyframe = d.inserted;
    report.keyframe_count = keyframes_.size();

    if (index % static_cast<std::size_t>(config_.map_every) != 0) return;
    const MappingSelection sel = keyframes_.select_for_mapping(
        frame, pose, index, config_.keyframes_per_map, config_.coverage_period, intr_, rng_,
        config_.overlap_grid);
    std::vector<MapFrame> frames{{&frame, pose, index != 0}};
    for (std::size_t k : sel.keyframes) {
      const Keyframe& kf = keyframes_.keyframes()[k];
      frames.push_back({&kf.frame, kf.pose, kf.frame_index != 0});
      report.mapping_keyframes.push_back(kf.frame_index);
    }
    const MapStepResult r = map_step(scene_, frames, intr_, config_, rng_, observe);
    report.mapped = true;
    report.coverage_step = sel.coverage_step;
    report.mapping = config_.iters_c > 0 ? r.stage_c : r.stage_b;

    std::lock_guard<std::mutex> g(lock);
    poses[index] = frames[0].pose;
    if (d.inserted) keyframes_.keyframes().back().pose = frames[0].pose;
    for (std::size_t j = 0; j < sel.keyframes.size(); ++j) {
      Keyframe& kf = keyframes_.keyframes()[sel.keyframes[j]];
      kf.pose = frames[j + 1].pose;
      poses[kf.frame_index] = kf.pose;
    }
  }

 private:
  Config config_;
  CameraIntrinsics intr_;
  bool initialized_ = false;
  Bounds bounds_;
  SceneParams scene_;
  KeyframeSet keyframes_;
  std::mt19937_64 rng_;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Per-frame progress callback (frame report as soon as the frame is fully processed).
using SlamProgress = std::function<void(const FrameReport&)>;

/// Runs tracking and mapping over the input. Interleaved mode tracks frame i and then maps
/// it on one thread. Concurrent mode maps on a second thread; tracking reads the parameter
/// snapshot published after each mapping iteration and stays at most one frame ahead.
inline SlamResult run_slam(const SlamInput& input, const Config& config,
                           SlamMode mode = SlamMode::kInterleaved, const SlamProgress& progress = {}) {
  config.validate();
  tune_allocator();
  SlamResult result;
  if (input.size == 0) return result;
  const CameraIntrinsics intr = input.intr;
  intr.validate();

  std::vector<Pose> poses(input.size);
  std::vector<double> stamps(input.size);
  std::mutex pose_lock;
  result.reports.resize(input.size);
  detail::Mapper mapper(config, intr);
  std::mt19937_64 track_rng(config.seed ^ 0x747261636bULL);

  auto gt = [&](std::size_t i) -> std::optional<Pose> {
    return i < input.ground_truth.size() ? input.ground_truth[i] : std::nullopt;
  };
  // Dynamic removal and tracking of frame i against `scene`; returns the prepared frame.
  auto track = [&](std::size_t i, const SceneParams* scene, Frame& frame, RefinedMask& mask) {
    FrameReport& rep = result.reports[i];
    const auto t0 = std::chrono::steady_clock::now();
    frame = input.load(i);
    stamps[i] = frame.timestamp;
    rep.index = i;
    rep.timestamp = frame.timestamp;
    if (!frame.depth.same_shape(intr.width, intr.height)) {
      throw Error(ErrorCode::kFormat, "frame " + std::to_string(i) + " size differs from intrinsics");
    }
    mask = detail::remove_dynamic(frame, config.tau1);
    if (i == 0) {
      std::lock_guard<std::mutex> g(pose_lock);
      poses[0] = config.gt_anchor && gt(0) ? *gt(0) : Pose::identity();
    } else {
      std::vector<Pose> prev;
      {
        std::lock_guard<std::mutex> g(pose_lock);
        prev.assign(poses.begin(), poses.begin() + static_cast<std::ptrdiff_t>(i));
      }
      const Pose init = constant_velocity(prev);
      const TrackResult t = track_step(frame, *scene, init, intr, config, track_rng);
      rep.tracking = t.loss;
      rep.tracking_lost = t.lost;
      rep.tracking_best_iteration = t.best_iteration;
      std::lock_guard<std::mutex> g(pose_lock);
      poses[i] = t.pose;
    }
    rep.tracking_seconds = detail::seconds_since(t0);
  };

  if (mode == SlamMode::kInterleaved) {
    for (std::size_t i = 0; i < input.size; ++i) {
      Frame frame;
      RefinedMask mask;
      track(i, &mapper.scene(), frame, mask);
      const auto t0 = std::chrono::steady_clock::now();
      mapper.process(std::move(frame), std::move(mask), i, poses, pose_lock, result.reports[i], {});
      result.reports[i].mapping_seconds = detail::seconds_since(t0);
      if (progress) progress(result.reports[i]);
    }
  } else {
    struct Job {
      std::size_t index;
      Frame frame;
      RefinedMask mask;
    };
    std::mutex m;
    std::condition_variable cv;
    std::vector<Job> queue;
    std::size_t mapped = 0;
    bool tracking_done = false;
    std::exception_ptr failure;
    std::shared_ptr<const SceneParams> snapshot;

    std::thread mapping_thread([&] {
      try {
        for (;;) {
          Job job;
          {
            std::unique_lock<std::mutex> g(m);
            cv.wait(g, [&] { return !queue.empty() || tracking_done || failure; });
            if (failure || queue.empty()) return;
            job = std::move(queue.front());
            queue.erase(queue.begin());
          }
          const auto t0 = std::chrono::steady_clock::now();
          auto publish = [&](const SceneParams& s) {
            auto copy = std::make_shared<const SceneParams>(s);
            std::lock_guard<std::mutex> g(m);
            snapshot = std::move(copy);
          };
          mapper.process(std::move(job.frame), std::move(job.mask), job.index, poses, pose_lock,
                         result.reports[job.index], publish);
          result.reports[job.index].mapping_seconds = detail::seconds_since(t0);
          publish(mapper.scene());
          if (progress) progress(result.reports[job.index]);
          std::lock_guard<std::mutex> g(m);
          ++mapped;
          cv.notify_all();
        }
      } catch (...) {
        std::lock_guard<std::mutex> g(m);
        failure = std::current_exception();
        cv.notify_all();
      }
    });

    try {
      for (std::size_t i = 0; i < input.size; ++i) {
        std::shared_ptr<const SceneParams> scene;
        if (i > 0) {
          // Frame i needs frames up to max(1, i-1) mapped: never more than one frame ahead.
          const std::size_t need = std::max<std::size_t>(1, i - 1);
          std::unique_lock<std::mutex> g(m);
          cv.wait(g, [&] { return mapped >= need || failure; });
          if (failure) break;
          scene = snapshot;
        }
        Job job{i, {}, {}};
        track(i, scene.get(), job.frame, job.mask);
        std::lock_guard<std::mutex> g(m);
        queue.push_back(std::move(job));
        cv.notify_all();
      }
    } catch (...) {
      std::lock_guard<std::mutex> g(m);
      if (!failure) failure = std::current_exception();
    }
    {
      std::lock_guard<std::mutex> g(m);
      tracking_done = true;
      cv.notify_all();
    }
    mapping_thread.join();
    if (failure) std::rethrow_exception(failure);
  }

  for (std::size_t i = 0; i < input.size; ++i) result.trajectory.push_back({stamps[i], poses[i]});
  result.scene = mapper.scene();
  result.keyframes = mapper.keyframes().keyframes();
  result.bounds = mapper.bounds();
  return result;
}

}  // namespace nidslam
