#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "nidslam/config.hpp"
#include "nidslam/error.hpp"
#include "nidslam/field.hpp"
#include "nidslam/geometry.hpp"
#include "nidslam/renderer.hpp"
#include "nidslam/scene.hpp"

namespace nidslam {

inline constexpr double kVarianceEpsilon = 1e-8;

/// One supervised pixel: which pose observes it, its targets and its ray sample depths.
/// `target_range` is the sensor depth expressed as distance along the viewing ray.
struct PixelSample {
  std::size_t pose_index = 0;
  double u = 0, v = 0;
  double target_range = 0;
  Vec3 target_rgb = Vec3::Zero();
  std::vector<double> depths;
};

/// Mixing weights of the three loss terms in the objective.
struct LossWeights {
  double geometric = 1.0;      // L_g
  double geometric_var = 0.0;  // L_g_var
  double photometric = 0.0;    // L_p

  static LossWeights mapping(double lambda_p) { return {1.0, 0.0, lambda_p}; }
  static LossWeights tracking(double lambda_pt) { return {0.0, 1.0, lambda_pt}; }
};

struct LossBreakdown {
  double geometric = 0;
  double photometric = 0;
  double geometric_var = 0;
  std::size_t valid_rays = 0;
  std::size_t total_rays = 0;

  double objective(const LossWeights& w) const {
    return w.geometric * geometric + w.geometric_var * geometric_var + w.photometric * photometric;
  }
};

namespace detail {
inline double sign(double x) { return (x > 0) - (x < 0); }
}  // namespace detail

/// Evaluates L_g, L_p and L_g_var over the batch, means over valid rays. When `grads` is
/// given, accumulates the gradient of the weighted objective for the blocks in `mask`;
/// pose gradients are w.r.t. a left increment exp(xi) * pose at xi = 0.
inline LossBreakdown evaluate_objective(const SceneParams& scene, std::span<const Pose> poses,
                                        const CameraIntrinsics& intr,
                                        std::span<const PixelSample> batch,
                                        const LossWeights& weights, const TrainMask& mask,
                                        GradientSet* grads, std::size_t chunk = 128) {
  LossBreakdown out;
  out.total_rays = batch.size();
  const bool want_color = weights.photometric > 0 || grads == nullptr;
  const bool want_spatial = grads && mask.poses;
  if (grads && grads->poses.size() != poses.size()) {
    *grads = GradientSet::zeros_like(scene, poses.size());
  }

  std::vector<Vec3> kept_points;
  std::vector<double> kept_depths;
  std::vector<std::size_t> offsets;
  for (std::size_t begin = 0; begin < batch.size(); begin += chunk) {
    const std::size_t end = std::min(batch.size(), begin + chunk);
    kept_points.clear();
    kept_depths.clear();
    offsets.assign(1, 0);
    for (std::size_t s = begin; s < end; ++s) {
      const PixelSample& px = batch[s];
      const Ray ray = pixel_ray(px.u, px.v, poses[px.pose_index], intr);
      for (double d : px.depths) {
        const Vec3 p = ray.at(d);
        if (scene.contains(p)) {
          kept_points.push_back(p);
          kept_depths.push_back(d);
        }
      }
      offsets.push_back(kept_points.size());
    }
    if (kept_points.empty()) continue;
    const auto n = static_cast<Eigen::Index>(kept_points.size());
    MatrixXd pts(3, n);
    for (Eigen::Index i = 0; i < n; ++i) pts.col(i) = kept_points[static_cast<std::size_t>(i)];
    const FieldEvaluation field(scene, pts, want_color, want_spatial);

    VectorXd grad_occ;
    MatrixXd grad_rgb;
    if (grads) {
      grad_occ = VectorXd::Zero(n);
      if (want_color) grad_rgb = MatrixXd::Zero(3, n);
    }
    for (std::size_t s = begin; s < end; ++s) {
      const std::size_t a = offsets[s - begin], b = offsets[s - begin + 1];
      if (a == b) continue;
      const PixelSample& px = batch[s];
      const std::span<const double> depths(kept_depths.data() + a, b - a);
      const std::span<const double> occ(field.occupancy().data() + a, b - a);
      const double* colors = want_color ? field.rgb().data() + 3 * a : nullptr;
      const Composite c = composite(depths, occ, colors);
      if (!c.valid) continue;
      ++out.valid_rays;
      const double err_d = px.target_range - c.depth;
      const double sigma = std::sqrt(c.variance + kVarianceEpsilon);
      out.geometric += std::abs(err_d);
      out.geometric_var += std::abs(err_d) / sigma;
      Vec3 err_c = Vec3::Zero();
      if (want_color) {
        err_c = px.target_rgb - c.rgb;
        out.photometric += err_c.cwiseAbs().sum() / 3.0;
      }
      if (!grads) continue;
      const double g_depth = -detail::sign(err_d) * (weights.geometric + weights.geometric_var / sigma);
      const double g_var = weights.geometric_var * std::abs(err_d) * -0.5 / (sigma * sigma * sigma);
      Vec3 g_rgb = Vec3::Zero();
      if (want_color) {
        for (int k = 0; k < 3; ++k) g_rgb[k] = -detail::sign(err_c[k]) * weights.photometric / 3.0;
      }
      composite_backward(depths, occ, colors, c, g_depth, g_rgb, g_var,
                         std::span<double>(grad_occ.data() + a, b - a),
                         want_color ? grad_rgb.data() + 3 * a : nullptr);
    }
    if (!grads) continue;
    const MatrixXd grad_points = field.backward(grad_occ, want_color ? &grad_rgb : nullptr, mask, *grads);
    if (want_spatial) {
      for (std::size_t s = begin; s < end; ++s) {
        Vec6& gp = grads->poses[batch[s].pose_index];
        for (std::size_t i = offsets[s - begin]; i < offsets[s - begin + 1]; ++i) {
          const Vec3 g = grad_points.col(static_cast<Eigen::Index>(i));
          gp.head<3>() += kept_points[i].cross(g);
          gp.tail<3>() += g;
        }
      }
    }
  }
  if (out.valid_rays == 0) {
    throw Error(ErrorCode::kEmptyBatch, "no valid rays in batch");
  }
  const double inv = 1.0 / static_cast<double>(out.valid_rays);
  out.geometric *= inv;
  out.photometric *= inv;
  out.geometric_var *= inv;
  if (grads) {
    grads->scale(inv);
    grads->check_finite();
  }
  return out;
}

/// Squared error of the unclamped occupancy sum against a free/occupied labelling of the
/// batch samples: 0 in front of the sensor range, 1 at or behind it. Used only to initialize
/// the field from the first keyframe. Returns the mean error; gradients are accumulated into
/// `grads` (already shaped like the scene) for the blocks in `mask`.
inline double occupancy_fit(const SceneParams& scene, std::span<const Pose> poses,
                            const CameraIntrinsics& intr, std::span<const PixelSample> batch,
                            const TrainMask& mask, GradientSet& grads) {
  std::vector<Vec3> points;
  std::vector<double> targets;
  for (const auto& px : batch) {
    const Ray ray = pixel_ray(px.u, px.v, poses[px.pose_index], intr);
    for (double d : px.depths) {
      const Vec3 p = ray.at(d);
      if (!scene.contains(p)) continue;
      points.push_back(p);
      targets.push_back(d >= px.target_range ? 1.0 : 0.0);
    }
  }
  if (points.empty()) throw Error(ErrorCode::kEmptyBatch, "no sample points inside the grids");
  const auto n = static_cast<Eigen::Index>(points.size());
  MatrixXd pts(3, n);
  for (Eigen::Index i = 0; i < n; ++i) pts.col(i) = points[static_cast<std::size_t>(i)];
  const FieldEvaluation field(scene, pts, false, false);
  VectorXd g(n);
  double loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = field.raw_occupancy()[i] - targets[static_cast<std::size_t>(i)];
    loss += e * e;
    g[i] = 2.0 * e / static_cast<double>(n);
  }
  field.backward(g, nullptr, mask, grads, true);
  return loss / static_cast<double>(n);
}

/// Loss terms only.
inline LossBreakdown losses(const SceneParams& scene, std::span<const Pose> poses,
                            const CameraIntrinsics& intr, std::span<const PixelSample> batch) {
  return evaluate_objective(scene, poses, intr, batch, LossWeights{}, TrainMask{}, nullptr);
}

inline GradientSet compute_gradients(const SceneParams& scene, std::span<const Pose> poses,
                                     const CameraIntrinsics& intr,
                                     std::span<const PixelSample> batch,
                                     const LossWeights& weights, const TrainMask& mask,
                                     LossBreakdown* loss_out = nullptr) {
  GradientSet g = GradientSet::zeros_like(scene, poses.size());
  const LossBreakdown l = evaluate_objective(scene, poses, intr, batch, weights, mask, &g);
  if (loss_out) *loss_out = l;
  return g;
}

/// Learning rates per parameter family.
struct LearningRates {
  double features = 1e-2;
  double decoders = 1e-3;
  double poses = 1e-3;
};

/// Adaptive-moment state for every block of a GradientSet.
class OptimizerState {
 public:
  OptimizerState(const SceneParams& scene, std::size_t n_poses, LearningRates rates,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(GradientSet::zeros_like(scene, n_poses)), v_(GradientSet::zeros_like(scene, n_poses)),
        rates_(rates), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  std::uint64_t step() const { return step_; }
  const LearningRates& rates() const { return rates_; }

  /// One update of the blocks selected by `mask`.
  void apply(SceneParams& scene, std::span<Pose> poses, GradientSet& grads, const TrainMask& mask) {
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    auto update = [&](double* p, const double* g, double* m, double* v, std::size_t n, double lr) {
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    };
    for (int l = 0; l < kGeoLevels; ++l) {
      if (mask.geo_features[l]) {
        update(scene.geo[l].values.data(), grads.geo_features[l].data(), m_.geo_features[l].data(),
               v_.geo_features[l].data(), grads.geo_features[l].size(), rates_.features);
      }
      if (mask.geo_decoders[l]) {
        update_decoder(scene.geo_decoders[l], grads.geo_decoders[l], m_.geo_decoders[l],
                       v_.geo_decoders[l], update);
      }
    }
    if (mask.color_features) {
      update(scene.color.values.data(), grads.color_features.data(), m_.color_features.data(),
             v_.color_features.data(), grads.color_features.size(), rates_.features);
    }
    if (mask.color_decoder) {
      update_decoder(scene.color_decoder, grads.color_decoder, m_.color_decoder, v_.color_decoder, update);
    }
    if (mask.poses) update_poses(poses, grads, update);
  }

  /// One update of the poses alone; the scene is neither read nor written.
  void apply_poses(std::span<Pose> poses, const GradientSet& grads) {
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    auto update = [&](double* p, const double* g, double* m, double* v, std::size_t n, double lr) {
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    };
    update_poses(poses, grads, update);
  }

 private:
  template <typename Update>
  void update_poses(std::span<Pose> poses, const GradientSet& grads, Update& update) {
    for (std::size_t i = 0; i < poses.size() && i < grads.poses.size(); ++i) {
      Vec6 delta = Vec6::Zero();
      update(delta.data(), grads.poses[i].data(), m_.poses[i].data(), v_.poses[i].data(), 6,
             rates_.poses);
      if (delta != Vec6::Zero()) poses[i] = se3_increment(poses[i], delta);
    }
  }

  template <typename Update>
  void update_decoder(Decoder& dec, std::vector<Decoder::Layer>& g, std::vector<Decoder::Layer>& m,
                      std::vector<Decoder::Layer>& v, Update& update) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto& layer = dec.layers()[i];
      update(layer.weight.data(), g[i].weight.data(), m[i].weight.data(), v[i].weight.data(),
             static_cast<std::size_t>(g[i].weight.size()), rates_.decoders);
      update(layer.bias.data(), g[i].bias.data(), m[i].bias.data(), v[i].bias.data(),
             static_cast<std::size_t>(g[i].bias.size()), rates_.decoders);
    }
  }

  GradientSet m_, v_;
  LearningRates rates_;
  double beta1_, beta2_, eps_;
  std::uint64_t step_ = 0;
};

/// Pixels eligible for supervision: valid depth, and outside the dynamic mask unless inpainted.
inline bool supervisable(const Frame& f, int r, int c) {
  if (!(f.depth(r, c) > 0)) return false;
  if (!f.masked(r, c)) return true;
  return f.inpaint_valid && (*f.inpaint_valid)(r, c);
}

/// Per-frame list of supervisable pixels, flattened as row * width + col.
inline std::vector<std::uint32_t> supervisable_pixels(const Frame& f) {
  std::vector<std::uint32_t> out;
  for (int r = 0; r < f.height(); ++r) {
    for (int c = 0; c < f.width(); ++c) {
      if (supervisable(f, r, c)) out.push_back(static_cast<std::uint32_t>(r * f.width() + c));
    }
  }
  return out;
}

/// Draws n pixels uniformly from the union of the frames' supervisable pixels. Frame i is
/// observed by pose index i. Sample depths come from sample_ray() guided by the sensor depth.
template <typename Rng>
std::vector<PixelSample> sample_pixels(std::span<const Frame* const> frames,
                                       std::span<const std::vector<std::uint32_t>> pools,
                                       std::size_t n, const CameraIntrinsics& intr,
                                       const Config& config, Rng& rng) {
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (const auto& p : pools) {
    total += p.size();
    cumulative.push_back(total);
  }
  std::vector<PixelSample> batch;
  if (total == 0) return batch;
  batch.reserve(n);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t idx = pick(rng);
    const std::size_t fi = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), idx) - cumulative.begin());
    const std::size_t local = idx - (fi == 0 ? 0 : cumulative[fi - 1]);
    const std::uint32_t flat = pools[fi][local];
    const Frame& f = *frames[fi];
    const int r = static_cast<int>(flat / f.width()), c = static_cast<int>(flat % f.width());
    PixelSample px;
    px.pose_index = fi;
    px.u = c;
    px.v = r;
    px.target_range = f.depth(r, c) * range_per_depth(c, r, intr);
    px.target_rgb = f.rgb(r, c);
    px.depths = sample_ray(px.target_range, config, rng);
    batch.push_back(std::move(px));
  }
  return batch;
}

}  // namespace nidslam
