#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "nidslam/config.hpp"
#include "nidslam/field.hpp"
#include "nidslam/geometry.hpp"
#include "nidslam/scene.hpp"

namespace nidslam {

inline constexpr double kWeightEpsilon = 1e-6;

/// Depths along a ray. With a sensor range: stratified over [near, factor * range] plus
/// uniform surface samples within tau3 of the range. Without: all samples stratified over
/// [near, far]. Depths here are distances along the unit ray direction.
template <typename Rng>
std::vector<double> sample_ray(std::optional<double> sensor_range, const Config& config, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> depths;
  auto stratified = [&](double lo, double hi, int count) {
    const double step = (hi - lo) / count;
    for (int i = 0; i < count; ++i) depths.push_back(lo + (i + unit(rng)) * step);
  };
  const int total = config.m_strat + config.m_surf;
  depths.reserve(total);
  if (sensor_range && *sensor_range > config.near) {
    const double d = *sensor_range;
    stratified(config.near, std::max(config.strat_far_factor * d, config.near + 1e-6), config.m_strat);
    const double lo = std::max(config.near, d - config.tau3);
    const double hi = d + config.tau3;
    for (int i = 0; i < config.m_surf; ++i) depths.push_back(lo + unit(rng) * (hi - lo));
  } else {
    stratified(config.near, config.far, total);
  }
  std::sort(depths.begin(), depths.end());
  return depths;
}

/// Indices of points inside every grid volume.
inline std::vector<std::size_t> filter_points(std::span<const Vec3> points, const SceneParams& scene) {
  std::vector<std::size_t> kept;
  kept.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (scene.contains(points[i])) kept.push_back(i);
  }
  return kept;
}

/// Volume-rendering result of one ray over its sample points.
struct Composite {
  std::vector<double> weights;
  Vec3 rgb = Vec3::Zero();
  double depth = 0;
  double variance = 0;
  double weight_sum = 0;
  bool valid = false;
};

/// w_i = o_i * prod_{j<i}(1 - o_j); color, depth and depth variance are w-normalized means.
/// `colors` may be null when only geometry is needed (3 x n otherwise).
inline Composite composite(std::span<const double> depths, std::span<const double> occ,
                           const double* colors) {
  Composite r;
  const std::size_t n = depths.size();
  r.weights.resize(n);
  double transmittance = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    r.weights[i] = occ[i] * transmittance;
    transmittance *= 1.0 - occ[i];
    r.weight_sum += r.weights[i];
  }
  r.valid = r.weight_sum > kWeightEpsilon;
  if (!r.valid) return r;
  const double inv = 1.0 / r.weight_sum;
  for (std::size_t i = 0; i < n; ++i) r.depth += r.weights[i] * depths[i];
  r.depth *= inv;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = depths[i] - r.depth;
    r.variance += r.weights[i] * e * e;
  }
  r.variance *= inv;
  if (colors) {
    for (std::size_t i = 0; i < n; ++i) {
      r.rgb += r.weights[i] * Eigen::Map<const Vec3>(colors + 3 * i);
    }
    r.rgb *= inv;
  }
  return r;
}

/// Reverse pass of composite() for a valid ray. Writes d/d(occ) into grad_occ and, when
/// colors are given, d/d(color) into grad_colors (3 x n).
inline void composite_backward(std::span<const double> depths, std::span<const double> occ,
                               const double* colors, const Composite& r, double grad_depth,
                               const Vec3& grad_rgb, double grad_variance,
                               std::span<double> grad_occ, double* grad_colors) {
  const std::size_t n = depths.size();
  const double inv = 1.0 / r.weight_sum;
  std::vector<double> grad_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = depths[i] - r.depth;
    double g = grad_depth * e + grad_variance * (e * e - r.variance);
    if (colors) {
      const Eigen::Map<const Vec3> c(colors + 3 * i);
      g += grad_rgb.dot(c - r.rgb);
      Eigen::Map<Vec3>(grad_colors + 3 * i) = grad_rgb * (r.weights[i] * inv);
    }
    grad_w[i] = g * inv;
  }
  // grad_occ_i = T_i * (grad_w_i - S_i), S_i = sum_{k>i} grad_w_k o_k prod_{i<j<k}(1 - o_j).
  double suffix = 0.0;
  std::vector<double> transmittance(n);
  double t = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    transmittance[i] = t;
    t *= 1.0 - occ[i];
  }
  for (std::size_t i = n; i-- > 0;) {
    grad_occ[i] = transmittance[i] * (grad_w[i] - suffix);
    suffix = grad_w[i] * occ[i] + (1.0 - occ[i]) * suffix;
  }
}

/// Full per-ray record, as produced by render_ray().
struct RaySample {
  std::vector<double> depths;
  std::vector<Vec3> points;
  std::vector<double> occupancy;
  std::vector<Vec3> colors;
  std::vector<double> weights;
  Vec3 rgb = Vec3::Zero();
  double depth = 0;
  double variance = 0;
  double weight_sum = 0;
  bool valid = false;
};

/// Renders one ray over sorted depths; points outside the grids are dropped first.
inline RaySample render_ray(const Ray& ray, std::span<const double> depths, const SceneParams& scene) {
  RaySample s;
  std::vector<Vec3> all;
  all.reserve(depths.size());
  for (double d : depths) all.push_back(ray.at(d));
  for (std::size_t i : filter_points(all, scene)) {
    s.depths.push_back(depths[i]);
    s.points.push_back(all[i]);
  }
  if (s.points.empty()) return s;
  MatrixXd pts(3, static_cast<Eigen::Index>(s.points.size()));
  for (std::size_t i = 0; i < s.points.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = s.points[i];
  const FieldEvaluation field(scene, pts, true, false);
  s.occupancy.assign(field.occupancy().data(), field.occupancy().data() + field.size());
  for (Eigen::Index i = 0; i < field.size(); ++i) s.colors.push_back(field.rgb().col(i));
  const Composite c = composite(s.depths, s.occupancy, field.rgb().data());
  s.weights = c.weights;
  s.rgb = c.rgb;
  s.depth = c.depth;
  s.variance = c.variance;
  s.weight_sum = c.weight_sum;
  s.valid = c.valid;
  return s;
}

/// A ray queued for batched rendering.
struct RayRequest {
  Ray ray;
  std::vector<double> depths;
};

struct RayResult {
  Vec3 rgb = Vec3::Zero();
  double depth = 0;
  double variance = 0;
  bool valid = false;
};

/// Batched forward rendering; rays are grouped so decoder evaluation runs as matrix products.
inline std::vector<RayResult> render_rays(std::span<const RayRequest> rays, const SceneParams& scene,
                                          bool want_color = true, std::size_t chunk = 256) {
  std::vector<RayResult> out(rays.size());
  std::vector<Vec3> kept_points;
  std::vector<double> kept_depths;
  std::vector<std::size_t> offsets;
  for (std::size_t begin = 0; begin < rays.size(); begin += chunk) {
    const std::size_t end = std::min(rays.size(), begin + chunk);
    kept_points.clear();
    kept_depths.clear();
    offsets.assign(1, 0);
    for (std::size_t r = begin; r < end; ++r) {
      for (double d : rays[r].depths) {
        const Vec3 p = rays[r].ray.at(d);
        if (scene.contains(p)) {
          kept_points.push_back(p);
          kept_depths.push_back(d);
        }
      }
      offsets.push_back(kept_points.size());
    }
    if (kept_points.empty()) continue;
    MatrixXd pts(3, static_cast<Eigen::Index>(kept_points.size()));
    for (std::size_t i = 0; i < kept_points.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = kept_points[i];
    const FieldEvaluation field(scene, pts, want_color, false);
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t a = offsets[r - begin], b = offsets[r - begin + 1];
      if (a == b) continue;
      const Composite c = composite(
          std::span<const double>(kept_depths).subspan(a, b - a),
          std::span<const double>(field.occupancy().data() + a, b - a),
          want_color ? field.rgb().data() + 3 * a : nullptr);
      out[r] = {c.rgb, c.depth, c.variance, c.valid};
    }
  }
  return out;
}

struct RenderedImage {
  RgbImage rgb;
  DepthImage range;  // distance along the viewing ray
  DepthImage depth;  // z-depth
  MaskImage valid;
};

/// Per-pixel generator seeded from (seed, row, col) so rendering is order independent.
inline std::mt19937_64 pixel_rng(std::uint64_t seed, int row, int col) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(col)};
  return std::mt19937_64(seq);
}

/// Renders every stride-th pixel. When `guide` is given its valid depths steer the
/// sampler exactly as during training; otherwise samples are stratified over [near, far].
inline RenderedImage render_image(const Pose& pose, const CameraIntrinsics& intr,
                                  const SceneParams& scene, int stride, const Config& config,
                                  const DepthImage* guide = nullptr) {
  if (stride < 1) throw Error(ErrorCode::kInvalidArgument, "stride must be >= 1");
  const int w = (intr.width + stride - 1) / stride;
  const int h = (intr.height + stride - 1) / stride;
  RenderedImage img{RgbImage(w, h), DepthImage(w, h), DepthImage(w, h), MaskImage(w, h)};
  std::vector<RayRequest> rays;
  rays.reserve(static_cast<std::size_t>(w) * h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int u = c * stride, v = r * stride;
      auto rng = pixel_rng(config.seed, v, u);
      std::optional<double> range;
      if (guide && (*guide)(v, u) > 0) range = (*guide)(v, u) * range_per_depth(u, v, intr);
      rays.push_back({pixel_ray(u, v, pose, intr), sample_ray(range, config, rng)});
    }
  }
  const auto results = render_rays(rays, scene, true);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto& res = results[static_cast<std::size_t>(r) * w + c];
      if (!res.valid) continue;
      img.rgb(r, c) = res.rgb;
      img.range(r, c) = res.depth;
      img.depth(r, c) = res.depth / range_per_depth(c * stride, r * stride, intr);
      img.valid(r, c) = 1;
    }
  }
  return img;
}

}  // namespace nidslam
