#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nidslam/optimization.hpp"

namespace nidslam {

/// Small randomized problem for checking analytic gradients against finite differences.
struct ToyProblem {
  SceneParams scene;
  std::vector<Pose> poses;
  CameraIntrinsics intr;
  std::vector<PixelSample> batch;
  LossWeights weights;
};

namespace detail {

/// True when every non-smooth point of the objective (ReLU, clamp, L1 kink, trilinear cell
/// face, grid boundary) is at least `margin` away, so central differences are meaningful.
inline bool smooth_enough(const ToyProblem& p, double margin, double spatial_margin) {
  std::vector<Vec3> pts;
  for (const auto& px : p.batch) {
    const Ray ray = pixel_ray(px.u, px.v, p.poses[px.pose_index], p.intr);
    for (double d : px.depths) pts.push_back(ray.at(d));
  }
  const Bounds inner = p.scene.valid_volume();
  for (const Vec3& x : pts) {
    if (((x - inner.min).array() < spatial_margin).any() ||
        ((inner.max - x).array() < spatial_margin).any()) {
      return false;
    }
    auto off_face = [&](const FeatureGrid& g) {
      for (int a = 0; a < 3; ++a) {
        const double t = (x[a] - g.origin[a]) / g.voxel_size;
        const double frac = t - std::floor(t);
        const double m = spatial_margin / g.voxel_size;
        if (frac < m || frac > 1.0 - m) return false;
      }
      return true;
    };
    for (const auto& g : p.scene.geo) if (!off_face(g)) return false;
    if (!off_face(p.scene.color)) return false;
  }
  MatrixXd m(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = pts[i];
  auto relu_ok = [&](const Decoder& dec, const FeatureGrid& grid) {
    MatrixXd input(3 + grid.feature_dim, m.cols());
    for (Eigen::Index i = 0; i < m.cols(); ++i) {
      input.col(i) << m.col(i), trilinear_query(grid, m.col(i)).feature;
    }
    Decoder::Cache cache;
    dec.forward(input, &cache);
    MatrixXd x = input;
    for (std::size_t l = 0; l + 1 < dec.layers().size(); ++l) {
      MatrixXd pre = dec.layers()[l].weight * x;
      pre.colwise() += dec.layers()[l].bias;
      if ((pre.array().abs() < margin).any()) return false;
      x = pre.cwiseMax(0.0);
    }
    return true;
  };
  for (int l = 0; l < kGeoLevels; ++l) {
    if (!relu_ok(p.scene.geo_decoders[l], p.scene.geo[l])) return false;
  }
  if (!relu_ok(p.scene.color_decoder, p.scene.color)) return false;
  const FieldEvaluation field(p.scene, m, true, false);
  for (Eigen::Index i = 0; i < field.size(); ++i) {
    const double raw = field.raw_occupancy()[i];
    if (std::abs(raw) < margin || std::abs(raw - 1.0) < margin) return false;
  }
  // Residuals away from the L1 kink.
  std::size_t offset = 0;
  for (const auto& px : p.batch) {
    const std::size_t n = px.depths.size();
    std::vector<double> occ(field.occupancy().data() + offset, field.occupancy().data() + offset + n);
    const Composite c = composite(px.depths, occ, field.rgb().data() + 3 * offset);
    offset += n;
    if (!c.valid) return false;
    if (std::abs(px.target_range - c.depth) < margin) return false;
    if (((px.target_rgb - c.rgb).array().abs() < margin).any()) return false;
  }
  return true;
}

}  // namespace detail

/// Random toy scene: unit-cube grids, tiny decoders, `rays` rays from two poses.
inline ToyProblem make_toy_problem(std::uint64_t seed, int rays = 4, int samples_per_ray = 6) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Config cfg;
  cfg.geo_voxel = {0.5, 0.34, 0.26};
  cfg.color_voxel = 0.3;
  cfg.feature_dim = 2;
  cfg.hidden = {5};
  ToyProblem p;
  const Bounds bounds{Vec3(-0.5, -0.5, 1.0), Vec3(0.5, 0.5, 2.0)};
  p.scene = init_scene(bounds, cfg, rng());
  for (auto* g : {&p.scene.geo[0], &p.scene.geo[1], &p.scene.geo[2], &p.scene.color}) {
    for (double& v : g->values) v = 0.5 * normal(rng);
  }
  for (int l = 0; l < kGeoLevels; ++l) {
    for (auto& layer : p.scene.geo_decoders[l].layers()) {
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = 0.2 * normal(rng);
    }
    auto& head = p.scene.geo_decoders[l].layers().back();
    head.weight *= 0.3;
    head.bias[0] = 0.1 + 0.05 * normal(rng);
  }
  for (auto& layer : p.scene.color_decoder.layers()) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = 0.2 * normal(rng);
  }

  p.intr = {40.0, 40.0, 16.0, 12.0, 32, 24};
  for (int k = 0; k < 2; ++k) {
    Vec6 xi;
    for (int i = 0; i < 3; ++i) xi[i] = 0.05 * normal(rng);
    for (int i = 3; i < 6; ++i) xi[i] = 0.05 * normal(rng);
    p.poses.push_back(se3_exp(xi));
  }
  for (int r = 0; r < rays; ++r) {
    PixelSample px;
    px.pose_index = static_cast<std::size_t>(r % 2);
    px.u = 10 + 12 * unit(rng);
    px.v = 8 + 8 * unit(rng);
    px.target_range = 1.2 + 0.6 * unit(rng);
    px.target_rgb = Vec3(unit(rng), unit(rng), unit(rng));
    const double lo = 1.1, hi = 1.9;
    for (int s = 0; s < samples_per_ray; ++s) {
      px.depths.push_back(lo + (s + unit(rng)) * (hi - lo) / samples_per_ray);
    }
    p.batch.push_back(std::move(px));
  }
  p.weights = {0.7, 0.3, 0.5};
  return p;
}

struct GradcheckReport {
  std::size_t scenes = 0;
  std::size_t rejected_draws = 0;
  std::size_t entries = 0;
  double max_relative_error = 0;   // over entries with magnitude >= 1e-3
  double max_absolute_error = 0;   // over entries with magnitude < 1e-3
  std::size_t failures = 0;
  std::string worst_block;

  bool passed() const { return failures == 0; }
};

/// Compares every analytic gradient entry (features, decoder weights, poses) with central
/// finite differences on `scenes` randomized toy problems.
inline GradcheckReport run_gradcheck(std::uint64_t seed, std::size_t scenes = 10,
                                     double h_params = 1e-4, double h_pose = 1e-5,
                                     double rel_tol = 1e-3, double abs_tol = 1e-6) {
  GradcheckReport report;
  std::mt19937_64 seeder(seed);
  const TrainMask mask = TrainMask::all();
  while (report.scenes < scenes) {
    ToyProblem p = make_toy_problem(seeder());
    if (!detail::smooth_enough(p, 5e-4, 1e-4)) {
      ++report.rejected_draws;
      if (report.rejected_draws > 1000 * scenes) {
        throw Error(ErrorCode::kInsufficientData, "gradcheck could not draw smooth toy scenes");
      }
      continue;
    }
    ++report.scenes;
    GradientSet analytic = compute_gradients(p.scene, p.poses, p.intr, p.batch, p.weights, mask);
    auto objective = [&]() {
      return evaluate_objective(p.scene, p.poses, p.intr, p.batch, p.weights, TrainMask{}, nullptr)
          .objective(p.weights);
    };
    auto compare = [&](const std::string& block, double a, double n) {
      ++report.entries;
      const double mag = std::max(std::abs(a), std::abs(n));
      const double err = std::abs(a - n);
      bool ok;
      if (mag < 1e-3) {
        report.max_absolute_error = std::max(report.max_absolute_error, err);
        ok = err <= abs_tol;
      } else {
        const double rel = err / mag;
        if (rel > report.max_relative_error) {
          report.max_relative_error = rel;
          report.worst_block = block;
        }
        ok = rel <= rel_tol;
      }
      if (!ok) ++report.failures;
    };
    for_each_param_block(p.scene, analytic, [&](const std::string& name, double* param,
                                                 const double* grad, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        const double saved = param[i];
        param[i] = saved + h_params;
        const double fp = objective();
        param[i] = saved - h_params;
        const double fm = objective();
        param[i] = saved;
        compare(name, grad[i], (fp - fm) / (2 * h_params));
      }
    });
    for (std::size_t k = 0; k < p.poses.size(); ++k) {
      const Pose saved = p.poses[k];
      for (int j = 0; j < 6; ++j) {
        Vec6 xi = Vec6::Zero();
        xi[j] = h_pose;
        p.poses[k] = se3_increment(saved, xi);
        const double fp = objective();
        p.poses[k] = se3_increment(saved, -xi);
        const double fm = objective();
        p.poses[k] = saved;
        compare("pose" + std::to_string(k), analytic.poses[k][j], (fp - fm) / (2 * h_pose));
      }
    }
  }
  return report;
}

}  // namespace nidslam
