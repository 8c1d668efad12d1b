#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "nidslam/error.hpp"
#include "nidslam/scene.hpp"

namespace nidslam {

/// Which parameter blocks receive gradients.
struct TrainMask {
  std::array<bool, kGeoLevels> geo_features{};
  bool color_features = false;
  std::array<bool, kGeoLevels> geo_decoders{};
  bool color_decoder = false;
  bool poses = false;

  static TrainMask all() {
    TrainMask m;
    m.geo_features = {true, true, true};
    m.geo_decoders = {true, true, true};
    m.color_features = m.color_decoder = m.poses = true;
    return m;
  }
  static TrainMask only_poses() {
    TrainMask m;
    m.poses = true;
    return m;
  }
  bool any_geo_level(int l) const { return geo_features[l] || geo_decoders[l]; }
  bool any_color() const { return color_features || color_decoder; }
};

/// Gradients shaped like SceneParams plus one 6-vector per optimized pose.
struct GradientSet {
  std::array<std::vector<double>, kGeoLevels> geo_features;
  std::vector<double> color_features;
  std::array<std::vector<Decoder::Layer>, kGeoLevels> geo_decoders;
  std::vector<Decoder::Layer> color_decoder;
  std::vector<Vec6> poses;

  static GradientSet zeros_like(const SceneParams& scene, std::size_t n_poses) {
    GradientSet g;
    for (int l = 0; l < kGeoLevels; ++l) {
      g.geo_features[l].assign(scene.geo[l].values.size(), 0.0);
      g.geo_decoders[l] = scene.geo_decoders[l].zeros_like();
    }
    g.color_features.assign(scene.color.values.size(), 0.0);
    g.color_decoder = scene.color_decoder.zeros_like();
    g.poses.assign(n_poses, Vec6::Zero());
    return g;
  }

  template <typename Fn>
  void for_each_block(Fn&& fn) {
    auto vec = [&](const std::string& name, std::vector<double>& v) { fn(name, v.data(), v.size()); };
    auto dec = [&](const std::string& name, std::vector<Decoder::Layer>& layers) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        fn(name + ".w" + std::to_string(i), layers[i].weight.data(), static_cast<std::size_t>(layers[i].weight.size()));
        fn(name + ".b" + std::to_string(i), layers[i].bias.data(), static_cast<std::size_t>(layers[i].bias.size()));
      }
    };
    for (int l = 0; l < kGeoLevels; ++l) vec("geo" + std::to_string(l) + ".features", geo_features[l]);
    vec("color.features", color_features);
    for (int l = 0; l < kGeoLevels; ++l) dec("geo" + std::to_string(l) + ".decoder", geo_decoders[l]);
    dec("color.decoder", color_decoder);
    for (std::size_t i = 0; i < poses.size(); ++i) fn("pose" + std::to_string(i), poses[i].data(), 6);
  }

  void scale(double s) {
    for_each_block([s](const std::string&, double* p, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) p[i] *= s;
    });
  }

  /// Throws naming the first block that holds a NaN or infinity.
  void check_finite() {
    for_each_block([](const std::string& name, double* p, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) {
          throw Error(ErrorCode::kNonFiniteGradient, "non-finite gradient in block '" + name + "'");
        }
      }
    });
  }
};

/// Applies `fn(name, param*, grad*, n)` to matching parameter/gradient blocks.
template <typename Fn>
void for_each_param_block(SceneParams& scene, GradientSet& grads, Fn&& fn) {
  auto dec = [&](const std::string& name, Decoder& d, std::vector<Decoder::Layer>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto& layer = d.layers()[i];
      fn(name, layer.weight.data(), g[i].weight.data(), static_cast<std::size_t>(g[i].weight.size()));
      fn(name, layer.bias.data(), g[i].bias.data(), static_cast<std::size_t>(g[i].bias.size()));
    }
  };
  for (int l = 0; l < kGeoLevels; ++l) {
    fn("geo" + std::to_string(l) + ".features", scene.geo[l].values.data(),
       grads.geo_features[l].data(), grads.geo_features[l].size());
  }
  fn("color.features", scene.color.values.data(), grads.color_features.data(),
     grads.color_features.size());
  for (int l = 0; l < kGeoLevels; ++l) {
    dec("geo" + std::to_string(l) + ".decoder", scene.geo_decoders[l], grads.geo_decoders[l]);
  }
  dec("color.decoder", scene.color_decoder, grads.color_decoder);
}

/// Batched evaluation of the scene field at P points with the state needed for backprop.
class FieldEvaluation {
 public:
  FieldEvaluation(const SceneParams& scene, const MatrixXd& points, bool want_color,
                  bool want_spatial)
      : scene_(scene), points_(points), want_color_(want_color), want_spatial_(want_spatial) {
    const Eigen::Index n = points.cols();
    raw_ = VectorXd::Zero(n);
    for (int l = 0; l < kGeoLevels; ++l) {
      const MatrixXd input = gather(scene.geo[l], geo_stencils_[l]);
      raw_ += scene.geo_decoders[l].forward(input, &geo_cache_[l]).row(0).transpose();
    }
    occupancy_ = raw_.cwiseMax(0.0).cwiseMin(1.0);
    if (want_color) {
      const MatrixXd input = gather(scene.color, color_stencils_);
      rgb_ = scene.color_decoder.forward(input, &color_cache_);
    }
  }

  Eigen::Index size() const { return points_.cols(); }
  const VectorXd& occupancy() const { return occupancy_; }
  const VectorXd& raw_occupancy() const { return raw_; }
  const MatrixXd& rgb() const { return rgb_; }

  /// Backpropagates d(loss)/d(occupancy) and d(loss)/d(rgb); returns d(loss)/d(points)
  /// (3 x P) when spatial gradients were requested, otherwise an empty matrix.
  /// With `raw_gradient` set, `grad_occupancy` is taken w.r.t. the unclamped sum.
  MatrixXd backward(const VectorXd& grad_occupancy, const MatrixXd* grad_rgb,
                    const TrainMask& mask, GradientSet& grads, bool raw_gradient = false) const {
    const Eigen::Index n = size();
    MatrixXd grad_points;
    if (want_spatial_) grad_points = MatrixXd::Zero(3, n);

    // Clamp passes gradient only strictly inside (0, 1).
    Eigen::RowVectorXd g_raw(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      g_raw[i] = (raw_gradient || (raw_[i] > 0.0 && raw_[i] < 1.0)) ? grad_occupancy[i] : 0.0;
    }
    for (int l = 0; l < kGeoLevels; ++l) {
      if (!mask.any_geo_level(l) && !want_spatial_) continue;
      const bool need_input = mask.geo_features[l] || want_spatial_;
      const MatrixXd g_in = scene_.geo_decoders[l].backward(
          geo_cache_[l], g_raw, mask.geo_decoders[l] ? &grads.geo_decoders[l] : nullptr,
          need_input);
      if (need_input) {
        scatter(scene_.geo[l], geo_stencils_[l], g_in,
                mask.geo_features[l] ? &grads.geo_features[l] : nullptr, grad_points);
      }
    }
    if (want_color_ && grad_rgb && (mask.any_color() || want_spatial_)) {
      const bool need_input = mask.color_features || want_spatial_;
      const MatrixXd g_in = scene_.color_decoder.backward(
          color_cache_, *grad_rgb, mask.color_decoder ? &grads.color_decoder : nullptr, need_input);
      if (need_input) {
        scatter(scene_.color, color_stencils_, g_in,
                mask.color_features ? &grads.color_features : nullptr, grad_points);
      }
    }
    return grad_points;
  }

 private:
  MatrixXd gather(const FeatureGrid& grid, std::vector<TrilinearStencil>& stencils) const {
    const Eigen::Index n = points_.cols();
    const int fd = grid.feature_dim;
    MatrixXd input(3 + fd, n);
    input.topRows(3) = points_;
    stencils.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      stencils[i] = trilinear_stencil(grid, points_.col(i));
      double* out = input.col(i).data() + 3;
      for (int f = 0; f < fd; ++f) out[f] = 0.0;
      for (int c = 0; c < 8; ++c) {
        const double w = stencils[i].weights[c];
        const double* src = grid.feature(stencils[i].vertices[c]);
        for (int f = 0; f < fd; ++f) out[f] += w * src[f];
      }
    }
    return input;
  }

  void scatter(const FeatureGrid& grid, const std::vector<TrilinearStencil>& stencils,
               const MatrixXd& g_in, std::vector<double>* feature_grads,
               MatrixXd& grad_points) const {
    const int fd = grid.feature_dim;
    for (Eigen::Index i = 0; i < g_in.cols(); ++i) {
      const double* gf = g_in.col(i).data() + 3;
      const auto& s = stencils[i];
      if (feature_grads) {
        for (int c = 0; c < 8; ++c) {
          double* dst = feature_grads->data() + s.vertices[c] * fd;
          const double w = s.weights[c];
          for (int f = 0; f < fd; ++f) dst[f] += w * gf[f];
        }
      }
      if (want_spatial_) {
        Vec3 gx = g_in.col(i).head<3>();
        for (int c = 0; c < 8; ++c) {
          const double* src = grid.feature(s.vertices[c]);
          double dot = 0.0;
          for (int f = 0; f < fd; ++f) dot += src[f] * gf[f];
          gx += dot * s.weight_gradients[c];
        }
        grad_points.col(i) += gx;
      }
    }
  }

  const SceneParams& scene_;
  const MatrixXd& points_;
  bool want_color_;
  bool want_spatial_;
  std::array<std::vector<TrilinearStencil>, kGeoLevels> geo_stencils_;
  std::vector<TrilinearStencil> color_stencils_;
  std::array<Decoder::Cache, kGeoLevels> geo_cache_;
  Decoder::Cache color_cache_;
  VectorXd raw_;
  VectorXd occupancy_;
  MatrixXd rgb_;
};

}  // namespace nidslam
