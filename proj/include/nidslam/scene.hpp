#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nidslam/config.hpp"
#include "nidslam/error.hpp"
#include "nidslam/geometry.hpp"

namespace nidslam {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Axis-aligned box.
struct Bounds {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

/// Regular lattice of feature vectors; vertex (i, j, k) sits at origin + voxel_size * (i, j, k).
/// Storage is x-fastest, features innermost.
struct FeatureGrid {
  Vec3 origin = Vec3::Zero();
  double voxel_size = 1.0;
  std::array<int, 3> dims = {2, 2, 2};
  int feature_dim = 1;
  std::vector<double> values;

  FeatureGrid() = default;
  FeatureGrid(const Vec3& origin_, double voxel, std::array<int, 3> dims_, int fdim)
      : origin(origin_), voxel_size(voxel), dims(dims_), feature_dim(fdim),
        values(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2] * fdim, 0.0) {}

  std::size_t vertex_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t vertex_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  double* feature(std::size_t vertex) { return values.data() + vertex * feature_dim; }
  const double* feature(std::size_t vertex) const { return values.data() + vertex * feature_dim; }

  Vec3 upper() const {
    return origin + voxel_size * Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1);
  }
  Bounds volume() const { return {origin, upper()}; }
  bool contains(const Vec3& p) const { return volume().contains(p); }
};

/// 8-corner trilinear stencil of one query point.
struct TrilinearStencil {
  std::array<std::size_t, 8> vertices{};
  std::array<double, 8> weights{};
  /// d(weight)/d(point), row per corner.
  std::array<Vec3, 8> weight_gradients{};
};

/// Corner c uses bit 0 for +x, bit 1 for +y, bit 2 for +z.
inline TrilinearStencil trilinear_stencil(const FeatureGrid& grid, const Vec3& p) {
  if (!grid.contains(p)) {
    throw Error(ErrorCode::kOutOfGrid, "point outside feature grid volume");
  }
  std::array<int, 3> base{};
  Vec3 frac;
  for (int a = 0; a < 3; ++a) {
    const double g = (p[a] - grid.origin[a]) / grid.voxel_size;
    int b = static_cast<int>(std::floor(g));
    b = std::clamp(b, 0, grid.dims[a] - 2);
    base[a] = b;
    frac[a] = std::clamp(g - b, 0.0, 1.0);
  }
  const double inv = 1.0 / grid.voxel_size;
  TrilinearStencil s;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double wx = dx ? frac.x() : 1.0 - frac.x();
    const double wy = dy ? frac.y() : 1.0 - frac.y();
    const double wz = dz ? frac.z() : 1.0 - frac.z();
    const double sx = (dx ? 1.0 : -1.0) * inv;
    const double sy = (dy ? 1.0 : -1.0) * inv;
    const double sz = (dz ? 1.0 : -1.0) * inv;
    s.vertices[c] = grid.vertex_index(base[0] + dx, base[1] + dy, base[2] + dz);
    s.weights[c] = wx * wy * wz;
    s.weight_gradients[c] = Vec3(sx * wy * wz, wx * sy * wz, wx * wy * sz);
  }
  return s;
}

struct TrilinearResult {
  VectorXd feature;
  TrilinearStencil stencil;
  /// feature_dim x 3 Jacobian of the feature w.r.t. the query point.
  MatrixXd gradient;
};

inline TrilinearResult trilinear_query(const FeatureGrid& grid, const Vec3& p,
                                       bool with_gradient = false) {
  TrilinearResult r;
  r.stencil = trilinear_stencil(grid, p);
  r.feature = VectorXd::Zero(grid.feature_dim);
  if (with_gradient) r.gradient = MatrixXd::Zero(grid.feature_dim, 3);
  for (int c = 0; c < 8; ++c) {
    const Eigen::Map<const VectorXd> f(grid.feature(r.stencil.vertices[c]), grid.feature_dim);
    r.feature += r.stencil.weights[c] * f;
    if (with_gradient) r.gradient += f * r.stencil.weight_gradients[c].transpose();
  }
  return r;
}

/// Multilayer perceptron with ReLU hidden layers.
class Decoder {
 public:
  enum class Head { kIdentity, kLogistic };

  struct Layer {
    MatrixXd weight;  // out x in
    VectorXd bias;
  };

  /// Forward activations kept for backpropagation; column per sample.
  struct Cache {
    std::vector<MatrixXd> activations;  // activations[0] = input, last = output
  };

  Decoder() = default;
  Decoder(const std::vector<int>& sizes, Head head) : head_(head) {
    if (sizes.size() < 2) throw Error(ErrorCode::kInvalidArgument, "decoder needs >= 2 layer sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      layers_.push_back({MatrixXd::Zero(sizes[i + 1], sizes[i]), VectorXd::Zero(sizes[i + 1])});
    }
  }

  Decoder(std::vector<Layer> layers, Head head) : head_(head), layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.bias.size() != l.weight.rows() ||
          (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows())) {
        throw Error(ErrorCode::kFormat, "inconsistent decoder layer shapes");
      }
    }
  }

  Head head() const { return head_; }
  int input_size() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_size() const { return static_cast<int>(layers_.back().weight.rows()); }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  MatrixXd forward(const MatrixXd& input, Cache* cache = nullptr) const {
    MatrixXd x = input;
    if (cache) {
      cache->activations.clear();
      cache->activations.push_back(input);
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      MatrixXd y = layers_[i].weight * x;
      y.colwise() += layers_[i].bias;
      if (i + 1 < layers_.size()) {
        y = y.cwiseMax(0.0);
      } else if (head_ == Head::kLogistic) {
        y = (1.0 + (-y.array()).exp()).inverse().matrix();
      }
      if (cache) cache->activations.push_back(y);
      x = std::move(y);
    }
    return x;
  }

  VectorXd forward_one(const VectorXd& input) const { return forward(MatrixXd(input)).col(0); }

  /// Accumulates parameter gradients into `grads` (same shapes, may be null) and
  /// returns the gradient w.r.t. the input when `want_input` is set.
  MatrixXd backward(const Cache& cache, const MatrixXd& grad_output,
                    std::vector<Layer>* grads, bool want_input) const {
    MatrixXd g = grad_output;
    const auto& acts = cache.activations;
    const std::size_t n = layers_.size();
    if (head_ == Head::kLogistic) {
      const auto& y = acts[n].array();
      g = (g.array() * y * (1.0 - y)).matrix();
    }
    for (std::size_t li = n; li-- > 0;) {
      if (li + 1 < n) {
        g = (acts[li + 1].array() > 0.0).select(g, 0.0);
      }
      if (grads) {
        (*grads)[li].weight.noalias() += g * acts[li].transpose();
        (*grads)[li].bias += g.rowwise().sum();
      }
      if (li > 0 || want_input) {
        g = layers_[li].weight.transpose() * g;
      }
    }
    return want_input ? g : MatrixXd();
  }

  std::vector<Layer> zeros_like() const {
    std::vector<Layer> out;
    for (const auto& l : layers_) {
      out.push_back({MatrixXd::Zero(l.weight.rows(), l.weight.cols()), VectorXd::Zero(l.bias.size())});
    }
    return out;
  }

 private:
  Head head_ = Head::kIdentity;
  std::vector<Layer> layers_;
};

inline constexpr int kGeoLevels = 3;

/// Learnable scene: three geometric grids (coarse, mid, fine), one color grid and their decoders.
struct SceneParams {
  std::array<FeatureGrid, kGeoLevels> geo;
  FeatureGrid color;
  std::array<Decoder, kGeoLevels> geo_decoders;
  Decoder color_decoder;

  /// Intersection of all grid volumes.
  Bounds valid_volume() const {
    Bounds b = color.volume();
    for (const auto& g : geo) {
      const Bounds v = g.volume();
      b.min = b.min.cwiseMax(v.min);
      b.max = b.max.cwiseMin(v.max);
    }
    return b;
  }
  bool contains(const Vec3& p) const {
    if (!color.contains(p)) return false;
    for (const auto& g : geo) if (!g.contains(p)) return false;
    return true;
  }
};

namespace detail {

inline VectorXd decoder_input(const Vec3& p, const VectorXd& feature) {
  VectorXd in(3 + feature.size());
  in << p, feature;
  return in;
}

}  // namespace detail

struct OccupancyResult {
  double value = 0;
  std::array<double, kGeoLevels> levels{};
};

/// Per-level decoder outputs summed and clamped to [0, 1].
inline OccupancyResult occupancy(const Vec3& p, const SceneParams& scene) {
  OccupancyResult r;
  double sum = 0;
  for (int l = 0; l < kGeoLevels; ++l) {
    const VectorXd f = trilinear_query(scene.geo[l], p).feature;
    r.levels[l] = scene.geo_decoders[l].forward_one(detail::decoder_input(p, f))[0];
    sum += r.levels[l];
  }
  r.value = std::clamp(sum, 0.0, 1.0);
  return r;
}

inline Vec3 color(const Vec3& p, const SceneParams& scene) {
  const VectorXd f = trilinear_query(scene.color, p).feature;
  const VectorXd c = scene.color_decoder.forward_one(detail::decoder_input(p, f));
  return c.head<3>();
}

inline std::array<int, 3> grid_dims_for(const Bounds& bounds, double voxel) {
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    // Small slack keeps exact multiples from gaining a spurious vertex.
    dims[a] = static_cast<int>(std::ceil(bounds.extent()[a] / voxel - 1e-9)) + 1;
    dims[a] = std::max(dims[a], 2);
  }
  return dims;
}

/// Fresh scene covering `bounds`: features ~ N(0, 0.01^2), decoder weights uniform in
/// +-1/sqrt(fan_in), biases zero except the configurable geometric output bias.
inline SceneParams init_scene(const Bounds& bounds, const Config& config, std::uint64_t seed) {
  for (int a = 0; a < 3; ++a) {
    if (!(bounds.extent()[a] > 0)) {
      throw Error(ErrorCode::kInvalidArgument, "degenerate scene bounds");
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> feature_dist(0.0, 0.01);
  auto fill_grid = [&](FeatureGrid& grid, double voxel) {
    grid = FeatureGrid(bounds.min, voxel, grid_dims_for(bounds, voxel), config.feature_dim);
    for (double& v : grid.values) v = feature_dist(rng);
  };
  auto make_decoder = [&](int outputs, Decoder::Head head) {
    std::vector<int> sizes{3 + config.feature_dim};
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(outputs);
    Decoder dec(sizes, head);
    for (auto& layer : dec.layers()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
      std::uniform_real_distribution<double> w(-bound, bound);
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = w(rng);
    }
    return dec;
  };

  SceneParams scene;
  for (int l = 0; l < kGeoLevels; ++l) fill_grid(scene.geo[l], config.geo_voxel[l]);
  fill_grid(scene.color, config.color_voxel);
  for (int l = 0; l < kGeoLevels; ++l) {
    scene.geo_decoders[l] = make_decoder(1, Decoder::Head::kIdentity);
    scene.geo_decoders[l].layers().back().bias[0] = config.geo_bias_init;
  }
  scene.color_decoder = make_decoder(3, Decoder::Head::kLogistic);
  return scene;
}

}  // namespace nidslam
