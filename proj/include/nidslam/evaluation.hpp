#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <unordered_map>
#include <vector>

#include <Eigen/Geometry>

#include "nidslam/config.hpp"
#include "nidslam/dataset_io.hpp"
#include "nidslam/error.hpp"
#include "nidslam/field.hpp"
#include "nidslam/renderer.hpp"
#include "nidslam/scene.hpp"

namespace nidslam {

struct TrajectoryPairing {
  std::vector<Pose> estimate;
  std::vector<Pose> ground_truth;
  std::vector<double> timestamps;  // estimate timestamps

  std::size_t size() const { return estimate.size(); }
};

/// One-to-one timestamp matching within `window` seconds, in estimate order.
inline TrajectoryPairing pair_trajectories(const std::vector<StampedPose>& estimate,
                                           const std::vector<StampedPose>& ground_truth,
                                           double window = 0.02) {
  std::vector<double> a, b;
  for (const auto& s : estimate) a.push_back(s.timestamp);
  for (const auto& s : ground_truth) b.push_back(s.timestamp);
  TrajectoryPairing p;
  for (const auto& [i, j] : associate(a, b, window)) {
    p.estimate.push_back(estimate[i].pose);
    p.ground_truth.push_back(ground_truth[j].pose);
    p.timestamps.push_back(estimate[i].timestamp);
  }
  return p;
}

/// Least-squares rigid transform (no scale) taking `src` points onto `dst`.
inline Pose align_rigid(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  Eigen::Matrix3Xd s(3, static_cast<Eigen::Index>(src.size()));
  Eigen::Matrix3Xd d(3, static_cast<Eigen::Index>(dst.size()));
  for (std::size_t i = 0; i < src.size(); ++i) {
    s.col(static_cast<Eigen::Index>(i)) = src[i];
    d.col(static_cast<Eigen::Index>(i)) = dst[i];
  }
  const Eigen::Matrix4d t = Eigen::umeyama(s, d, false);
  Pose p;
  p.rotation = t.topLeftCorner<3, 3>();
  p.translation = t.topRightCorner<3, 1>();
  return p;
}

/// RMSE of position residuals after rigid alignment of the estimate onto ground truth.
inline double ate_rmse(const TrajectoryPairing& pairing) {
  if (pairing.size() < 3) {
    throw Error(ErrorCode::kInsufficientData, "ATE needs at least 3 pose pairs");
  }
  std::vector<Vec3> est, gt;
  for (std::size_t i = 0; i < pairing.size(); ++i) {
    est.push_back(pairing.estimate[i].translation);
    gt.push_back(pairing.ground_truth[i].translation);
  }
  const Pose align = align_rigid(est, gt);
  double sum = 0;
  for (std::size_t i = 0; i < est.size(); ++i) sum += (align * est[i] - gt[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(est.size()));
}

struct RpeResult {
  double translation_rmse = 0;  // meters
  double rotation_rmse = 0;     // degrees
  std::size_t count = 0;
};

/// Relative pose error over index offset `delta`.
inline RpeResult rpe(const TrajectoryPairing& pairing, std::size_t delta = 1) {
  if (delta < 1 || pairing.size() < delta + 1) {
    throw Error(ErrorCode::kInsufficientData, "RPE needs at least delta + 1 pose pairs");
  }
  RpeResult r;
  double st = 0, sr = 0;
  for (std::size_t i = 0; i + delta < pairing.size(); ++i) {
    const Pose q = pairing.ground_truth[i].inverse() * pairing.ground_truth[i + delta];
    const Pose p = pairing.estimate[i].inverse() * pairing.estimate[i + delta];
    const Pose e = q.inverse() * p;
    st += e.translation.squaredNorm();
    const double deg = e.angle() * 180.0 / std::numbers::pi;
    sr += deg * deg;
    ++r.count;
  }
  r.translation_rmse = std::sqrt(st / static_cast<double>(r.count));
  r.rotation_rmse = std::sqrt(sr / static_cast<double>(r.count));
  return r;
}

struct DepthL1 {
  double centimeters = 0;
  std::size_t pixels = 0;
};

/// Mean |rendered - GT| z-depth over pixels valid in both, in cm. Rendering is guided by
/// the GT depth the same way training rays are sampled.
inline DepthL1 depth_l1(const SceneParams& scene, const std::vector<Pose>& poses,
                        const CameraIntrinsics& intr, const std::vector<DepthImage>& gt_depth,
                        int stride, const Config& config) {
  if (poses.size() != gt_depth.size()) {
    throw Error(ErrorCode::kInvalidArgument, "depth_l1: pose and depth counts differ");
  }
  DepthL1 out;
  double sum = 0;
  for (std::size_t v = 0; v < poses.size(); ++v) {
    const RenderedImage img = render_image(poses[v], intr, scene, stride, config, &gt_depth[v]);
    for (int r = 0; r < img.depth.height(); ++r) {
      for (int c = 0; c < img.depth.width(); ++c) {
        const double g = gt_depth[v](r * stride, c * stride);
        if (!img.valid(r, c) || !(g > 0)) continue;
        sum += std::abs(img.depth(r, c) - g);
        ++out.pixels;
      }
    }
  }
  if (out.pixels == 0) throw Error(ErrorCode::kInsufficientData, "depth_l1: no valid pixels");
  out.centimeters = 100.0 * sum / static_cast<double>(out.pixels);
  return out;
}

struct MaskedDepthAgreement {
  std::size_t within = 0;
  std::size_t pixels = 0;
  double fraction() const { return pixels ? static_cast<double>(within) / pixels : 0.0; }
};

/// Counts masked pixels whose rendered z-depth lies within `tolerance` meters of `reference`
/// (for example the background behind a removed object). Pixels the map cannot render count
/// as misses.
inline MaskedDepthAgreement masked_depth_agreement(const SceneParams& scene,
                                                   const std::vector<Pose>& poses,
                                                   const CameraIntrinsics& intr,
                                                   const std::vector<DepthImage>& reference,
                                                   const std::vector<MaskImage>& masks,
                                                   double tolerance, const Config& config) {
  if (poses.size() != reference.size() || poses.size() != masks.size()) {
    throw Error(ErrorCode::kInvalidArgument, "masked_depth_agreement: input counts differ");
  }
  MaskedDepthAgreement out;
  for (std::size_t v = 0; v < poses.size(); ++v) {
    const RenderedImage img = render_image(poses[v], intr, scene, 1, config, &reference[v]);
    for (int r = 0; r < intr.height; ++r) {
      for (int c = 0; c < intr.width; ++c) {
        if (!masks[v](r, c) || !(reference[v](r, c) > 0)) continue;
        ++out.pixels;
        if (img.valid(r, c) && std::abs(img.depth(r, c) - reference[v](r, c)) <= tolerance) {
          ++out.within;
        }
      }
    }
  }
  return out;
}

struct Triangle {
  Vec3 a, b, c;
  double area() const { return 0.5 * (b - a).cross(c - a).norm(); }
};

/// Level-set surface of a scalar lattice by marching tetrahedra (six tetrahedra per cell
/// around the 0-7 diagonal). values[(k * ny + j) * nx + i] at origin + pitch * (i, j, k).
inline std::vector<Triangle> marching_tetrahedra(const std::vector<double>& values,
                                                 std::array<int, 3> dims, const Vec3& origin,
                                                 double pitch, double level) {
  static constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7},
                                      {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};
  const auto [nx, ny, nz] = dims;
  auto at = [&](int i, int j, int k) {
    return values[(static_cast<std::size_t>(k) * ny + j) * nx + i];
  };
  std::vector<Triangle> tris;
  std::array<Vec3, 8> pos;
  std::array<double, 8> val{};
  for (int k = 0; k + 1 < nz; ++k) {
    for (int j = 0; j + 1 < ny; ++j) {
      for (int i = 0; i + 1 < nx; ++i) {
        int inside = 0;
        for (int c = 0; c < 8; ++c) {
          const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
          val[c] = at(i + dx, j + dy, k + dz);
          pos[c] = origin + pitch * Vec3(i + dx, j + dy, k + dz);
          inside += val[c] > level;
        }
        if (inside == 0 || inside == 8) continue;
        for (const auto& tet : kTets) {
          std::array<int, 4> in{}, out{};
          int ni = 0, no = 0;
          for (int t : tet) (val[t] > level ? in[ni++] : out[no++]) = t;
          auto cut = [&](int a, int b) {
            const double s = (level - val[a]) / (val[b] - val[a]);
            return Vec3(pos[a] + s * (pos[b] - pos[a]));
          };
          if (ni == 1 || ni == 3) {
            const int apex = ni == 1 ? in[0] : out[0];
            const auto& others = ni == 1 ? out : in;
            tris.push_back({cut(apex, others[0]), cut(apex, others[1]), cut(apex, others[2])});
          } else if (ni == 2) {
            const Vec3 p0 = cut(in[0], out[0]), p1 = cut(in[0], out[1]);
            const Vec3 p2 = cut(in[1], out[1]), p3 = cut(in[1], out[0]);
            tris.push_back({p0, p1, p2});
            tris.push_back({p0, p2, p3});
          }
        }
      }
    }
  }
  return tris;
}

/// Occupancy surface of the scene at `level`, sampled on a lattice of spacing `pitch` over
/// the valid volume.
inline std::vector<Triangle> extract_surface(const SceneParams& scene, double pitch, double level = 0.5) {
  const Bounds b = scene.valid_volume();
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    dims[a] = static_cast<int>(std::floor(b.extent()[a] / pitch + 1e-9)) + 1;
    if (dims[a] < 2) return {};
  }
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  std::vector<double> values(n);
  constexpr std::size_t kChunk = 4096;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    MatrixXd pts(3, static_cast<Eigen::Index>(end - begin));
    for (std::size_t idx = begin; idx < end; ++idx) {
      const std::size_t i = idx % dims[0];
      const std::size_t j = (idx / dims[0]) % dims[1];
      const std::size_t k = idx / (static_cast<std::size_t>(dims[0]) * dims[1]);
      pts.col(static_cast<Eigen::Index>(idx - begin)) =
          b.min + pitch * Vec3(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
    }
    const FieldEvaluation field(scene, pts, false, false);
    for (std::size_t idx = begin; idx < end; ++idx) {
      values[idx] = field.occupancy()[static_cast<Eigen::Index>(idx - begin)];
    }
  }
  return marching_tetrahedra(values, dims, b.min, pitch, level);
}

/// Area-weighted uniform samples on a triangle soup.
inline std::vector<Vec3> sample_surface(const std::vector<Triangle>& tris, std::size_t count,
                                        std::uint64_t seed) {
  std::vector<double> cumulative;
  double total = 0;
  for (const auto& t : tris) {
    total += t.area();
    cumulative.push_back(total);
  }
  std::vector<Vec3> pts;
  if (tris.empty() || !(total > 0)) return pts;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  pts.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double x = unit(rng) * total;
    std::size_t k = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), x) - cumulative.begin());
    k = std::min(k, tris.size() - 1);
    double r1 = unit(rng), r2 = unit(rng);
    if (r1 + r2 > 1) {
      r1 = 1 - r1;
      r2 = 1 - r2;
    }
    const Triangle& t = tris[k];
    pts.push_back(t.a + r1 * (t.b - t.a) + r2 * (t.c - t.a));
  }
  return pts;
}

/// Nearest-neighbor queries through a uniform spatial hash.
class NearestNeighbor {
 public:
  NearestNeighbor(const std::vector<Vec3>& points, double cell) : points_(points), cell_(cell) {
    if (points_.empty()) throw Error(ErrorCode::kInsufficientData, "empty point set");
    lo_ = hi_ = key(points_[0]);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto k = key(points_[i]);
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], k[a]);
        hi_[a] = std::max(hi_[a], k[a]);
      }
      cells_[pack(k)].push_back(static_cast<std::uint32_t>(i));
    }
  }

  double distance(const Vec3& q) const {
    const auto c = key(q);
    double best = std::numeric_limits<double>::infinity();
    // Ring r covers cells at Chebyshev distance r; anything beyond is at least (r) * cell away.
    std::int64_t max_ring = 0;
    for (int a = 0; a < 3; ++a) {
      max_ring = std::max({max_ring, std::abs(c[a] - lo_[a]), std::abs(c[a] - hi_[a])});
    }
    for (std::int64_t r = 0; r <= max_ring; ++r) {
      if (r > 0 && static_cast<double>(r - 1) * cell_ >= best) break;
      for (std::int64_t dx = -r; dx <= r; ++dx) {
        for (std::int64_t dy = -r; dy <= r; ++dy) {
          for (std::int64_t dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            const auto it = cells_.find(pack({c[0] + dx, c[1] + dy, c[2] + dz}));
            if (it == cells_.end()) continue;
            for (std::uint32_t i : it->second) best = std::min(best, (points_[i] - q).norm());
          }
        }
      }
    }
    return best;
  }

 private:
  using Key = std::array<std::int64_t, 3>;
  Key key(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
            static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }
  static std::uint64_t pack(const Key& k) {
    const auto u = [](std::int64_t v) { return static_cast<std::uint64_t>(v + (1 << 20)) & 0x1FFFFF; };
    return (u(k[0]) << 42) | (u(k[1]) << 21) | u(k[2]);
  }

  const std::vector<Vec3>& points_;
  double cell_;
  Key lo_{}, hi_{};
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;
};

struct CloudMetrics {
  double accuracy_cm = 0;         // mean predicted -> GT distance
  double completion_cm = 0;       // mean GT -> predicted distance
  double completion_ratio = 0;    // % GT points within threshold
  bool failed = false;            // empty surface; numbers are sentinels

  static CloudMetrics failure() {
    const double inf = std::numeric_limits<double>::infinity();
    return {inf, inf, 0.0, true};
  }
};

inline CloudMetrics cloud_metrics(const std::vector<Vec3>& predicted, const std::vector<Vec3>& gt,
                                  double threshold = 0.05) {
  if (gt.empty()) throw Error(ErrorCode::kInsufficientData, "empty ground-truth cloud");
  if (predicted.empty()) return CloudMetrics::failure();
  const double cell = 0.05;
  const NearestNeighbor to_gt(gt, cell), to_pred(predicted, cell);
  CloudMetrics m;
  double acc = 0, comp = 0;
  std::size_t within = 0;
  for (const auto& p : predicted) acc += to_gt.distance(p);
  for (const auto& q : gt) {
    const double d = to_pred.distance(q);
    comp += d;
    within += d < threshold;
  }
  m.accuracy_cm = 100.0 * acc / static_cast<double>(predicted.size());
  m.completion_cm = 100.0 * comp / static_cast<double>(gt.size());
  m.completion_ratio = 100.0 * static_cast<double>(within) / static_cast<double>(gt.size());
  return m;
}

/// Extracts the 0.5 occupancy surface at `pitch` (default: finest geometric voxel), samples
/// `samples` points on it and compares them with the GT cloud.
inline CloudMetrics reconstruction_metrics(const SceneParams& scene, const std::vector<Vec3>& gt,
                                           double pitch = 0, std::size_t samples = 100000,
                                           std::uint64_t seed = 0) {
  if (gt.empty()) throw Error(ErrorCode::kInsufficientData, "empty ground-truth cloud");
  if (!(pitch > 0)) pitch = scene.geo[kGeoLevels - 1].voxel_size;
  const auto tris = extract_surface(scene, pitch);
  const auto pred = sample_surface(tris, samples, seed);
  if (pred.empty()) return CloudMetrics::failure();
  return cloud_metrics(pred, gt);
}

}  // namespace nidslam
