#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <unordered_set>
#include <vector>

#include "nidslam/dynamic_removal.hpp"
#include "nidslam/geometry.hpp"
#include "nidslam/image.hpp"
#include "nidslam/scene.hpp"

namespace nidslam {

struct Keyframe {
  Frame frame;  // after dynamic removal
  Pose pose;
  RefinedMask mask;
  double dynamic_ratio = 0;  // R_d
  double overlap_ratio = 0;  // R_o at insertion
  std::size_t frame_index = 0;
  std::vector<std::size_t> voxels;  // coverage-grid cells observed, sorted, unique
};

/// Coarse observation-count grid used by coverage-based selection.
struct CoverageGrid {
  Vec3 origin = Vec3::Zero();
  double voxel_size = 1.0;
  std::array<int, 3> dims = {1, 1, 1};
  std::vector<std::uint32_t> counts;

  CoverageGrid() = default;
  CoverageGrid(const Bounds& bounds, double voxel) : origin(bounds.min), voxel_size(voxel) {
    for (int a = 0; a < 3; ++a) {
      dims[a] = std::max(1, static_cast<int>(std::ceil(bounds.extent()[a] / voxel - 1e-9)));
    }
    counts.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0);
  }

  std::optional<std::size_t> cell(const Vec3& p) const {
    std::array<int, 3> idx{};
    for (int a = 0; a < 3; ++a) {
      const double g = std::floor((p[a] - origin[a]) / voxel_size);
      if (g < 0 || g >= dims[a]) return std::nullopt;
      idx[a] = static_cast<int>(g);
    }
    return (static_cast<std::size_t>(idx[2]) * dims[1] + idx[1]) * dims[0] + idx[0];
  }
};

/// Regular lattice of sample pixels used by the overlap test.
inline std::vector<std::pair<int, int>> overlap_lattice(int width, int height, int n) {
  std::vector<std::pair<int, int>> px;
  px.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    const int r = static_cast<int>((i + 0.5) * height / n);
    for (int j = 0; j < n; ++j) px.emplace_back(r, static_cast<int>((j + 0.5) * width / n));
  }
  return px;
}

/// Fraction of lattice pixels (valid depth, outside the mask) that land in-bounds on a
/// valid depth pixel of `reference` after reprojection. Zero samples give 0.
inline double overlap_ratio(const Frame& frame, const Pose& pose, const Frame& reference,
                            const Pose& reference_pose, const CameraIntrinsics& intr,
                            int lattice = 20) {
  const Pose to_ref = reference_pose.inverse() * pose;
  std::size_t samples = 0, hits = 0;
  for (const auto& [r, c] : overlap_lattice(frame.width(), frame.height(), lattice)) {
    const double d = frame.depth(r, c);
    if (!(d > 0) || frame.masked(r, c)) continue;
    ++samples;
    const Vec3 p = to_ref * backproject(c, r, d, intr);
    if (!(p.z() > 0)) continue;
    const Vec2 uv = project_unchecked(p, intr);
    const long col = std::lround(uv.x()), row = std::lround(uv.y());
    if (row < 0 || col < 0 || row >= reference.height() || col >= reference.width()) continue;
    if (!intr.in_bounds(uv.x(), uv.y())) continue;
    if (reference.depth(static_cast<int>(row), static_cast<int>(col)) > 0) ++hits;
  }
  return samples == 0 ? 0.0 : static_cast<double>(hits) / samples;
}

inline double overlap_ratio(const Frame& frame, const Pose& pose, const Keyframe& last,
                            const CameraIntrinsics& intr, int lattice = 20) {
  return overlap_ratio(frame, pose, last.frame, last.pose, intr, lattice);
}

/// Insertion rule: strict R_d + R_o < tau2; the first frame is always accepted.
inline bool should_insert(double dynamic_ratio, double overlap, double tau2, bool first) {
  return first || dynamic_ratio + overlap < tau2;
}

struct InsertDecision {
  bool inserted = false;
  double dynamic_ratio = 0;
  double overlap_ratio = 0;
};

struct MappingSelection {
  std::vector<std::size_t> keyframes;  // indices into KeyframeSet, current frame excluded
  bool coverage_step = false;
  std::vector<std::size_t> gains;      // marginal voxel gain per pick (coverage steps)

  std::size_t size() const { return keyframes.size() + 1; }
};

class KeyframeSet {
 public:
  KeyframeSet() = default;
  KeyframeSet(const Bounds& bounds, double coverage_voxel) : coverage_(bounds, coverage_voxel) {}

  std::size_t size() const { return keyframes_.size(); }
  bool empty() const { return keyframes_.empty(); }
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  std::vector<Keyframe>& keyframes() { return keyframes_; }
  const Keyframe& back() const { return keyframes_.back(); }
  const CoverageGrid& coverage() const { return coverage_; }
  std::uint64_t mapping_calls() const { return mapping_calls_; }

  /// Coverage cells seen by the valid, unmasked pixels of a frame.
  std::vector<std::size_t> observed_cells(const Frame& frame, const Pose& pose,
                                          const CameraIntrinsics& intr,
                                          std::vector<std::size_t>* per_pixel = nullptr) const {
    std::vector<std::size_t> cells;
    for (int r = 0; r < frame.height(); ++r) {
      for (int c = 0; c < frame.width(); ++c) {
        const double d = frame.depth(r, c);
        if (!(d > 0) || (frame.masked(r, c) && !inpainted(frame, r, c))) continue;
        if (auto cell = coverage_.cell(pose * backproject(c, r, d, intr))) {
          cells.push_back(*cell);
          if (per_pixel) per_pixel->push_back(*cell);
        }
      }
    }
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    return cells;
  }

  /// Appends unconditionally and updates the coverage counts.
  void insert(Keyframe kf, const CameraIntrinsics& intr) {
    std::vector<std::size_t> per_pixel;
    kf.voxels = observed_cells(kf.frame, kf.pose, intr, &per_pixel);
    for (std::size_t cell : per_pixel) ++coverage_.counts[cell];
    keyframes_.push_back(std::move(kf));
  }

  /// Inserts iff R_d + R_o < tau2 (first frame always). R_o is measured against the last keyframe.
  InsertDecision maybe_insert(const Frame& frame, const Pose& pose, const RefinedMask& mask,
                              double tau2, const CameraIntrinsics& intr, std::size_t frame_index,
                              int lattice = 20) {
    InsertDecision d;
    d.dynamic_ratio = mask.dynamic_ratio;
    const bool first = keyframes_.empty();
    d.overlap_ratio = first ? 0.0 : overlap_ratio(frame, pose, keyframes_.back(), intr, lattice);
    d.inserted = should_insert(d.dynamic_ratio, d.overlap_ratio, tau2, first);
    if (d.inserted) {
      insert({frame, pose, mask, d.dynamic_ratio, d.overlap_ratio, frame_index, {}}, intr);
    }
    return d;
  }

  /// Chooses up to K-1 keyframes to optimize alongside the current frame. Mapping calls
  /// 1, P+1, 2P+1, ... are coverage-based (greedy new-cell gain); the rest pick uniformly at
  /// random among keyframes overlapping the current frame.
  template <typename Rng>
  MappingSelection select_for_mapping(const Frame& current, const Pose& current_pose,
                                      std::size_t current_index, int k, int period,
                                      const CameraIntrinsics& intr, Rng& rng, int lattice = 20) {
    ++mapping_calls_;
    MappingSelection sel;
    sel.coverage_step = (mapping_calls_ - 1) % static_cast<std::uint64_t>(std::max(period, 1)) == 0;
    const std::size_t want = k > 1 ? static_cast<std::size_t>(k - 1) : 0;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < keyframes_.size(); ++i) {
      if (keyframes_[i].frame_index != current_index) candidates.push_back(i);
    }
    if (sel.coverage_step) {
      std::vector<char> covered(coverage_.counts.size(), 0);
      for (std::size_t cell : observed_cells(current, current_pose, intr)) covered[cell] = 1;
      std::vector<char> used(keyframes_.size(), 0);
      while (sel.keyframes.size() < want && sel.keyframes.size() < candidates.size()) {
        std::size_t best = 0, best_gain = 0;
        bool found = false;
        for (std::size_t i : candidates) {
          if (used[i]) continue;
          std::size_t gain = 0;
          for (std::size_t cell : keyframes_[i].voxels) gain += !covered[cell];
          if (!found || gain > best_gain) {
            best = i;
            best_gain = gain;
            found = true;
          }
        }
        used[best] = 1;
        for (std::size_t cell : keyframes_[best].voxels) covered[cell] = 1;
        sel.keyframes.push_back(best);
        sel.gains.push_back(best_gain);
      }
    } else {
      std::vector<std::size_t> overlapping;
      for (std::size_t i : candidates) {
        const auto& kf = keyframes_[i];
        if (overlap_ratio(current, current_pose, kf.frame, kf.pose, intr, lattice) > 0) {
          overlapping.push_back(i);
        }
      }
      // Partial Fisher-Yates for a uniform subset.
      for (std::size_t i = 0; i < overlapping.size() && sel.keyframes.size() < want; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, overlapping.size() - 1);
        std::swap(overlapping[i], overlapping[pick(rng)]);
        sel.keyframes.push_back(overlapping[i]);
      }
    }
    return sel;
  }

 private:
  static bool inpainted(const Frame& f, int r, int c) {
    return f.inpaint_valid && (*f.inpaint_valid)(r, c);
  }

  std::vector<Keyframe> keyframes_;
  CoverageGrid coverage_;
  std::uint64_t mapping_calls_ = 0;
};

/// Views the most recent `count` keyframes as inpainting sources.
inline std::vector<InpaintSource> recent_sources(const KeyframeSet& set, std::size_t count) {
  std::vector<InpaintSource> out;
  const auto& kfs = set.keyframes();
  const std::size_t start = kfs.size() > count ? kfs.size() - count : 0;
  for (std::size_t i = start; i < kfs.size(); ++i) {
    out.push_back({&kfs[i].frame, &kfs[i].pose, &kfs[i].mask.bitmap});
  }
  return out;
}

}  // namespace nidslam
