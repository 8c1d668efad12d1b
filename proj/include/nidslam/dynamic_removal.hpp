#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "nidslam/geometry.hpp"
#include "nidslam/image.hpp"

namespace nidslam {

inline constexpr int kMaskRefineRadius = 5;

/// Dynamic-object mask after depth-based refinement.
struct RefinedMask {
  MaskImage bitmap;
  std::vector<std::pair<int, int>> boundary;  // (row, col) of the input mask's boundary
  double dynamic_ratio = 0.0;

  static RefinedMask empty(int width, int height) {
    return {MaskImage(width, height, 0), {}, 0.0};
  }
  bool any() const { return dynamic_ratio > 0.0; }
};

/// Zeroes the pixel after any forward-difference jump larger than tau1: one left-to-right
/// pass per row, then one top-to-bottom pass per column on the row-revised image. Pairs
/// touching an invalid (zero) pixel are skipped, including pixels zeroed earlier in the pass.
inline DepthImage revise_depth(const DepthImage& depth, double tau1) {
  DepthImage out = depth;
  const int w = out.width(), h = out.height();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c + 1 < w; ++c) {
      const double a = out(r, c), b = out(r, c + 1);
      if (a > 0 && b > 0 && std::abs(b - a) > tau1) out(r, c + 1) = 0.0;
    }
  }
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r + 1 < h; ++r) {
      const double a = out(r, c), b = out(r + 1, c);
      if (a > 0 && b > 0 && std::abs(b - a) > tau1) out(r + 1, c) = 0.0;
    }
  }
  return out;
}

inline std::vector<std::pair<int, int>> mask_boundary(const MaskImage& mask) {
  std::vector<std::pair<int, int>> boundary;
  const int w = mask.width(), h = mask.height();
  constexpr int dr[4] = {-1, 1, 0, 0};
  constexpr int dc[4] = {0, 0, -1, 1};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k], cc = c + dc[k];
        if (mask.contains(rr, cc) && !mask(rr, cc)) {
          boundary.emplace_back(r, c);
          break;
        }
      }
    }
  }
  return boundary;
}

/// Grows the mask around its boundary: inside each radius-5 disk, out-of-mask pixels whose
/// valid depth falls within the [min, max] depth of the disk's in-mask pixels are added.
/// All additions are judged against the input mask (single pass).
inline RefinedMask refine_mask(const MaskImage& mask, const DepthImage& depth) {
  RefinedMask out;
  out.bitmap = mask;
  out.boundary = mask_boundary(mask);
  constexpr int R = kMaskRefineRadius;
  for (const auto& [br, bc] : out.boundary) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int dr = -R; dr <= R; ++dr) {
      for (int dc = -R; dc <= R; ++dc) {
        if (dr * dr + dc * dc > R * R) continue;
        const int r = br + dr, c = bc + dc;
        if (!mask.contains(r, c) || !mask(r, c) || !(depth(r, c) > 0)) continue;
        lo = std::min(lo, depth(r, c));
        hi = std::max(hi, depth(r, c));
      }
    }
    if (lo > hi) continue;
    for (int dr = -R; dr <= R; ++dr) {
      for (int dc = -R; dc <= R; ++dc) {
        if (dr * dr + dc * dc > R * R) continue;
        const int r = br + dr, c = bc + dc;
        if (!mask.contains(r, c) || mask(r, c)) continue;
        const double d = depth(r, c);
        if (d > 0 && d >= lo && d <= hi) out.bitmap(r, c) = 1;
      }
    }
  }
  out.dynamic_ratio = mask.empty() ? 0.0
                                   : static_cast<double>(count_set(out.bitmap)) / out.bitmap.size();
  return out;
}

/// Source view for background inpainting: a frame, its pose and its own dynamic mask.
struct InpaintSource {
  const Frame* frame;
  const Pose* pose;
  const MaskImage* mask;
};

/// Forward-warps the static pixels of each source into the current view and fills masked
/// pixels by z-buffer (nearest pixel, smallest depth wins). Unfilled mask pixels get depth 0.
inline Frame inpaint_background(const Frame& current, const RefinedMask& mask,
                                std::span<const InpaintSource> sources, const Pose& pose,
                                const CameraIntrinsics& intr) {
  Frame out = current;
  if (!mask.any()) return out;
  const int w = current.width(), h = current.height();
  DepthImage zbuf(w, h, std::numeric_limits<double>::infinity());
  const Pose world_to_current = pose.inverse();
  for (const auto& src : sources) {
    const Pose src_to_current = world_to_current * (*src.pose);
    const Frame& f = *src.frame;
    for (int r = 0; r < f.height(); ++r) {
      for (int c = 0; c < f.width(); ++c) {
        const double d = f.depth(r, c);
        if (!(d > 0) || (src.mask && (*src.mask)(r, c))) continue;
        const Vec3 p = src_to_current * backproject(c, r, d, intr);
        if (!(p.z() > 0)) continue;
        const Vec2 uv = project_unchecked(p, intr);
        const long col = std::lround(uv.x()), row = std::lround(uv.y());
        if (row < 0 || col < 0 || row >= h || col >= w) continue;
        const int ri = static_cast<int>(row), ci = static_cast<int>(col);
        if (!mask.bitmap(ri, ci) || !(p.z() < zbuf(ri, ci))) continue;
        zbuf(ri, ci) = p.z();
        out.rgb(ri, ci) = f.rgb(r, c);
      }
    }
  }
  out.inpaint_valid = MaskImage(w, h, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask.bitmap(r, c)) continue;
      if (std::isfinite(zbuf(r, c))) {
        out.depth(r, c) = zbuf(r, c);
        (*out.inpaint_valid)(r, c) = 1;
      } else {
        out.depth(r, c) = 0.0;
      }
    }
  }
  return out;
}

}  // namespace nidslam
