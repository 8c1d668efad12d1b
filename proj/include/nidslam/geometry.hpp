#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "nidslam/error.hpp"
#include "nidslam/image.hpp"

namespace nidslam {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec2 = Eigen::Vector2d;

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0 && fy > 0) || width <= 0 || height <= 0 || cx < 0 ||
        cy < 0 || cx >= width || cy >= height) {
      throw Error(ErrorCode::kInvalidArgument, "invalid camera intrinsics");
    }
  }

  bool in_bounds(double u, double v) const {
    return u >= 0 && v >= 0 && u < width && v < height;
  }
};

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(),
       v.z(), 0, -v.x(),
       -v.y(), v.x(), 0;
  return m;
}

/// Rodrigues formula.
inline Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 W = skew(omega);
  if (theta < 1e-10) return Mat3::Identity() + W + 0.5 * W * W;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

inline Vec3 so3_log(const Mat3& R) {
  Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

/// Rigid transform camera->world.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  static Pose from_quaternion(const Eigen::Quaterniond& q, const Vec3& t) {
    return {q.normalized().toRotationMatrix(), t};
  }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  Pose operator*(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  Pose inverse() const {
    const Mat3 Rt = rotation.transpose();
    return {Rt, -Rt * translation};
  }

  Eigen::Quaterniond quaternion() const {
    return Eigen::Quaterniond(rotation).normalized();
  }

  /// Rotation angle of this transform in radians.
  double angle() const {
    const double c = std::clamp((rotation.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
  }

  bool is_valid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol &&
           translation.allFinite();
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double d) const { return origin + d * direction; }
};

/// SE(3) exponential of xi = (omega, v).
inline Pose se3_exp(const Vec6& xi) {
  const Vec3 omega = xi.head<3>();
  const Vec3 v = xi.tail<3>();
  const double theta = omega.norm();
  const Mat3 W = skew(omega);
  Mat3 V;
  if (theta < 1e-10) {
    V = Mat3::Identity() + 0.5 * W + W * W / 6.0;
  } else {
    const double t2 = theta * theta;
    V = Mat3::Identity() + (1.0 - std::cos(theta)) / t2 * W +
        (theta - std::sin(theta)) / (t2 * theta) * W * W;
  }
  return {so3_exp(omega), V * v};
}

/// Left increment in the world frame: exp(xi) * pose.
inline Pose se3_increment(const Pose& pose, const Vec6& xi) {
  return se3_exp(xi) * pose;
}

/// Pixel coordinates of a camera-frame point, or nullopt when out of view.
inline std::optional<Vec2> project(const Vec3& point, const CameraIntrinsics& intr) {
  if (!(point.z() > 0)) {
    throw Error(ErrorCode::kGeometry, "point behind camera");
  }
  const double u = intr.fx * point.x() / point.z() + intr.cx;
  const double v = intr.fy * point.y() / point.z() + intr.cy;
  if (!intr.in_bounds(u, v)) return std::nullopt;
  return Vec2(u, v);
}

/// Same arithmetic as project() without view or sign checks.
inline Vec2 project_unchecked(const Vec3& point, const CameraIntrinsics& intr) {
  return {intr.fx * point.x() / point.z() + intr.cx,
          intr.fy * point.y() / point.z() + intr.cy};
}

inline Vec3 backproject(double u, double v, double depth, const CameraIntrinsics& intr) {
  if (!(depth > 0)) {
    throw Error(ErrorCode::kGeometry, "invalid depth");
  }
  return {(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth};
}

/// Unit camera-frame direction through pixel (u, v). Pixel centers are integer.
inline Vec3 camera_direction(double u, double v, const CameraIntrinsics& intr) {
  return Vec3((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0).normalized();
}

/// Ratio between range along the viewing ray and z-depth at a pixel.
inline double range_per_depth(double u, double v, const CameraIntrinsics& intr) {
  return Vec3((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0).norm();
}

inline Ray pixel_ray(double u, double v, const Pose& pose, const CameraIntrinsics& intr) {
  Ray ray;
  ray.origin = pose.translation;
  ray.direction = (pose.rotation * camera_direction(u, v, intr)).normalized();
  return ray;
}

}  // namespace nidslam
