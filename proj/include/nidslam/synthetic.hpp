#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "nidslam/error.hpp"
#include "nidslam/geometry.hpp"
#include "nidslam/image.hpp"
#include "nidslam/png_io.hpp"
#include "nidslam/scene.hpp"

namespace nidslam::synth {

/// Flat-colored axis-aligned box, optionally translating at constant velocity.
struct Object {
  Bounds box;
  Vec3 albedo = Vec3::Constant(0.5);
  Vec3 velocity = Vec3::Zero();
  bool dynamic = false;

  Bounds at(double time) const { return {box.min + velocity * time, box.max + velocity * time}; }
};

/// Camera path: circular orbit looking at a target, or a straight line with fixed gaze.
struct CameraPath {
  enum class Kind { kOrbit, kLinear };
  Kind kind = Kind::kOrbit;
  Vec3 center = Vec3::Zero();    // orbit center / line start
  double radius = 1.0;
  double start_angle = 0.0;      // radians
  double angular_step = 0.05;    // radians per frame
  Vec3 step = Vec3::Zero();      // linear: displacement per frame
  Vec3 target = Vec3::Zero();    // orbit look-at point / linear gaze point offset
  double frame_interval = 1.0 / 30.0;

  double timestamp(std::size_t i) const { return static_cast<double>(i) * frame_interval; }
};

/// Room interior with six flat-colored faces plus boxes. World is z-up.
struct Scene {
  Bounds room;
  std::array<Vec3, 6> face_albedo{};  // -x, +x, -y, +y, -z, +z
  std::vector<Object> objects;
  CameraPath path;

  bool has_dynamic() const {
    for (const auto& o : objects) if (o.dynamic) return true;
    return false;
  }
};

struct Hit {
  double range = 0;  // distance along the unit ray direction
  Vec3 rgb = Vec3::Zero();
  int id = 0;        // 0 room, k object k-1
};

/// Camera looking from `eye` toward `target`, image y down, world z up.
inline Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 down = forward.cross(right);
  Pose p;
  p.rotation.col(0) = right;
  p.rotation.col(1) = down;
  p.rotation.col(2) = forward;
  p.translation = eye;
  return p;
}

inline Pose camera_pose(const Scene& scene, std::size_t i) {
  const CameraPath& path = scene.path;
  if (path.kind == CameraPath::Kind::kOrbit) {
    const double a = path.start_angle + path.angular_step * static_cast<double>(i);
    const Vec3 eye = path.center + path.radius * Vec3(std::cos(a), std::sin(a), 0.0);
    return look_at(eye, path.target);
  }
  const Vec3 eye = path.center + path.step * static_cast<double>(i);
  return look_at(eye, eye + path.target);
}

/// Entry distance into a box along the ray, or nullopt on miss / origin inside.
inline std::optional<std::pair<double, int>> slab_enter(const Ray& ray, const Bounds& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int face = -1;
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (d == 0.0) {
      if (o < box.min[a] || o > box.max[a]) return std::nullopt;
      continue;
    }
    double ta = (box.min[a] - o) / d, tb = (box.max[a] - o) / d;
    int fa = 2 * a, fb = 2 * a + 1;
    if (ta > tb) {
      std::swap(ta, tb);
      std::swap(fa, fb);
    }
    if (ta > t0) {
      t0 = ta;
      face = fa;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= 0.0) return std::nullopt;
  return std::make_pair(t0, face);
}

/// Exit distance from inside the room and the face index hit.
inline std::pair<double, int> room_exit(const Ray& ray, const Bounds& room) {
  double best = std::numeric_limits<double>::infinity();
  int face = -1;
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    if (d == 0.0) continue;
    const double t = d > 0 ? (room.max[a] - ray.origin[a]) / d : (room.min[a] - ray.origin[a]) / d;
    if (t < best) {
      best = t;
      face = 2 * a + (d > 0 ? 1 : 0);
    }
  }
  return {best, face};
}

/// Nearest intersection with the room faces and objects displaced to `time`.
/// `skip_dynamic` removes dynamic objects (static background ground truth).
inline std::optional<Hit> raycast(const Ray& ray, const Scene& scene, double time,
                                  bool skip_dynamic = false) {
  if (!scene.room.contains(ray.origin)) return std::nullopt;
  const auto [t_room, face] = room_exit(ray, scene.room);
  if (face < 0) return std::nullopt;
  Hit hit{t_room, scene.face_albedo[static_cast<std::size_t>(face)], 0};
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const Object& obj = scene.objects[k];
    if (skip_dynamic && obj.dynamic) continue;
    if (auto enter = slab_enter(ray, obj.at(time)); enter && enter->first < hit.range) {
      hit = {enter->first, obj.albedo, static_cast<int>(k) + 1};
    }
  }
  return hit;
}

struct RenderedFrame {
  Frame frame;       // depth is exact z-depth (no quantization)
  MaskImage dynamic; // silhouette of dynamic objects
  Pose pose;
};

inline RenderedFrame render_frame(const Scene& scene, const CameraIntrinsics& intr, std::size_t i,
                                  bool skip_dynamic = false) {
  RenderedFrame out;
  out.pose = camera_pose(scene, i);
  const double t = scene.path.timestamp(i);
  out.frame.timestamp = t;
  out.frame.rgb = RgbImage(intr.width, intr.height);
  out.frame.depth = DepthImage(intr.width, intr.height);
  out.dynamic = MaskImage(intr.width, intr.height, 0);
  for (int r = 0; r < intr.height; ++r) {
    for (int c = 0; c < intr.width; ++c) {
      const Ray ray = pixel_ray(c, r, out.pose, intr);
      const auto hit = raycast(ray, scene, t, skip_dynamic);
      if (!hit) continue;
      out.frame.rgb(r, c) = hit->rgb;
      out.frame.depth(r, c) = hit->range / range_per_depth(c, r, intr);
      if (hit->id > 0 && scene.objects[static_cast<std::size_t>(hit->id - 1)].dynamic) {
        out.dynamic(r, c) = 1;
      }
    }
  }
  out.frame.mask = out.dynamic;
  return out;
}

/// Uniform point sample of the static surfaces visible from inside the room (room faces and
/// static boxes), spaced `spacing` meters on a lattice per face.
inline std::vector<Vec3> surface_points(const Scene& scene, double spacing) {
  std::vector<Vec3> pts;
  auto sample_face = [&](const Bounds& b, int axis, double value, bool keep_inside_room) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    const int nu = std::max(1, static_cast<int>(std::round(b.extent()[u] / spacing)));
    const int nv = std::max(1, static_cast<int>(std::round(b.extent()[v] / spacing)));
    for (int i = 0; i < nu; ++i) {
      for (int j = 0; j < nv; ++j) {
        Vec3 p;
        p[axis] = value;
        p[u] = b.min[u] + (i + 0.5) * b.extent()[u] / nu;
        p[v] = b.min[v] + (j + 0.5) * b.extent()[v] / nv;
        if (keep_inside_room) {
          bool hidden = false;
          for (const auto& o : scene.objects) {
            if (!o.dynamic && o.box.contains(p) &&
                ((p - o.box.min).array() > 1e-9).all() && ((o.box.max - p).array() > 1e-9).all()) {
              hidden = true;
            }
          }
          if (hidden) continue;
        }
        pts.push_back(p);
      }
    }
  };
  for (int a = 0; a < 3; ++a) {
    sample_face(scene.room, a, scene.room.min[a], true);
    sample_face(scene.room, a, scene.room.max[a], true);
  }
  for (const auto& o : scene.objects) {
    if (o.dynamic) continue;
    for (int a = 0; a < 3; ++a) {
      // Faces touching the room boundary (e.g. the floor contact) are not visible.
      if (o.box.min[a] > scene.room.min[a] + 1e-9) sample_face(o.box, a, o.box.min[a], false);
      if (o.box.max[a] < scene.room.max[a] - 1e-9) sample_face(o.box, a, o.box.max[a], false);
    }
  }
  return pts;
}

inline CameraIntrinsics default_intrinsics() { return {120.0, 120.0, 80.0, 60.0, 160, 120}; }

/// Presets: "static" (room + table box), "dynamic" (adds a box walking across the view).
inline Scene preset(const std::string& name) {
  Scene s;
  s.room = {Vec3(-2.0, -2.0, 0.0), Vec3(2.0, 2.0, 2.5)};
  s.face_albedo = {Vec3(0.8, 0.3, 0.3), Vec3(0.3, 0.8, 0.3), Vec3(0.3, 0.3, 0.8),
                   Vec3(0.8, 0.8, 0.3), Vec3(0.55, 0.45, 0.35), Vec3(0.9, 0.9, 0.9)};
  s.objects.push_back({{Vec3(-0.4, -0.3, 0.0), Vec3(0.4, 0.3, 0.7)}, Vec3(0.2, 0.6, 0.7)});
  s.objects.push_back({{Vec3(-1.6, 0.8, 0.0), Vec3(-1.0, 1.6, 1.2)}, Vec3(0.7, 0.5, 0.2)});
  s.path.kind = CameraPath::Kind::kOrbit;
  s.path.center = Vec3(0.0, 0.0, 1.3);
  s.path.radius = 1.4;
  s.path.start_angle = -0.35;
  s.path.angular_step = 0.035;
  s.path.target = Vec3(0.0, 0.0, 0.5);
  if (name == "static") return s;
  if (name == "dynamic") {
    // Person-sized box walking along +y on the far side of the table.
    Object walker{{Vec3(-1.5, -1.3, 0.0), Vec3(-1.2, -1.0, 1.6)}, Vec3(0.9, 0.2, 0.6)};
    walker.velocity = Vec3(0.0, 1.2, 0.0);
    walker.dynamic = true;
    s.objects.push_back(walker);
    return s;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown synthetic preset '" + name + "'");
}

/// Writes a TUM-layout sequence (rgb/, depth/, mask/, rgb.txt, depth.txt, groundtruth.txt,
/// intrinsics.txt). Masks are exact dynamic-object silhouettes.
inline void generate_dataset(const Scene& scene, const CameraIntrinsics& intr, std::size_t n_frames,
                             const std::string& out_dir, double depth_scale = 5000.0) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"rgb", "depth", "mask"}) {
    fs::create_directories(fs::path(out_dir) / sub, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create '" + out_dir + "/" + sub + "'");
  }
  std::ofstream rgb_txt(fs::path(out_dir) / "rgb.txt");
  std::ofstream depth_txt(fs::path(out_dir) / "depth.txt");
  std::ofstream gt_txt(fs::path(out_dir) / "groundtruth.txt");
  std::ofstream intr_txt(fs::path(out_dir) / "intrinsics.txt");
  if (!rgb_txt || !depth_txt || !gt_txt || !intr_txt) {
    throw Error(ErrorCode::kIo, "cannot write index files in '" + out_dir + "'");
  }
  rgb_txt << "# timestamp filename\n";
  depth_txt << "# timestamp filename\n";
  gt_txt << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %d %d\n", intr.fx, intr.fy, intr.cx,
                intr.cy, intr.width, intr.height);
  intr_txt << "# fx fy cx cy width height\n" << buf;
  for (std::size_t i = 0; i < n_frames; ++i) {
    const RenderedFrame f = render_frame(scene, intr, i);
    std::snprintf(buf, sizeof buf, "%.6f", f.frame.timestamp);
    const std::string stamp = buf;
    png::write_rgb8((fs::path(out_dir) / "rgb" / (stamp + ".png")).string(), f.frame.rgb);
    png::write_depth16((fs::path(out_dir) / "depth" / (stamp + ".png")).string(), f.frame.depth,
                       depth_scale);
    png::write_mask((fs::path(out_dir) / "mask" / (stamp + ".png")).string(), f.dynamic);
    rgb_txt << stamp << " rgb/" << stamp << ".png\n";
    depth_txt << stamp << " depth/" << stamp << ".png\n";
    const Eigen::Quaterniond q = f.pose.quaternion();
    std::snprintf(buf, sizeof buf, "%s %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", stamp.c_str(),
                  f.pose.translation.x(), f.pose.translation.y(), f.pose.translation.z(), q.x(),
                  q.y(), q.z(), q.w());
    gt_txt << buf;
  }
}

}  // namespace nidslam::synth
