#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nidslam/config.hpp"
#include "nidslam/error.hpp"
#include "nidslam/geometry.hpp"
#include "nidslam/image.hpp"
#include "nidslam/png_io.hpp"
#include "nidslam/scene.hpp"

namespace nidslam {

struct StampedPath {
  double timestamp = 0;
  std::string path;
};

struct StampedPose {
  double timestamp = 0;
  Pose pose;
};

struct ManifestEntry {
  double timestamp = 0;  // rgb timestamp
  std::string rgb_path;
  std::string depth_path;
  std::optional<std::string> mask_path;
  std::optional<Pose> ground_truth;
};

struct SequenceManifest {
  std::string root;
  std::vector<ManifestEntry> entries;
  std::optional<CameraIntrinsics> intrinsics;  // width/height filled once an image is read
  double depth_scale = 5000.0;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  bool has_ground_truth() const {
    return !entries.empty() && std::all_of(entries.begin(), entries.end(),
                                           [](const ManifestEntry& e) { return e.ground_truth; });
  }
};

/// Greedy one-to-one timestamp association: candidate pairs with |a - b| < window, taken
/// in order of increasing gap. Returns (index in a, index in b) sorted by index in a.
inline std::vector<std::pair<std::size_t, std::size_t>> associate(const std::vector<double>& a,
                                                                  const std::vector<double>& b,
                                                                  double window) {
  struct Candidate {
    double gap;
    std::size_t i, j;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < a.size(); ++i) {
    // b need not be sorted, so scan linearly; sequences are at most a few thousand frames.
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double gap = std::abs(a[i] - b[j]);
      if (gap < window) cands.push_back({gap, i, j});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
    if (x.gap != y.gap) return x.gap < y.gap;
    if (x.i != y.i) return x.i < y.i;
    return x.j < y.j;
  });
  std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& c : cands) {
    if (used_a[c.i] || used_b[c.j]) continue;
    used_a[c.i] = used_b[c.j] = 1;
    out.emplace_back(c.i, c.j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {

inline std::vector<std::string> data_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    lines.push_back(t);
  }
  return lines;
}

inline std::vector<StampedPath> read_index(const std::string& path) {
  std::vector<StampedPath> out;
  for (const auto& line : data_lines(path)) {
    std::istringstream ss(line);
    StampedPath e;
    if (!(ss >> e.timestamp >> e.path)) {
      throw Error(ErrorCode::kFormat, "malformed line in '" + path + "': " + line);
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace detail

/// Reads "timestamp tx ty tz qx qy qz qw" lines.
inline std::vector<StampedPose> read_trajectory(const std::string& path) {
  std::vector<StampedPose> out;
  for (const auto& line : detail::data_lines(path)) {
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw Error(ErrorCode::kFormat, "malformed trajectory line in '" + path + "': " + line);
    }
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (!(q.norm() > 0)) throw Error(ErrorCode::kFormat, "zero quaternion in '" + path + "'");
    out.push_back({t, Pose::from_quaternion(q, Vec3(tx, ty, tz))});
  }
  return out;
}

/// One TUM line with six decimals; the quaternion is normalized with qw >= 0.
inline std::string format_trajectory_line(const StampedPose& sp) {
  Eigen::Quaterniond q = sp.pose.quaternion().normalized();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  auto fmt = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    // Avoid "-0.000000" so identical poses print identically.
    if (std::strcmp(buf, "-0.000000") == 0) return std::string("0.000000");
    return std::string(buf);
  };
  const Vec3& t = sp.pose.translation;
  return fmt(sp.timestamp) + " " + fmt(t.x()) + " " + fmt(t.y()) + " " + fmt(t.z()) + " " +
         fmt(q.x()) + " " + fmt(q.y()) + " " + fmt(q.z()) + " " + fmt(q.w());
}

inline void write_trajectory(const std::vector<StampedPose>& trajectory, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  for (const auto& sp : trajectory) {
    if (!sp.pose.is_valid(1e-6)) throw Error(ErrorCode::kGeometry, "invalid pose in trajectory");
    out << format_trajectory_line(sp) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path + "'");
}

/// "fx fy cx cy [width height]" in <root>/intrinsics.txt, if present.
inline std::optional<CameraIntrinsics> read_intrinsics_file(const std::string& root) {
  const auto path = std::filesystem::path(root) / "intrinsics.txt";
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto lines = detail::data_lines(path.string());
  if (lines.empty()) throw Error(ErrorCode::kFormat, "empty '" + path.string() + "'");
  std::istringstream ss(lines.front());
  CameraIntrinsics intr{};
  if (!(ss >> intr.fx >> intr.fy >> intr.cx >> intr.cy)) {
    throw Error(ErrorCode::kFormat, "malformed '" + path.string() + "'");
  }
  int w = 0, h = 0;
  if (ss >> w >> h) {
    intr.width = w;
    intr.height = h;
  }
  return intr;
}

/// Loads a TUM-layout sequence: rgb.txt and depth.txt are associated within the window,
/// groundtruth.txt (optional) is associated to the rgb timestamps the same way, and
/// mask/<rgb filename> is attached when it exists.
inline SequenceManifest load_sequence(const std::string& root, const Config& config) {
  namespace fs = std::filesystem;
  SequenceManifest m;
  m.root = root;
  m.depth_scale = config.depth_scale;
  const fs::path base(root);
  for (const char* name : {"rgb.txt", "depth.txt"}) {
    if (!fs::exists(base / name)) {
      throw Error(ErrorCode::kIo, "missing index file '" + (base / name).string() + "'");
    }
  }
  const auto rgb = detail::read_index((base / "rgb.txt").string());
  const auto depth = detail::read_index((base / "depth.txt").string());
  std::vector<double> rgb_t, depth_t;
  for (const auto& e : rgb) rgb_t.push_back(e.timestamp);
  for (const auto& e : depth) depth_t.push_back(e.timestamp);
  const auto pairs = associate(rgb_t, depth_t, config.assoc_window);
  if (pairs.empty()) {
    throw Error(ErrorCode::kNoAssociation,
                "no rgb/depth pairs within " + std::to_string(config.assoc_window) + " s in '" + root + "'");
  }

  std::vector<StampedPose> gt;
  if (fs::exists(base / "groundtruth.txt")) gt = read_trajectory((base / "groundtruth.txt").string());
  std::vector<std::optional<Pose>> gt_for_rgb(rgb.size());
  if (!gt.empty()) {
    std::vector<double> gt_t;
    for (const auto& g : gt) gt_t.push_back(g.timestamp);
    for (const auto& [i, j] : associate(rgb_t, gt_t, config.assoc_window)) gt_for_rgb[i] = gt[j].pose;
  }

  double last = -std::numeric_limits<double>::infinity();
  for (const auto& [i, j] : pairs) {
    ManifestEntry e;
    e.timestamp = rgb[i].timestamp;
    if (!(e.timestamp > last)) {
      throw Error(ErrorCode::kFormat, "timestamps not strictly increasing in '" + root + "'");
    }
    last = e.timestamp;
    e.rgb_path = (base / rgb[i].path).string();
    e.depth_path = (base / depth[j].path).string();
    for (const auto& p : {e.rgb_path, e.depth_path}) {
      if (!fs::exists(p)) throw Error(ErrorCode::kIo, "missing file '" + p + "'");
    }
    const fs::path mask = base / "mask" / fs::path(rgb[i].path).filename();
    if (fs::exists(mask)) e.mask_path = mask.string();
    e.ground_truth = gt_for_rgb[i];
    m.entries.push_back(std::move(e));
  }
  if (auto intr = read_intrinsics_file(root)) {
    m.intrinsics = intr;
  } else {
    m.intrinsics = config.intrinsics(0, 0);
  }
  return m;
}

/// Reads one entry's images. Intrinsics width/height are taken from the rgb image.
inline Frame load_frame(const SequenceManifest& m, std::size_t index) {
  const ManifestEntry& e = m.entries.at(index);
  Frame f;
  f.timestamp = e.timestamp;
  f.rgb = png::read_rgb(e.rgb_path);
  f.depth = png::read_depth(e.depth_path, m.depth_scale);
  if (!f.depth.same_shape(f.rgb)) {
    throw Error(ErrorCode::kFormat, "rgb/depth size mismatch at '" + e.rgb_path + "'");
  }
  if (e.mask_path) {
    f.mask = png::read_mask(*e.mask_path);
    if (!f.mask->same_shape(f.rgb)) {
      throw Error(ErrorCode::kFormat, "mask size mismatch at '" + *e.mask_path + "'");
    }
  }
  return f;
}

/// Intrinsics with the image size filled in from the first frame.
inline CameraIntrinsics manifest_intrinsics(const SequenceManifest& m, const Frame& first) {
  CameraIntrinsics intr = m.intrinsics.value_or(CameraIntrinsics{});
  intr.width = first.width();
  intr.height = first.height();
  intr.validate();
  return intr;
}

// Checkpoint container.
//
//   "NIDS" u32 version
//   u32 grid count, per grid: u32 level id (0..2 geometric, 3 color), u32 dims[3],
//     f64 voxel, f64 origin[3], u32 feature dim, f32 payload[vertices * feature dim]
//   u32 decoder count, per decoder: u32 id (0..2 geometric, 3 color), u32 head, u32 layers,
//     per layer: u32 rows, u32 cols, f32 weight (row-major), f32 bias[rows]
// All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kColorLevelId = 3;

namespace detail {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out_.write(bytes, sizeof(T));
  }
  void u32(std::size_t v) { put(static_cast<std::uint32_t>(v)); }
  void f32s(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) put(static_cast<float>(p[i]));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  void context(std::string what) { context_ = std::move(what); }

  template <typename T>
  T get() {
    char bytes[sizeof(T)];
    in_.read(bytes, sizeof(T));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(T))) {
      throw Error(ErrorCode::kTruncated, "checkpoint '" + path_ + "' truncated in " + context_);
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  void f32s(double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<double>(get<float>());
  }

 private:
  std::istream& in_;
  std::string path_;
  std::string context_ = "header";
};

inline std::string grid_name(std::uint32_t level) {
  return level == kColorLevelId ? "color grid" : "geometric grid level " + std::to_string(level);
}

}  // namespace detail

inline void save_checkpoint(const SceneParams& scene, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  detail::Writer w(out);
  out.write("NIDS", 4);
  w.u32(kCheckpointVersion);
  w.u32(kGeoLevels + 1);
  auto grid = [&](std::uint32_t id, const FeatureGrid& g) {
    w.u32(id);
    for (int d : g.dims) w.u32(static_cast<std::size_t>(d));
    w.put(g.voxel_size);
    for (int a = 0; a < 3; ++a) w.put(g.origin[a]);
    w.u32(static_cast<std::size_t>(g.feature_dim));
    w.f32s(g.values.data(), g.values.size());
  };
  for (int l = 0; l < kGeoLevels; ++l) grid(static_cast<std::uint32_t>(l), scene.geo[l]);
  grid(kColorLevelId, scene.color);
  w.u32(kGeoLevels + 1);
  auto decoder = [&](std::uint32_t id, const Decoder& d) {
    w.u32(id);
    w.u32(static_cast<std::size_t>(d.head()));
    w.u32(d.layers().size());
    for (const auto& layer : d.layers()) {
      w.u32(static_cast<std::size_t>(layer.weight.rows()));
      w.u32(static_cast<std::size_t>(layer.weight.cols()));
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
          w.put(static_cast<float>(layer.weight(r, c)));
        }
      }
      w.f32s(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
  };
  for (int l = 0; l < kGeoLevels; ++l) decoder(static_cast<std::uint32_t>(l), scene.geo_decoders[l]);
  decoder(kColorLevelId, scene.color_decoder);
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path + "'");
}

inline SceneParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "NIDS", 4) != 0) {
    throw Error(ErrorCode::kFormat, "'" + path + "' is not a checkpoint (bad magic)");
  }
  detail::Reader r(in, path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  SceneParams scene;
  std::array<bool, kGeoLevels + 1> seen_grid{}, seen_dec{};
  const std::uint32_t n_grids = r.u32();
  if (n_grids != kGeoLevels + 1) throw Error(ErrorCode::kFormat, "unexpected grid count");
  for (std::uint32_t k = 0; k < n_grids; ++k) {
    r.context("grid header");
    const std::uint32_t id = r.u32();
    if (id > kColorLevelId || seen_grid[id]) throw Error(ErrorCode::kFormat, "bad grid id");
    seen_grid[id] = true;
    r.context(detail::grid_name(id));
    FeatureGrid g;
    for (int a = 0; a < 3; ++a) {
      g.dims[a] = static_cast<int>(r.u32());
      if (g.dims[a] < 2 || g.dims[a] > 100000) throw Error(ErrorCode::kFormat, "bad grid dims");
    }
    g.voxel_size = r.get<double>();
    for (int a = 0; a < 3; ++a) g.origin[a] = r.get<double>();
    g.feature_dim = static_cast<int>(r.u32());
    if (g.feature_dim < 1 || g.feature_dim > 4096 || !(g.voxel_size > 0)) {
      throw Error(ErrorCode::kFormat, "bad " + detail::grid_name(id) + " header");
    }
    g.values.resize(g.vertex_count() * static_cast<std::size_t>(g.feature_dim));
    r.f32s(g.values.data(), g.values.size());
    (id == kColorLevelId ? scene.color : scene.geo[id]) = std::move(g);
  }
  r.context("decoder table");
  const std::uint32_t n_dec = r.u32();
  if (n_dec != kGeoLevels + 1) throw Error(ErrorCode::kFormat, "unexpected decoder count");
  for (std::uint32_t k = 0; k < n_dec; ++k) {
    r.context("decoder header");
    const std::uint32_t id = r.u32();
    if (id > kColorLevelId || seen_dec[id]) throw Error(ErrorCode::kFormat, "bad decoder id");
    seen_dec[id] = true;
    r.context(id == kColorLevelId ? "color decoder" : "geometric decoder " + std::to_string(id));
    const std::uint32_t head = r.u32();
    if (head > 1) throw Error(ErrorCode::kFormat, "bad decoder head");
    const std::uint32_t n_layers = r.u32();
    if (n_layers < 1 || n_layers > 64) throw Error(ErrorCode::kFormat, "bad decoder layer count");
    std::vector<Decoder::Layer> layers(n_layers);
    for (auto& layer : layers) {
      const std::uint32_t rows = r.u32(), cols = r.u32();
      if (rows < 1 || cols < 1 || rows > 65536 || cols > 65536) {
        throw Error(ErrorCode::kFormat, "bad decoder layer shape");
      }
      layer.weight.resize(rows, cols);
      for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j) layer.weight(i, j) = r.get<float>();
      }
      layer.bias.resize(rows);
      r.f32s(layer.bias.data(), rows);
    }
    Decoder d(std::move(layers), static_cast<Decoder::Head>(head));
    (id == kColorLevelId ? scene.color_decoder : scene.geo_decoders[id]) = std::move(d);
  }
  return scene;
}

}  // namespace nidslam
