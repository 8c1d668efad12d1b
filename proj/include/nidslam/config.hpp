#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nidslam/error.hpp"
#include "nidslam/geometry.hpp"

namespace nidslam {

/// Every tunable of the pipeline. Text form is one "key = value" per line.
struct Config {
  // Dynamic removal.
  double tau1 = 0.1;             // depth revision threshold (m)
  int inpaint_priors = 10;       // most recent keyframes warped for inpainting

  // Keyframes.
  double tau2 = 0.9;             // insert iff R_d + R_o < tau2
  int overlap_grid = 20;         // overlap ratio sample lattice per axis
  int coverage_period = 10;      // one coverage-based selection every P mapping calls
  int keyframes_per_map = 5;     // K

  // Scene representation.
  std::vector<double> geo_voxel = {0.64, 0.32, 0.16};  // coarse, mid, fine
  double color_voxel = 0.16;
  int feature_dim = 8;
  std::vector<int> hidden = {32, 32};
  std::vector<double> bounds_min;  // empty: derived from the first frame
  std::vector<double> bounds_max;
  double bounds_margin = 0.5;
  double geo_bias_init = 0.0;    // output bias of each geometric decoder at init

  // Sampling and rendering.
  int m_strat = 32;
  int m_surf = 16;
  double tau3 = 0.05;
  double near = 0.1;
  double far = 6.0;
  double strat_far_factor = 1.1;

  // Optimization.
  int map_pixels = 1000;          // N
  int track_pixels = 200;         // N_t
  int track_select_pixels = 500;  // fixed batch that picks the best tracking iterate
  double lambda_p = 0.2;
  double lambda_pt = 0.5;
  int iters_a = 10;
  int iters_b = 20;
  int iters_c = 30;
  int init_iters = 200;           // first-keyframe occupancy initialization
  int track_iters = 20;
  int map_every = 1;
  double lr_features = 1e-2;
  double lr_decoders = 1e-3;
  double lr_poses = 1e-3;
  double lr_track = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool gt_anchor = true;          // first pose taken from ground truth when present

  // Dataset.
  double depth_scale = 5000.0;
  double assoc_window = 0.02;
  double fx = 535.4, fy = 539.2, cx = 320.1, cy = 247.6;

  std::uint64_t seed = 0;

  CameraIntrinsics intrinsics(int width, int height) const {
    return {fx, fy, cx, cy, width, height};
  }

  void validate() const;
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;

  static Config parse(const std::string& text);
  static Config load(const std::string& path);
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_scalar(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  std::string rest;
  if (in.fail() || (in >> rest)) {
    throw Error(ErrorCode::kInvalidArgument,
                "config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

template <>
inline bool parse_scalar<bool>(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw Error(ErrorCode::kInvalidArgument,
              "config key '" + key + "': expected boolean, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, std::string text) {
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream in(text);
  std::vector<T> out;
  std::string token;
  while (in >> token) out.push_back(parse_scalar<T>(key, token));
  return out;
}

template <typename T>
std::string format_list(const std::vector<T>& values) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ", ";
    out << values[i];
  }
  return out.str();
}

struct ConfigField {
  std::function<void(Config&, const std::string&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <typename T>
ConfigField scalar_field(T Config::*member) {
  return {[member](Config& c, const std::string& k, const std::string& v) {
            c.*member = parse_scalar<T>(k, v);
          },
          [member](const Config& c) {
            std::ostringstream out;
            out.precision(17);
            out << c.*member;
            return out.str();
          }};
}

template <typename T>
ConfigField list_field(std::vector<T> Config::*member) {
  return {[member](Config& c, const std::string& k, const std::string& v) {
            c.*member = parse_list<T>(k, v);
          },
          [member](const Config& c) { return format_list(c.*member); }};
}

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = {
      {"tau1", scalar_field(&Config::tau1)},
      {"inpaint_priors", scalar_field(&Config::inpaint_priors)},
      {"tau2", scalar_field(&Config::tau2)},
      {"overlap_grid", scalar_field(&Config::overlap_grid)},
      {"coverage_period", scalar_field(&Config::coverage_period)},
      {"keyframes_per_map", scalar_field(&Config::keyframes_per_map)},
      {"geo_voxel", list_field(&Config::geo_voxel)},
      {"color_voxel", scalar_field(&Config::color_voxel)},
      {"feature_dim", scalar_field(&Config::feature_dim)},
      {"hidden", list_field(&Config::hidden)},
      {"bounds_min", list_field(&Config::bounds_min)},
      {"bounds_max", list_field(&Config::bounds_max)},
      {"bounds_margin", scalar_field(&Config::bounds_margin)},
      {"geo_bias_init", scalar_field(&Config::geo_bias_init)},
      {"m_strat", scalar_field(&Config::m_strat)},
      {"m_surf", scalar_field(&Config::m_surf)},
      {"tau3", scalar_field(&Config::tau3)},
      {"near", scalar_field(&Config::near)},
      {"far", scalar_field(&Config::far)},
      {"strat_far_factor", scalar_field(&Config::strat_far_factor)},
      {"map_pixels", scalar_field(&Config::map_pixels)},
      {"track_pixels", scalar_field(&Config::track_pixels)},
      {"track_select_pixels", scalar_field(&Config::track_select_pixels)},
      {"lambda_p", scalar_field(&Config::lambda_p)},
      {"lambda_pt", scalar_field(&Config::lambda_pt)},
      {"iters_a", scalar_field(&Config::iters_a)},
      {"iters_b", scalar_field(&Config::iters_b)},
      {"iters_c", scalar_field(&Config::iters_c)},
      {"init_iters", scalar_field(&Config::init_iters)},
      {"track_iters", scalar_field(&Config::track_iters)},
      {"map_every", scalar_field(&Config::map_every)},
      {"lr_features", scalar_field(&Config::lr_features)},
      {"lr_decoders", scalar_field(&Config::lr_decoders)},
      {"lr_poses", scalar_field(&Config::lr_poses)},
      {"lr_track", scalar_field(&Config::lr_track)},
      {"adam_beta1", scalar_field(&Config::adam_beta1)},
      {"adam_beta2", scalar_field(&Config::adam_beta2)},
      {"adam_eps", scalar_field(&Config::adam_eps)},
      {"gt_anchor", scalar_field(&Config::gt_anchor)},
      {"depth_scale", scalar_field(&Config::depth_scale)},
      {"assoc_window", scalar_field(&Config::assoc_window)},
      {"fx", scalar_field(&Config::fx)},
      {"fy", scalar_field(&Config::fy)},
      {"cx", scalar_field(&Config::cx)},
      {"cy", scalar_field(&Config::cy)},
      {"seed", scalar_field(&Config::seed)},
  };
  return fields;
}

}  // namespace detail

inline void Config::set(const std::string& key, const std::string& value) {
  const auto& fields = detail::config_fields();
  const auto it = fields.find(key);
  if (it == fields.end()) {
    throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
  }
  it->second.set(*this, key, detail::trim(value));
}

inline std::string Config::to_text() const {
  std::ostringstream out;
  for (const auto& [key, field] : detail::config_fields()) {
    out << key << " = " << field.get(*this) << "\n";
  }
  return out.str();
}

inline void Config::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kInvalidArgument, "config: " + msg);
  };
  if (!(tau1 > 0) || !(tau3 > 0)) fail("tau1 and tau3 must be > 0");
  if (!(tau2 > 0 && tau2 <= 2)) fail("tau2 must lie in (0, 2]");
  if (m_strat < 1 || m_surf < 1 || keyframes_per_map < 1 || map_pixels < 1 ||
      track_pixels < 1 || track_select_pixels < 1) {
    fail("m_strat, m_surf, keyframes_per_map, map_pixels, track_pixels, track_select_pixels "
         "must be >= 1");
  }
  if (geo_voxel.size() != 3) fail("geo_voxel needs exactly three levels");
  for (double v : geo_voxel) if (!(v > 0)) fail("voxel sizes must be > 0");
  if (!(color_voxel > 0)) fail("color_voxel must be > 0");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  for (int h : hidden) if (h < 1) fail("hidden layer sizes must be >= 1");
  if (!(near > 0 && near < far)) fail("need 0 < near < far");
  if (!(strat_far_factor >= 1)) fail("strat_far_factor must be >= 1");
  if (coverage_period < 1 || overlap_grid < 1 || map_every < 1) {
    fail("coverage_period, overlap_grid, map_every must be >= 1");
  }
  if (inpaint_priors < 0 || iters_a < 0 || iters_b < 0 || iters_c < 0 ||
      init_iters < 0 || track_iters < 0) {
    fail("iteration counts must be >= 0");
  }
  if (!(depth_scale > 0) || !(assoc_window > 0)) fail("depth_scale, assoc_window must be > 0");
  if (!(fx > 0 && fy > 0)) fail("focal lengths must be > 0");
  if (!bounds_min.empty() || !bounds_max.empty()) {
    if (bounds_min.size() != 3 || bounds_max.size() != 3) fail("bounds need 3 values");
    for (int i = 0; i < 3; ++i) {
      if (!(bounds_max[i] > bounds_min[i])) fail("bounds_max must exceed bounds_min");
    }
  }
}

inline Config Config::parse(const std::string& text) {
  Config config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  "config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    config.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  config.validate();
  return config;
}

inline Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

}  // namespace nidslam
