// Command-line front end: synth, preprocess, run, render, eval-traj, eval-recon, gradcheck.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nidslam/nidslam.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nidslam;

namespace {

struct Common {
  std::string config_path;
  std::string input;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string mode = "interleaved";
};

void add_common(CLI::App* cmd, Common& c, bool with_mode = false) {
  cmd->add_option("--config", c.config_path, "Config file (key = value lines)");
  cmd->add_option("--input", c.input, "Input path");
  cmd->add_option("--output", c.output, "Output path");
  cmd->add_option("--seed", c.seed, "Random seed (overrides config)");
  cmd->add_option("--set", c.overrides, "Config override key=value (repeatable)")
      ->allow_extra_args(false);
  if (with_mode) {
    cmd->add_option("--mode", c.mode, "interleaved | concurrent")
        ->check(CLI::IsMember({"interleaved", "concurrent"}));
  }
}

Config make_config(const Common& c) {
  Config cfg = c.config_path.empty() ? Config{} : Config::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "override '" + kv + "' is not key=value");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(ErrorCode::kInvalidArgument, std::string(flag) + " is required");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create '" + dir + "': " + ec.message());
}

void emit(const json& j) { std::cout << j.dump() << std::endl; }

std::vector<Vec3> read_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::vector<Vec3> pts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream s(line);
    Vec3 p;
    if (!(s >> p.x() >> p.y() >> p.z())) {
      throw Error(ErrorCode::kFormat, "bad point line in '" + path + "': " + line);
    }
    pts.push_back(p);
  }
  return pts;
}

void write_cloud(const std::vector<Vec3>& pts, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  for (const Vec3& p : pts) std::fprintf(f, "%.6f %.6f %.6f\n", p.x(), p.y(), p.z());
  std::fclose(f);
}

std::string file_name(const std::string& path) { return fs::path(path).filename().string(); }

// synth: writes a synthetic sequence plus a point sample of its static surfaces.
int cmd_synth(const Common& c, const std::string& preset, std::size_t frames, double spacing) {
  require(c.output, "--output");
  const Config cfg = make_config(c);
  const synth::Scene scene = synth::preset(preset);
  const CameraIntrinsics intr = synth::default_intrinsics();
  synth::generate_dataset(scene, intr, frames, c.output, cfg.depth_scale);
  const auto cloud = synth::surface_points(scene, spacing);
  write_cloud(cloud, (fs::path(c.output) / "surface.xyz").string());
  emit({{"command", "synth"}, {"preset", preset}, {"frames", frames}, {"output", c.output},
        {"surface_points", cloud.size()}});
  return 0;
}

// preprocess: dynamic removal on every frame with poses from a trajectory file or the
// sequence ground truth.
int cmd_preprocess(const Common& c, const std::string& poses_path) {
  require(c.input, "--input");
  require(c.output, "--output");
  const Config cfg = make_config(c);
  const SequenceManifest m = load_sequence(c.input, cfg);
  if (m.empty()) throw Error(ErrorCode::kInsufficientData, "sequence has no frames");

  std::vector<std::optional<Pose>> poses(m.size());
  if (!poses_path.empty()) {
    const auto traj = read_trajectory(poses_path);
    std::vector<double> a, b;
    for (const auto& e : m.entries) a.push_back(e.timestamp);
    for (const auto& p : traj) b.push_back(p.timestamp);
    for (const auto& [i, j] : associate(a, b, cfg.assoc_window)) poses[i] = traj[j].pose;
  } else {
    for (std::size_t i = 0; i < m.size(); ++i) poses[i] = m.entries[i].ground_truth;
  }

  for (const char* sub : {"depth_revised", "mask_refined", "rgb_inpainted", "depth_inpainted",
                          "inpaint_valid"}) {
    ensure_dir((fs::path(c.output) / sub).string());
  }
  const fs::path out(c.output);
  const std::size_t priors = static_cast<std::size_t>(cfg.inpaint_priors);
  std::vector<Frame> history;  // recent frames with poses, oldest first
  std::vector<Pose> history_poses;
  std::size_t inpainted = 0, masked = 0;
  const Frame first = load_frame(m, 0);
  const CameraIntrinsics intr = manifest_intrinsics(m, first);
  for (std::size_t i = 0; i < m.size(); ++i) {
    Frame frame = i == 0 ? first : load_frame(m, i);
    const std::string name = file_name(m.entries[i].rgb_path);
    const DepthImage revised = revise_depth(frame.depth, cfg.tau1);
    const RefinedMask mask = frame.mask ? refine_mask(*frame.mask, revised)
                                        : RefinedMask::empty(frame.width(), frame.height());
    png::write_depth16((out / "depth_revised" / name).string(), revised, m.depth_scale);
    png::write_mask((out / "mask_refined" / name).string(), mask.bitmap);
    masked += count_set(mask.bitmap);

    Frame result = frame;
    result.mask = mask.bitmap;
    if (poses[i] && mask.any()) {
      std::vector<InpaintSource> sources;
      for (std::size_t k = 0; k < history.size(); ++k) {
        sources.push_back({&history[k], &history_poses[k],
                           history[k].mask ? &*history[k].mask : nullptr});
      }
      result = inpaint_background(result, mask, sources, *poses[i], intr);
    }
    const MaskImage valid = result.inpaint_valid.value_or(MaskImage(frame.width(), frame.height(), 0));
    inpainted += count_set(valid);
    png::write_rgb8((out / "rgb_inpainted" / name).string(), result.rgb);
    png::write_depth16((out / "depth_inpainted" / name).string(), result.depth, m.depth_scale);
    png::write_mask((out / "inpaint_valid" / name).string(), valid);

    if (poses[i] && priors > 0) {
      frame.mask = mask.bitmap;
      history.push_back(std::move(frame));
      history_poses.push_back(*poses[i]);
      if (history.size() > priors) {
        history.erase(history.begin());
        history_poses.erase(history_poses.begin());
      }
    }
  }
  emit({{"command", "preprocess"}, {"frames", m.size()}, {"masked_pixels", masked},
        {"inpainted_pixels", inpainted}, {"output", c.output}});
  return 0;
}

// run: full pipeline; writes trajectory.txt, map.nids and per-frame reports.jsonl.
int cmd_run(const Common& c) {
  require(c.input, "--input");
  require(c.output, "--output");
  const Config cfg = make_config(c);
  const SequenceManifest m = load_sequence(c.input, cfg);
  if (m.empty()) throw Error(ErrorCode::kInsufficientData, "sequence has no frames");
  ensure_dir(c.output);
  const fs::path out(c.output);
  std::ofstream reports(out / "reports.jsonl");
  if (!reports) throw Error(ErrorCode::kIo, "cannot write reports.jsonl");

  const auto t0 = std::chrono::steady_clock::now();
  const SlamMode mode = c.mode == "concurrent" ? SlamMode::kConcurrent : SlamMode::kInterleaved;
  std::size_t lost = 0;
  const SlamResult res = run_slam(SlamInput::from_manifest(m), cfg, mode, [&](const FrameReport& r) {
    lost += r.tracking_lost ? 1 : 0;
    reports << json{{"frame", r.index},
                    {"timestamp", r.timestamp},
                    {"tracking_lost", r.tracking_lost},
                    {"tracking_l_g", r.tracking.geometric},
                    {"tracking_l_gvar", r.tracking.geometric_var},
                    {"dynamic_ratio", r.dynamic_ratio},
                    {"overlap_ratio", r.overlap_ratio},
                    {"keyframe", r.keyframe},
                    {"mapped", r.mapped},
                    {"mapping_l_g", r.mapping.geometric},
                    {"mapping_l_p", r.mapping.photometric},
                    {"inpainted_pixels", r.inpainted_pixels}}
                   .dump()
            << '\n';
  });
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_trajectory(res.trajectory, (out / "trajectory.txt").string());
  save_checkpoint(res.scene, (out / "map.nids").string());

  json j{{"command", "run"},         {"frames", res.trajectory.size()},
         {"keyframes", res.keyframes.size()}, {"tracking_lost", lost},
         {"seconds", seconds},        {"mode", c.mode},
         {"trajectory", (out / "trajectory.txt").string()},
         {"checkpoint", (out / "map.nids").string()}};
  if (m.has_ground_truth()) {
    std::vector<StampedPose> gt;
    for (const auto& e : m.entries) gt.push_back({e.timestamp, *e.ground_truth});
    j["ate_rmse"] = ate_rmse(pair_trajectories(res.trajectory, gt));
  }
  emit(j);
  return 0;
}

// render: RGB-D images of a checkpoint at each pose of a trajectory.
int cmd_render(const Common& c, const std::string& poses_path, const std::string& intr_from,
               int stride) {
  require(c.input, "--input");
  require(c.output, "--output");
  require(poses_path, "--poses");
  const Config cfg = make_config(c);
  const SceneParams scene = load_checkpoint(c.input);
  CameraIntrinsics intr = cfg.intrinsics(640, 480);
  if (!intr_from.empty()) {
    const SequenceManifest m = load_sequence(intr_from, cfg);
    if (m.empty()) throw Error(ErrorCode::kInsufficientData, "sequence has no frames");
    intr = manifest_intrinsics(m, load_frame(m, 0));
  }
  const auto traj = read_trajectory(poses_path);
  ensure_dir(c.output);
  const fs::path out(c.output);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const RenderedImage img = render_image(traj[i].pose, intr, scene, stride, cfg);
    char name[64];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    ensure_dir((out / "rgb").string());
    ensure_dir((out / "depth").string());
    png::write_rgb8((out / "rgb" / name).string(), img.rgb);
    png::write_depth16((out / "depth" / name).string(), img.depth, cfg.depth_scale);
  }
  emit({{"command", "render"}, {"frames", traj.size()}, {"output", c.output}});
  return 0;
}

// eval-traj: ATE and RPE of an estimate against a reference trajectory.
int cmd_eval_traj(const Common& c, const std::string& reference, std::size_t delta) {
  require(c.input, "--input");
  require(reference, "--reference");
  const auto est = read_trajectory(c.input);
  const auto ref = read_trajectory(reference);
  const TrajectoryPairing pairing = pair_trajectories(est, ref);
  json j{{"command", "eval-traj"}, {"pairs", pairing.estimate.size()},
         {"ate_rmse", ate_rmse(pairing)}};
  if (pairing.estimate.size() > delta) {
    const RpeResult r = rpe(pairing, delta);
    j["rpe_translation_rmse"] = r.translation_rmse;
    j["rpe_rotation_rmse_deg"] = r.rotation_rmse;
  }
  emit(j);
  return 0;
}

// eval-recon: accuracy / completion of the extracted surface against a reference cloud.
int cmd_eval_recon(const Common& c, const std::string& reference, double pitch,
                   std::size_t samples) {
  require(c.input, "--input");
  require(reference, "--reference");
  const Config cfg = make_config(c);
  const SceneParams scene = load_checkpoint(c.input);
  const CloudMetrics r =
      reconstruction_metrics(scene, read_cloud(reference), pitch, samples, cfg.seed);
  if (r.failed) throw Error(ErrorCode::kEmptySurface, "eval-recon: extracted surface is empty");
  emit({{"command", "eval-recon"}, {"accuracy_cm", r.accuracy_cm},
        {"completion_cm", r.completion_cm}, {"completion_ratio", r.completion_ratio}});
  return 0;
}

int cmd_gradcheck(const Common& c, std::size_t scenes) {
  make_config(c);  // rejects malformed overrides even though the toy problems ignore them
  const std::uint64_t seed = c.seed.value_or(0);
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport r = run_gradcheck(seed, scenes);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  emit({{"command", "gradcheck"}, {"seed", seed}, {"scenes", r.scenes}, {"entries", r.entries},
        {"max_relative_error", r.max_relative_error},
        {"max_absolute_error", r.max_absolute_error}, {"failures", r.failures},
        {"worst_block", r.worst_block}, {"seconds", seconds}});
  if (!r.passed()) {
    std::cerr << "gradcheck: " << r.failures << " entries out of tolerance" << std::endl;
    return 1;
  }
  return 0;
}

std::string exit_code_help() {
  std::string s = "Exit status:\n  0  success\n  1  unexpected internal error\n";
  for (int code = 2; code <= 13; ++code) {
    char line[96];
    std::snprintf(line, sizeof(line), "  %-2d %s\n", code,
                  error_code_name(static_cast<ErrorCode>(code)));
    s += line;
  }
  s += "Usage errors (unknown flag or subcommand) exit with 2.";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural implicit RGB-D SLAM with dynamic-object removal"};
  app.require_subcommand(1);
  app.footer(exit_code_help());
  app.failure_message(CLI::FailureMessage::help);

  Common common;
  std::string preset = "static", poses, reference, intr_from;
  std::size_t frames = 20, samples = 100000, scenes = 10, delta = 1;
  double spacing = 0.02, pitch = 0.02;
  int stride = 1;

  auto* synth = app.add_subcommand("synth", "Write a synthetic RGB-D sequence");
  add_common(synth, common);
  synth->add_option("--preset", preset, "static | dynamic")
      ->check(CLI::IsMember({"static", "dynamic"}));
  synth->add_option("--frames", frames, "Number of frames");
  synth->add_option("--spacing", spacing, "Surface sample spacing for surface.xyz (m)");

  auto* pre = app.add_subcommand("preprocess", "Depth revision, mask refinement, inpainting");
  add_common(pre, common);
  pre->add_option("--poses", poses, "Trajectory used for inpainting (default: ground truth)");

  auto* run = app.add_subcommand("run", "Track and map a sequence");
  add_common(run, common, true);

  auto* render = app.add_subcommand("render", "Render a checkpoint along a trajectory");
  add_common(render, common);
  render->add_option("--poses", poses, "Trajectory file")->required();
  render->add_option("--sequence", intr_from, "Sequence whose intrinsics to use");
  render->add_option("--stride", stride, "Render every n-th pixel")->check(CLI::PositiveNumber);

  auto* traj = app.add_subcommand("eval-traj", "ATE / RPE of a trajectory");
  add_common(traj, common);
  traj->add_option("--reference", reference, "Reference trajectory")->required();
  traj->add_option("--delta", delta, "RPE frame offset")->check(CLI::PositiveNumber);

  auto* recon = app.add_subcommand("eval-recon", "Reconstruction accuracy / completion");
  add_common(recon, common);
  recon->add_option("--reference", reference, "Reference point cloud (x y z per line)")
      ->required();
  recon->add_option("--pitch", pitch, "Surface extraction pitch (m)");
  recon->add_option("--samples", samples, "Points sampled on the extracted surface");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_common(grad, common);
  grad->add_option("--scenes", scenes, "Number of random toy scenes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e);
    return status == 0 ? 0 : static_cast<int>(ErrorCode::kInvalidArgument);
  }

  try {
    if (*synth) return cmd_synth(common, preset, frames, spacing);
    if (*pre) return cmd_preprocess(common, poses);
    if (*run) return cmd_run(common);
    if (*render) return cmd_render(common, poses, intr_from, stride);
    if (*traj) return cmd_eval_traj(common, reference, delta);
    if (*recon) return cmd_eval_recon(common, reference, pitch, samples);
    if (*grad) return cmd_gradcheck(common, scenes);
  } catch (const Error& e) {
    std::cerr << "error (" << error_code_name(e.code()) << "): " << e.what() << std::endl;
    return e.exit_status();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}
