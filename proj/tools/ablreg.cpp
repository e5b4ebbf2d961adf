// ablreg command line: calibration, registration stages, synthetic data,
// metrics, the end-to-end pipeline and the session service.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ablreg/calibration.hpp"
#include "ablreg/json_io.hpp"
#include "ablreg/nrrd_io.hpp"
#include "ablreg/pipeline.hpp"
#include "ablreg/service.hpp"
#include "ablreg/synth.hpp"

namespace fs = std::filesystem;
using namespace ablreg;

namespace {

void emit_json(const Json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json_file(out, j);
  }
}

void emit_text(const std::string& s, const std::string& out) {
  if (out.empty()) {
    std::cout << s;
    return;
  }
  std::ofstream f(out);
  if (!f) throw Error("cannot write '" + out + "'");
  f << s;
}

Json arm_result_json(const ArmCalibrationResult& r) {
  return Json{{"chain", r.chain}, {"cost", r.cost}, {"iterations", r.iterations}, {"warnings", r.warnings}};
}

std::vector<RigidTransform3D> zbar_image_poses(const CalibrationSession& s, const DhChain& chain,
                                               std::vector<RigidTransform3D>& end_poses) {
  std::vector<RigidTransform3D> image_poses;
  for (std::size_t i = 0; i < s.readings.size(); ++i) {
    try {
      image_poses.push_back(image_pose_from_zbar(s.zbar_fiducials, s.zbar_observations.at(i)));
      end_poses.push_back(dh_forward(chain, s.readings[i]));
    } catch (const Error&) {
    }
  }
  return image_poses;
}

// --- calibrate ---------------------------------------------------------------------

int calibrate_arm_cmd(const std::string& session_path, const std::string& out) {
  const CalibrationSession s = read_json_file(session_path).get<CalibrationSession>();
  const auto obs = s.arm_observations();
  const ArmCalibrationResult r = calibrate_arm(s.chain, obs);
  for (const std::string& w : r.warnings) std::cerr << "warning: " << w << '\n';
  emit_json(arm_result_json(r), out);
  return 0;
}

int calibrate_probe_cmd(const std::string& session_path, const std::string& chain_path, const std::string& method,
                        bool polish, const std::string& out) {
  const CalibrationSession s = read_json_file(session_path).get<CalibrationSession>();
  DhChain chain = s.chain;
  if (!chain_path.empty()) {
    const Json j = read_json_file(chain_path);
    chain = (j.contains("chain") ? j.at("chain") : j).get<DhChain>();
  }
  std::vector<RigidTransform3D> end_poses;
  const std::vector<RigidTransform3D> image_poses = zbar_image_poses(s, chain, end_poses);
  Json result;
  if (method == "ax-xb") {
    HandEyeOptions opt;
    opt.lm_polish = polish;
    const HandEyeResult r = calibrate_probe(hand_eye_pairs(end_poses, image_poses), opt);
    result = Json{{"matrix", matrix_to_json(r.x)},
                  {"method", method},
                  {"max_residual_ed", r.max_residual_ed},
                  {"max_residual_ga", r.max_residual_ga}};
  } else {
    if (!s.phantom_pose) throw Error("point-based probe calibration needs phantom_pose in the session");
    std::vector<RigidTransform3D> ends;
    std::vector<std::vector<Vec2>> image_points;
    std::vector<std::vector<Vec3>> phantom_points;
    for (std::size_t i = 0; i < s.readings.size(); ++i) {
      std::vector<Vec2> ip;
      std::vector<Vec3> pp;
      for (const ZBarObservation& o : s.zbar_observations.at(i)) {
        for (const ZBarFiducial& f : s.zbar_fiducials) {
          if (f.id != o.fiducial_id) continue;
          try {
            pp.push_back(zbar_locate(f, o));
            ip.push_back(o.p2);
          } catch (const Error&) {
          }
        }
      }
      if (ip.empty()) continue;
      ends.push_back(dh_forward(chain, s.readings[i]));
      image_points.push_back(std::move(ip));
      phantom_points.push_back(std::move(pp));
    }
    const RigidTransform3D x = calibrate_probe_points(ends, image_points, phantom_points, *s.phantom_pose);
    result = Json{{"matrix", matrix_to_json(x)}, {"method", method}};
  }
  emit_json(result, out);
  return 0;
}

int calibrate_verify_cmd(const std::string& session_path, const std::string& out) {
  const CalibrationSession s = read_json_file(session_path).get<CalibrationSession>();
  const SystemCalibration cal = calibrate_system(s);
  const PoseErrorSummary arm_only = verify_calibration(s, cal.arm.chain, RigidTransform3D::identity(), "arm_only");
  const PoseErrorSummary full = verify_calibration(s, cal.arm.chain, cal.probe.x, "arm_probe");
  std::string csv = "method,Tx,Ty,Tz,ED,ED_sd,Rx,Ry,Rz,GA,GA_sd,n\n";
  for (const PoseErrorSummary& p : {arm_only, full}) {
    char line[512];
    std::snprintf(line, sizeof(line), "%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%zu\n", p.label.c_str(),
                  p.mean_translational.x(), p.mean_translational.y(), p.mean_translational.z(), p.ed_mean, p.ed_sd,
                  p.mean_rotational.x(), p.mean_rotational.y(), p.mean_rotational.z(), p.ga_mean, p.ga_sd, p.count);
    csv += line;
  }
  emit_text(csv, out);
  return 0;
}

// --- register ---------------------------------------------------------------------

int register_rigid_cmd(const std::string& source, const std::string& target, const std::string& out,
                       std::uint64_t seed, std::size_t points, double w) {
  CpdConfig cfg;
  cfg.seed = seed;
  cfg.outlier_weight = w;
  cfg.max_points = points;
  const PointCloud src = extract_surface_points(read_nrrd(source), points, seed);
  const PointCloud tgt = extract_surface_points(read_nrrd(target), points, seed + 1);
  const CpdResult r = register_rigid_cpd(src, tgt, cfg);
  emit_json(Json{{"matrix", matrix_to_json(r.transform)}, {"diagnostics", r.diagnostics}}, out);
  return r.diagnostics.converged ? 0 : 1;
}

int register_nonrigid_cmd(const std::string& rigid_path, const std::string& liver, const std::string& workspace,
                          const std::string& edits_path, double spacing, double lambda, const std::string& out_dir) {
  const RigidTransform3D rigid = read_json_file(rigid_path).get<RigidTransform3D>();
  const Volume mask = read_nrrd(liver);
  const OrientedBox ws = workspace.empty() ? mask_bounding_box(mask) : read_json_file(workspace).get<OrientedBox>();
  EditState state;
  state.lambda = lambda;
  state.control_points = generate_control_points(mask, ws, spacing);
  state.warp = fit_control_points(state.control_points, lambda);
  if (!edits_path.empty()) {
    for (const Json& e : read_json_file(edits_path).at("edits")) {
      state = drag_update(state, e.at("id").get<int>(), vec3_from_json(e.at("displacement")));
    }
  }
  fs::create_directories(out_dir);
  write_json_file((fs::path(out_dir) / "control_points.json").string(), Json(state.control_points));
  write_json_file((fs::path(out_dir) / "warp.json").string(), Json(state.warp));
  write_json_file((fs::path(out_dir) / "T_rigid.json").string(), Json(rigid));
  std::cout << state.control_points.movable_count() << " movable, " << state.control_points.anchor_count()
            << " anchor control points\n";
  return 0;
}

int register_s2v_cmd(const std::string& frames, const std::string& volume, const std::string& out, bool warm) {
  const std::string manifest = fs::is_directory(frames) ? (fs::path(frames) / "manifest.json").string() : frames;
  const FrameSequence seq = read_frame_manifest(manifest);
  const std::vector<S2VResult> results = register_sequence(seq.frames, read_nrrd(volume), {}, warm);
  Json arr = Json::array();
  bool ok = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    Json r = results[i];
    r["timestamp"] = seq.frames[i].timestamp;
    arr.push_back(std::move(r));
    ok = ok && results[i].converged && !results[i].failed;
  }
  emit_json(Json{{"frames", arr}}, out);
  return ok ? 0 : 1;
}

// --- synth / metrics ----------------------------------------------------------------

int synth_scene_cmd(std::uint64_t seed, const std::string& out, const std::string& case_name, double deformation) {
  SceneOptions opt;
  opt.deformation_mm = deformation;
  const SyntheticScene scene = synth_scene(seed, opt);
  const std::string config = write_scene_bundle(scene, out, case_name, seed);
  std::cout << config << '\n';
  return 0;
}

int synth_zbar_cmd(std::uint64_t seed, int poses, double noise_mm, double noise_deg, const std::string& out) {
  ZBarSessionOptions opt;
  opt.pose_noise_mm = noise_mm;
  opt.pose_noise_deg = noise_deg;
  const ZBarSession s = synth_zbar_session(seed, default_arm_chain(), poses, opt);
  emit_json(Json(s.session), out);
  return 0;
}

int metrics_cmd(const std::string& case_name, const std::string& us_cl, const std::string& ct_cl,
                const std::string& rigid_path, const std::string& warp_path, const std::string& us_lm,
                const std::string& ct_lm, const std::string& out) {
  const RigidTransform3D rigid =
      rigid_path.empty() ? RigidTransform3D::identity() : read_json_file(rigid_path).get<RigidTransform3D>();
  std::optional<TpsWarp> warp;
  if (!warp_path.empty()) warp = read_json_file(warp_path).get<TpsWarp>();
  const PointMap rigid_only = [rigid](const Vec3& p) { return rigid.apply(p); };
  const PointMap full = [rigid, &warp](const Vec3& p) { return warp ? warp->apply(rigid.apply(p)) : rigid.apply(p); };
  CaseMetrics m;
  m.case_name = case_name;
  const Centerline a = read_json_file(us_cl).get<Centerline>();
  const Centerline b = read_json_file(ct_cl).get<Centerline>();
  m.dcl_rigid = centerline_distance(a.mapped(rigid_only, b.frame), b);
  if (warp) {
    m.dcl_nonrigid = centerline_distance(a.mapped(full, b.frame), b);
    if (m.dcl_rigid.mean > 0.0) m.error_reduced_pct = 100.0 * (1.0 - m.dcl_nonrigid.mean / m.dcl_rigid.mean);
  }
  m.has_dcl = true;
  if (!us_lm.empty() && !ct_lm.empty()) {
    m.tre = landmark_error(read_json_file(us_lm).get<LandmarkSet>(), read_json_file(ct_lm).get<LandmarkSet>(), full);
    m.has_tre = true;
  }
  emit_text(metrics_csv_header() + "\n" + metrics_csv_row(m) + "\n", out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ablreg: 2D ultrasound to CT/MRI registration toolkit"};
  app.require_subcommand(1);
  int code = 0;

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "arm, probe and system calibration");
  cal->require_subcommand(1);
  std::string session_path, out, chain_path, method = "ax-xb";
  bool polish = false;
  auto* cal_arm = cal->add_subcommand("arm", "DH parameter calibration");
  cal_arm->add_option("session", session_path, "calibration session JSON")->required()->check(CLI::ExistingFile);
  cal_arm->add_option("--out", out, "output JSON (stdout when omitted)");
  cal_arm->callback([&] { code = calibrate_arm_cmd(session_path, out); });
  auto* cal_probe = cal->add_subcommand("probe", "hand-eye probe calibration from Z-bar observations");
  cal_probe->add_option("session", session_path, "calibration session JSON")->required()->check(CLI::ExistingFile);
  cal_probe->add_option("--chain", chain_path, "calibrated chain JSON (default: session chain)");
  cal_probe->add_option("--method", method, "ax-xb or points")->check(CLI::IsMember({"ax-xb", "points"}));
  cal_probe->add_flag("--polish", polish, "refine the hand-eye solution with LM");
  cal_probe->add_option("--out", out, "output JSON");
  cal_probe->callback([&] { code = calibrate_probe_cmd(session_path, chain_path, method, polish, out); });
  auto* cal_verify = cal->add_subcommand("verify", "pose error table for arm-only and arm+probe calibration");
  cal_verify->add_option("session", session_path, "calibration session JSON")->required()->check(CLI::ExistingFile);
  cal_verify->add_option("--out", out, "output CSV");
  cal_verify->callback([&] { code = calibrate_verify_cmd(session_path, out); });

  // register
  auto* reg = app.add_subcommand("register", "registration stages");
  reg->require_subcommand(1);
  std::string source, target, rigid_path, liver, workspace, edits, frames, volume, out_dir = ".";
  std::uint64_t seed = 0;
  std::size_t points = 3000;
  double w = 0.1, spacing = 15.0, lambda = 0.0;
  bool no_warm = false;
  auto* reg_rigid = reg->add_subcommand("rigid", "rigid CPD between vessel masks");
  reg_rigid->add_option("--source", source, "US vessel mask (NRRD)")->required()->check(CLI::ExistingFile);
  reg_rigid->add_option("--target", target, "CT/MRI vessel mask (NRRD)")->required()->check(CLI::ExistingFile);
  reg_rigid->add_option("--out", out, "T_rigid JSON");
  reg_rigid->add_option("--seed", seed, "subsampling seed");
  reg_rigid->add_option("--points", points, "surface points per cloud");
  reg_rigid->add_option("--outlier-weight", w, "uniform outlier weight w in [0, 1)");
  reg_rigid->callback([&] { code = register_rigid_cmd(source, target, out, seed, points, w); });
  auto* reg_nr = reg->add_subcommand("nonrigid", "control points and TPS warp from edits");
  reg_nr->add_option("--rigid", rigid_path, "T_rigid JSON")->required()->check(CLI::ExistingFile);
  reg_nr->add_option("--liver", liver, "liver mask (NRRD, CT/MRI frame)")->required()->check(CLI::ExistingFile);
  reg_nr->add_option("--workspace", workspace, "workspace box JSON (default: liver bounding box)");
  reg_nr->add_option("--edits", edits, "edits JSON {\"edits\": [{\"id\", \"displacement\"}]}");
  reg_nr->add_option("--spacing", spacing, "control point spacing, mm");
  reg_nr->add_option("--lambda", lambda, "TPS regularization");
  reg_nr->add_option("--out-dir", out_dir, "output directory");
  reg_nr->callback([&] { code = register_nonrigid_cmd(rigid_path, liver, workspace, edits, spacing, lambda, out_dir); });
  auto* reg_s2v = reg->add_subcommand("s2v", "slice-to-volume registration of a tracked frame sequence");
  reg_s2v->add_option("--frames", frames, "frame directory or manifest")->required()->check(CLI::ExistingPath);
  reg_s2v->add_option("--volume", volume, "3D US volume (NRRD)")->required()->check(CLI::ExistingFile);
  reg_s2v->add_option("--out", out, "poses JSON");
  reg_s2v->add_flag("--no-warm-start", no_warm, "initialize every frame at its tracked pose");
  reg_s2v->callback([&] { code = register_s2v_cmd(frames, volume, out, !no_warm); });

  // synth
  auto* syn = app.add_subcommand("synth", "synthetic data bundles");
  syn->require_subcommand(1);
  std::string case_name = "synthetic";
  double deformation = 8.0, noise_mm = 0.0, noise_deg = 0.0;
  int poses = 30;
  auto* syn_scene = syn->add_subcommand("scene", "volume pair, frames, ground truth and pipeline config");
  syn_scene->add_option("--seed", seed, "generator seed");
  syn_scene->add_option("--out", out_dir, "output directory")->required();
  syn_scene->add_option("--case", case_name, "case name");
  syn_scene->add_option("--deformation", deformation, "maximum TPS displacement on the vessel tree, mm");
  syn_scene->callback([&] { code = synth_scene_cmd(seed, out_dir, case_name, deformation); });
  auto* syn_zbar = syn->add_subcommand("zbar", "Z-bar calibration session");
  syn_zbar->add_option("--seed", seed, "generator seed");
  syn_zbar->add_option("--poses", poses, "number of calibration poses");
  syn_zbar->add_option("--noise-mm", noise_mm, "tracker translation noise sigma, mm");
  syn_zbar->add_option("--noise-deg", noise_deg, "tracker rotation noise sigma, deg");
  syn_zbar->add_option("--out", out, "session JSON");
  syn_zbar->callback([&] { code = synth_zbar_cmd(seed, poses, noise_mm, noise_deg, out); });

  // metrics
  auto* met = app.add_subcommand("metrics", "D_cl and TRE as a metrics CSV row");
  std::string us_cl, ct_cl, warp_path, us_lm, ct_lm;
  met->add_option("--us-centerline", us_cl, "US centreline JSON")->required()->check(CLI::ExistingFile);
  met->add_option("--ctmri-centerline", ct_cl, "CT/MRI centreline JSON")->required()->check(CLI::ExistingFile);
  met->add_option("--rigid", rigid_path, "T_rigid JSON");
  met->add_option("--warp", warp_path, "warp JSON");
  met->add_option("--us-landmarks", us_lm, "US landmarks JSON");
  met->add_option("--ctmri-landmarks", ct_lm, "CT/MRI landmarks JSON");
  met->add_option("--case", case_name, "case name");
  met->add_option("--out", out, "output CSV");
  met->callback([&] { code = metrics_cmd(case_name, us_cl, ct_cl, rigid_path, warp_path, us_lm, ct_lm, out); });

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "run the end-to-end pipeline from a config file");
  std::string config_path;
  pipe->add_option("config", config_path, "pipeline config JSON")->required();
  pipe->callback([&] {
    PipelineConfig cfg;
    try {
      cfg = read_pipeline_config(config_path);
    } catch (const std::exception& e) {
      std::cerr << "config error: " << e.what() << '\n';
      code = 2;
      return;
    }
    const PipelineResult r = run_pipeline(cfg);
    for (const StageReport& s : r.stages) {
      std::cout << s.name << ": " << s.status << (s.message.empty() ? "" : " (" + s.message + ")") << '\n';
    }
    code = r.exit_code;
  });

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP session service");
  std::string data_dir = ".", host = "127.0.0.1";
  int port = service_port_from_env();
  srv->add_option("--data-dir", data_dir, "root for relative input paths")->check(CLI::ExistingDirectory);
  srv->add_option("--host", host, "listen address");
  srv->add_option("--port", port, "listen port (default ABLREG_PORT or 8750)");
  srv->callback([&] {
    std::cerr << "listening on " << host << ":" << port << '\n';
    code = serve(data_dir, host, port);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return code;
}
