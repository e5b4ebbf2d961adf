#include "ablreg/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "ablreg/nrrd_io.hpp"
#include "ablreg/png_io.hpp"

namespace fs = std::filesystem;

namespace ablreg {

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw Error("config: '" + section + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw Error("config: unknown key '" + key + "' in '" + section + "'");
  }
}

std::string resolve_path(const std::string& p, const std::string& base_dir) {
  if (p.empty() || fs::path(p).is_absolute() || base_dir.empty()) return p;
  return (fs::path(base_dir) / p).string();
}

Image2D read_frame_image(const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".png") return read_png_gray(path);
  return read_nrrd_image(path);
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// --- frame manifests and ground truth ---------------------------------------------

FrameSequence read_frame_manifest(const std::string& path) {
  const Json j = read_json_file(path);
  const std::string base = fs::path(path).parent_path().string();
  FrameSequence seq;
  for (const Json& e : j.at("frames")) {
    const Image2D image = read_frame_image(resolve_path(e.at("image").get<std::string>(), base));
    SlicePose pose;
    pose.transform = matrix_from_json(e.at("tracked_pose"));
    pose.nu = image.width;
    pose.nv = image.height;
    pose.width_mm = e.value("width_mm", image.spacing_x * (image.width - 1));
    pose.height_mm = e.value("height_mm", image.spacing_y * (image.height - 1));
    seq.frames.push_back(frame_from_pose(image, pose, e.value("timestamp", 0.0)));
    std::vector<FrameLandmark> lms;
    if (e.contains("landmarks")) {
      for (const Json& l : e.at("landmarks")) lms.push_back({l.at("name").get<std::string>(), vec2_from_json(l.at("image_point"))});
    }
    seq.landmarks.push_back(std::move(lms));
  }
  return seq;
}

void write_frame_manifest(const std::string& dir, const FrameSequence& seq) {
  fs::create_directories(dir);
  Json frames = Json::array();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const TrackedFrame& f = seq.frames[i];
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.nrrd", i);
    write_nrrd_image(f.image, (fs::path(dir) / name).string());
    Json e{{"image", name},
           {"timestamp", f.timestamp},
           {"tracked_pose", matrix_to_json(f.tracked_pose.transform)},
           {"width_mm", f.tracked_pose.width_mm},
           {"height_mm", f.tracked_pose.height_mm}};
    if (i < seq.landmarks.size() && !seq.landmarks[i].empty()) {
      e["landmarks"] = Json::array();
      for (const FrameLandmark& l : seq.landmarks[i]) e["landmarks"].push_back({{"name", l.name}, {"image_point", vec_to_json(l.image_point)}});
    }
    frames.push_back(std::move(e));
  }
  write_json_file((fs::path(dir) / "manifest.json").string(), Json{{"frames", frames}});
}

Json ground_truth_to_json(const GroundTruthMapping& truth) {
  return Json{{"rigid", truth.rigid}, {"warp", truth.warp ? Json(*truth.warp) : Json(nullptr)}};
}

GroundTruthMapping ground_truth_from_json(const Json& j) {
  GroundTruthMapping t;
  t.rigid = j.at("rigid").get<RigidTransform3D>();
  if (j.contains("warp") && !j["warp"].is_null()) t.warp = j["warp"].get<TpsWarp>();
  return t;
}

// --- configuration ------------------------------------------------------------------

namespace {

PipelineConfig parse_config(const Json& j, const std::string& base_dir) {
  if (!j.is_object()) throw Error("config: top level must be an object");
  if (!j.contains("inputs")) throw Error("config: missing 'inputs'");
  check_keys(j, {"case", "seed", "output_dir", "inputs", "stages", "rigid", "nonrigid", "s2v", "views"}, "top level");
  PipelineConfig c;
  c.case_name = j.value("case", c.case_name);
  c.seed = j.value("seed", std::uint64_t{0});
  c.output_dir = resolve_path(j.value("output_dir", c.output_dir), base_dir);
  c.session.cpd.seed = c.seed;

  const Json& in = j.at("inputs");
  check_keys(in, {"ctmri", "us3d", "us_vessels", "ctmri_vessels", "liver_mask", "us_centerline", "ctmri_centerline",
                  "us_landmarks", "ctmri_landmarks", "frames", "ground_truth"},
             "inputs");
  c.inputs = session_inputs_from_json(in, base_dir);
  if (in.contains("frames") && !in["frames"].is_null()) c.frames = resolve_path(in["frames"].get<std::string>(), base_dir);
  if (in.contains("ground_truth") && !in["ground_truth"].is_null()) {
    c.ground_truth = resolve_path(in["ground_truth"].get<std::string>(), base_dir);
  }

  if (j.contains("stages")) {
    const Json& s = j["stages"];
    check_keys(s, {"rigid", "nonrigid", "s2v"}, "stages");
    c.run_rigid = s.value("rigid", true);
    c.run_nonrigid = s.value("nonrigid", true);
    c.run_s2v = s.value("s2v", true);
  }
  if (j.contains("rigid")) {
    const Json& r = j["rigid"];
    check_keys(r, {"surface_points", "outlier_weight", "max_iterations", "tolerance", "sigma2_init", "max_points"}, "rigid");
    c.session.surface_points = r.value("surface_points", c.session.surface_points);
    c.session.cpd.outlier_weight = r.value("outlier_weight", c.session.cpd.outlier_weight);
    c.session.cpd.max_iterations = r.value("max_iterations", c.session.cpd.max_iterations);
    c.session.cpd.tolerance = r.value("tolerance", c.session.cpd.tolerance);
    c.session.cpd.max_points = r.value("max_points", c.session.cpd.max_points);
    if (r.contains("sigma2_init") && !r["sigma2_init"].is_null()) c.session.cpd.sigma2_init = r["sigma2_init"].get<double>();
    c.session.cpd.validate();
  }
  if (j.contains("nonrigid")) {
    const Json& n = j["nonrigid"];
    check_keys(n, {"workspace", "spacing", "lambda", "edits"}, "nonrigid");
    if (n.contains("workspace") && !n["workspace"].is_null()) c.session.workspace = n["workspace"].get<OrientedBox>();
    c.session.control_spacing = n.value("spacing", c.session.control_spacing);
    c.session.lambda = n.value("lambda", c.session.lambda);
    if (!(c.session.control_spacing > 0.0)) throw Error("config: nonrigid.spacing must be > 0");
    if (!(c.session.lambda >= 0.0)) throw Error("config: nonrigid.lambda must be >= 0");
    if (n.contains("edits") && !n["edits"].is_null()) {
      const std::string e = n["edits"].get<std::string>();
      c.edits = e == "oracle" ? e : resolve_path(e, base_dir);
    }
  }
  if (j.contains("s2v")) {
    const Json& s = j["s2v"];
    check_keys(s, {"warm_start", "levels", "initial_step_mm", "initial_step_deg", "final_step_mm", "golden_iterations",
                   "max_sweeps_per_level", "min_overlap"},
               "s2v");
    c.warm_start = s.value("warm_start", c.warm_start);
    c.s2v.levels = s.value("levels", c.s2v.levels);
    c.s2v.initial_step_mm = s.value("initial_step_mm", c.s2v.initial_step_mm);
    c.s2v.initial_step_deg = s.value("initial_step_deg", c.s2v.initial_step_deg);
    c.s2v.final_step_mm = s.value("final_step_mm", c.s2v.final_step_mm);
    c.s2v.golden_iterations = s.value("golden_iterations", c.s2v.golden_iterations);
    c.s2v.max_sweeps_per_level = s.value("max_sweeps_per_level", c.s2v.max_sweeps_per_level);
    c.s2v.min_overlap = s.value("min_overlap", c.s2v.min_overlap);
  }
  if (j.contains("views")) {
    const Json& v = j["views"];
    check_keys(v, {"write", "clip_depth"}, "views");
    c.write_views = v.value("write", c.write_views);
    c.clip_depth = v.value("clip_depth", c.clip_depth);
    if (!(c.clip_depth >= 0.0)) throw Error("config: views.clip_depth must be >= 0");
  }
  if (c.edits == "oracle" && c.ground_truth.empty()) throw Error("config: oracle edits need inputs.ground_truth");
  return c;
}

}  // namespace

PipelineConfig pipeline_config_from_json(const Json& j, const std::string& base_dir) {
  try {
    return parse_config(j, base_dir);
  } catch (const Json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
}

PipelineConfig read_pipeline_config(const std::string& path) {
  return pipeline_config_from_json(read_json_file(path), fs::path(path).parent_path().string());
}

// --- metrics table ------------------------------------------------------------------

std::string metrics_csv_header() {
  return "case,dcl_rigid_mean,dcl_rigid_sd,dcl_nonrigid_mean,dcl_nonrigid_sd,error_reduced_pct,tre_mean,tre_sd,"
         "ld_rigid_mean,ld_rigid_sd,ld_nonrigid_mean,ld_nonrigid_sd,ld_max,n_frames,n_landmarks";
}

std::string metrics_csv_row(const CaseMetrics& m) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto mean = [&](bool has, const DistanceStats& s) { return fmt(has ? s.mean : nan); };
  const auto sd = [&](bool has, const DistanceStats& s) { return fmt(has ? s.sd : nan); };
  const bool has_nonrigid = m.has_dcl && !m.dcl_nonrigid.values.empty();
  const bool has_ld_nonrigid = m.has_ld && !m.ld_nonrigid.values.empty();
  std::string row = m.case_name;
  for (const std::string& v :
       {mean(m.has_dcl, m.dcl_rigid), sd(m.has_dcl, m.dcl_rigid), mean(has_nonrigid, m.dcl_nonrigid),
        sd(has_nonrigid, m.dcl_nonrigid), fmt(m.error_reduced_pct), mean(m.has_tre, m.tre), sd(m.has_tre, m.tre),
        mean(m.has_ld, m.ld_rigid), sd(m.has_ld, m.ld_rigid), mean(has_ld_nonrigid, m.ld_nonrigid),
        sd(has_ld_nonrigid, m.ld_nonrigid),
        fmt(has_ld_nonrigid ? m.ld_nonrigid.max : (m.has_ld ? m.ld_rigid.max : nan)), std::to_string(m.n_frames),
        std::to_string(m.n_landmarks)}) {
    row += "," + v;
  }
  return row;
}

// --- run ------------------------------------------------------------------------------

std::vector<std::pair<int, Vec3>> oracle_edits(const ControlPointSet& points, const RigidTransform3D& rigid,
                                               const GroundTruthMapping& truth) {
  const RigidTransform3D rigid_inv = inverse(rigid);
  std::vector<std::pair<int, Vec3>> out;
  for (const ControlPoint& p : points.points) {
    if (p.role != ControlRole::movable) continue;
    out.emplace_back(p.id, truth.apply(rigid_inv.apply(p.position)) - p.position);
  }
  return out;
}

namespace {

std::vector<std::pair<int, Vec3>> read_edits_file(const std::string& path) {
  const Json j = read_json_file(path);
  std::vector<std::pair<int, Vec3>> out;
  for (const Json& e : j.at("edits")) out.emplace_back(e.at("id").get<int>(), vec3_from_json(e.at("displacement")));
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << s;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config) {
  PipelineResult result;
  result.metrics.case_name = config.case_name;
  const fs::path out_dir = config.output_dir;
  fs::create_directories(out_dir);
  bool ok = true;

  const auto report = [&](const std::string& name, const std::string& status, const std::string& msg, double secs) {
    result.stages.push_back({name, status, msg, secs});
    if (status != "ok" && status != "skipped") ok = false;
  };

  // load
  auto t0 = std::chrono::steady_clock::now();
  std::unique_ptr<Session> session;
  std::optional<FrameSequence> frames;
  std::optional<GroundTruthMapping> truth;
  try {
    session = std::make_unique<Session>(config.case_name, load_session_data(config.inputs), config.session);
    if (config.run_s2v) {
      if (config.frames.empty()) throw Error("s2v stage needs inputs.frames");
      if (!session->data().us3d) throw Error("s2v stage needs inputs.us3d");
    }
    if (!config.frames.empty()) frames = read_frame_manifest(config.frames);
    if (!config.ground_truth.empty()) truth = ground_truth_from_json(read_json_file(config.ground_truth));
    report("load", "ok", "", seconds_since(t0));
  } catch (const std::exception& e) {
    report("load", "failed", e.what(), seconds_since(t0));
  }

  // rigid
  if (ok && config.run_rigid) {
    t0 = std::chrono::steady_clock::now();
    try {
      const RigidStageResult r = session->register_rigid();
      result.rigid = r.transform;
      write_json_file((out_dir / "T_rigid.json").string(),
                      Json{{"matrix", matrix_to_json(r.transform)},
                           {"diagnostics", r.diagnostics},
                           {"source_points", r.source_points},
                           {"target_points", r.target_points}});
      report("rigid", r.diagnostics.converged ? "ok" : "not_converged", "", seconds_since(t0));
    } catch (const std::exception& e) {
      report("rigid", "failed", e.what(), seconds_since(t0));
    }
  } else if (ok) {
    session->set_rigid(RigidTransform3D::identity());
    result.rigid = RigidTransform3D::identity();
    report("rigid", "skipped", "identity used", 0.0);
  } else {
    report("rigid", "not_started", "", 0.0);
  }

  // nonrigid
  if (ok && config.run_nonrigid) {
    t0 = std::chrono::steady_clock::now();
    try {
      std::vector<std::pair<int, Vec3>> edits;
      if (config.edits == "oracle") {
        edits = oracle_edits(session->control_points(), session->rigid(), *truth);
      } else if (!config.edits.empty()) {
        edits = read_edits_file(config.edits);
      }
      if (!edits.empty()) session->apply_edits(edits);
      result.warp = session->warp();
      write_json_file((out_dir / "control_points.json").string(), Json(session->control_points()));
      write_json_file((out_dir / "warp.json").string(), Json(*result.warp));
      Json audit = Json::array();
      for (const AuditEntry& e : session->audit_log()) {
        audit.push_back({{"sequence", e.sequence}, {"id", e.point_id}, {"displacement", vec_to_json(e.displacement)}});
      }
      write_json_file((out_dir / "edits_applied.json").string(), Json{{"edits", audit}});
      report("nonrigid", "ok", std::to_string(edits.size()) + " edits", seconds_since(t0));
    } catch (const std::exception& e) {
      report("nonrigid", "failed", e.what(), seconds_since(t0));
    }
  } else {
    report("nonrigid", ok ? "skipped" : "not_started", "", 0.0);
  }

  // s2v
  if (ok && config.run_s2v) {
    t0 = std::chrono::steady_clock::now();
    try {
      result.s2v = register_sequence(frames->frames, *session->data().us3d, config.s2v, config.warm_start);
      Json poses = Json::array();
      bool all_converged = true;
      for (std::size_t i = 0; i < result.s2v.size(); ++i) {
        Json r = result.s2v[i];
        r["timestamp"] = frames->frames[i].timestamp;
        poses.push_back(std::move(r));
        all_converged = all_converged && result.s2v[i].converged && !result.s2v[i].failed;
      }
      write_json_file((out_dir / "poses.json").string(), Json{{"frames", poses}});
      report("s2v", all_converged ? "ok" : "not_converged", "", seconds_since(t0));
    } catch (const std::exception& e) {
      report("s2v", "failed", e.what(), seconds_since(t0));
    }
  } else {
    report("s2v", ok ? "skipped" : "not_started", "", 0.0);
  }

  // metrics and views need at least the rigid result
  if (session && session->rigid_done()) {
    t0 = std::chrono::steady_clock::now();
    try {
      CaseMetrics& m = result.metrics;
      const SessionData& d = session->data();
      const RigidTransform3D t = session->rigid();
      const std::optional<TpsWarp> warp = result.warp;
      const PointMap rigid_only = [t](const Vec3& p) { return t.apply(p); };
      const PointMap full = [t, &warp](const Vec3& p) { return warp ? warp->apply(t.apply(p)) : t.apply(p); };
      if (d.us_centerline && d.ctmri_centerline) {
        const std::string frame = d.ctmri_centerline->frame;
        m.dcl_rigid = centerline_distance(d.us_centerline->mapped(rigid_only, frame), *d.ctmri_centerline);
        if (warp) {
          m.dcl_nonrigid = centerline_distance(d.us_centerline->mapped(full, frame), *d.ctmri_centerline);
          if (m.dcl_rigid.mean > 0.0) m.error_reduced_pct = 100.0 * (1.0 - m.dcl_nonrigid.mean / m.dcl_rigid.mean);
        }
        m.has_dcl = true;
      }
      if (d.us_landmarks && d.ctmri_landmarks) {
        m.tre = landmark_error(*d.us_landmarks, *d.ctmri_landmarks, full);
        m.has_tre = true;
      }
      if (frames && d.ctmri_landmarks) {
        std::vector<double> ld_r, ld_n;
        for (std::size_t i = 0; i < frames->frames.size(); ++i) {
          const SlicePose& pose = i < result.s2v.size() ? result.s2v[i].refined_pose : frames->frames[i].tracked_pose;
          for (const FrameLandmark& l : frames->landmarks[i]) {
            const auto it = d.ctmri_landmarks->points.find(l.name);
            if (it == d.ctmri_landmarks->points.end()) continue;
            const Vec3 p_us = pose.transform.apply(Vec3(l.image_point.x(), l.image_point.y(), 0.0));
            ld_r.push_back((rigid_only(p_us) - it->second).norm());
            if (warp) ld_n.push_back((full(p_us) - it->second).norm());
          }
        }
        m.n_frames = frames->frames.size();
        m.n_landmarks = ld_r.size();
        if (!ld_r.empty()) {
          m.ld_rigid = summarize_distances(ld_r);
          if (!ld_n.empty()) m.ld_nonrigid = summarize_distances(ld_n);
          m.has_ld = true;
        }
      }
      write_text(out_dir / "metrics.csv", metrics_csv_header() + "\n" + metrics_csv_row(m) + "\n");

      if (config.write_views) {
        const fs::path views = out_dir / "views";
        fs::create_directories(views);
        const auto [lo, hi] = d.ctmri.geometry.world_bounds();
        const Vec3 mid = 0.5 * (lo + hi);
        const std::pair<OrthogonalPlane, double> planes[] = {
            {OrthogonalPlane::axial, mid.z()}, {OrthogonalPlane::sagittal, mid.x()}, {OrthogonalPlane::coronal, mid.y()}};
        const char* names[] = {"axial", "sagittal", "coronal"};
        for (int p = 0; p < 3; ++p) {
          write_text(views / (std::string(names[p]) + ".png"),
                     session->slice_png(planes[p].first, planes[p].second, config.clip_depth, BlendMode::alpha));
        }
        if (frames) {
          FusedViewOptions opt;
          const auto [vlo, vhi] = std::minmax_element(d.ctmri.scalars.begin(), d.ctmri.scalars.end());
          opt.window_lo = *vlo;
          opt.window_hi = *vhi > *vlo ? *vhi : *vlo + 1.0f;
          for (std::size_t i = 0; i < frames->frames.size(); ++i) {
            S2VResult r;
            r.refined_pose = i < result.s2v.size() ? result.s2v[i].refined_pose : frames->frames[i].tracked_pose;
            const FusedView v = mpr_chain(r, frames->frames[i], t, warp, d.ctmri, opt);
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%03zu.png", i);
            write_text(views / name, encode_png(v.composite_rgba8(), v.base.image.width, v.base.image.height, 4));
          }
        }
      }
      report("metrics", "ok", "", seconds_since(t0));
    } catch (const std::exception& e) {
      report("metrics", "failed", e.what(), seconds_since(t0));
    }
  }

  result.exit_code = ok ? 0 : 1;
  Json stages = Json::array();
  for (const StageReport& s : result.stages) {
    stages.push_back({{"stage", s.name}, {"status", s.status}, {"message", s.message}, {"seconds", s.seconds}});
  }
  write_json_file((out_dir / "summary.json").string(),
                  Json{{"case", config.case_name}, {"exit_code", result.exit_code}, {"stages", stages}});
  return result;
}

// --- synthetic bundles ------------------------------------------------------------------

std::string write_scene_bundle(const SyntheticScene& scene, const std::string& dir, const std::string& case_name,
                               std::uint64_t seed) {
  const fs::path root = dir;
  fs::create_directories(root);
  const MultimodalPair& p = scene.pair;
  write_nrrd(p.fixed_volume, (root / "ctmri.nrrd").string());
  write_nrrd(p.moving_volume, (root / "us3d.nrrd").string());
  write_nrrd(p.moving_mask, (root / "us_vessels.nrrd").string(), NrrdEncoding::gzip);
  write_nrrd(p.fixed_mask, (root / "ctmri_vessels.nrrd").string(), NrrdEncoding::gzip);
  write_nrrd(p.liver_mask, (root / "liver_mask.nrrd").string(), NrrdEncoding::gzip);
  write_json_file((root / "us_centerline.json").string(), Json(p.moving_centerline));
  write_json_file((root / "ctmri_centerline.json").string(), Json(p.fixed_centerline));
  write_json_file((root / "us_landmarks.json").string(), Json(p.moving_landmarks));
  write_json_file((root / "ctmri_landmarks.json").string(), Json(p.fixed_landmarks));
  write_json_file((root / "ground_truth.json").string(), ground_truth_to_json(p.truth));
  write_frame_manifest((root / "frames").string(), FrameSequence{scene.frames, scene.frame_landmarks});

  const Json config{
      {"case", case_name},
      {"seed", seed},
      {"output_dir", "out"},
      {"inputs",
       {{"ctmri", "ctmri.nrrd"},
        {"us3d", "us3d.nrrd"},
        {"us_vessels", "us_vessels.nrrd"},
        {"ctmri_vessels", "ctmri_vessels.nrrd"},
        {"liver_mask", "liver_mask.nrrd"},
        {"us_centerline", "us_centerline.json"},
        {"ctmri_centerline", "ctmri_centerline.json"},
        {"us_landmarks", "us_landmarks.json"},
        {"ctmri_landmarks", "ctmri_landmarks.json"},
        {"frames", "frames/manifest.json"},
        {"ground_truth", "ground_truth.json"}}},
      {"stages", {{"rigid", true}, {"nonrigid", true}, {"s2v", true}}},
      {"rigid", {{"surface_points", 3000}, {"outlier_weight", 0.1}}},
      {"nonrigid", {{"spacing", 15.0}, {"lambda", 0.0}, {"edits", "oracle"}}},
      {"s2v", {{"warm_start", true}}},
      {"views", {{"write", true}, {"clip_depth", 30.0}}}};
  const std::string path = (root / "config.json").string();
  write_json_file(path, config);
  return path;
}

}  // namespace ablreg
