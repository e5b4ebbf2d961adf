#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ablreg/pipeline.hpp"
#include "../support/generators.hpp"

using namespace ablreg;
namespace fs = std::filesystem;

namespace {

SceneOptions small_scene() {
  SceneOptions o;
  o.pair.branches = 6;
  o.pair.extent = 70.0;
  o.pair.margin = 10.0;
  return o;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ablreg_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

// Scene bundle written once per process and shared by the read-only cases.
const std::string& bundle_config() {
  static const std::string path = [] {
    const fs::path dir = fresh_dir("bundle");
    return write_scene_bundle(synth_scene(31, small_scene()), dir.string(), "small", 31);
  }();
  return path;
}

Json bundle_json() { return read_json_file(bundle_config()); }

PipelineConfig config_from(const Json& j, const fs::path& out) {
  Json copy = j;
  copy["output_dir"] = out.string();
  return pipeline_config_from_json(copy, fs::path(bundle_config()).parent_path().string());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

const StageReport& stage(const PipelineResult& r, const std::string& name) {
  for (const auto& s : r.stages)
    if (s.name == name) return s;
  FAIL("no stage " << name);
  throw Error("unreachable");
}

// Output files with the wall-clock fields removed.
std::map<std::string, std::string> comparable_outputs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).string();
    if (rel == "poses.json") {
      Json j = read_json_file(e.path().string());
      for (auto& f : j["frames"]) f.erase("runtime_seconds");
      out[rel] = j.dump();
    } else if (rel == "summary.json") {
      Json j = read_json_file(e.path().string());
      for (auto& s : j["stages"]) s.erase("seconds");
      out[rel] = j.dump();
    } else {
      out[rel] = slurp(e.path());
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config schema violations are rejected") {
    const fs::path base = fs::temp_directory_path();
    const Json good = bundle_json();
    CHECK_NOTHROW(pipeline_config_from_json(good, base.string()));

    Json j = good;
    j["unknown"] = 1;
    CHECK_THROWS_AS(pipeline_config_from_json(j, base.string()), Error);
    j = good;
    j["stages"]["s3v"] = true;
    CHECK_THROWS_AS(pipeline_config_from_json(j, base.string()), Error);
    j = good;
    j["nonrigid"]["spacing"] = -1.0;
    CHECK_THROWS_AS(pipeline_config_from_json(j, base.string()), Error);
    j = good;
    j["nonrigid"]["lambda"] = -0.5;
    CHECK_THROWS_AS(pipeline_config_from_json(j, base.string()), Error);
    j = good;
    j["views"]["clip_depth"] = -1.0;
    CHECK_THROWS_AS(pipeline_config_from_json(j, base.string()), Error);
    j = good;
    j["rigid"]["outlier_weight"] = 1.5;
    CHECK_THROWS_AS(pipeline_config_from_json(j, base.string()), Error);
    j = good;
    j["inputs"].erase("ground_truth");
    CHECK_THROWS_AS(pipeline_config_from_json(j, base.string()), Error);
    j = good;
    j.erase("inputs");
    CHECK_THROWS_AS(pipeline_config_from_json(j, base.string()), Error);
  }

  TEST_CASE("relative paths resolve against the config directory") {
    const PipelineConfig c = read_pipeline_config(bundle_config());
    const fs::path dir = fs::path(bundle_config()).parent_path();
    CHECK(fs::path(c.inputs.ctmri) == dir / "ctmri.nrrd");
    CHECK(fs::path(c.frames) == dir / "frames" / "manifest.json");
    CHECK(fs::path(c.output_dir) == dir / "out");
    CHECK(c.edits == "oracle");
    CHECK(c.seed == 31);
  }

  TEST_CASE("missing input fails without writing stage outputs") {
    const fs::path out = fresh_dir("missing");
    Json j = bundle_json();
    j["inputs"]["us_vessels"] = "does_not_exist.nrrd";
    const PipelineResult r = run_pipeline(config_from(j, out));
    CHECK(r.exit_code != 0);
    CHECK(stage(r, "load").status == "failed");
    CHECK(stage(r, "load").message.find("us_vessels") != std::string::npos);
    CHECK(stage(r, "rigid").status == "not_started");
    CHECK(stage(r, "nonrigid").status == "not_started");
    CHECK(stage(r, "s2v").status == "not_started");
    for (const char* f : {"T_rigid.json", "warp.json", "control_points.json", "poses.json", "metrics.csv"}) {
      CHECK_MESSAGE(!fs::exists(out / f), f);
    }
    REQUIRE(fs::exists(out / "summary.json"));
    CHECK(read_json_file((out / "summary.json").string())["exit_code"] == 1);
    fs::remove_all(out);
  }

  TEST_CASE("full synthetic case: nonrigid improves on rigid and the CSV is well formed") {
    const fs::path out = fresh_dir("full");
    const PipelineResult r = run_pipeline(config_from(bundle_json(), out));
    CHECK(r.exit_code == 0);
    for (const auto& s : r.stages) CHECK_MESSAGE(s.status == "ok", s.name << ": " << s.message);
    CHECK(r.metrics.dcl_nonrigid.mean < r.metrics.dcl_rigid.mean);
    CHECK(r.metrics.error_reduced_pct > 0.0);
    CHECK(r.metrics.n_landmarks > 0);

    const auto lines = split(slurp(out / "metrics.csv"), '\n');
    REQUIRE(lines.size() == 2);
    CHECK(lines[0] == metrics_csv_header());
    CHECK(split(lines[1], ',').size() == split(lines[0], ',').size());
    CHECK(split(lines[1], ',')[0] == "small");
    for (const char* f : {"T_rigid.json", "warp.json", "control_points.json", "edits_applied.json", "poses.json",
                          "views/axial.png", "views/sagittal.png", "views/coronal.png", "views/frame_000.png"}) {
      CHECK_MESSAGE(fs::exists(out / f), f);
    }
    const TpsWarp w = read_json_file((out / "warp.json").string()).get<TpsWarp>();
    CHECK(w.size() == r.warp->size());
    fs::remove_all(out);
  }

  TEST_CASE("identity case gives vanishing landmark distance") {
    SceneOptions o = small_scene();
    o.rigid_angle_deg = 0.0;
    o.rigid_shift_mm = 0.0;
    o.deformation_mm = 0.0;
    o.tracking_error_mm = 0.0;
    o.tracking_error_deg = 0.0;
    const fs::path dir = fresh_dir("identity");
    Json j = read_json_file(write_scene_bundle(synth_scene(32, o), dir.string(), "identity", 32));
    j["nonrigid"]["edits"] = nullptr;
    const PipelineResult r = run_pipeline(pipeline_config_from_json(j, dir.string()));
    CHECK(r.exit_code == 0);
    CHECK(pose_error(*r.rigid, RigidTransform3D::identity()).euclidean_distance < 0.5);
    CHECK(r.metrics.ld_nonrigid.mean < 0.5);
    CHECK(r.metrics.tre.mean < 0.5);
    fs::remove_all(dir);
  }

  TEST_CASE("pipeline outputs are deterministic apart from timing fields") {
    Json j = bundle_json();
    j["views"]["write"] = false;
    const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
    run_pipeline(config_from(j, a));
    run_pipeline(config_from(j, b));
    const auto fa = comparable_outputs(a), fb = comparable_outputs(b);
    CHECK(fa.size() == fb.size());
    for (const auto& [name, content] : fa) {
      const bool same = fb.count(name) && fb.at(name) == content;
      CHECK_MESSAGE(same, name);
    }
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("edits file is replayed and disabled stages are skipped") {
    const fs::path out = fresh_dir("edits");
    const fs::path edits = out.string() + "_edits.json";
    write_json_file(edits.string(), Json{{"edits", Json::array({Json{{"id", 0}, {"displacement", {0.0, 0.0, 0.0}}}})}});
    Json j = bundle_json();
    j["nonrigid"]["edits"] = edits.string();
    j["stages"]["s2v"] = false;
    j["views"]["write"] = false;
    const PipelineResult r = run_pipeline(config_from(j, out));
    CHECK(stage(r, "s2v").status == "skipped");
    if (stage(r, "nonrigid").status == "ok") {
      CHECK(read_json_file((out / "edits_applied.json").string())["edits"].size() == 1);
      CHECK(r.exit_code == 0);
    } else {
      // id 0 may be an anchor for this case
      CHECK(stage(r, "nonrigid").message.find("anchor") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(out / "poses.json"));
    fs::remove_all(out);
    fs::remove(edits);
  }

  TEST_CASE("frame manifests and ground truth round-trip") {
    const SyntheticScene s = synth_scene(33, small_scene());
    const fs::path dir = fresh_dir("manifest");
    write_frame_manifest(dir.string(), FrameSequence{s.frames, s.frame_landmarks});
    const FrameSequence back = read_frame_manifest((dir / "manifest.json").string());
    REQUIRE(back.frames.size() == s.frames.size());
    for (std::size_t i = 0; i < s.frames.size(); ++i) {
      CHECK(back.frames[i].timestamp == s.frames[i].timestamp);
      CHECK(back.frames[i].tracked_pose.transform.matrix() == s.frames[i].tracked_pose.transform.matrix());
      CHECK(back.frames[i].image.width == s.frames[i].image.width);
      for (std::size_t k = 0; k < s.frames[i].image.pixels.size(); ++k) {
        CHECK(std::abs(back.frames[i].image.pixels[k] - s.frames[i].image.pixels[k]) < 1e-6);
      }
      REQUIRE(back.landmarks[i].size() == s.frame_landmarks[i].size());
      CHECK(back.landmarks[i][0].name == s.frame_landmarks[i][0].name);
    }
    const GroundTruthMapping g = ground_truth_from_json(ground_truth_to_json(s.pair.truth));
    gen::Rng rng(131);
    for (int i = 0; i < 20; ++i) {
      const Vec3 p = gen::vec3(rng, 40.0);
      CHECK((g.apply(p) - s.pair.truth.apply(p)).norm() < 1e-9);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("oracle edits reproduce the ground truth at movable points") {
    const SyntheticScene s = synth_scene(34, small_scene());
    SessionData d;
    d.ctmri = s.pair.fixed_volume;
    d.us_vessels = s.pair.moving_mask;
    d.ctmri_vessels = s.pair.fixed_mask;
    d.liver_mask = s.pair.liver_mask;
    SessionSettings settings;
    settings.surface_points = 800;
    Session session("oracle", d, settings);
    session.set_rigid(s.pair.truth.rigid);
    const auto edits = oracle_edits(session.control_points(), session.rigid(), s.pair.truth);
    session.apply_edits(edits);
    const TpsWarp w = session.warp();
    for (const auto& p : session.control_points().points) {
      if (p.role != ControlRole::movable) continue;
      const Vec3 expected = s.pair.truth.apply(inverse(s.pair.truth.rigid).apply(p.position));
      CHECK((w.apply(p.position) - expected).norm() < 1e-6);
    }
  }
}
