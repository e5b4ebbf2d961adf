#include "ablreg/json_io.hpp"

#include <fstream>
#include <sstream>

namespace ablreg {

Json vec_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
Json vec_to_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }

Vec3 vec3_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw Error("expected a 3-vector, got " + j.dump());
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Vec2 vec2_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw Error("expected a 2-vector, got " + j.dump());
  return {j[0].get<double>(), j[1].get<double>()};
}

Json matrix_to_json(const RigidTransform3D& t) {
  const Mat4 m = t.matrix();
  Json rows = Json::array();
  for (int r = 0; r < 4; ++r) rows.push_back(Json::array({m(r, 0), m(r, 1), m(r, 2), m(r, 3)}));
  return rows;
}

RigidTransform3D matrix_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw Error("expected a 4x4 matrix");
  Mat4 m;
  for (int r = 0; r < 4; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw Error("expected a 4x4 matrix");
    for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
  }
  if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() > 1e-9) throw Error("last matrix row must be 0 0 0 1");
  return RigidTransform3D::from_matrix(m, 1e-6);
}

void to_json(Json& j, const RigidTransform3D& t) { j = Json{{"matrix", matrix_to_json(t)}}; }
void from_json(const Json& j, RigidTransform3D& t) { t = matrix_from_json(j.at("matrix")); }

void to_json(Json& j, const PoseError& e) {
  j = Json{{"Tx", e.translational.x()}, {"Ty", e.translational.y()}, {"Tz", e.translational.z()},
           {"ED", e.euclidean_distance}, {"Rx", e.rotational.x()},    {"Ry", e.rotational.y()},
           {"Rz", e.rotational.z()},    {"GA", e.geodesic_angle}};
}

// --- calibration --------------------------------------------------------------

void to_json(Json& j, const DhChain& c) {
  j = Json::array();
  for (const DhJoint& jt : c.joints) {
    j.push_back({{"theta_offset_deg", jt.theta_offset_deg},
                 {"d", jt.d},
                 {"a", jt.a},
                 {"alpha_deg", jt.alpha_deg},
                 {"kind", jt.kind == JointKind::revolute ? "revolute" : "prismatic"}});
  }
}

void from_json(const Json& j, DhChain& c) {
  const Json& arr = j.is_object() ? j.at("joints") : j;
  c.joints.clear();
  for (const Json& e : arr) {
    DhJoint jt;
    jt.theta_offset_deg = e.value("theta_offset_deg", 0.0);
    jt.d = e.value("d", 0.0);
    jt.a = e.value("a", 0.0);
    jt.alpha_deg = e.value("alpha_deg", 0.0);
    const std::string kind = e.value("kind", "revolute");
    if (kind == "revolute") {
      jt.kind = JointKind::revolute;
    } else if (kind == "prismatic") {
      jt.kind = JointKind::prismatic;
    } else {
      throw Error("unknown joint kind '" + kind + "'");
    }
    c.joints.push_back(jt);
  }
  c.validate();
}

void to_json(Json& j, const ZBarFiducial& f) {
  j = Json{{"id", f.id}, {"A", vec_to_json(f.a)}, {"B", vec_to_json(f.b)}, {"C", vec_to_json(f.c)}, {"D", vec_to_json(f.d)}};
}

void from_json(const Json& j, ZBarFiducial& f) {
  f.id = j.at("id").get<int>();
  f.a = vec3_from_json(j.at("A"));
  f.b = vec3_from_json(j.at("B"));
  f.c = vec3_from_json(j.at("C"));
  f.d = vec3_from_json(j.at("D"));
}

void to_json(Json& j, const ZBarObservation& o) {
  j = Json{{"fiducial_id", o.fiducial_id}, {"p1", vec_to_json(o.p1)}, {"p2", vec_to_json(o.p2)}, {"p3", vec_to_json(o.p3)}};
}

void from_json(const Json& j, ZBarObservation& o) {
  o.fiducial_id = j.at("fiducial_id").get<int>();
  o.p1 = vec2_from_json(j.at("p1"));
  o.p2 = vec2_from_json(j.at("p2"));
  o.p3 = vec2_from_json(j.at("p3"));
}

namespace {

Json readings_to_json(const std::vector<JointReading>& rs) {
  Json out = Json::array();
  for (const JointReading& r : rs) out.push_back(r.values);
  return out;
}

std::vector<JointReading> readings_from_json(const Json& j) {
  std::vector<JointReading> out;
  for (const Json& e : j) out.push_back({e.get<std::vector<double>>()});
  return out;
}

Json poses_to_json(const std::vector<RigidTransform3D>& ps) {
  Json out = Json::array();
  for (const auto& p : ps) out.push_back(matrix_to_json(p));
  return out;
}

std::vector<RigidTransform3D> poses_from_json(const Json& j) {
  std::vector<RigidTransform3D> out;
  for (const Json& e : j) out.push_back(e.is_object() ? e.get<RigidTransform3D>() : matrix_from_json(e));
  return out;
}

}  // namespace

void to_json(Json& j, const CalibrationSession& s) {
  j = Json{{"units", {{"length", "mm"}, {"angle", "deg"}}},
           {"chain", s.chain},
           {"readings", readings_to_json(s.readings)},
           {"measured_poses", poses_to_json(s.measured_poses)},
           {"zbar_fiducials", s.zbar_fiducials},
           {"zbar_observations", s.zbar_observations}};
  if (s.phantom_pose) j["phantom_pose"] = matrix_to_json(*s.phantom_pose);
  if (!s.holdout_readings.empty()) {
    j["holdout_readings"] = readings_to_json(s.holdout_readings);
    j["holdout_observations"] = s.holdout_observations;
  }
  if (s.truth) {
    j["truth"] = {{"chain", s.truth->chain}, {"probe_calibration", matrix_to_json(s.truth->probe_calibration)}};
  }
}

void from_json(const Json& j, CalibrationSession& s) {
  s = CalibrationSession{};
  s.chain = j.at("chain").get<DhChain>();
  s.readings = readings_from_json(j.at("readings"));
  s.measured_poses = poses_from_json(j.at("measured_poses"));
  if (j.contains("zbar_fiducials")) s.zbar_fiducials = j.at("zbar_fiducials").get<std::vector<ZBarFiducial>>();
  if (j.contains("zbar_observations")) {
    s.zbar_observations = j.at("zbar_observations").get<std::vector<std::vector<ZBarObservation>>>();
  }
  if (j.contains("phantom_pose")) s.phantom_pose = matrix_from_json(j.at("phantom_pose"));
  if (j.contains("holdout_readings")) s.holdout_readings = readings_from_json(j.at("holdout_readings"));
  if (j.contains("holdout_observations")) {
    s.holdout_observations = j.at("holdout_observations").get<std::vector<std::vector<ZBarObservation>>>();
  }
  if (j.contains("truth")) {
    CalibrationTruth t;
    t.chain = j["truth"].at("chain").get<DhChain>();
    t.probe_calibration = matrix_from_json(j["truth"].at("probe_calibration"));
    s.truth = t;
  }
  if (s.readings.size() != s.measured_poses.size()) throw Error("session: readings and measured_poses differ in length");
}

// --- point clouds ---------------------------------------------------------------

void to_json(Json& j, const PointCloud& p) {
  j = Json{{"frame", p.frame}, {"points", Json::array()}};
  for (const Vec3& v : p.points) j["points"].push_back(vec_to_json(v));
  if (!p.normals.empty()) {
    j["normals"] = Json::array();
    for (const Vec3& v : p.normals) j["normals"].push_back(vec_to_json(v));
  }
}

void from_json(const Json& j, PointCloud& p) {
  p = PointCloud{};
  p.frame = j.value("frame", "");
  for (const Json& e : j.at("points")) p.points.push_back(vec3_from_json(e));
  if (j.contains("normals")) {
    for (const Json& e : j.at("normals")) p.normals.push_back(vec3_from_json(e));
  }
  p.validate();
}

void to_json(Json& j, const CpdDiagnostics& d) {
  j = Json{{"iterations", d.iterations},
           {"final_sigma2", d.final_sigma2},
           {"log_likelihood", d.log_likelihood},
           {"correspondence_entropy", d.correspondence_entropy},
           {"converged", d.converged},
           {"sigma2_collapsed", d.sigma2_collapsed},
           {"monotone", d.monotone}};
}

// --- warps ----------------------------------------------------------------------

void to_json(Json& j, const TpsWarp& w) {
  j = Json{{"kernel", "r"}, {"lambda", w.lambda}, {"sources", Json::array()}, {"targets", Json::array()}};
  for (const Vec3& v : w.sources) j["sources"].push_back(vec_to_json(v));
  for (const Vec3& v : w.targets) j["targets"].push_back(vec_to_json(v));
}

void from_json(const Json& j, TpsWarp& w) {
  std::vector<Vec3> s, t;
  for (const Json& e : j.at("sources")) s.push_back(vec3_from_json(e));
  for (const Json& e : j.at("targets")) t.push_back(vec3_from_json(e));
  if (s.size() != t.size()) throw Error("warp: sources and targets differ in length");
  const double lambda = j.value("lambda", 0.0);
  if (s.empty()) {
    w = TpsWarp::identity();
    w.lambda = lambda;
    return;
  }
  w = tps_fit(s, t, lambda);
}

void to_json(Json& j, const ControlPointSet& s) {
  j = Json{{"points", Json::array()}};
  for (const ControlPoint& p : s.points) {
    j["points"].push_back({{"id", p.id},
                           {"position", vec_to_json(p.position)},
                           {"displacement", vec_to_json(p.displacement)},
                           {"role", to_string(p.role)}});
  }
}

void from_json(const Json& j, ControlPointSet& s) {
  s = ControlPointSet{};
  for (const Json& e : j.at("points")) {
    ControlPoint p;
    p.id = e.at("id").get<int>();
    p.position = vec3_from_json(e.at("position"));
    p.displacement = e.contains("displacement") ? vec3_from_json(e.at("displacement")) : Vec3::Zero();
    p.role = role_from_string(e.value("role", "movable"));
    s.points.push_back(p);
  }
  s.validate();
}

void to_json(Json& j, const OrientedBox& b) {
  j = Json{{"pose", matrix_to_json(b.pose)}, {"half_extent", vec_to_json(b.half_extent)}};
}

void from_json(const Json& j, OrientedBox& b) {
  b = OrientedBox{};
  if (j.contains("pose")) b.pose = matrix_from_json(j.at("pose"));
  if (j.contains("center")) b.pose.translation = vec3_from_json(j.at("center"));
  b.half_extent = vec3_from_json(j.at("half_extent"));
  if ((b.half_extent.array() <= 0.0).any()) throw Error("workspace half_extent must be positive");
}

// --- metrics --------------------------------------------------------------------

void to_json(Json& j, const Centerline& c) {
  j = Json{{"frame", c.frame}, {"polylines", Json::array()}};
  for (const auto& line : c.polylines) {
    Json l = Json::array();
    for (const Vec3& v : line) l.push_back(vec_to_json(v));
    j["polylines"].push_back(std::move(l));
  }
}

void from_json(const Json& j, Centerline& c) {
  c = Centerline{};
  c.frame = j.value("frame", "");
  for (const Json& l : j.at("polylines")) {
    std::vector<Vec3> line;
    for (const Json& v : l) line.push_back(vec3_from_json(v));
    c.polylines.push_back(std::move(line));
  }
  c.validate();
}

void to_json(Json& j, const LandmarkSet& l) {
  j = Json{{"frame", l.frame}, {"points", Json::object()}};
  for (const auto& [name, p] : l.points) j["points"][name] = vec_to_json(p);
}

void from_json(const Json& j, LandmarkSet& l) {
  l = LandmarkSet{};
  l.frame = j.value("frame", "");
  for (const auto& [name, p] : j.at("points").items()) l.points[name] = vec3_from_json(p);
}

void to_json(Json& j, const DistanceStats& s) {
  j = Json{{"mean", s.mean}, {"sd", s.sd}, {"max", s.max}, {"count", s.values.size()}};
}

// --- slices -----------------------------------------------------------------------

void to_json(Json& j, const SlicePose& p) {
  j = Json{{"matrix", matrix_to_json(p.transform)},
           {"width_mm", p.width_mm},
           {"height_mm", p.height_mm},
           {"nu", p.nu},
           {"nv", p.nv}};
}

void from_json(const Json& j, SlicePose& p) {
  p = SlicePose{};
  p.transform = matrix_from_json(j.at("matrix"));
  p.width_mm = j.at("width_mm").get<double>();
  p.height_mm = j.at("height_mm").get<double>();
  p.nu = j.at("nu").get<int>();
  p.nv = j.at("nv").get<int>();
  p.validate();
}

void to_json(Json& j, const S2VResult& r) {
  j = Json{{"refined_pose", r.refined_pose},
           {"score", std::isfinite(r.score) ? Json(r.score) : Json(nullptr)},
           {"initial_score", std::isfinite(r.initial_score) ? Json(r.initial_score) : Json(nullptr)},
           {"iterations", r.iterations},
           {"converged", r.converged},
           {"runtime_seconds", r.runtime_seconds},
           {"failed", r.failed}};
  if (r.failed) j["error"] = r.error;
}

// --- files ------------------------------------------------------------------------

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error("invalid JSON in '" + path + "': " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace ablreg
