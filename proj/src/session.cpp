#include "ablreg/session.hpp"

#include <algorithm>
#include <filesystem>

#include "ablreg/nrrd_io.hpp"
#include "ablreg/png_io.hpp"

namespace ablreg {

namespace {

std::string resolve(const Json& j, const char* key, const std::string& base_dir) {
  if (!j.contains(key) || j[key].is_null()) return {};
  const std::filesystem::path p = j[key].get<std::string>();
  if (p.empty() || p.is_absolute() || base_dir.empty()) return p.string();
  return (std::filesystem::path(base_dir) / p).string();
}

Volume load_volume(const std::string& path, const char* role) {
  if (path.empty()) throw SessionError(400, "missing_input", "load", std::string("input '") + role + "' is required");
  try {
    return read_nrrd(path);
  } catch (const std::exception& e) {
    throw SessionError(400, "unreadable_input", "load", std::string("input '") + role + "': " + e.what());
  }
}

template <class T>
std::optional<T> load_optional_json(const std::string& path, const char* role) {
  if (path.empty()) return std::nullopt;
  try {
    return read_json_file(path).get<T>();
  } catch (const std::exception& e) {
    throw SessionError(400, "unreadable_input", "load", std::string("input '") + role + "': " + e.what());
  }
}

std::pair<double, double> value_range(const Volume& v) {
  if (v.scalars.empty()) return {0.0, 1.0};
  const auto [lo, hi] = std::minmax_element(v.scalars.begin(), v.scalars.end());
  if (!(*hi > *lo)) return {*lo, *lo + 1.0};
  return {*lo, *hi};
}

bool all_zero_displacement(const ControlPointSet& set) {
  return std::all_of(set.points.begin(), set.points.end(),
                     [](const ControlPoint& p) { return p.displacement == Vec3::Zero(); });
}

}  // namespace

SessionInputs session_inputs_from_json(const Json& j, const std::string& base_dir) {
  SessionInputs in;
  in.ctmri = resolve(j, "ctmri", base_dir);
  in.us3d = resolve(j, "us3d", base_dir);
  in.us_vessels = resolve(j, "us_vessels", base_dir);
  in.ctmri_vessels = resolve(j, "ctmri_vessels", base_dir);
  in.liver_mask = resolve(j, "liver_mask", base_dir);
  in.us_centerline = resolve(j, "us_centerline", base_dir);
  in.ctmri_centerline = resolve(j, "ctmri_centerline", base_dir);
  in.us_landmarks = resolve(j, "us_landmarks", base_dir);
  in.ctmri_landmarks = resolve(j, "ctmri_landmarks", base_dir);
  return in;
}

SessionData load_session_data(const SessionInputs& in) {
  SessionData d;
  d.ctmri = load_volume(in.ctmri, "ctmri");
  if (!in.us3d.empty()) d.us3d = load_volume(in.us3d, "us3d");
  d.us_vessels = load_volume(in.us_vessels, "us_vessels");
  d.ctmri_vessels = load_volume(in.ctmri_vessels, "ctmri_vessels");
  d.liver_mask = load_volume(in.liver_mask, "liver_mask");
  d.us_centerline = load_optional_json<Centerline>(in.us_centerline, "us_centerline");
  d.ctmri_centerline = load_optional_json<Centerline>(in.ctmri_centerline, "ctmri_centerline");
  d.us_landmarks = load_optional_json<LandmarkSet>(in.us_landmarks, "us_landmarks");
  d.ctmri_landmarks = load_optional_json<LandmarkSet>(in.ctmri_landmarks, "ctmri_landmarks");
  return d;
}

OrientedBox mask_bounding_box(const Volume& mask) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  const auto& d = mask.geometry.dims;
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        if (mask.at(i, j, k) < 0.5f) continue;
        const Vec3 p = mask.geometry.index_to_world(Vec3(i, j, k));
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
  }
  if (!lo.allFinite()) throw Error("mask has no foreground");
  OrientedBox box;
  box.pose.translation = 0.5 * (lo + hi);
  box.half_extent = (0.5 * (hi - lo)).cwiseMax(Vec3::Constant(0.5)) + 0.5 * mask.geometry.spacing;
  return box;
}

Session::Session(std::string id, SessionData data, SessionSettings settings)
    : id_(std::move(id)), data_(std::move(data)), settings_(std::move(settings)) {
  if (data_.liver_mask.modality != Modality::MASK || data_.us_vessels.modality != Modality::MASK ||
      data_.ctmri_vessels.modality != Modality::MASK) {
    throw SessionError(400, "invalid_input", "load", "vessel and liver inputs must be MASK volumes");
  }
  std::tie(ctmri_lo_, ctmri_hi_) = value_range(data_.ctmri);
  std::tie(overlay_lo_, overlay_hi_) = value_range(data_.us3d ? *data_.us3d : data_.us_vessels);
  snapshot_ = std::make_shared<Snapshot>();
}

std::shared_ptr<const Session::Snapshot> Session::snapshot() const {
  std::shared_lock lock(snapshot_mutex_);
  return snapshot_;
}

std::shared_ptr<const Session::Snapshot> Session::require_rigid(const std::string& stage) const {
  auto s = snapshot();
  if (!s->rigid_done) {
    throw SessionError(409, "stage_order", stage, stage + " requires the rigid registration to be done first");
  }
  return s;
}

void Session::publish(std::shared_ptr<Snapshot> next) {
  std::unique_lock lock(snapshot_mutex_);
  snapshot_ = std::move(next);
}

RigidStageResult Session::register_rigid() {
  std::lock_guard guard(writer_);
  RigidStageResult out;
  CpdResult cpd;
  try {
    const PointCloud source = extract_surface_points(data_.us_vessels, settings_.surface_points, settings_.cpd.seed);
    const PointCloud target =
        extract_surface_points(data_.ctmri_vessels, settings_.surface_points, settings_.cpd.seed + 1);
    out.source_points = source.size();
    out.target_points = target.size();
    cpd = register_rigid_cpd(source, target, settings_.cpd);
  } catch (const SessionError&) {
    throw;
  } catch (const std::exception& e) {
    throw SessionError(422, "rigid_failed", "rigid", e.what());
  }
  out.transform = cpd.transform;
  out.diagnostics = cpd.diagnostics;
  publish(rigid_snapshot(out.transform));
  return out;
}

std::shared_ptr<Session::Snapshot> Session::rigid_snapshot(const RigidTransform3D& t) const {
  auto next = std::make_shared<Snapshot>();
  next->rigid_done = true;
  next->rigid = t;
  const OrientedBox ws = settings_.workspace ? *settings_.workspace : mask_bounding_box(data_.liver_mask);
  try {
    next->base.control_points = generate_control_points(data_.liver_mask, ws, settings_.control_spacing);
    next->base.lambda = settings_.lambda;
    next->base.warp = fit_control_points(next->base.control_points, settings_.lambda);
  } catch (const std::exception& e) {
    throw SessionError(422, "control_points_failed", "nonrigid", e.what());
  }
  next->edit = next->base;
  next->version = snapshot()->version + 1;
  return next;
}

void Session::set_rigid(const RigidTransform3D& t) {
  std::lock_guard guard(writer_);
  publish(rigid_snapshot(t));
}

bool Session::rigid_done() const { return snapshot()->rigid_done; }
RigidTransform3D Session::rigid() const { return require_rigid("rigid")->rigid; }
ControlPointSet Session::control_points() const { return require_rigid("nonrigid")->edit.control_points; }
TpsWarp Session::warp() const { return require_rigid("nonrigid")->edit.warp; }
std::uint64_t Session::warp_version() const { return snapshot()->version; }
std::vector<AuditEntry> Session::audit_log() const { return snapshot()->log; }

EditState Session::apply_log(const EditState& base, const std::vector<AuditEntry>& log) {
  EditState out = base;
  for (const AuditEntry& e : log) {
    auto it = std::find_if(out.control_points.points.begin(), out.control_points.points.end(),
                           [&](const ControlPoint& p) { return p.id == e.point_id; });
    if (it == out.control_points.points.end()) throw UnknownControlPoint("audit log names unknown point");
    it->displacement = e.displacement;
  }
  out.warp = fit_control_points(out.control_points, out.lambda);
  return out;
}

EditState Session::replay(const std::vector<AuditEntry>& log) const {
  auto s = require_rigid("nonrigid");
  EditState state = s->base;
  for (const AuditEntry& e : log) state = drag_update(state, e.point_id, e.displacement);
  return state;
}

Json Session::drag(int point_id, const Vec3& displacement) {
  std::lock_guard guard(writer_);
  auto s = require_rigid("nonrigid");
  if (!displacement.allFinite()) throw SessionError(400, "invalid_displacement", "nonrigid", "displacement must be finite");
  auto next = std::make_shared<Snapshot>();
  try {
    next->edit = drag_update(s->edit, point_id, displacement);
  } catch (const UnknownControlPoint& e) {
    throw SessionError(404, "unknown_control_point", "nonrigid", e.what());
  } catch (const ControlRoleError& e) {
    throw SessionError(422, "anchor_immobile", "nonrigid", e.what());
  } catch (const std::exception& e) {
    throw SessionError(422, "refit_failed", "nonrigid", e.what());
  }
  next->rigid_done = true;
  next->rigid = s->rigid;
  next->base = s->base;
  next->log = s->log;
  next->log.push_back({next_sequence_++, point_id, displacement});
  next->version = s->version + 1;
  Json out = metrics_of(*next);
  publish(std::move(next));
  return out;
}

void Session::apply_edits(const std::vector<std::pair<int, Vec3>>& edits) {
  std::lock_guard guard(writer_);
  auto s = require_rigid("nonrigid");
  auto next = std::make_shared<Snapshot>();
  next->rigid_done = true;
  next->rigid = s->rigid;
  next->base = s->base;
  next->log = s->log;
  for (const auto& [id, d] : edits) {
    const ControlPoint* p = s->edit.control_points.find(id);
    if (!p) throw SessionError(404, "unknown_control_point", "nonrigid", "control point " + std::to_string(id) + " does not exist");
    if (p->role == ControlRole::anchor) {
      throw SessionError(422, "anchor_immobile", "nonrigid", "control point " + std::to_string(id) + " is an anchor");
    }
    if (!d.allFinite()) throw SessionError(400, "invalid_displacement", "nonrigid", "displacement must be finite");
    next->log.push_back({next_sequence_++, id, d});
  }
  try {
    next->edit = apply_log(next->base, next->log);
  } catch (const std::exception& e) {
    throw SessionError(422, "refit_failed", "nonrigid", e.what());
  }
  next->version = s->version + 1;
  publish(std::move(next));
}

Json Session::undo() {
  std::lock_guard guard(writer_);
  auto s = require_rigid("nonrigid");
  if (s->log.empty()) throw SessionError(409, "nothing_to_undo", "nonrigid", "the audit log is empty");
  auto next = std::make_shared<Snapshot>();
  next->rigid_done = true;
  next->rigid = s->rigid;
  next->base = s->base;
  next->log.assign(s->log.begin(), s->log.end() - 1);
  next->edit = apply_log(next->base, next->log);
  next->version = s->version + 1;
  Json out = metrics_of(*next);
  publish(std::move(next));
  return out;
}

Json Session::metrics_of(const Snapshot& s) const {
  const RigidTransform3D t = s.rigid;
  const TpsWarp& w = s.edit.warp;
  const PointMap rigid_only = [t](const Vec3& p) { return t.apply(p); };
  const PointMap full = [t, &w](const Vec3& p) { return w.apply(t.apply(p)); };
  Json out{{"edits", s.log.size()}};
  if (data_.us_centerline && data_.ctmri_centerline) {
    const std::string frame = data_.ctmri_centerline->frame;
    const DistanceStats r = centerline_distance(data_.us_centerline->mapped(rigid_only, frame), *data_.ctmri_centerline);
    const DistanceStats n = centerline_distance(data_.us_centerline->mapped(full, frame), *data_.ctmri_centerline);
    out["dcl_rigid"] = r;
    out["dcl"] = n;
  } else {
    out["dcl"] = nullptr;
  }
  if (data_.us_landmarks && data_.ctmri_landmarks) {
    out["tre"] = landmark_error(*data_.us_landmarks, *data_.ctmri_landmarks, full);
  } else {
    out["tre"] = nullptr;
  }
  return out;
}

Json Session::metrics() const { return metrics_of(*require_rigid("metrics")); }

PointMap Session::mapping() const {
  auto s = require_rigid("metrics");
  return [s](const Vec3& p) { return s->edit.warp.apply(s->rigid.apply(p)); };
}

const InverseWarpField& Session::inverse_field(const Snapshot& s) const {
  std::call_once(s.inverse_once, [&] {
    if (all_zero_displacement(s.edit.control_points)) {
      s.inverse = std::make_shared<InverseWarpField>();
      return;
    }
    const auto [lo, hi] = data_.ctmri.geometry.world_bounds();
    s.inverse = std::make_shared<InverseWarpField>(
        build_inverse_field(s.edit.warp, lo, hi, settings_.inverse_field_spacing));
  });
  return *s.inverse;
}

FusedView Session::slice_view(OrthogonalPlane plane, double position_mm, double clip_mm, BlendMode blend) const {
  auto s = require_rigid("slice");
  if (!(clip_mm >= 0.0) || !std::isfinite(position_mm)) {
    throw SessionError(400, "invalid_parameter", "slice", "clip must be >= 0 and pos finite");
  }
  const SlicePose pose = orthogonal_slice(data_.ctmri.geometry, plane, position_mm);
  FusedViewOptions opt;
  opt.clip_depth = clip_mm;
  opt.window_lo = ctmri_lo_;
  opt.window_hi = ctmri_hi_;
  opt.opacity_threshold = overlay_lo_ + 0.5 * (overlay_hi_ - overlay_lo_);
  opt.overlay_hi = overlay_hi_;
  opt.blend = blend;
  const InverseWarpField& inv = inverse_field(*s);
  const RigidTransform3D rigid_inv = inverse(s->rigid);
  const PointMap to_us = [&inv, rigid_inv](const Vec3& p) { return rigid_inv.apply(inv.apply(p)); };
  const Volume& overlay = data_.us3d ? *data_.us3d : data_.us_vessels;
  return fused_mvr_view(data_.ctmri, overlay, pose, opt, to_us);
}

std::string Session::slice_png(OrthogonalPlane plane, double position_mm, double clip_mm, BlendMode blend) const {
  const FusedView v = slice_view(plane, position_mm, clip_mm, blend);
  return encode_png(v.composite_rgba8(), v.base.image.width, v.base.image.height, 4);
}

}  // namespace ablreg
