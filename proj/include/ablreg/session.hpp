// Registration session: loaded volumes, the rigid result, the interactive TPS
// edit state and its audit log. Mutations are serialized; reads work on an
// immutable snapshot and may run concurrently with an edit.

#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "ablreg/json_io.hpp"
#include "ablreg/metrics.hpp"
#include "ablreg/point_cloud.hpp"
#include "ablreg/tps.hpp"
#include "ablreg/volume.hpp"

namespace ablreg {

/// Error carrying an HTTP-style status, a short code and the stage it belongs to.
class SessionError : public Error {
 public:
  SessionError(int status, std::string code, std::string stage, const std::string& message)
      : Error(message), status(status), code(std::move(code)), stage(std::move(stage)) {}
  int status;
  std::string code;
  std::string stage;

  Json to_json() const { return Json{{"code", code}, {"message", what()}, {"stage", stage}}; }
};

/// File paths of a session's inputs. Empty means absent.
struct SessionInputs {
  std::string ctmri;
  std::string us3d;
  std::string us_vessels;
  std::string ctmri_vessels;
  std::string liver_mask;
  std::string us_centerline;
  std::string ctmri_centerline;
  std::string us_landmarks;
  std::string ctmri_landmarks;
};

/// Relative paths in `j` are resolved against `base_dir`.
SessionInputs session_inputs_from_json(const Json& j, const std::string& base_dir);

struct SessionData {
  Volume ctmri;
  std::optional<Volume> us3d;
  Volume us_vessels;
  Volume ctmri_vessels;
  Volume liver_mask;
  std::optional<Centerline> us_centerline;
  std::optional<Centerline> ctmri_centerline;
  std::optional<LandmarkSet> us_landmarks;
  std::optional<LandmarkSet> ctmri_landmarks;
};

/// Throws SessionError 400 naming the first unreadable input.
SessionData load_session_data(const SessionInputs& inputs);

struct SessionSettings {
  CpdConfig cpd;
  std::size_t surface_points = 3000;
  std::optional<OrientedBox> workspace;  // default: bounding box of the liver mask
  double control_spacing = 15.0;         // mm
  double lambda = 0.0;
  double inverse_field_spacing = 4.0;    // mm, overlay pull-back grid
};

struct AuditEntry {
  std::uint64_t sequence = 0;
  int point_id = 0;
  Vec3 displacement = Vec3::Zero();
};

struct RigidStageResult {
  RigidTransform3D transform;  // US -> CT/MRI
  CpdDiagnostics diagnostics;
  std::size_t source_points = 0;
  std::size_t target_points = 0;
};

class Session {
 public:
  Session(std::string id, SessionData data, SessionSettings settings = {});

  const std::string& id() const { return id_; }
  const SessionData& data() const { return data_; }
  const SessionSettings& settings() const { return settings_; }

  /// Surface clouds from both vessel masks, rigid CPD, then fresh control
  /// points at zero displacement. Clears the audit log.
  RigidStageResult register_rigid();
  /// Installs a known rigid transform instead of running CPD.
  void set_rigid(const RigidTransform3D& t);

  bool rigid_done() const;
  RigidTransform3D rigid() const;
  ControlPointSet control_points() const;
  TpsWarp warp() const;
  std::uint64_t warp_version() const;
  std::vector<AuditEntry> audit_log() const;

  /// One drag: refit and append to the audit log. 409 before rigid, 404 for
  /// unknown ids, 422 for anchors.
  Json drag(int point_id, const Vec3& displacement);
  /// Several drags applied with a single refit; each is logged.
  void apply_edits(const std::vector<std::pair<int, Vec3>>& edits);
  /// Drops the last audit entry and rebuilds the warp by replaying the rest.
  Json undo();

  /// D_cl and TRE of the current US -> CT/MRI mapping. 409 before rigid.
  Json metrics() const;
  /// us point -> warp(rigid(p)) for the current snapshot.
  PointMap mapping() const;

  /// Fused orthogonal view of the CT/MRI volume with the US overlay pulled
  /// back through the current mapping, encoded as RGBA PNG. 409 before rigid.
  std::string slice_png(OrthogonalPlane plane, double position_mm, double clip_mm, BlendMode blend) const;
  FusedView slice_view(OrthogonalPlane plane, double position_mm, double clip_mm, BlendMode blend) const;

  /// Control points and warp obtained by replaying `log` on the control
  /// points generated at the rigid stage.
  EditState replay(const std::vector<AuditEntry>& log) const;

 private:
  struct Snapshot {
    bool rigid_done = false;
    RigidTransform3D rigid;
    EditState base;  // zero-displacement control points
    EditState edit;
    std::uint64_t version = 0;
    std::vector<AuditEntry> log;
    mutable std::once_flag inverse_once;
    mutable std::shared_ptr<const InverseWarpField> inverse;
  };

  std::shared_ptr<const Snapshot> snapshot() const;
  std::shared_ptr<const Snapshot> require_rigid(const std::string& stage) const;
  void publish(std::shared_ptr<Snapshot> next);
  std::shared_ptr<Snapshot> rigid_snapshot(const RigidTransform3D& t) const;
  const InverseWarpField& inverse_field(const Snapshot& s) const;
  Json metrics_of(const Snapshot& s) const;
  static EditState apply_log(const EditState& base, const std::vector<AuditEntry>& log);

  std::string id_;
  SessionData data_;
  SessionSettings settings_;
  double ctmri_lo_ = 0.0, ctmri_hi_ = 1.0;
  double overlay_lo_ = 0.0, overlay_hi_ = 1.0;

  mutable std::shared_mutex snapshot_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::mutex writer_;
  std::uint64_t next_sequence_ = 1;
};

/// Default workspace: axis-aligned bounding box of the mask foreground.
OrientedBox mask_bounding_box(const Volume& mask);

}  // namespace ablreg
