// End-to-end pipeline: rigid CPD, control-point TPS refinement (edits
// replayed from a file or derived from a ground truth), slice-to-volume
// registration of a tracked frame sequence, metrics and fused views.
// The configuration schema is documented in docs/pipeline-config.md.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ablreg/json_io.hpp"
#include "ablreg/session.hpp"
#include "ablreg/slice_to_volume.hpp"
#include "ablreg/synth.hpp"

namespace ablreg {

// --- frame manifests and ground truth files ---------------------------------

struct FrameSequence {
  std::vector<TrackedFrame> frames;
  std::vector<std::vector<FrameLandmark>> landmarks;  // per frame, may be empty
};

/// Manifest: {"frames": [{"image", "timestamp", "tracked_pose" (4x4),
/// "width_mm", "height_mm", "landmarks": [{"name", "image_point"}]}]}.
/// Images are 2D NRRD or PNG files relative to the manifest.
FrameSequence read_frame_manifest(const std::string& path);
/// Writes frame_NNN.nrrd images and manifest.json into `dir`.
void write_frame_manifest(const std::string& dir, const FrameSequence& sequence);

Json ground_truth_to_json(const GroundTruthMapping& truth);
GroundTruthMapping ground_truth_from_json(const Json& j);

// --- configuration ------------------------------------------------------------

struct PipelineConfig {
  std::string case_name = "case";
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  SessionInputs inputs;
  std::string frames;        // manifest path, empty when absent
  std::string ground_truth;  // optional

  bool run_rigid = true;
  bool run_nonrigid = true;
  bool run_s2v = true;

  SessionSettings session;
  std::string edits;  // "", "oracle" or a path to an edits file
  S2VOptions s2v;
  bool warm_start = true;
  bool write_views = true;
  double clip_depth = 30.0;
};

/// Relative paths are resolved against `base_dir`. Throws Error on schema
/// violations.
PipelineConfig pipeline_config_from_json(const Json& j, const std::string& base_dir);
PipelineConfig read_pipeline_config(const std::string& path);

// --- run ------------------------------------------------------------------------

struct StageReport {
  std::string name;
  std::string status;  // "ok", "not_converged", "failed", "skipped", "not_started"
  std::string message;
  double seconds = 0.0;
};

/// One row of the metrics table. NaN marks values that were not computed.
struct CaseMetrics {
  std::string case_name;
  DistanceStats dcl_rigid;
  DistanceStats dcl_nonrigid;
  double error_reduced_pct = std::numeric_limits<double>::quiet_NaN();
  DistanceStats tre;
  DistanceStats ld_rigid;
  DistanceStats ld_nonrigid;
  std::size_t n_frames = 0;
  std::size_t n_landmarks = 0;
  bool has_dcl = false;
  bool has_tre = false;
  bool has_ld = false;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const CaseMetrics& m);

struct PipelineResult {
  int exit_code = 1;
  std::vector<StageReport> stages;
  CaseMetrics metrics;
  std::optional<RigidTransform3D> rigid;
  std::optional<TpsWarp> warp;
  std::vector<S2VResult> s2v;
};

/// Runs the enabled stages in order and writes outputs into
/// config.output_dir. Output files of a stage appear only once it has
/// finished. exit_code is 0 iff every enabled stage converged.
PipelineResult run_pipeline(const PipelineConfig& config);

/// Control point displacements that make the TPS reproduce `truth` after
/// `rigid`: d(p) = truth(rigid^-1(p)) - p for every movable point.
std::vector<std::pair<int, Vec3>> oracle_edits(const ControlPointSet& points, const RigidTransform3D& rigid,
                                               const GroundTruthMapping& truth);

// --- synthetic bundles ------------------------------------------------------------

/// Writes a scene as NRRD volumes, JSON centrelines/landmarks, a frame
/// manifest, ground truth, and a ready-to-run config.json into `dir`.
/// Returns the config path.
std::string write_scene_bundle(const SyntheticScene& scene, const std::string& dir, const std::string& case_name,
                               std::uint64_t seed);

}  // namespace ablreg
