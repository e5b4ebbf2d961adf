// Deterministic synthetic data: vessel trees, US/MRI-like volume pairs with
// known ground-truth mappings, Z-bar calibration sessions, and tracked 2D
// frame sequences. Every generator is a pure function of its seed.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ablreg/calibration.hpp"
#include "ablreg/metrics.hpp"
#include "ablreg/slice_to_volume.hpp"
#include "ablreg/tps.hpp"
#include "ablreg/volume.hpp"

namespace ablreg {

// --- vessel trees -----------------------------------------------------------

struct TubeSegment {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 1.0;
};

struct VesselTreeOptions {
  double spacing = 1.0;         // voxel size, mm
  double root_radius = 3.0;     // mm
  double centerline_step = 1.0;  // centreline vertex spacing, mm
};

struct VesselTree {
  std::vector<TubeSegment> segments;
  Volume mask;
  Centerline centerline;
  LandmarkSet bifurcations;
};

/// `branches` tube segments grown breadth-first from a root segment inside a
/// cube of side `extent` mm centred on the origin. The mask, centreline and
/// landmarks share the frame "US".
VesselTree synth_vessel_tree(std::uint64_t seed, int branches, double extent, const VesselTreeOptions& options = {});

/// Rasterizes capsules of the given segments onto `geometry` as a MASK volume.
Volume rasterize_tubes(const std::vector<TubeSegment>& segments, const VolumeGeometry& geometry);

/// Polylines sampled every `step` mm along each segment.
Centerline sample_centerline(const std::vector<TubeSegment>& segments, double step, const std::string& frame);

// --- ground-truth mappings ---------------------------------------------------

/// US -> CT/MRI mapping: warp(rigid(p)), the warp acting in the CT/MRI frame.
struct GroundTruthMapping {
  RigidTransform3D rigid;
  std::optional<TpsWarp> warp;

  Vec3 apply(const Vec3& p) const;
  PointMap as_map() const;
};

/// Smooth TPS deformation centred at `centre`: `n_points` random interior
/// control points displaced randomly plus fixed corner anchors of a box with
/// half-width `support`. Scaled so that the largest displacement over
/// `probe_points` (or a dense box grid when empty) equals `max_displacement`.
TpsWarp synth_deformation(std::uint64_t seed, const Vec3& centre, double support, double max_displacement,
                          int n_points = 8, const std::vector<Vec3>& probe_points = {});

// --- multimodal pair ---------------------------------------------------------

struct NoiseModel {
  double speckle = 0.25;        // multiplicative speckle sigma for the US-like volume
  double texture = 0.15;        // amplitude of smooth background texture
  double mri_noise = 0.01;      // additive noise on the MRI-like volume
};

struct MultimodalPairOptions {
  int branches = 15;
  double extent = 120.0;   // mm
  double spacing = 1.0;    // mm
  double margin = 20.0;    // extra CT/MRI field of view on each side, mm
  NoiseModel noise;
};

struct MultimodalPair {
  GroundTruthMapping truth;  // moving (US) -> fixed (CT/MRI)
  VesselTree moving_tree;    // US frame
  Volume moving_volume;      // US3D, tube-bright with speckle
  Volume moving_mask;        // vessel mask, US frame
  Centerline moving_centerline;
  LandmarkSet moving_landmarks;
  Volume fixed_volume;       // MRI, tube-dark, smooth
  Volume fixed_mask;         // vessel mask, CT/MRI frame
  Volume liver_mask;         // CT/MRI frame
  Centerline fixed_centerline;
  LandmarkSet fixed_landmarks;
};

MultimodalPair synth_multimodal_pair(std::uint64_t seed, const GroundTruthMapping& deformation,
                                     const MultimodalPairOptions& options = {});

// --- Z-bar calibration sessions -------------------------------------------

struct ZBarPhantomOptions {
  int layers = 3;
  int per_layer = 5;
  double first_depth = 20.0;     // mm
  double layer_spacing = 20.0;   // mm
  double wire_gap = 10.0;        // distance between the parallel wires, mm
  double wire_length = 60.0;     // mm
  double lateral_pitch = 12.0;   // mm between neighbouring fiducials
};

/// Phantom fiducials in F_vol: layer l lies in z = first_depth + l*layer_spacing,
/// wires run along y.
std::vector<ZBarFiducial> synth_zbar_phantom(const ZBarPhantomOptions& options = {});

/// Analytic intersection of the image plane (image -> F_vol pose) with one
/// fiducial's wires.
struct ZBarIntersection {
  std::optional<ZBarObservation> observation;
  bool degenerate = false;        // plane (nearly) parallel to the layer
  Vec3 diagonal_point = Vec3::Zero();  // exact crossing of wire BC, F_vol
};
ZBarIntersection zbar_intersect(const ZBarFiducial& fiducial, const RigidTransform3D& image_pose);

struct ZBarSessionOptions {
  double pose_noise_mm = 0.0;    // tracker translation noise sigma per axis
  double pose_noise_deg = 0.0;   // tracker rotation noise sigma per axis
  double image_noise_mm = 0.0;   // Z-bar image point noise sigma per axis
  double max_tilt_deg = 45.0;    // probe rotation about the nominal pose
  double max_shift_mm = 5.0;
  int holdout = 10;
  double chain_perturb_mm = 2.0;   // truth vs nominal chain
  double chain_perturb_deg = 1.0;
  ZBarPhantomOptions phantom;
};

/// Six-joint arm used by the calibration examples and acceptance runs.
DhChain default_arm_chain();
/// Probe-to-end transform used as calibration ground truth.
RigidTransform3D default_probe_calibration();

struct ZBarSession {
  CalibrationSession session;
  /// Per reading, ids of fiducials whose observation was flagged degenerate.
  std::vector<std::vector<int>> degenerate;
  /// True image -> F_vol poses, per reading and per hold-out reading.
  std::vector<RigidTransform3D> true_image_poses;
  std::vector<RigidTransform3D> true_holdout_image_poses;
};

/// `nominal` is the initial chain handed to calibration; the true chain is a
/// seeded perturbation of it (stored in session.truth).
ZBarSession synth_zbar_session(std::uint64_t seed, const DhChain& nominal, int n_poses,
                               const ZBarSessionOptions& options = {});

/// Joint reading that places the end frame at `target` (LM from `start`).
JointReading inverse_kinematics(const DhChain& chain, const RigidTransform3D& target, const JointReading& start);

// --- tracked frames -----------------------------------------------------------

struct FrameSpec {
  double width_mm = 80.0;
  double height_mm = 64.0;
  double spacing = 1.0;
};

/// Image-plane pose centred at `centre` with orientation `rotation`.
SlicePose centred_slice_pose(const Vec3& centre, const Mat3& rotation, const FrameSpec& spec = {});

/// Frame sliced from `volume` at `true_pose` with multiplicative speckle
/// (sigma `speckle`), tracked at `tracked_pose`.
TrackedFrame synth_frame(const Volume& volume, const SlicePose& true_pose, const SlicePose& tracked_pose,
                         double speckle, std::uint64_t seed, double timestamp = 0.0);

/// `pose` moved rigidly about its image centre by exactly `mm` along a random
/// direction and `deg` about a random axis.
SlicePose perturb_pose_random(const SlicePose& pose, double mm, double deg, std::mt19937_64& rng);

struct TrackedSequence {
  std::vector<TrackedFrame> frames;
  std::vector<SlicePose> true_poses;
};

/// Breathing-like drift: true pose i = drift_i o tracked pose i, with drift a
/// sinusoidal translation of `amplitude_mm` along `direction`.
TrackedSequence synth_breathing_sequence(const Volume& volume, const SlicePose& base_pose, int n_frames,
                                         double amplitude_mm, const Vec3& direction, double speckle,
                                         std::uint64_t seed);

// --- full scene -----------------------------------------------------------------

struct FrameLandmark {
  std::string name;
  Vec2 image_point = Vec2::Zero();  // mm in image coordinates
};

struct SceneOptions {
  MultimodalPairOptions pair;
  double rigid_angle_deg = 15.0;
  double rigid_shift_mm = 20.0;
  double deformation_mm = 8.0;
  double tracking_error_mm = 4.0;
  double tracking_error_deg = 3.0;
  double frame_speckle = 0.1;
  FrameSpec frame;
};

struct SyntheticScene {
  MultimodalPair pair;
  std::vector<TrackedFrame> frames;
  std::vector<SlicePose> true_poses;
  std::vector<std::vector<FrameLandmark>> frame_landmarks;  // per frame
};

/// Pair with a rigid + TPS ground truth and one tracked frame through each
/// bifurcation landmark.
SyntheticScene synth_scene(std::uint64_t seed, const SceneOptions& options = {});

}  // namespace ablreg
