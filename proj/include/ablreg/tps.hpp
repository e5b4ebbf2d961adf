// Thin-plate spline warps with the 3D biharmonic kernel U(r) = r, control
// point generation inside a workspace, and drag-and-place editing.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ablreg/volume.hpp"

namespace ablreg {

using Affine34 = Eigen::Matrix<double, 3, 4>;

/// f(x) = affine * [1; x] + sum_i weights_i * |x - sources_i|.
struct TpsWarp {
  std::vector<Vec3> sources;
  std::vector<Vec3> targets;
  std::vector<Vec3> weights;
  Affine34 affine = identity_affine();
  double lambda = 0.0;

  static Affine34 identity_affine();
  /// Warp with no control points that maps every point to itself.
  static TpsWarp identity() { return {}; }

  Vec3 apply(const Vec3& p) const;
  std::vector<Vec3> apply(std::span<const Vec3> points, Exec exec = Exec::parallel) const;
  /// -trace(W^T K W), zero for affine warps and non-negative otherwise.
  double bending_energy() const;
  std::size_t size() const { return sources.size(); }
};

class DegenerateConfiguration : public Error {
 public:
  using Error::Error;
};

/// Solves [K - lambda I, P; P^T, 0] [W; A^T] = [targets; 0] with K_ij = |s_i - s_j|.
/// Throws DegenerateConfiguration for fewer than 4 points, duplicates, or
/// coplanar sources.
TpsWarp tps_fit(const std::vector<Vec3>& sources, const std::vector<Vec3>& targets, double lambda = 0.0);

std::vector<Vec3> tps_apply(const TpsWarp& warp, std::span<const Vec3> points, Exec exec = Exec::parallel);

/// Pull-back resampling: output voxel x (on `reference`) takes
/// sample_trilinear(input, warp(x)); samples outside the input are 0.
Volume tps_apply_volume(const TpsWarp& warp, const Volume& input, const VolumeGeometry& reference,
                        Exec exec = Exec::parallel);

/// Dense approximation of the inverse warp on a regular grid, used to pull
/// display overlays back through a warp without per-sample root finding.
struct InverseWarpField {
  VolumeGeometry grid;
  std::vector<Vec3> displacement;  // inverse(p) - p at each node
  bool identity = true;

  /// Approximate inverse of the warp at `p`; points outside the grid use the
  /// nearest grid node's displacement.
  Vec3 apply(const Vec3& p) const;
};

InverseWarpField build_inverse_field(const TpsWarp& warp, const Vec3& lo, const Vec3& hi, double spacing,
                                     int iterations = 30);

// --- control points ----------------------------------------------------------

enum class ControlRole { movable, anchor };
std::string to_string(ControlRole r);
ControlRole role_from_string(const std::string& s);

struct ControlPoint {
  int id = 0;
  Vec3 position = Vec3::Zero();
  Vec3 displacement = Vec3::Zero();
  ControlRole role = ControlRole::movable;
};

struct ControlPointSet {
  std::vector<ControlPoint> points;

  const ControlPoint* find(int id) const;
  std::size_t movable_count() const;
  std::size_t anchor_count() const;
  std::vector<Vec3> positions() const;
  std::vector<Vec3> targets() const;
  /// Ids unique and anchors never displaced.
  void validate() const;
};

/// Box centred on pose.translation with axes pose.rotation, half extents in mm.
struct OrientedBox {
  RigidTransform3D pose;
  Vec3 half_extent = Vec3::Ones();

  bool contains(const Vec3& p) const;
};

/// Movable points on a regular lattice (spacing mm, box frame) at mask
/// foreground inside the workspace; anchors on the mask boundary outside the
/// workspace, at most one per spacing-sized cell.
ControlPointSet generate_control_points(const Volume& liver_mask, const OrientedBox& workspace, double spacing);

class ControlRoleError : public Error {
 public:
  using Error::Error;
};
class UnknownControlPoint : public Error {
 public:
  using Error::Error;
};

struct EditState {
  ControlPointSet control_points;
  TpsWarp warp;
  double lambda = 0.0;
};

/// Warp fitted to all control points and their current displacements. Exact
/// identity when every displacement is zero.
TpsWarp fit_control_points(const ControlPointSet& set, double lambda = 0.0);

/// Sets one movable point's displacement and refits. The input is not modified.
EditState drag_update(const EditState& state, int point_id, const Vec3& new_displacement);

}  // namespace ablreg
