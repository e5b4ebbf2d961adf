// Vessel surface point clouds and rigid coherent point drift (CPD).

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ablreg/volume.hpp"

namespace ablreg {

struct PointCloud {
  std::string frame;
  std::vector<Vec3> points;  // mm
  std::vector<Vec3> normals;  // optional, empty or one per point

  std::size_t size() const { return points.size(); }
  /// Throws if fewer than `min_points` points or any coordinate is not finite.
  void validate(std::size_t min_points = 0) const;
};

/// Deterministic stride subsample of `count` items down to at most `limit`
/// indices. The seed only shifts the phase of the stride.
std::vector<std::size_t> stride_subsample(std::size_t count, std::size_t limit, std::uint64_t seed);

/// World-space centres of foreground voxels with at least one six-connected
/// background (or out-of-grid) neighbour, subsampled to <= target_count.
PointCloud extract_surface_points(const Volume& mask, std::size_t target_count, std::uint64_t seed = 0);

struct CpdConfig {
  double outlier_weight = 0.1;         // w in [0, 1)
  int max_iterations = 150;
  std::optional<double> sigma2_init;   // mm^2; empty = automatic
  double tolerance = 1e-5;             // relative log-likelihood change
  std::size_t max_points = 3000;
  std::uint64_t seed = 0;
  Exec exec = Exec::parallel;

  void validate() const;
};

struct CpdDiagnostics {
  int iterations = 0;
  double final_sigma2 = 0.0;
  std::vector<double> log_likelihood;  // one entry per E-step
  double correspondence_entropy = 0.0;  // mean per-target entropy at the final estimate
  bool converged = false;
  bool sigma2_collapsed = false;
  /// True if the log-likelihood never dropped by more than 1e-9 (relative).
  bool monotone = true;
};

struct CpdResult {
  RigidTransform3D transform;  // source -> target
  CpdDiagnostics diagnostics;
};

class CpdError : public Error {
 public:
  using Error::Error;
};

/// Rigid CPD: the transformed source points are the centroids of a Gaussian
/// mixture with a uniform outlier component fitted to the target points.
CpdResult register_rigid_cpd(const PointCloud& source, const PointCloud& target, const CpdConfig& config = {},
                             const RigidTransform3D& initial = RigidTransform3D::identity());

/// Mean distance from each transformed source point to its nearest target point.
double mean_nearest_distance(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                             const RigidTransform3D& transform = RigidTransform3D::identity());

}  // namespace ablreg
