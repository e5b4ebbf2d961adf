// Registration accuracy metrics: vessel centreline distance (D_cl) and
// landmark distance (TRE / LD).

#pragma once

#include <map>
#include <string>
#include <vector>

#include "ablreg/volume.hpp"

namespace ablreg {

struct Centerline {
  std::string frame;
  std::vector<std::vector<Vec3>> polylines;  // mm

  void validate() const;
  std::size_t vertex_count() const;
  std::vector<Vec3> vertices() const;
  /// Every vertex mapped through `map`, frame renamed.
  Centerline mapped(const PointMap& map, const std::string& new_frame) const;
};

struct LandmarkSet {
  std::string frame;
  std::map<std::string, Vec3> points;
};

struct DistanceStats {
  double mean = 0.0;
  double sd = 0.0;  // population standard deviation
  double max = 0.0;
  std::vector<double> values;
};

DistanceStats summarize_distances(std::vector<double> values);

/// Distance from `p` to the closest point of segment [a, b].
double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

/// Directed: for each vertex of `a`, the distance to the nearest point on
/// any segment of `b`. Symmetric appends the b -> a distances.
DistanceStats centerline_distance(const Centerline& a, const Centerline& b, bool symmetric = false,
                                  Exec exec = Exec::parallel);

/// Distances between mapping(a[name]) and b[name] over common names.
DistanceStats landmark_error(const LandmarkSet& a, const LandmarkSet& b, const PointMap& mapping = {});

}  // namespace ablreg
