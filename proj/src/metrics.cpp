#include "ablreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ablreg {

void Centerline::validate() const {
  if (polylines.empty()) throw Error("centerline '" + frame + "' is empty");
  for (const auto& line : polylines) {
    if (line.size() < 2) throw Error("centerline '" + frame + "' has a polyline with fewer than 2 points");
    for (const Vec3& p : line) {
      if (!p.allFinite()) throw Error("centerline '" + frame + "' has a non-finite vertex");
    }
  }
}

std::size_t Centerline::vertex_count() const {
  std::size_t n = 0;
  for (const auto& line : polylines) n += line.size();
  return n;
}

std::vector<Vec3> Centerline::vertices() const {
  std::vector<Vec3> out;
  out.reserve(vertex_count());
  for (const auto& line : polylines) out.insert(out.end(), line.begin(), line.end());
  return out;
}

Centerline Centerline::mapped(const PointMap& map, const std::string& new_frame) const {
  Centerline out;
  out.frame = new_frame;
  out.polylines = polylines;
  for (auto& line : out.polylines) {
    for (Vec3& p : line) p = map(p);
  }
  return out;
}

DistanceStats summarize_distances(std::vector<double> values) {
  DistanceStats s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) {
    sum += v;
    s.max = std::max(s.max, v);
  }
  s.mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(var / static_cast<double>(values.size()));
  s.values = std::move(values);
  return s;
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

namespace {

std::vector<double> directed(const Centerline& a, const Centerline& b, Exec exec) {
  const std::vector<Vec3> verts = a.vertices();
  std::vector<double> out(verts.size());
  const auto count = static_cast<std::ptrdiff_t>(verts.size());
  const auto one = [&](std::ptrdiff_t i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& line : b.polylines) {
      for (std::size_t k = 0; k + 1 < line.size(); ++k) {
        best = std::min(best, point_segment_distance(verts[static_cast<std::size_t>(i)], line[k], line[k + 1]));
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  };
  if (exec == Exec::serial) {
    for (std::ptrdiff_t i = 0; i < count; ++i) one(i);
  } else {
#pragma omp parallel for schedule(dynamic, 64)
    for (std::ptrdiff_t i = 0; i < count; ++i) one(i);
  }
  return out;
}

}  // namespace

DistanceStats centerline_distance(const Centerline& a, const Centerline& b, bool symmetric, Exec exec) {
  a.validate();
  b.validate();
  if (a.frame != b.frame) {
    throw Error("centerline_distance: frames differ ('" + a.frame + "' vs '" + b.frame + "')");
  }
  std::vector<double> values = directed(a, b, exec);
  if (symmetric) {
    const std::vector<double> back = directed(b, a, exec);
    values.insert(values.end(), back.begin(), back.end());
  }
  return summarize_distances(std::move(values));
}

DistanceStats landmark_error(const LandmarkSet& a, const LandmarkSet& b, const PointMap& mapping) {
  std::vector<double> values;
  for (const auto& [name, p] : a.points) {
    auto it = b.points.find(name);
    if (it == b.points.end()) continue;
    const Vec3 q = mapping ? mapping(p) : p;
    values.push_back((q - it->second).norm());
  }
  if (values.empty()) throw Error("landmark_error: the landmark sets share no names");
  return summarize_distances(std::move(values));
}

}  // namespace ablreg
