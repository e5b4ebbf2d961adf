#include "ablreg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <omp.h>

namespace ablreg::kernels {

namespace {

constexpr double kSnap = 1e-9;
// Terms more than this far below the column maximum (in log space) are
// below 1e-17 relative and skipped.
constexpr double kLogCutoff = -40.0;
constexpr std::ptrdiff_t kCpdChunk = 128;

// Splits an index coordinate into base cell and fraction, snapping
// near-integers. Returns false when outside [0, n-1].
inline bool split_axis(double x, int n, int& i0, double& frac) {
  const double r = std::round(x);
  if (std::abs(x - r) < kSnap) x = r;
  if (x < 0.0 || x > static_cast<double>(n - 1)) return false;
  i0 = static_cast<int>(std::floor(x));
  frac = x - i0;
  if (i0 == n - 1) {
    // exactly on the last plane
    i0 = std::max(n - 2, 0);
    frac = n == 1 ? 0.0 : 1.0;
  }
  return true;
}

inline double lerp_weighted(double v0, double v1, double f) {
  if (f == 0.0) return v0;
  if (f == 1.0) return v1;
  return v0 + f * (v1 - v0);
}

inline Vec3 plane_point_world(const SlicePose& pose, int u, int v, double depth) {
  return pose.transform.apply(Vec3(u * pose.pixel_spacing_x(), v * pose.pixel_spacing_y(), depth));
}

// Exact world -> index conversion for a pixel, used by both plane kernels so
// serial and parallel paths are bit-identical.
inline Vec3 plane_point_index(const Volume& volume, const SlicePose& pose, int u, int v, double depth) {
  return volume.geometry.world_to_index(plane_point_world(pose, u, v, depth));
}

inline void mip_pixel(const Volume& volume, const SlicePose& pose, double step, int steps, const PointMap& map,
                      int u, int v, double& out, std::uint8_t& ok) {
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (int k = 0; k < steps; ++k) {
    const Vec3 w = plane_point_world(pose, u, v, k * step);
    const Vec3 ijk = volume.geometry.world_to_index(map ? map(w) : w);
    double val = 0.0;
    if (sample_index_space(volume, ijk, val)) {
      any = true;
      best = std::max(best, val);
    }
  }
  out = any ? best : 0.0;
  ok = any ? 1 : 0;
}

inline Vec3 tps_point(const TpsCoefficients& tps, const Vec3& x) {
  const auto& a = *tps.affine;
  Vec3 y = a.col(0) + a.col(1) * x.x() + a.col(2) * x.y() + a.col(3) * x.z();
  for (std::size_t i = 0; i < tps.sources.size(); ++i) {
    const double r = (x - tps.sources[i]).norm();
    y += tps.weights[i] * r;
  }
  return y;
}

// Processes target column n: fills `logs` scratch with a_mn, returns log S_n.
inline double cpd_column_log_norm(const Vec3& x, std::span<const Vec3> ty, double inv_two_sigma2, double log_c,
                                  std::vector<double>& logs, std::vector<double>& terms, double& amax) {
  const std::size_t m = ty.size();
  amax = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    const double a = -(x - ty[j]).squaredNorm() * inv_two_sigma2;
    logs[j] = a;
    amax = std::max(amax, a);
  }
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double d = logs[j] - amax;
    terms[j] = d > kLogCutoff ? std::exp(d) : 0.0;
    s += terms[j];
  }
  const double log_gmm = amax + std::log(s);
  if (!std::isfinite(log_c)) return log_gmm;
  const double hi = std::max(log_gmm, log_c);
  return hi + std::log(std::exp(log_gmm - hi) + std::exp(log_c - hi));
}

}  // namespace

bool sample_index_space(const Volume& volume, const Vec3& ijk, double& value) {
  const auto& d = volume.geometry.dims;
  int i0 = 0, j0 = 0, k0 = 0;
  double fx = 0.0, fy = 0.0, fz = 0.0;
  if (!split_axis(ijk.x(), d[0], i0, fx) || !split_axis(ijk.y(), d[1], j0, fy) ||
      !split_axis(ijk.z(), d[2], k0, fz)) {
    return false;
  }
  const int i1 = std::min(i0 + 1, d[0] - 1);
  const int j1 = std::min(j0 + 1, d[1] - 1);
  const int k1 = std::min(k0 + 1, d[2] - 1);
  const auto v = [&](int i, int j, int k) { return static_cast<double>(volume.at(i, j, k)); };
  const double c00 = lerp_weighted(v(i0, j0, k0), v(i1, j0, k0), fx);
  const double c10 = lerp_weighted(v(i0, j1, k0), v(i1, j1, k0), fx);
  const double c01 = lerp_weighted(v(i0, j0, k1), v(i1, j0, k1), fx);
  const double c11 = lerp_weighted(v(i0, j1, k1), v(i1, j1, k1), fx);
  const double c0 = lerp_weighted(c00, c10, fy);
  const double c1 = lerp_weighted(c01, c11, fy);
  value = lerp_weighted(c0, c1, fz);
  return true;
}

// ---------------------------------------------------------------------------
// serial reference
// ---------------------------------------------------------------------------
namespace serial {

void sample_points(const Volume& volume, std::span<const Vec3> points, std::span<double> values,
                   std::span<std::uint8_t> valid) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    double val = 0.0;
    const bool ok = sample_index_space(volume, volume.geometry.world_to_index(points[i]), val);
    values[i] = ok ? val : 0.0;
    valid[i] = ok ? 1 : 0;
  }
}

void resample_plane(const Volume& volume, const SlicePose& pose, std::span<double> values,
                    std::span<std::uint8_t> valid) {
  for (int v = 0; v < pose.nv; ++v) {
    for (int u = 0; u < pose.nu; ++u) {
      const std::size_t idx = static_cast<std::size_t>(v) * pose.nu + u;
      double val = 0.0;
      const bool ok = sample_index_space(volume, plane_point_index(volume, pose, u, v, 0.0), val);
      values[idx] = ok ? val : 0.0;
      valid[idx] = ok ? 1 : 0;
    }
  }
}

void mip_behind_plane(const Volume& volume, const SlicePose& pose, double step, int steps, const PointMap& map,
                      std::span<double> values, std::span<std::uint8_t> valid) {
  for (int v = 0; v < pose.nv; ++v) {
    for (int u = 0; u < pose.nu; ++u) {
      const std::size_t idx = static_cast<std::size_t>(v) * pose.nu + u;
      mip_pixel(volume, pose, step, steps, map, u, v, values[idx], valid[idx]);
    }
  }
}

void tps_evaluate(const TpsCoefficients& tps, std::span<const Vec3> points, std::span<Vec3> out) {
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = tps_point(tps, points[i]);
}

CpdEStep cpd_estep(std::span<const Vec3> target, std::span<const Vec3> moved_source, double sigma2,
                   double outlier_term, bool with_entropy) {
  const std::size_t n = target.size();
  const std::size_t m = moved_source.size();
  CpdEStep out;
  out.p1.assign(m, 0.0);
  out.pt1.assign(n, 0.0);
  out.px.assign(m, Vec3::Zero());
  const double inv = 1.0 / (2.0 * sigma2);
  const double log_c = outlier_term > 0 ? std::log(outlier_term) : -std::numeric_limits<double>::infinity();
  std::vector<double> logs(m);
  std::vector<double> terms(m);
  double entropy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double amax = 0.0;
    const double log_norm = cpd_column_log_norm(target[i], moved_source, inv, log_c, logs, terms, amax);
    out.sum_log_norm += log_norm;
    const double scale = std::exp(amax - log_norm);
    double col = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (terms[j] == 0.0) continue;
      const double p = terms[j] * scale;
      col += p;
      out.p1[j] += p;
      out.px[j] += p * target[i];
      if (with_entropy) entropy -= p * (logs[j] - log_norm);
    }
    out.pt1[i] = col;
    out.np += col;
  }
  out.entropy = n > 0 ? entropy / static_cast<double>(n) : 0.0;
  return out;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP
// ---------------------------------------------------------------------------
namespace parallel {

void sample_points(const Volume& volume, std::span<const Vec3> points, std::span<double> values,
                   std::span<std::uint8_t> valid) {
  const auto count = static_cast<std::ptrdiff_t>(points.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    double val = 0.0;
    const bool ok = sample_index_space(volume, volume.geometry.world_to_index(points[i]), val);
    values[i] = ok ? val : 0.0;
    valid[i] = ok ? 1 : 0;
  }
}

void resample_plane(const Volume& volume, const SlicePose& pose, std::span<double> values,
                    std::span<std::uint8_t> valid) {
  const int nu = pose.nu;
  const int nv = pose.nv;
#pragma omp parallel for schedule(static)
  for (int v = 0; v < nv; ++v) {
    for (int u = 0; u < nu; ++u) {
      const std::size_t idx = static_cast<std::size_t>(v) * nu + u;
      double val = 0.0;
      const bool ok = sample_index_space(volume, plane_point_index(volume, pose, u, v, 0.0), val);
      values[idx] = ok ? val : 0.0;
      valid[idx] = ok ? 1 : 0;
    }
  }
}

void mip_behind_plane(const Volume& volume, const SlicePose& pose, double step, int steps, const PointMap& map,
                      std::span<double> values, std::span<std::uint8_t> valid) {
  const int nu = pose.nu;
  const int nv = pose.nv;
#pragma omp parallel for schedule(dynamic, 4)
  for (int v = 0; v < nv; ++v) {
    for (int u = 0; u < nu; ++u) {
      const std::size_t idx = static_cast<std::size_t>(v) * nu + u;
      mip_pixel(volume, pose, step, steps, map, u, v, values[idx], valid[idx]);
    }
  }
}

void tps_evaluate(const TpsCoefficients& tps, std::span<const Vec3> points, std::span<Vec3> out) {
  const auto count = static_cast<std::ptrdiff_t>(points.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) out[i] = tps_point(tps, points[i]);
}

CpdEStep cpd_estep(std::span<const Vec3> target, std::span<const Vec3> moved_source, double sigma2,
                   double outlier_term, bool with_entropy) {
  const auto n = static_cast<std::ptrdiff_t>(target.size());
  const std::size_t m = moved_source.size();
  const double inv = 1.0 / (2.0 * sigma2);
  const double log_c = outlier_term > 0 ? std::log(outlier_term) : -std::numeric_limits<double>::infinity();
  const std::ptrdiff_t chunks = (n + kCpdChunk - 1) / kCpdChunk;

  struct Partial {
    std::vector<double> p1;
    std::vector<Vec3> px;
    double sum_log_norm = 0.0;
    double np = 0.0;
    double entropy = 0.0;
  };
  std::vector<Partial> partials(static_cast<std::size_t>(chunks));
  CpdEStep out;
  out.pt1.assign(static_cast<std::size_t>(n), 0.0);

#pragma omp parallel
  {
    std::vector<double> logs(m);
    std::vector<double> terms(m);
#pragma omp for schedule(dynamic, 1)
    for (std::ptrdiff_t c = 0; c < chunks; ++c) {
      Partial& part = partials[static_cast<std::size_t>(c)];
      part.p1.assign(m, 0.0);
      part.px.assign(m, Vec3::Zero());
      const std::ptrdiff_t end = std::min(n, (c + 1) * kCpdChunk);
      for (std::ptrdiff_t i = c * kCpdChunk; i < end; ++i) {
        double amax = 0.0;
        const double log_norm = cpd_column_log_norm(target[i], moved_source, inv, log_c, logs, terms, amax);
        part.sum_log_norm += log_norm;
        const double scale = std::exp(amax - log_norm);
        double col = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          if (terms[j] == 0.0) continue;
          const double p = terms[j] * scale;
          col += p;
          part.p1[j] += p;
          part.px[j] += p * target[i];
          if (with_entropy) part.entropy -= p * (logs[j] - log_norm);
        }
        out.pt1[static_cast<std::size_t>(i)] = col;
        part.np += col;
      }
    }
  }

  out.p1.assign(m, 0.0);
  out.px.assign(m, Vec3::Zero());
  double entropy = 0.0;
  for (const Partial& part : partials) {
    for (std::size_t j = 0; j < m; ++j) {
      out.p1[j] += part.p1[j];
      out.px[j] += part.px[j];
    }
    out.sum_log_norm += part.sum_log_norm;
    out.np += part.np;
    entropy += part.entropy;
  }
  out.entropy = n > 0 ? entropy / static_cast<double>(n) : 0.0;
  return out;
}

}  // namespace parallel

}  // namespace ablreg::kernels
