// Data-parallel inner loops. Every kernel exists twice: a plain serial
// reference and an OpenMP version. The two are compared in the unit tests
// and timed against each other by bench_kernels.
//
// Parallel reductions use a fixed chunking that does not depend on the
// thread count, so parallel results are reproducible run to run.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ablreg/volume.hpp"

namespace ablreg::kernels {

/// Sufficient statistics of one CPD E-step.
struct CpdEStep {
  std::vector<double> p1;   // M: row sums of P
  std::vector<double> pt1;  // N: column sums of P
  std::vector<Vec3> px;     // M: sum_n P_mn x_n
  double np = 0.0;          // sum of P
  /// sum_n log(sum_m exp(-|x_n - y_m|^2 / (2 sigma2)) + c)
  double sum_log_norm = 0.0;
  double entropy = 0.0;  // mean per-target entropy of the correspondence column
};

/// Evaluates a thin-plate spline f(x) = A [1; x] + sum_i w_i |x - s_i|.
struct TpsCoefficients {
  std::span<const Vec3> sources;
  std::span<const Vec3> weights;
  const Eigen::Matrix<double, 3, 4>* affine = nullptr;
};

namespace serial {

void sample_points(const Volume& volume, std::span<const Vec3> points, std::span<double> values,
                   std::span<std::uint8_t> valid);
void resample_plane(const Volume& volume, const SlicePose& pose, std::span<double> values,
                    std::span<std::uint8_t> valid);
/// Max over depths k * step (k = 0..steps-1) behind the plane.
void mip_behind_plane(const Volume& volume, const SlicePose& pose, double step, int steps, const PointMap& map,
                      std::span<double> values, std::span<std::uint8_t> valid);
void tps_evaluate(const TpsCoefficients& tps, std::span<const Vec3> points, std::span<Vec3> out);
/// target: N points; moved_source: M transformed GMM centroids.
/// outlier_term: the constant c added to every column denominator.
CpdEStep cpd_estep(std::span<const Vec3> target, std::span<const Vec3> moved_source, double sigma2,
                   double outlier_term, bool with_entropy);

}  // namespace serial

namespace parallel {

void sample_points(const Volume& volume, std::span<const Vec3> points, std::span<double> values,
                   std::span<std::uint8_t> valid);
void resample_plane(const Volume& volume, const SlicePose& pose, std::span<double> values,
                    std::span<std::uint8_t> valid);
void mip_behind_plane(const Volume& volume, const SlicePose& pose, double step, int steps, const PointMap& map,
                      std::span<double> values, std::span<std::uint8_t> valid);
void tps_evaluate(const TpsCoefficients& tps, std::span<const Vec3> points, std::span<Vec3> out);
CpdEStep cpd_estep(std::span<const Vec3> target, std::span<const Vec3> moved_source, double sigma2,
                   double outlier_term, bool with_entropy);

}  // namespace parallel

/// Trilinear interpolation at index coordinates, shared by sample_trilinear
/// and every kernel. Returns false outside [0, n-1] on any axis.
bool sample_index_space(const Volume& volume, const Vec3& ijk, double& value);

}  // namespace ablreg::kernels
