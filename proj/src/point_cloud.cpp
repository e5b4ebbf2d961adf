#include "ablreg/point_cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "ablreg/kernels.hpp"

namespace ablreg {

void PointCloud::validate(std::size_t min_points) const {
  if (points.size() < min_points) {
    throw Error("point cloud '" + frame + "' has " + std::to_string(points.size()) + " points, need " +
                std::to_string(min_points));
  }
  for (const Vec3& p : points) {
    if (!p.allFinite()) throw Error("point cloud '" + frame + "' contains a non-finite coordinate");
  }
  if (!normals.empty() && normals.size() != points.size()) throw Error("point cloud normals count mismatch");
}

std::vector<std::size_t> stride_subsample(std::size_t count, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx;
  if (count <= limit) {
    idx.resize(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    return idx;
  }
  if (limit == 0) return idx;
  const double stride = static_cast<double>(count) / static_cast<double>(limit);
  std::mt19937_64 rng(seed);
  const double phase = std::uniform_real_distribution<double>(0.0, stride)(rng);
  idx.reserve(limit);
  for (std::size_t k = 0; k < limit; ++k) {
    idx.push_back(std::min(count - 1, static_cast<std::size_t>(phase + stride * static_cast<double>(k))));
  }
  return idx;
}

PointCloud extract_surface_points(const Volume& mask, std::size_t target_count, std::uint64_t seed) {
  if (mask.modality != Modality::MASK) throw Error("extract_surface_points needs a MASK volume");
  const auto& d = mask.geometry.dims;
  const auto fg = [&](int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i >= d[0] || j >= d[1] || k >= d[2]) return false;
    return mask.at(i, j, k) > 0.5f;
  };
  std::vector<Vec3> boundary;
  bool any = false;
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        if (!fg(i, j, k)) continue;
        any = true;
        if (fg(i - 1, j, k) && fg(i + 1, j, k) && fg(i, j - 1, k) && fg(i, j + 1, k) && fg(i, j, k - 1) &&
            fg(i, j, k + 1)) {
          continue;
        }
        boundary.push_back(mask.geometry.index_to_world(Vec3(i, j, k)));
      }
    }
  }
  if (!any) throw Error("extract_surface_points: mask is empty");
  PointCloud cloud;
  cloud.frame = to_string(mask.modality);
  for (std::size_t i : stride_subsample(boundary.size(), target_count, seed)) cloud.points.push_back(boundary[i]);
  return cloud;
}

void CpdConfig::validate() const {
  if (!(outlier_weight >= 0.0 && outlier_weight < 1.0)) throw CpdError("CPD outlier weight must be in [0, 1)");
  if (max_iterations < 1) throw CpdError("CPD max_iterations must be >= 1");
  if (sigma2_init && !(*sigma2_init > 0.0)) throw CpdError("CPD sigma2_init must be > 0");
  if (!(tolerance >= 0.0)) throw CpdError("CPD tolerance must be >= 0");
  if (max_points < 4) throw CpdError("CPD max_points must be >= 4");
}

namespace {

std::vector<Vec3> subsample(const std::vector<Vec3>& pts, std::size_t limit, std::uint64_t seed) {
  std::vector<Vec3> out;
  for (std::size_t i : stride_subsample(pts.size(), limit, seed)) out.push_back(pts[i]);
  return out;
}

double auto_sigma2(const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
  // mean over all (x_n, y_m) pairs of |x_n - y_m|^2, divided by the dimension
  Vec3 sx = Vec3::Zero(), sy = Vec3::Zero();
  double qx = 0.0, qy = 0.0;
  for (const Vec3& p : x) {
    sx += p;
    qx += p.squaredNorm();
  }
  for (const Vec3& p : y) {
    sy += p;
    qy += p.squaredNorm();
  }
  const double n = static_cast<double>(x.size());
  const double m = static_cast<double>(y.size());
  return (m * qx + n * qy - 2.0 * sx.dot(sy)) / (3.0 * m * n);
}

}  // namespace

CpdResult register_rigid_cpd(const PointCloud& source, const PointCloud& target, const CpdConfig& config,
                             const RigidTransform3D& initial) {
  config.validate();
  source.validate(4);
  target.validate(4);
  const std::vector<Vec3> y = subsample(source.points, config.max_points, config.seed);
  const std::vector<Vec3> x = subsample(target.points, config.max_points, config.seed + 1);
  const double n = static_cast<double>(x.size());
  const double m = static_cast<double>(y.size());
  const double w = config.outlier_weight;

  CpdResult result;
  RigidTransform3D t = initial;
  std::vector<Vec3> ty(y.size());
  const auto move = [&] {
    for (std::size_t j = 0; j < y.size(); ++j) ty[j] = t.apply(y[j]);
  };
  move();
  double sigma2 = config.sigma2_init ? *config.sigma2_init : auto_sigma2(x, ty);
  if (!(sigma2 > 0.0)) throw CpdError("CPD: clouds coincide in a single point, sigma2 is zero");

  const auto estep = [&](bool entropy) {
    const double c = w > 0 ? std::pow(2.0 * kPi * sigma2, 1.5) * w / (1.0 - w) * m / n : 0.0;
    return config.exec == Exec::serial ? kernels::serial::cpd_estep(x, ty, sigma2, c, entropy)
                                       : kernels::parallel::cpd_estep(x, ty, sigma2, c, entropy);
  };

  auto& diag = result.diagnostics;
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const kernels::CpdEStep e = estep(false);
    const double ll = e.sum_log_norm + n * std::log((1.0 - w) / m) - 1.5 * n * std::log(2.0 * kPi * sigma2);
    if (!std::isfinite(ll)) throw CpdError("CPD: non-finite log-likelihood at iteration " + std::to_string(iter));
    if (!diag.log_likelihood.empty()) {
      const double prev = diag.log_likelihood.back();
      if (ll < prev - 1e-9 * std::max(1.0, std::abs(prev))) diag.monotone = false;
    }
    diag.log_likelihood.push_back(ll);
    diag.iterations = iter + 1;
    if (diag.log_likelihood.size() >= 2) {
      const double prev = diag.log_likelihood[diag.log_likelihood.size() - 2];
      if (std::abs(ll - prev) <= config.tolerance * std::abs(ll)) {
        diag.converged = true;
        break;
      }
    }
    if (!(e.np > 0.0)) throw CpdError("CPD: all correspondences assigned to the outlier component");

    // M-step: weighted Procrustes between the source and the soft targets
    Vec3 mu_x = Vec3::Zero(), mu_y = Vec3::Zero();
    for (std::size_t i = 0; i < x.size(); ++i) mu_x += e.pt1[i] * x[i];
    for (std::size_t j = 0; j < y.size(); ++j) mu_y += e.p1[j] * y[j];
    mu_x /= e.np;
    mu_y /= e.np;
    Mat3 a = Mat3::Zero();
    for (std::size_t j = 0; j < y.size(); ++j) a += e.px[j] * y[j].transpose();
    a -= e.np * mu_x * mu_y.transpose();
    Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 c = Mat3::Identity();
    c(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    const Mat3 r = svd.matrixU() * c * svd.matrixV().transpose();
    t.rotation = r;
    t.translation = mu_x - r * mu_y;

    double xx = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) xx += e.pt1[i] * x[i].squaredNorm();
    for (std::size_t j = 0; j < y.size(); ++j) yy += e.p1[j] * y[j].squaredNorm();
    xx -= e.np * mu_x.squaredNorm();
    yy -= e.np * mu_y.squaredNorm();
    sigma2 = (xx - 2.0 * (a.transpose() * r).trace() + yy) / (3.0 * e.np);
    move();
    if (!(sigma2 >= 1e-12)) {
      sigma2 = 1e-12;
      diag.sigma2_collapsed = true;
      diag.converged = true;
      break;
    }
  }
  diag.final_sigma2 = sigma2;
  diag.correspondence_entropy = estep(true).entropy;
  result.transform = t;
  return result;
}

double mean_nearest_distance(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                             const RigidTransform3D& transform) {
  if (source.empty() || target.empty()) throw Error("mean_nearest_distance: empty point set");
  const auto count = static_cast<std::ptrdiff_t>(source.size());
  std::vector<double> nearest(source.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const Vec3 p = transform.apply(source[static_cast<std::size_t>(i)]);
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : target) best = std::min(best, (p - q).squaredNorm());
    nearest[static_cast<std::size_t>(i)] = std::sqrt(best);
  }
  double total = 0.0;
  for (double v : nearest) total += v;
  return total / static_cast<double>(source.size());
}

}  // namespace ablreg
