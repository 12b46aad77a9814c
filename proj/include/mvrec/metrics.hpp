#pragma once

#include <vector>

#include "mvrec/geometry.hpp"

namespace mvrec {

// Normalized per-pixel distances between prediction and ground truth:
// both clouds are zero-centered jointly over views, scale factors are taken
// on the centered clouds, then per-pixel ||p/z - g/zbar|| on pixels valid in
// both. Order of the returned values follows view-major pixel order.
std::vector<double> normalized_pixel_distances(const std::vector<PointMap>& pred,
                                               const std::vector<PointMap>& gt);

double normalized_distance(const std::vector<PointMap>& pred, const std::vector<PointMap>& gt);

double distance_accuracy(const std::vector<PointMap>& pred, const std::vector<PointMap>& gt,
                         double tau = 0.2);

// Symmetric mean nearest-neighbor distance between two clouds. Exact; the
// spatial grid only accelerates the search.
double chamfer(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b,
               bool use_grid = true);

// Chamfer with the same center+scale normalization as ND applied to each
// cloud, optionally subsampled to at most max_points per cloud (seeded).
double chamfer_normalized(std::vector<Eigen::Vector3d> a, std::vector<Eigen::Vector3d> b,
                          long long max_points = 50000, uint64_t seed = 0);

// Images are channel-major 3*H*W in [0,1].
double psnr(const std::vector<double>& a, const std::vector<double>& b);
double ssim(const std::vector<double>& a, const std::vector<double>& b, int width, int height);

struct MetricReport {
  // raw, unscaled values; reporting scales are applied only at serialization
  double nd = 0;
  double dac = 0;        // fraction in [0,1]
  double cd_mean = 0;
  double cd_median = 0;
  double rre15 = 0, rte15 = 0, mae30 = 0;  // fractions in [0,1]
  double psnr_db = 0;
  double ssim_val = 0;
  bool has_mvs = false, has_pose = false, has_nvs = false;
  int n_trajectories = 0;
  int n_skipped = 0;
};

double median(std::vector<double> v);

}  // namespace mvrec
