#pragma once

#include <optional>
#include <vector>

#include "mvrec/geometry.hpp"

namespace mvrec {

struct RansacConfig {
  int iterations = 256;
  double threshold_px = 2.0;  // inlier reprojection threshold
  int min_sample = 4;
  uint64_t seed = 0;
};

// Robust focal estimate: iteratively reweighted closed-form updates driving
// the weighted sum of residual norms down; converged when |df|/f < tol.
// Pixels with nonpositive depth are skipped; throws when none remain.
double estimate_focal_weiszfeld(const PointMap& x, const ConfidenceMap& c, int iters = 32,
                                double tol = 1e-9, std::vector<double>* objective_trace = nullptr);

// Camera-from-world pose from 2D-3D correspondences: linear initialization
// (DLT for K >= 6, pairwise-distance depth fit below that) refined by
// Gauss-Newton on the reprojection error. nullopt on degenerate input.
std::optional<Pose> pnp_solve(const std::vector<Eigen::Vector3d>& pts3d,
                              const std::vector<Eigen::Vector2d>& pts2d, const Pinhole& cam);

struct RansacResult {
  Pose pose;
  std::vector<uint8_t> inliers;
  int n_inliers = 0;
};

// Best-inlier-count model over seeded minimal samples, refined on the full
// inlier set; nullopt when no hypothesis reaches 6 inliers.
std::optional<RansacResult> ransac_pnp(const std::vector<Eigen::Vector3d>& pts3d,
                                       const std::vector<Eigen::Vector2d>& pts2d,
                                       const Pinhole& cam, const RansacConfig& cfg);

double rotation_angle_deg(const Eigen::Matrix3d& R);
// Angle between translation directions; scale-free. Both near zero counts
// as agreement, exactly one near zero as maximally wrong (90 degrees).
double translation_direction_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

struct PoseErrorReport {
  double rre15 = 0;  // 1 - RRA@15, fraction in [0,1]
  double rte15 = 0;  // 1 - RTA@15
  double mae30 = 0;  // 1 - mAA@30
  int n_pairs = 0;
};

// Pairwise relative-pose errors over all ordered pairs i<j.
PoseErrorReport pose_errors(const std::vector<Pose>& pred, const std::vector<Pose>& gt);

}  // namespace mvrec
