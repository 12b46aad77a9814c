#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace mvrec {

// Rigid transform, camera-from-world convention: x_cam = R * x_world + t.
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return R * x + t; }
  Pose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  // Composition: (a * b)(x) = a(b(x))
  friend Pose operator*(const Pose& a, const Pose& b) { return {a.R * b.R, a.R * b.t + a.t}; }
  bool is_valid(double tol = 1e-9) const;
  Eigen::Matrix4d matrix() const;
  static Pose from_matrix(const Eigen::Matrix4d& m);
};

// Square pixels, principal point at the image center.
struct Pinhole {
  double f = 1.0;
  int width = 0, height = 0;
  double cx() const { return 0.5 * width; }
  double cy() const { return 0.5 * height; }
};

// Per-pixel 3D coordinates in some reference camera frame. Invalid pixels
// are excluded from every reduction.
struct PointMap {
  int height = 0, width = 0;
  std::vector<Eigen::Vector3d> pts;
  std::vector<uint8_t> valid;

  static PointMap empty(int h, int w);
  size_t idx(int y, int x) const { return (size_t)y * width + x; }
  long long valid_count() const;
};

struct ConfidenceMap {
  int height = 0, width = 0;
  std::vector<double> values;  // >= 1 under the model's parameterization
};

// P_j composed with the inverse of P_i: maps frame-i coordinates to frame j.
Pose relative_pose(const Pose& p_i, const Pose& p_j);

PointMap transform_points(const Pose& p, const PointMap& x);

// Mean distance of valid points to the origin, over all maps jointly.
double scale_norm_factor(const std::vector<const PointMap*>& maps);
double scale_norm_factor(const std::vector<PointMap>& maps);

// Subtracts the joint centroid of valid points; returns it.
Eigen::Vector3d zero_center(std::vector<PointMap>& maps);

// Pixel coordinates for a camera-frame point; nullopt when z <= 0.
std::optional<Eigen::Vector2d> project_pinhole(const Pinhole& cam, const Eigen::Vector3d& x);

// Back-projects a depth image through the pinhole, then maps the points by
// cam_from_depth (e.g. relative_pose(view, reference) to express them in a
// reference frame). Nonpositive depth marks the pixel invalid.
PointMap depth_to_pointmap(const std::vector<double>& depth, const Pinhole& cam,
                           const Pose& cam_from_depth = Pose{});

}  // namespace mvrec
