#include "mvrec/geometry.hpp"

#include <stdexcept>

namespace mvrec {

bool Pose::is_valid(double tol) const {
  Eigen::Matrix3d e = R.transpose() * R - Eigen::Matrix3d::Identity();
  return e.cwiseAbs().maxCoeff() <= tol && R.determinant() > 0;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = R;
  m.block<3, 1>(0, 3) = t;
  return m;
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  Pose p;
  p.R = m.block<3, 3>(0, 0);
  p.t = m.block<3, 1>(0, 3);
  return p;
}

PointMap PointMap::empty(int h, int w) {
  PointMap m;
  m.height = h;
  m.width = w;
  m.pts.assign((size_t)h * w, Eigen::Vector3d::Zero());
  m.valid.assign((size_t)h * w, 0);
  return m;
}

long long PointMap::valid_count() const {
  long long n = 0;
  for (uint8_t v : valid) n += v ? 1 : 0;
  return n;
}

Pose relative_pose(const Pose& p_i, const Pose& p_j) { return p_j * p_i.inverse(); }

PointMap transform_points(const Pose& p, const PointMap& x) {
  PointMap out = x;
  for (size_t i = 0; i < x.pts.size(); ++i)
    if (x.valid[i]) out.pts[i] = p.apply(x.pts[i]);
  return out;
}

double scale_norm_factor(const std::vector<const PointMap*>& maps) {
  double acc = 0;
  long long n = 0;
  for (const PointMap* m : maps)
    for (size_t i = 0; i < m->pts.size(); ++i)
      if (m->valid[i]) {
        acc += m->pts[i].norm();
        ++n;
      }
  if (n == 0) throw std::invalid_argument("scale_norm_factor: no valid pixels");
  return acc / (double)n;
}

double scale_norm_factor(const std::vector<PointMap>& maps) {
  std::vector<const PointMap*> ptrs;
  ptrs.reserve(maps.size());
  for (const PointMap& m : maps) ptrs.push_back(&m);
  return scale_norm_factor(ptrs);
}

Eigen::Vector3d zero_center(std::vector<PointMap>& maps) {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  long long n = 0;
  for (const PointMap& m : maps)
    for (size_t i = 0; i < m.pts.size(); ++i)
      if (m.valid[i]) {
        c += m.pts[i];
        ++n;
      }
  if (n == 0) throw std::invalid_argument("zero_center: no valid pixels");
  c /= (double)n;
  for (PointMap& m : maps)
    for (size_t i = 0; i < m.pts.size(); ++i)
      if (m.valid[i]) m.pts[i] -= c;
  return c;
}

std::optional<Eigen::Vector2d> project_pinhole(const Pinhole& cam, const Eigen::Vector3d& x) {
  if (x.z() <= 0) return std::nullopt;
  return Eigen::Vector2d(cam.f * x.x() / x.z() + cam.cx(), cam.f * x.y() / x.z() + cam.cy());
}

PointMap depth_to_pointmap(const std::vector<double>& depth, const Pinhole& cam,
                           const Pose& cam_from_depth) {
  if ((long long)depth.size() != (long long)cam.width * cam.height)
    throw std::invalid_argument("depth_to_pointmap: depth size does not match camera");
  PointMap m = PointMap::empty(cam.height, cam.width);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      size_t i = m.idx(y, x);
      double z = depth[i];
      if (!(z > 0) || !std::isfinite(z)) continue;
      Eigen::Vector3d p((x - cam.cx()) * z / cam.f, (y - cam.cy()) * z / cam.f, z);
      m.pts[i] = cam_from_depth.apply(p);
      m.valid[i] = 1;
    }
  return m;
}

}  // namespace mvrec
