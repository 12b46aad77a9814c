#include "mvrec/splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mvrec {

namespace {

constexpr double kCovFloor = 0.3;    // px^2 added to the projected covariance diagonal
constexpr double kCutoffQ2 = 9.0;    // 3 sigma elliptical footprint
constexpr double kMinAlpha = 1e-8;   // contributions below this are dropped
constexpr double kMinDepth = 1e-6;

struct Projected {
  bool ok = false;
  double u = 0, v = 0;               // projected center, pixel coords
  double ia = 0, ib = 0, ic = 0;     // inverse 2D covariance
  double a = 0, b = 0, c = 0;        // floored 2D covariance
  double J[2][3] = {};
  double S3[3][3] = {};              // 3D covariance
  double R[3][3] = {};
  double qn[4] = {};                 // normalized quaternion
  double qnorm = 1;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

void quat_to_rot(const double q[4], double R[3][3]) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  R[0][0] = 1 - 2 * (y * y + z * z);
  R[0][1] = 2 * (x * y - w * z);
  R[0][2] = 2 * (x * z + w * y);
  R[1][0] = 2 * (x * y + w * z);
  R[1][1] = 1 - 2 * (x * x + z * z);
  R[1][2] = 2 * (y * z - w * x);
  R[2][0] = 2 * (x * z - w * y);
  R[2][1] = 2 * (y * z + w * x);
  R[2][2] = 1 - 2 * (x * x + y * y);
}

Projected project_gaussian(const double* center, const double* scale, const double* quat,
                           const Pinhole& cam) {
  Projected p;
  double cx = center[0], cy = center[1], cz = center[2];
  if (!(cz > kMinDepth)) return p;

  p.qnorm = std::sqrt(quat[0] * quat[0] + quat[1] * quat[1] + quat[2] * quat[2] +
                      quat[3] * quat[3]);
  if (p.qnorm < 1e-12) return p;
  for (int i = 0; i < 4; ++i) p.qn[i] = quat[i] / p.qnorm;
  quat_to_rot(p.qn, p.R);

  // Sigma3 = R diag(S^2) R^T
  double M[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) M[i][j] = p.R[i][j] * scale[j];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      p.S3[i][j] = M[i][0] * M[j][0] + M[i][1] * M[j][1] + M[i][2] * M[j][2];

  double f = cam.f, iz = 1.0 / cz;
  p.u = f * cx * iz + cam.cx();
  p.v = f * cy * iz + cam.cy();
  p.J[0][0] = f * iz;
  p.J[0][1] = 0;
  p.J[0][2] = -f * cx * iz * iz;
  p.J[1][0] = 0;
  p.J[1][1] = f * iz;
  p.J[1][2] = -f * cy * iz * iz;

  // Sigma2 = J Sigma3 J^T + floor
  double JS[2][3];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      JS[i][j] = p.J[i][0] * p.S3[0][j] + p.J[i][1] * p.S3[1][j] + p.J[i][2] * p.S3[2][j];
  p.a = JS[0][0] * p.J[0][0] + JS[0][1] * p.J[0][1] + JS[0][2] * p.J[0][2] + kCovFloor;
  p.b = JS[0][0] * p.J[1][0] + JS[0][1] * p.J[1][1] + JS[0][2] * p.J[1][2];
  p.c = JS[1][0] * p.J[1][0] + JS[1][1] * p.J[1][1] + JS[1][2] * p.J[1][2] + kCovFloor;
  double det = p.a * p.c - p.b * p.b;
  if (!(det > 0)) return p;
  p.ia = p.c / det;
  p.ib = -p.b / det;
  p.ic = p.a / det;

  double rx = 3.0 * std::sqrt(p.a), ry = 3.0 * std::sqrt(p.c);
  p.x0 = std::max(0, (int)std::ceil(p.u - rx));
  p.x1 = std::min(cam.width - 1, (int)std::floor(p.u + rx));
  p.y0 = std::max(0, (int)std::ceil(p.v - ry));
  p.y1 = std::min(cam.height - 1, (int)std::floor(p.v + ry));
  p.ok = p.x0 <= p.x1 && p.y0 <= p.y1;
  return p;
}

// Depth-ascending order over renderable Gaussians; index breaks ties.
std::vector<int> depth_order(long long k, const double* centers) {
  std::vector<int> order;
  order.reserve((size_t)k);
  for (long long i = 0; i < k; ++i)
    if (centers[i * 3 + 2] > kMinDepth) order.push_back((int)i);
  std::sort(order.begin(), order.end(), [centers](int a, int b) {
    double za = centers[(size_t)a * 3 + 2], zb = centers[(size_t)b * 3 + 2];
    if (za != zb) return za < zb;
    return a < b;
  });
  return order;
}

void splat_forward(long long k, const double* centers, const double* scales, const double* quats,
                   const double* opac, const double* colors, const Pinhole& cam, double* image,
                   double* trans) {
  size_t hw = (size_t)cam.width * cam.height;
  std::fill(image, image + 3 * hw, 0.0);
  std::fill(trans, trans + hw, 1.0);
  std::vector<int> order = depth_order(k, centers);
  for (int gi : order) {
    Projected p = project_gaussian(centers + (size_t)gi * 3, scales + (size_t)gi * 3,
                                   quats + (size_t)gi * 4, cam);
    if (!p.ok) continue;
    double alpha = opac[gi];
    const double* col = colors + (size_t)gi * 3;
    for (int y = p.y0; y <= p.y1; ++y) {
      for (int x = p.x0; x <= p.x1; ++x) {
        double dx = x - p.u, dy = y - p.v;
        double q2 = p.ia * dx * dx + 2 * p.ib * dx * dy + p.ic * dy * dy;
        if (q2 > kCutoffQ2) continue;
        double g = std::exp(-0.5 * q2);
        double aeff = alpha * g;
        if (aeff < kMinAlpha) continue;
        size_t px = (size_t)y * cam.width + x;
        double w = trans[px] * aeff;
        image[px] += w * col[0];
        image[hw + px] += w * col[1];
        image[2 * hw + px] += w * col[2];
        trans[px] *= (1.0 - aeff);
      }
    }
  }
}

void splat_backward(long long k, const double* centers, const double* scales, const double* quats,
                    const double* opac, const double* colors, const Pinhole& cam,
                    const double* g_image, const double* trans_final, double* g_centers,
                    double* g_scales, double* g_quats, double* g_opac, double* g_colors) {
  size_t hw = (size_t)cam.width * cam.height;
  std::vector<double> tcur(trans_final, trans_final + hw);
  std::vector<double> suffix(3 * hw, 0.0);  // sum of T_j a_j c_j over already-visited (deeper) splats
  std::vector<int> order = depth_order(k, centers);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    int gi = *it;
    Projected p = project_gaussian(centers + (size_t)gi * 3, scales + (size_t)gi * 3,
                                   quats + (size_t)gi * 4, cam);
    if (!p.ok) continue;
    double alpha = opac[gi];
    const double* col = colors + (size_t)gi * 3;

    double gu = 0, gv = 0, galpha = 0;
    double gci00 = 0, gci01 = 0, gci11 = 0;  // grad wrt inverse 2D covariance
    double gc0 = 0, gc1 = 0, gc2 = 0;
    for (int y = p.y0; y <= p.y1; ++y) {
      for (int x = p.x0; x <= p.x1; ++x) {
        double dx = x - p.u, dy = y - p.v;
        double q2 = p.ia * dx * dx + 2 * p.ib * dx * dy + p.ic * dy * dy;
        if (q2 > kCutoffQ2) continue;
        double g = std::exp(-0.5 * q2);
        double aeff = alpha * g;
        if (aeff < kMinAlpha) continue;
        size_t px = (size_t)y * cam.width + x;
        double om = 1.0 - aeff;
        double tb = tcur[px] / om;
        const double gim[3] = {g_image[px], g_image[hw + px], g_image[2 * hw + px]};
        double daeff = 0;
        for (int ch = 0; ch < 3; ++ch) {
          daeff += gim[ch] * (tb * col[ch] - suffix[ch * hw + px] / om);
        }
        gc0 += gim[0] * tb * aeff;
        gc1 += gim[1] * tb * aeff;
        gc2 += gim[2] * tb * aeff;
        galpha += daeff * g;
        double dq2 = -0.5 * g * alpha * daeff;
        gu -= dq2 * 2 * (p.ia * dx + p.ib * dy);
        gv -= dq2 * 2 * (p.ib * dx + p.ic * dy);
        gci00 += dq2 * dx * dx;
        gci01 += dq2 * dx * dy;
        gci11 += dq2 * dy * dy;
        for (int ch = 0; ch < 3; ++ch) suffix[ch * hw + px] += tb * aeff * col[ch];
        tcur[px] = tb;
      }
    }
    g_colors[(size_t)gi * 3] += gc0;
    g_colors[(size_t)gi * 3 + 1] += gc1;
    g_colors[(size_t)gi * 3 + 2] += gc2;
    g_opac[gi] += galpha;

    // grad through the 2x2 inverse: GC2 = -Ci * GCi * Ci
    double Ci[2][2] = {{p.ia, p.ib}, {p.ib, p.ic}};
    double GCi[2][2] = {{gci00, gci01}, {gci01, gci11}};
    double T1[2][2];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) T1[i][j] = Ci[i][0] * GCi[0][j] + Ci[i][1] * GCi[1][j];
    double G2[2][2];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) G2[i][j] = -(T1[i][0] * Ci[0][j] + T1[i][1] * Ci[1][j]);

    // GS3 = J^T G2 J
    double GS3[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0;
        for (int r = 0; r < 2; ++r)
          for (int s = 0; s < 2; ++s) acc += p.J[r][i] * G2[r][s] * p.J[s][j];
        GS3[i][j] = acc;
      }

    // GJ = 2 G2 J S3
    double JS3[2][3];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j)
        JS3[i][j] = p.J[i][0] * p.S3[0][j] + p.J[i][1] * p.S3[1][j] + p.J[i][2] * p.S3[2][j];
    double GJ[2][3];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j)
        GJ[i][j] = 2 * (G2[i][0] * JS3[0][j] + G2[i][1] * JS3[1][j]);

    // GM = 2 GS3 M, M = R diag(S)
    double M[3][3];
    const double* sc = scales + (size_t)gi * 3;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) M[i][j] = p.R[i][j] * sc[j];
    double GM[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        GM[i][j] = 2 * (GS3[i][0] * M[0][j] + GS3[i][1] * M[1][j] + GS3[i][2] * M[2][j]);

    double GR[3][3];
    for (int j = 0; j < 3; ++j) {
      double gs = 0;
      for (int i = 0; i < 3; ++i) {
        GR[i][j] = GM[i][j] * sc[j];
        gs += GM[i][j] * p.R[i][j];
      }
      g_scales[(size_t)gi * 3 + j] += gs;
    }

    // quaternion chain: full-matrix contraction with dR/dq of the unit quat,
    // then back through the normalization
    double w = p.qn[0], qx = p.qn[1], qy = p.qn[2], qz = p.qn[3];
    double dRw[3][3] = {{0, -2 * qz, 2 * qy}, {2 * qz, 0, -2 * qx}, {-2 * qy, 2 * qx, 0}};
    double dRx[3][3] = {{0, 2 * qy, 2 * qz}, {2 * qy, -4 * qx, -2 * w}, {2 * qz, 2 * w, -4 * qx}};
    double dRy[3][3] = {{-4 * qy, 2 * qx, 2 * w}, {2 * qx, 0, 2 * qz}, {-2 * w, 2 * qz, -4 * qy}};
    double dRz[3][3] = {{-4 * qz, -2 * w, 2 * qx}, {2 * w, -4 * qz, 2 * qy}, {2 * qx, 2 * qy, 0}};
    double gqn[4] = {0, 0, 0, 0};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        gqn[0] += GR[i][j] * dRw[i][j];
        gqn[1] += GR[i][j] * dRx[i][j];
        gqn[2] += GR[i][j] * dRy[i][j];
        gqn[3] += GR[i][j] * dRz[i][j];
      }
    double dot = gqn[0] * p.qn[0] + gqn[1] * p.qn[1] + gqn[2] * p.qn[2] + gqn[3] * p.qn[3];
    for (int i = 0; i < 4; ++i)
      g_quats[(size_t)gi * 4 + i] += (gqn[i] - p.qn[i] * dot) / p.qnorm;

    // center: projection of the mean plus the Jacobian's own dependence
    double f = cam.f;
    double cx = centers[(size_t)gi * 3], cy = centers[(size_t)gi * 3 + 1],
           cz = centers[(size_t)gi * 3 + 2];
    double iz = 1.0 / cz;
    gc0 = p.J[0][0] * gu + p.J[1][0] * gv;
    gc1 = p.J[0][1] * gu + p.J[1][1] * gv;
    gc2 = p.J[0][2] * gu + p.J[1][2] * gv;
    gc0 += GJ[0][2] * (-f * iz * iz);
    gc1 += GJ[1][2] * (-f * iz * iz);
    gc2 += GJ[0][0] * (-f * iz * iz) + GJ[1][1] * (-f * iz * iz) +
           GJ[0][2] * (2 * f * cx * iz * iz * iz) + GJ[1][2] * (2 * f * cy * iz * iz * iz);
    g_centers[(size_t)gi * 3] += gc0;
    g_centers[(size_t)gi * 3 + 1] += gc1;
    g_centers[(size_t)gi * 3 + 2] += gc2;
  }
}

}  // namespace

GaussianSet assemble_gaussians(const std::vector<PointMap>& pointmaps,
                               const std::vector<std::vector<double>>& images,
                               const std::vector<GsParamMaps>& params) {
  if (pointmaps.size() != images.size() || pointmaps.size() != params.size())
    throw std::invalid_argument("assemble_gaussians: view count mismatch");
  GaussianSet g;
  for (size_t v = 0; v < pointmaps.size(); ++v) {
    const PointMap& pm = pointmaps[v];
    size_t hw = (size_t)pm.height * pm.width;
    if (images[v].size() != 3 * hw) throw std::invalid_argument("assemble_gaussians: image size");
    for (size_t p = 0; p < hw; ++p) {
      if (!pm.valid[p]) continue;
      g.centers.push_back(pm.pts[p]);
      g.scales.emplace_back(params[v].scales[p * 3], params[v].scales[p * 3 + 1],
                            params[v].scales[p * 3 + 2]);
      g.quats.emplace_back(params[v].quats[p * 4], params[v].quats[p * 4 + 1],
                           params[v].quats[p * 4 + 2], params[v].quats[p * 4 + 3]);
      g.opacities.push_back(params[v].opac[p]);
      g.colors.emplace_back(images[v][p], images[v][hw + p], images[v][2 * hw + p]);
    }
  }
  return g;
}

GaussianSet heuristic_gaussians(const std::vector<PointMap>& pointmaps,
                                const std::vector<std::vector<double>>& images,
                                const std::vector<ConfidenceMap>& confs, double drop_pct) {
  if (pointmaps.size() != images.size() || pointmaps.size() != confs.size())
    throw std::invalid_argument("heuristic_gaussians: view count mismatch");
  // global confidence ranking over valid pixels
  std::vector<std::pair<double, std::pair<int, int>>> ranked;  // (conf, (view, pixel))
  for (size_t v = 0; v < pointmaps.size(); ++v) {
    size_t hw = (size_t)pointmaps[v].height * pointmaps[v].width;
    for (size_t p = 0; p < hw; ++p)
      if (pointmaps[v].valid[p]) ranked.push_back({confs[v].values[p], {(int)v, (int)p}});
  }
  std::sort(ranked.begin(), ranked.end());
  size_t n_drop = (size_t)std::llround(ranked.size() * drop_pct / 100.0);
  std::vector<std::vector<uint8_t>> keep(pointmaps.size());
  for (size_t v = 0; v < pointmaps.size(); ++v)
    keep[v].assign((size_t)pointmaps[v].height * pointmaps[v].width, 1);
  for (size_t i = 0; i < n_drop && i < ranked.size(); ++i)
    keep[ranked[i].second.first][ranked[i].second.second] = 0;

  GaussianSet g;
  for (size_t v = 0; v < pointmaps.size(); ++v) {
    const PointMap& pm = pointmaps[v];
    size_t hw = (size_t)pm.height * pm.width;
    for (size_t p = 0; p < hw; ++p) {
      if (!pm.valid[p] || !keep[v][p]) continue;
      g.centers.push_back(pm.pts[p]);
      g.scales.emplace_back(0.001, 0.001, 0.001);
      g.quats.emplace_back(1, 0, 0, 0);
      g.opacities.push_back(1.0 - 1e-6);
      g.colors.emplace_back(images[v][p], images[v][hw + p], images[v][2 * hw + p]);
    }
  }
  return g;
}

GaussianSet pixel_footprint_gaussians(const PointMap& pm, const std::vector<double>& image,
                                      double focal, double kappa, double opacity) {
  GaussianSet g;
  size_t hw = (size_t)pm.height * pm.width;
  for (size_t p = 0; p < hw; ++p) {
    if (!pm.valid[p]) continue;
    double s = kappa * pm.pts[p].z() / focal;
    if (!(s > 0)) continue;
    g.centers.push_back(pm.pts[p]);
    g.scales.emplace_back(s, s, s);
    g.quats.emplace_back(1, 0, 0, 0);
    g.opacities.push_back(opacity);
    g.colors.emplace_back(image[p], image[hw + p], image[2 * hw + p]);
  }
  return g;
}

namespace {
Eigen::Vector4d quat_mul(const Eigen::Vector4d& p, const Eigen::Vector4d& q) {
  return {p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
          p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
          p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
          p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]};
}

Eigen::Vector4d rot_to_quat(const Eigen::Matrix3d& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  return {q.w(), q.x(), q.y(), q.z()};
}
}  // namespace

GaussianSet transform_gaussians(const GaussianSet& g, const Pose& p_ref, const Pose& p_tgt,
                                double z, double zbar) {
  if (!(z > 0)) throw std::invalid_argument("transform_gaussians: nonpositive scale factor");
  Pose rel = relative_pose(p_ref, p_tgt);
  Eigen::Vector4d qrel = rot_to_quat(rel.R);
  double s = zbar / z;
  GaussianSet out = g;
  for (size_t i = 0; i < g.size(); ++i) {
    out.centers[i] = rel.apply(s * g.centers[i]);
    out.scales[i] = s * g.scales[i];
    out.quats[i] = quat_mul(qrel, g.quats[i]);
  }
  return out;
}

SplatImage render_splats(const GaussianSet& g, const Pinhole& cam) {
  size_t hw = (size_t)cam.width * cam.height;
  SplatImage out;
  out.height = cam.height;
  out.width = cam.width;
  out.rgb.assign(3 * hw, 0.0);
  out.alpha.assign(hw, 0.0);
  if (g.size() == 0) return out;
  std::vector<double> centers(g.size() * 3), scales(g.size() * 3), quats(g.size() * 4),
      colors(g.size() * 3);
  for (size_t i = 0; i < g.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      centers[i * 3 + c] = g.centers[i][c];
      scales[i * 3 + c] = g.scales[i][c];
      colors[i * 3 + c] = g.colors[i][c];
    }
    for (int c = 0; c < 4; ++c) quats[i * 4 + c] = g.quats[i][c];
  }
  std::vector<double> trans(hw);
  splat_forward((long long)g.size(), centers.data(), scales.data(), quats.data(),
                g.opacities.data(), colors.data(), cam, out.rgb.data(), trans.data());
  for (size_t p = 0; p < hw; ++p) out.alpha[p] = 1.0 - trans[p];
  return out;
}

GaussTensors concat_gaussians(const std::vector<GaussTensors>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_gaussians: empty list");
  std::vector<Tensor> c, s, q, o, col;
  for (const GaussTensors& p : parts) {
    c.push_back(p.centers);
    s.push_back(p.scales);
    q.push_back(p.quats);
    o.push_back(reshape(p.opacities, {p.opacities.shape[0], 1}));
    col.push_back(p.colors);
  }
  GaussTensors out;
  out.centers = concat_rows(c);
  out.scales = concat_rows(s);
  out.quats = concat_rows(q);
  Tensor ocat = concat_rows(o);
  out.opacities = reshape(ocat, {ocat.shape[0]});
  out.colors = concat_rows(col);
  return out;
}

GaussTensors transform_gaussians_t(const GaussTensors& g, const Pose& rel, const Tensor& z,
                                   double zbar) {
  Tensor s = scale_const(reciprocal(z), zbar);  // {1}
  Eigen::Vector4d qrel = rot_to_quat(rel.R);

  Tensor rt = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rt.at((size_t)i * 3 + j) = rel.R(j, i);
  Tensor tvec = Tensor::zeros({3});
  for (int i = 0; i < 3; ++i) tvec.at(i) = rel.t[i];

  // q' = qrel (x) q as a right-multiplication by L^T
  Tensor lt = Tensor::zeros({4, 4});
  double pw = qrel[0], px = qrel[1], py = qrel[2], pz = qrel[3];
  double L[4][4] = {{pw, -px, -py, -pz}, {px, pw, -pz, py}, {py, pz, pw, -px}, {pz, -py, px, pw}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) lt.at((size_t)i * 4 + j) = L[j][i];

  GaussTensors out;
  out.centers = row_broadcast_add(matmul(mul_scalar_t(g.centers, s), rt), tvec);
  out.scales = mul_scalar_t(g.scales, s);
  out.quats = matmul(g.quats, lt);
  out.opacities = g.opacities;
  out.colors = g.colors;
  return out;
}

Tensor render_splats_t(const GaussTensors& g, const Pinhole& cam) {
  long long k = g.centers.shape[0];
  if (g.centers.shape != Shape{(int)k, 3} || g.scales.shape != Shape{(int)k, 3} ||
      g.quats.shape != Shape{(int)k, 4} || g.opacities.shape != Shape{(int)k} ||
      g.colors.shape != Shape{(int)k, 3})
    throw std::invalid_argument("render_splats_t: inconsistent gaussian tensor shapes");

  size_t hw = (size_t)cam.width * cam.height;
  Tensor image = Tensor::zeros({3, cam.height, cam.width});
  auto trans = std::make_shared<std::vector<double>>(hw);
  splat_forward(k, g.centers.ptr(), g.scales.ptr(), g.quats.ptr(), g.opacities.ptr(),
                g.colors.ptr(), cam, image.ptr(), trans->data());

  const Tensor* ins[5] = {&g.centers, &g.scales, &g.quats, &g.opacities, &g.colors};
  Graph* graph = nullptr;
  std::vector<int> ids;
  bool tracked[5];
  for (int i = 0; i < 5; ++i) {
    tracked[i] = ins[i]->tracked();
    if (tracked[i]) {
      if (graph && ins[i]->graph != graph)
        throw std::invalid_argument("render_splats_t: mixed graphs");
      graph = ins[i]->graph;
      ids.push_back(ins[i]->node);
    }
  }
  if (!graph) {
    if (!all_finite(*image.data)) throw std::runtime_error("render_splats_t: non-finite output");
    return image;
  }
  auto dc = g.centers.data, dsc = g.scales.data, dq = g.quats.data, dop = g.opacities.data,
       dcol = g.colors.data;
  bool t0 = tracked[0], t1 = tracked[1], t2 = tracked[2], t3 = tracked[3], t4 = tracked[4];
  return graph->track(
      std::move(image), "render_splats", std::move(ids),
      [k, cam, dc, dsc, dq, dop, dcol, trans, t0, t1, t2, t3,
       t4](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gin) {
        std::vector<double> gc((size_t)k * 3, 0.0), gs((size_t)k * 3, 0.0),
            gq((size_t)k * 4, 0.0), go((size_t)k, 0.0), gcol((size_t)k * 3, 0.0);
        splat_backward(k, dc->data(), dsc->data(), dq->data(), dop->data(), dcol->data(), cam,
                       gout.data(), trans->data(), gc.data(), gs.data(), gq.data(), go.data(),
                       gcol.data());
        size_t slot = 0;
        auto emit = [&](bool on, const std::vector<double>& src) {
          if (!on) return;
          std::vector<double>& dst = *gin[slot++];
          for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        };
        emit(t0, gc);
        emit(t1, gs);
        emit(t2, gq);
        emit(t3, go);
        emit(t4, gcol);
      });
}

GaussianSet gaussians_from_tensors(const GaussTensors& g) {
  long long k = g.centers.shape[0];
  GaussianSet out;
  out.centers.resize(k);
  out.scales.resize(k);
  out.quats.resize(k);
  out.opacities.resize(k);
  out.colors.resize(k);
  for (long long i = 0; i < k; ++i) {
    for (int c = 0; c < 3; ++c) {
      out.centers[i][c] = g.centers.at(i * 3 + c);
      out.scales[i][c] = g.scales.at(i * 3 + c);
      out.colors[i][c] = g.colors.at(i * 3 + c);
    }
    for (int c = 0; c < 4; ++c) out.quats[i][c] = g.quats.at(i * 4 + c);
    out.opacities[i] = g.opacities.at(i);
  }
  return out;
}

}  // namespace mvrec
