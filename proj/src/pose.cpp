#include "mvrec/pose.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

#include "mvrec/rng.hpp"

namespace mvrec {

double estimate_focal_weiszfeld(const PointMap& x, const ConfidenceMap& c, int iters, double tol,
                                std::vector<double>* objective_trace) {
  if ((int)c.values.size() != x.height * x.width)
    throw std::invalid_argument("weiszfeld: confidence map size mismatch");
  double cx = 0.5 * x.width, cy = 0.5 * x.height;
  struct Obs {
    double pu, pv;  // centered pixel coords
    double ru, rv;  // x/z, y/z
    double conf;
  };
  std::vector<Obs> obs;
  obs.reserve(x.pts.size());
  for (int py = 0; py < x.height; ++py)
    for (int px = 0; px < x.width; ++px) {
      size_t i = x.idx(py, px);
      if (!x.valid[i] || !(x.pts[i].z() > 0)) continue;
      obs.push_back(Obs{px - cx, py - cy, x.pts[i].x() / x.pts[i].z(),
                        x.pts[i].y() / x.pts[i].z(), std::max(0.0, c.values[i])});
    }
  if (obs.empty()) throw std::invalid_argument("weiszfeld: no pixels with positive depth");

  auto objective = [&](double f) {
    double acc = 0;
    for (const Obs& o : obs) acc += o.conf * std::hypot(o.pu - f * o.ru, o.pv - f * o.rv);
    return acc;
  };
  auto weighted_step = [&](double f_prev, bool robust) {
    double num = 0, den = 0;
    for (const Obs& o : obs) {
      double w = o.conf;
      if (robust) {
        double r = std::hypot(o.pu - f_prev * o.ru, o.pv - f_prev * o.rv);
        w /= std::max(r, 1e-12);
      }
      num += w * (o.pu * o.ru + o.pv * o.rv);
      den += w * (o.ru * o.ru + o.rv * o.rv);
    }
    if (den <= 0) throw std::invalid_argument("weiszfeld: degenerate pointmap (rays at center)");
    return num / den;
  };

  double f = weighted_step(0.0, false);  // plain weighted least squares start
  if (objective_trace) objective_trace->push_back(objective(f));
  for (int it = 0; it < iters; ++it) {
    double fn = weighted_step(f, true);
    if (objective_trace) objective_trace->push_back(objective(fn));
    if (std::abs(fn - f) <= tol * std::max(1.0, std::abs(f))) {
      f = fn;
      break;
    }
    f = fn;
  }
  return f;
}

namespace {

Eigen::Vector2d reproject(const Pose& p, const Eigen::Vector3d& X, const Pinhole& cam) {
  Eigen::Vector3d y = p.apply(X);
  return {cam.f * y.x() / y.z() + cam.cx(), cam.f * y.y() / y.z() + cam.cy()};
}

double mean_reproj_err(const Pose& p, const std::vector<Eigen::Vector3d>& pts3d,
                       const std::vector<Eigen::Vector2d>& pts2d, const Pinhole& cam) {
  double acc = 0;
  for (size_t i = 0; i < pts3d.size(); ++i) {
    Eigen::Vector3d y = p.apply(pts3d[i]);
    if (y.z() <= 1e-9) return 1e18;
    acc += (reproject(p, pts3d[i], cam) - pts2d[i]).norm();
  }
  return acc / (double)pts3d.size();
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& w) {
  double th = w.norm();
  if (th < 1e-12) return Eigen::Matrix3d::Identity() + skew(w);
  Eigen::Matrix3d K = skew(w / th);
  return Eigen::Matrix3d::Identity() + std::sin(th) * K + (1 - std::cos(th)) * K * K;
}

// Levenberg-damped Gauss-Newton on the pixel reprojection error.
Pose refine_pose(Pose p, const std::vector<Eigen::Vector3d>& pts3d,
                 const std::vector<Eigen::Vector2d>& pts2d, const Pinhole& cam, int iters = 20) {
  double lambda = 1e-4;
  double err = mean_reproj_err(p, pts3d, pts2d, cam);
  for (int it = 0; it < iters; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
    for (size_t i = 0; i < pts3d.size(); ++i) {
      Eigen::Vector3d y = p.apply(pts3d[i]);
      if (y.z() <= 1e-9) continue;
      double iz = 1.0 / y.z();
      Eigen::Vector2d r = Eigen::Vector2d(cam.f * y.x() * iz + cam.cx(),
                                          cam.f * y.y() * iz + cam.cy()) -
                          pts2d[i];
      Eigen::Matrix<double, 2, 3> Jp;
      Jp << cam.f * iz, 0, -cam.f * y.x() * iz * iz, 0, cam.f * iz, -cam.f * y.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> Jx;
      Jx.block<3, 3>(0, 0) = -skew(p.R * pts3d[i]);  // left-perturbed rotation
      Jx.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();
      Eigen::Matrix<double, 2, 6> J = Jp * Jx;
      H += J.transpose() * J;
      b += J.transpose() * r;
    }
    Eigen::Matrix<double, 6, 6> Hd = H;
    Hd.diagonal().array() += lambda * (H.diagonal().array().abs() + 1e-12);
    Eigen::Matrix<double, 6, 1> delta = Hd.ldlt().solve(-b);
    if (!delta.allFinite()) break;
    Pose cand;
    cand.R = rodrigues(delta.head<3>()) * p.R;
    cand.t = p.t + delta.tail<3>();
    // re-orthonormalize to keep the rotation on the manifold
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cand.R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant();
    cand.R = svd.matrixU() * D * svd.matrixV().transpose();
    double cerr = mean_reproj_err(cand, pts3d, pts2d, cam);
    if (cerr < err) {
      p = cand;
      err = cerr;
      lambda = std::max(lambda * 0.5, 1e-9);
      if (err < 1e-12) break;
    } else {
      lambda *= 4;
      if (lambda > 1e6) break;
    }
  }
  return p;
}

// Direct linear transform on normalized rays; needs K >= 6.
std::optional<Pose> dlt_init(const std::vector<Eigen::Vector3d>& pts3d,
                             const std::vector<Eigen::Vector2d>& rays) {
  size_t k = pts3d.size();
  Eigen::MatrixXd A(2 * k, 12);
  for (size_t i = 0; i < k; ++i) {
    const Eigen::Vector3d& X = pts3d[i];
    double mx = rays[i].x(), my = rays[i].y();
    A.row(2 * i) << X.x(), X.y(), X.z(), 1, 0, 0, 0, 0, -mx * X.x(), -mx * X.y(), -mx * X.z(), -mx;
    A.row(2 * i + 1) << 0, 0, 0, 0, X.x(), X.y(), X.z(), 1, -my * X.x(), -my * X.y(), -my * X.z(),
        -my;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
  Eigen::Matrix<double, 12, 1> h = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> P;
  P << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8), h(9), h(10), h(11);
  Eigen::Matrix3d M = P.leftCols<3>();
  if (M.determinant() < 0) {
    P = -P;
    M = -M;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> msvd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  double scale = msvd.singularValues().mean();
  if (!(scale > 1e-12)) return std::nullopt;
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  D(2, 2) = (msvd.matrixU() * msvd.matrixV().transpose()).determinant();
  Pose p;
  p.R = msvd.matrixU() * D * msvd.matrixV().transpose();
  p.t = P.col(3) / scale;
  return p;
}

// Small-sample initialization: fit per-point depths so pairwise camera-space
// distances match the world distances, then align with Kabsch.
std::optional<Pose> depth_fit_init(const std::vector<Eigen::Vector3d>& pts3d,
                                   const std::vector<Eigen::Vector3d>& dirs) {
  size_t k = pts3d.size();
  // similarity-scale start: matching mean pairwise separations
  double dw = 0, dr = 0;
  for (size_t i = 0; i < k; ++i)
    for (size_t j = i + 1; j < k; ++j) {
      dw += (pts3d[i] - pts3d[j]).norm();
      dr += (dirs[i] - dirs[j]).norm();
    }
  if (!(dr > 1e-12)) return std::nullopt;
  Eigen::VectorXd s = Eigen::VectorXd::Constant(k, dw / dr);

  for (int it = 0; it < 30; ++it) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    for (size_t i = 0; i < k; ++i)
      for (size_t j = i + 1; j < k; ++j) {
        Eigen::Vector3d d = s[i] * dirs[i] - s[j] * dirs[j];
        double r = d.squaredNorm() - (pts3d[i] - pts3d[j]).squaredNorm();
        double ji = 2 * dirs[i].dot(d), jj = -2 * dirs[j].dot(d);
        H(i, i) += ji * ji;
        H(j, j) += jj * jj;
        H(i, j) += ji * jj;
        H(j, i) += ji * jj;
        b[i] += ji * r;
        b[j] += jj * r;
      }
    H.diagonal().array() += 1e-9;
    Eigen::VectorXd delta = H.ldlt().solve(-b);
    if (!delta.allFinite()) break;
    s += delta;
    if (delta.cwiseAbs().maxCoeff() < 1e-12 * s.cwiseAbs().maxCoeff()) break;
  }
  for (size_t i = 0; i < k; ++i)
    if (!(s[i] > 0)) return std::nullopt;  // behind the camera

  // Kabsch: world points -> camera points y_i = s_i * dirs_i
  Eigen::Vector3d cw = Eigen::Vector3d::Zero(), cc = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < k; ++i) {
    cw += pts3d[i];
    cc += s[i] * dirs[i];
  }
  cw /= (double)k;
  cc /= (double)k;
  Eigen::Matrix3d Hm = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < k; ++i) Hm += (pts3d[i] - cw) * (s[i] * dirs[i] - cc).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(Hm, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  D(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant();
  Pose p;
  p.R = svd.matrixV() * D * svd.matrixU().transpose();
  p.t = cc - p.R * cw;
  return p;
}

std::optional<Pose> solve_pose(const std::vector<Eigen::Vector3d>& pts3d,
                               const std::vector<Eigen::Vector2d>& pts2d, const Pinhole& cam) {
  size_t k = pts3d.size();
  std::vector<Eigen::Vector2d> rays(k);
  std::vector<Eigen::Vector3d> dirs(k);
  for (size_t i = 0; i < k; ++i) {
    rays[i] = {(pts2d[i].x() - cam.cx()) / cam.f, (pts2d[i].y() - cam.cy()) / cam.f};
    dirs[i] = Eigen::Vector3d(rays[i].x(), rays[i].y(), 1.0).normalized();
  }
  std::optional<Pose> best;
  double best_err = 1e18;
  auto consider = [&](std::optional<Pose> cand) {
    if (!cand) return;
    Pose refined = refine_pose(*cand, pts3d, pts2d, cam);
    double e = mean_reproj_err(refined, pts3d, pts2d, cam);
    if (e < best_err) {
      best_err = e;
      best = refined;
    }
  };
  if (k >= 6) consider(dlt_init(pts3d, rays));
  consider(depth_fit_init(pts3d, dirs));
  if (!best || best_err > 1e12) return std::nullopt;
  return best;
}

}  // namespace

std::optional<Pose> pnp_solve(const std::vector<Eigen::Vector3d>& pts3d,
                              const std::vector<Eigen::Vector2d>& pts2d, const Pinhole& cam) {
  if (pts3d.size() != pts2d.size())
    throw std::invalid_argument("pnp_solve: correspondence count mismatch");
  if (pts3d.size() < 4) throw std::invalid_argument("pnp_solve: need at least 4 correspondences");
  return solve_pose(pts3d, pts2d, cam);
}

std::optional<RansacResult> ransac_pnp(const std::vector<Eigen::Vector3d>& pts3d,
                                       const std::vector<Eigen::Vector2d>& pts2d,
                                       const Pinhole& cam, const RansacConfig& cfg) {
  if (cfg.iterations < 1 || cfg.threshold_px <= 0)
    throw std::invalid_argument("ransac_pnp: bad config");
  size_t k = pts3d.size();
  int sample = std::max(cfg.min_sample, 4);
  if ((int)k < sample) throw std::invalid_argument("ransac_pnp: fewer points than sample size");

  Rng rng(cfg.seed);
  auto count_inliers = [&](const Pose& p, std::vector<uint8_t>* mask) {
    int n = 0;
    if (mask) mask->assign(k, 0);
    for (size_t i = 0; i < k; ++i) {
      Eigen::Vector3d y = p.apply(pts3d[i]);
      if (y.z() <= 1e-9) continue;
      double e = (Eigen::Vector2d(cam.f * y.x() / y.z() + cam.cx(),
                                  cam.f * y.y() / y.z() + cam.cy()) -
                  pts2d[i])
                     .norm();
      if (e < cfg.threshold_px) {
        ++n;
        if (mask) (*mask)[i] = 1;
      }
    }
    return n;
  };

  std::optional<Pose> best;
  int best_inliers = -1;
  std::vector<int> idx(sample);
  std::vector<Eigen::Vector3d> s3(sample);
  std::vector<Eigen::Vector2d> s2(sample);
  for (int it = 0; it < cfg.iterations; ++it) {
    rng.sample_indices((int)k, sample, idx.begin());
    for (int i = 0; i < sample; ++i) {
      s3[i] = pts3d[idx[i]];
      s2[i] = pts2d[idx[i]];
    }
    std::optional<Pose> cand = solve_pose(s3, s2, cam);
    if (!cand) continue;
    int n = count_inliers(*cand, nullptr);
    if (n > best_inliers) {
      best_inliers = n;
      best = *cand;
    }
  }
  if (!best || best_inliers < 6) return std::nullopt;

  // refine on the inlier set, twice, re-selecting inliers in between
  RansacResult res;
  res.pose = *best;
  for (int round = 0; round < 2; ++round) {
    std::vector<uint8_t> mask;
    count_inliers(res.pose, &mask);
    std::vector<Eigen::Vector3d> in3;
    std::vector<Eigen::Vector2d> in2;
    for (size_t i = 0; i < k; ++i)
      if (mask[i]) {
        in3.push_back(pts3d[i]);
        in2.push_back(pts2d[i]);
      }
    if (in3.size() < 6) break;
    res.pose = refine_pose(res.pose, in3, in2, cam);
  }
  res.n_inliers = count_inliers(res.pose, &res.inliers);
  if (res.n_inliers < 6) return std::nullopt;
  return res;
}

double rotation_angle_deg(const Eigen::Matrix3d& R) {
  double c = 0.5 * (R.trace() - 1.0);
  c = std::min(1.0, std::max(-1.0, c));
  return std::acos(c) * 180.0 / M_PI;
}

double translation_direction_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  double na = a.norm(), nb = b.norm();
  const double eps = 1e-9;
  if (na < eps && nb < eps) return 0.0;
  if (na < eps || nb < eps) return 90.0;
  double c = a.dot(b) / (na * nb);
  c = std::min(1.0, std::max(-1.0, c));
  return std::acos(c) * 180.0 / M_PI;
}

PoseErrorReport pose_errors(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("pose_errors: count mismatch");
  PoseErrorReport rep;
  int n = (int)pred.size();
  std::vector<double> rot_errs, trans_errs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      Pose rp = relative_pose(pred[i], pred[j]);
      Pose rg = relative_pose(gt[i], gt[j]);
      rot_errs.push_back(rotation_angle_deg(rp.R * rg.R.transpose()));
      trans_errs.push_back(translation_direction_angle_deg(rp.t, rg.t));
    }
  rep.n_pairs = (int)rot_errs.size();
  if (rep.n_pairs == 0) return rep;
  int rra = 0, rta = 0;
  for (int p = 0; p < rep.n_pairs; ++p) {
    if (rot_errs[p] <= 15.0) ++rra;
    if (trans_errs[p] <= 15.0) ++rta;
  }
  double maa = 0;
  for (int tau = 1; tau <= 30; ++tau) {
    int ok = 0;
    for (int p = 0; p < rep.n_pairs; ++p)
      if (std::max(rot_errs[p], trans_errs[p]) <= (double)tau) ++ok;
    maa += (double)ok / rep.n_pairs;
  }
  maa /= 30.0;
  rep.rre15 = 1.0 - (double)rra / rep.n_pairs;
  rep.rte15 = 1.0 - (double)rta / rep.n_pairs;
  rep.mae30 = 1.0 - maa;
  return rep;
}

}  // namespace mvrec
