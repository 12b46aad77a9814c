#include "mvrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "mvrec/rng.hpp"

namespace mvrec {

std::vector<double> normalized_pixel_distances(const std::vector<PointMap>& pred,
                                               const std::vector<PointMap>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw std::invalid_argument("normalized_pixel_distances: view count mismatch");
  std::vector<PointMap> p = pred, g = gt;
  for (size_t v = 0; v < p.size(); ++v) {
    if (p[v].height != g[v].height || p[v].width != g[v].width)
      throw std::invalid_argument("normalized_pixel_distances: resolution mismatch");
    // reductions run over pixels valid on both sides
    for (size_t i = 0; i < p[v].valid.size(); ++i) {
      uint8_t both = p[v].valid[i] && g[v].valid[i];
      p[v].valid[i] = both;
      g[v].valid[i] = both;
    }
  }
  zero_center(p);
  zero_center(g);
  double z = scale_norm_factor(p);
  double zbar = scale_norm_factor(g);
  if (!(z > 0) || !(zbar > 0))
    throw std::invalid_argument("normalized_pixel_distances: degenerate cloud at origin");
  std::vector<double> out;
  for (size_t v = 0; v < p.size(); ++v)
    for (size_t i = 0; i < p[v].pts.size(); ++i)
      if (p[v].valid[i]) out.push_back((p[v].pts[i] / z - g[v].pts[i] / zbar).norm());
  if (out.empty()) throw std::invalid_argument("normalized_pixel_distances: empty valid set");
  return out;
}

double normalized_distance(const std::vector<PointMap>& pred, const std::vector<PointMap>& gt) {
  std::vector<double> d = normalized_pixel_distances(pred, gt);
  double acc = 0;
  for (double x : d) acc += x;
  return acc / (double)d.size();
}

double distance_accuracy(const std::vector<PointMap>& pred, const std::vector<PointMap>& gt,
                         double tau) {
  std::vector<double> d = normalized_pixel_distances(pred, gt);
  long long ok = 0;
  for (double x : d)
    if (x <= tau) ++ok;
  return (double)ok / (double)d.size();
}

namespace {

struct CellKey {
  int64_t x, y, z;
  bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};
struct CellHash {
  size_t operator()(const CellKey& k) const {
    uint64_t h = (uint64_t)k.x * 0x9e3779b97f4a7c15ull;
    h ^= (uint64_t)k.y * 0xc2b2ae3d27d4eb4full + (h << 6);
    h ^= (uint64_t)k.z * 0x165667b19e3779f9ull + (h >> 3);
    return (size_t)h;
  }
};

class PointGrid {
 public:
  PointGrid(const std::vector<Eigen::Vector3d>& pts, double cell) : pts_(pts), cell_(cell) {
    kmin_ = kmax_ = key(pts[0]);
    for (size_t i = 0; i < pts.size(); ++i) {
      CellKey k = key(pts[i]);
      cells_[k].push_back((int)i);
      kmin_ = CellKey{std::min(kmin_.x, k.x), std::min(kmin_.y, k.y), std::min(kmin_.z, k.z)};
      kmax_ = CellKey{std::max(kmax_.x, k.x), std::max(kmax_.y, k.y), std::max(kmax_.z, k.z)};
    }
  }

  // Exact nearest distance via expanding Chebyshev shells: a shell at ring k
  // cannot contain anything closer than (k-1)*cell, which bounds the stop.
  double nearest_distance(const Eigen::Vector3d& q) const {
    CellKey c = key(q);
    int64_t to_box = std::max({int64_t(0), kmin_.x - c.x, c.x - kmax_.x, kmin_.y - c.y,
                               c.y - kmax_.y, kmin_.z - c.z, c.z - kmax_.z});
    int64_t box_diam = std::max({kmax_.x - kmin_.x, kmax_.y - kmin_.y, kmax_.z - kmin_.z});
    int64_t last_ring = to_box + box_diam + 1;  // every occupied cell lies within
    double best = std::numeric_limits<double>::infinity();
    for (int64_t ring = 0; ring <= last_ring; ++ring) {
      if (best <= (double)(ring - 1) * cell_) break;
      scan_ring(q, c, ring, best);
    }
    return best;
  }

 private:
  CellKey key(const Eigen::Vector3d& p) const {
    return CellKey{(int64_t)std::floor(p.x() / cell_), (int64_t)std::floor(p.y() / cell_),
                   (int64_t)std::floor(p.z() / cell_)};
  }

  void scan_ring(const Eigen::Vector3d& q, const CellKey& c, int64_t ring, double& best) const {
    auto visit = [&](int64_t dx, int64_t dy, int64_t dz) {
      auto it = cells_.find(CellKey{c.x + dx, c.y + dy, c.z + dz});
      if (it == cells_.end()) return;
      for (int i : it->second) best = std::min(best, (pts_[i] - q).norm());
    };
    if (ring == 0) {
      visit(0, 0, 0);
      return;
    }
    for (int64_t dx = -ring; dx <= ring; ++dx)
      for (int64_t dy = -ring; dy <= ring; ++dy)
        for (int64_t dz = -ring; dz <= ring; ++dz)
          if (std::max({std::llabs(dx), std::llabs(dy), std::llabs(dz)}) == ring)
            visit(dx, dy, dz);
  }

  const std::vector<Eigen::Vector3d>& pts_;
  double cell_;
  std::unordered_map<CellKey, std::vector<int>, CellHash> cells_;
  CellKey kmin_{0, 0, 0}, kmax_{0, 0, 0};
};

double one_sided_mean_nn(const std::vector<Eigen::Vector3d>& from,
                         const std::vector<Eigen::Vector3d>& to, bool use_grid) {
  double acc = 0;
  if (!use_grid) {
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).norm());
      acc += best;
    }
    return acc / (double)from.size();
  }
  Eigen::Vector3d lo = to[0], hi = to[0];
  for (const auto& p : to) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  double extent = (hi - lo).maxCoeff();
  double cell = std::max(extent / std::max(1.0, std::cbrt((double)to.size())), 1e-12);
  PointGrid grid(to, cell);
  for (const auto& p : from) acc += grid.nearest_distance(p);
  return acc / (double)from.size();
}

}  // namespace

double chamfer(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b,
               bool use_grid) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty cloud");
  return 0.5 * one_sided_mean_nn(a, b, use_grid) + 0.5 * one_sided_mean_nn(b, a, use_grid);
}

namespace {
void center_scale(std::vector<Eigen::Vector3d>& cloud) {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : cloud) c += p;
  c /= (double)cloud.size();
  double z = 0;
  for (auto& p : cloud) {
    p -= c;
    z += p.norm();
  }
  z /= (double)cloud.size();
  if (z > 0)
    for (auto& p : cloud) p /= z;
}

void subsample(std::vector<Eigen::Vector3d>& cloud, long long max_points, Rng& rng) {
  if ((long long)cloud.size() <= max_points) return;
  for (long long i = 0; i < max_points; ++i) {
    long long j = i + (long long)rng.below((uint64_t)(cloud.size() - i));
    std::swap(cloud[i], cloud[j]);
  }
  cloud.resize(max_points);
}
}  // namespace

double chamfer_normalized(std::vector<Eigen::Vector3d> a, std::vector<Eigen::Vector3d> b,
                          long long max_points, uint64_t seed) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_normalized: empty cloud");
  Rng rng(seed ^ 0x5bf03635f0a5b3d1ull);
  subsample(a, max_points, rng);
  subsample(b, max_points, rng);
  center_scale(a);
  center_scale(b);
  return chamfer(a, b, true);
}

double psnr(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("psnr: size mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= (double)a.size();
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const std::vector<double>& a, const std::vector<double>& b, int width, int height) {
  const int win = 8;
  if (width < win || height < win) throw std::invalid_argument("ssim: image smaller than window");
  if (a.size() != (size_t)3 * width * height || b.size() != a.size())
    throw std::invalid_argument("ssim: size mismatch");
  size_t hw = (size_t)width * height;
  std::vector<double> ga(hw), gb(hw);
  for (size_t i = 0; i < hw; ++i) {
    ga[i] = 0.299 * a[i] + 0.587 * a[hw + i] + 0.114 * a[2 * hw + i];
    gb[i] = 0.299 * b[i] + 0.587 * b[hw + i] + 0.114 * b[2 * hw + i];
  }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0;
  int n = 0;
  for (int wy = 0; wy + win <= height; wy += win)
    for (int wx = 0; wx + win <= width; wx += win) {
      double ma = 0, mb = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          ma += ga[(size_t)(wy + y) * width + wx + x];
          mb += gb[(size_t)(wy + y) * width + wx + x];
        }
      ma /= win * win;
      mb /= win * win;
      double va = 0, vb = 0, cov = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          double da = ga[(size_t)(wy + y) * width + wx + x] - ma;
          double db = gb[(size_t)(wy + y) * width + wx + x] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= win * win;
      vb /= win * win;
      cov /= win * win;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  return acc / n;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace mvrec
