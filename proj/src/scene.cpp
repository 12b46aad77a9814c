#include "mvrec/scene.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mvrec/rng.hpp"

namespace mvrec {

int Scene::room_containing(const Eigen::Vector3d& p) const {
  for (size_t i = 0; i < rooms.size(); ++i) {
    const Room& r = rooms[i];
    if (p.x() >= r.lo.x() && p.x() <= r.hi.x() && p.y() >= r.lo.y() && p.y() <= r.hi.y() &&
        p.z() >= r.lo.z() && p.z() <= r.hi.z())
      return (int)i;
  }
  return -1;
}

bool Scene::inside_prop(const Eigen::Vector3d& p, double margin) const {
  for (const Prop& pr : props) {
    if (pr.kind == Prop::Sphere) {
      if ((p - pr.center).norm() <= pr.radius + margin) return true;
    } else {
      Eigen::Vector3d d = (p - pr.center).cwiseAbs() - pr.half;
      if (d.maxCoeff() <= margin) return true;
    }
  }
  return false;
}

Scene generate_scene(uint64_t seed, int n_rooms, int n_props) {
  if (n_rooms < 1) throw std::invalid_argument("generate_scene: n_rooms must be >= 1");
  Rng rng(seed ^ 0xa2c55bd4f1e3690bull);
  Scene s;
  s.seed = seed;

  auto color = [&rng]() {
    return Eigen::Vector3d(rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95),
                           rng.uniform(0.15, 0.95));
  };

  double x_cursor = 0;
  for (int i = 0; i < n_rooms; ++i) {
    Room r;
    double sx = rng.uniform(3.0, 4.5), sy = rng.uniform(3.0, 4.5), sz = rng.uniform(2.4, 3.0);
    r.lo = {x_cursor, 0.0, 0.0};
    r.hi = {x_cursor + sx, sy, sz};
    for (auto& fc : r.face_colors) fc = color();
    s.rooms.push_back(r);
    x_cursor += sx;
  }
  for (int i = 0; i + 1 < n_rooms; ++i) {
    const Room& a = s.rooms[i];
    const Room& b = s.rooms[i + 1];
    double ymax = std::min(a.hi.y(), b.hi.y());
    double w = rng.uniform(0.9, 1.3);
    double yc = rng.uniform(0.2 + w / 2, std::max(0.21 + w / 2, ymax - 0.2 - w / 2));
    Door d;
    d.room_a = i;
    d.room_b = i + 1;
    d.plane_x = a.hi.x();
    d.y0 = yc - w / 2;
    d.y1 = yc + w / 2;
    d.z0 = 0.0;
    d.z1 = std::min(rng.uniform(1.9, 2.1), std::min(a.hi.z(), b.hi.z()) - 0.1);
    s.doors.push_back(d);
  }
  for (int i = 0; i < n_props; ++i) {
    const Room& r = s.rooms[i % n_rooms];
    Prop p;
    p.kind = (i % 2 == 0) ? Prop::Box : Prop::Sphere;
    p.color = color();
    double m = 0.6;  // keep away from walls so doors stay passable
    Eigen::Vector3d pos(rng.uniform(r.lo.x() + m, r.hi.x() - m),
                        rng.uniform(r.lo.y() + m, r.hi.y() - m), 0.0);
    if (p.kind == Prop::Box) {
      p.half = {rng.uniform(0.15, 0.45), rng.uniform(0.15, 0.45), rng.uniform(0.2, 0.6)};
      pos.z() = p.half.z();  // resting on the floor
    } else {
      p.radius = rng.uniform(0.2, 0.4);
      pos.z() = p.radius;
    }
    p.center = pos;
    s.props.push_back(p);
  }
  return s;
}

Pose look_pose(const Eigen::Vector3d& position, double yaw, double pitch) {
  Eigen::Vector3d f(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw),
                    std::sin(pitch));
  Eigen::Vector3d up(0, 0, 1);
  Eigen::Vector3d right = f.cross(up).normalized();
  Eigen::Vector3d down = f.cross(right);  // unit, orthogonal by construction
  Pose p;
  p.R.row(0) = right;
  p.R.row(1) = down;
  p.R.row(2) = f;
  p.t = -(p.R * position);
  return p;
}

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();  // facing the ray origin
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  bool checker = false;
  double cu = 0, cv = 0;  // in-plane coordinates for the checker pattern
};

bool ray_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Prop& p, Hit& h) {
  Eigen::Vector3d oc = o - p.center;
  double a = d.squaredNorm(), b = 2 * oc.dot(d), c = oc.squaredNorm() - p.radius * p.radius;
  double disc = b * b - 4 * a * c;
  if (disc < 0) return false;
  double sq = std::sqrt(disc);
  double t = (-b - sq) / (2 * a);
  if (t < 1e-9) t = (-b + sq) / (2 * a);
  if (t < 1e-9 || t >= h.t) return false;
  h.t = t;
  h.normal = (o + t * d - p.center).normalized();
  h.color = p.color;
  h.checker = false;
  return true;
}

bool ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& lo,
             const Eigen::Vector3d& hi, double& t_enter, double& t_exit, int& axis_enter,
             int& axis_exit) {
  t_enter = -std::numeric_limits<double>::infinity();
  t_exit = std::numeric_limits<double>::infinity();
  axis_enter = axis_exit = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return false;
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a];
    double t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_enter) {
      t_enter = t0;
      axis_enter = a;
    }
    if (t1 < t_exit) {
      t_exit = t1;
      axis_exit = a;
    }
  }
  return t_enter <= t_exit;
}

bool ray_prop_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Prop& p, Hit& h) {
  double te, tx;
  int ae, ax;
  if (!ray_box(o, d, p.center - p.half, p.center + p.half, te, tx, ae, ax)) return false;
  double t = te > 1e-9 ? te : tx;
  int axis = te > 1e-9 ? ae : ax;
  if (t < 1e-9 || t >= h.t || axis < 0) return false;
  h.t = t;
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
  n[axis] = d[axis] > 0 ? -1.0 : 1.0;
  h.normal = n;
  h.color = p.color;
  h.checker = false;
  return true;
}

// Walks the ray room to room through door openings until a wall face stops
// it. The origin must lie inside `room`.
bool trace_walls(const Scene& scene, const Eigen::Vector3d& o, const Eigen::Vector3d& d, int room,
                 Hit& h) {
  int cur = room;
  for (int hops = 0; hops < (int)scene.rooms.size() + 2; ++hops) {
    const Room& r = scene.rooms[cur];
    double te, tx;
    int ae, ax;
    if (!ray_box(o, d, r.lo, r.hi, te, tx, ae, ax)) return false;
    if (ax < 0 || tx < 1e-9) return false;
    Eigen::Vector3d hitp = o + tx * d;
    // through a door?
    bool passed = false;
    if (ax == 0) {
      for (const Door& door : scene.doors) {
        bool from_a = door.room_a == cur && d.x() > 0 && std::abs(r.hi.x() - door.plane_x) < 1e-9;
        bool from_b = door.room_b == cur && d.x() < 0 && std::abs(r.lo.x() - door.plane_x) < 1e-9;
        if (!from_a && !from_b) continue;
        if (hitp.y() >= door.y0 && hitp.y() <= door.y1 && hitp.z() >= door.z0 &&
            hitp.z() <= door.z1) {
          cur = from_a ? door.room_b : door.room_a;
          passed = true;
          break;
        }
      }
    }
    if (passed) continue;
    if (tx >= h.t) return false;
    h.t = tx;
    int face = 2 * ax + (d[ax] > 0 ? 1 : 0);  // -x,+x,-y,+y,-z,+z
    Eigen::Vector3d n = Eigen::Vector3d::Zero();
    n[ax] = d[ax] > 0 ? -1.0 : 1.0;  // interior walls face inward
    h.normal = n;
    h.color = r.face_colors[face];
    h.checker = true;
    int u_axis = (ax + 1) % 3, v_axis = (ax + 2) % 3;
    h.cu = hitp[u_axis];
    h.cv = hitp[v_axis];
    return true;
  }
  return false;
}

}  // namespace

RenderedView render_view(const Scene& scene, const Pose& cam_from_world, const Pinhole& cam) {
  RenderedView out;
  size_t hw = (size_t)cam.width * cam.height;
  out.rgb.assign(3 * hw, 0.0);
  out.depth.assign(hw, 0.0);

  Pose world_from_cam = cam_from_world.inverse();
  Eigen::Vector3d origin = world_from_cam.t;
  int room = scene.room_containing(origin);
  if (room < 0 || scene.inside_prop(origin)) return out;  // camera in solid space

  const Eigen::Vector3d light = Eigen::Vector3d(0.35, 0.25, -0.9).normalized();
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      Eigen::Vector3d dir_cam((x - cam.cx()) / cam.f, (y - cam.cy()) / cam.f, 1.0);
      Eigen::Vector3d dir = world_from_cam.R * dir_cam;  // t along dir equals camera-frame depth
      Hit h;
      for (const Prop& p : scene.props) {
        if (p.kind == Prop::Sphere)
          ray_sphere(origin, dir, p, h);
        else
          ray_prop_box(origin, dir, p, h);
      }
      trace_walls(scene, origin, dir, room, h);
      if (!std::isfinite(h.t)) continue;
      double shade = 0.25 + 0.75 * std::max(0.0, h.normal.dot(-light));
      if (h.checker) {
        long long pu = (long long)std::floor(2.0 * h.cu), pv = (long long)std::floor(2.0 * h.cv);
        if (((pu + pv) & 1) != 0) shade *= 0.85;
      }
      size_t px = (size_t)y * cam.width + x;
      for (int c = 0; c < 3; ++c)
        out.rgb[c * hw + px] = std::clamp(h.color[c] * shade, 0.0, 1.0);
      out.depth[px] = h.t;
    }
  return out;
}

double coverage(const PointMap& a, const PointMap& b, double t_c) {
  std::vector<Eigen::Vector3d> pa, pb;
  for (size_t i = 0; i < a.pts.size(); ++i)
    if (a.valid[i]) pa.push_back(a.pts[i]);
  for (size_t i = 0; i < b.pts.size(); ++i)
    if (b.valid[i]) pb.push_back(b.pts[i]);
  if (pa.empty() || pb.empty()) throw std::invalid_argument("coverage: empty cloud");

  // hash grid with cell size t_c: a 27-cell probe is exact for the test
  struct K {
    int64_t x, y, z;
    bool operator==(const K& o) const { return x == o.x && y == o.y && z == o.z; }
  };
  struct KH {
    size_t operator()(const K& k) const {
      return (size_t)(k.x * 0x9e3779b97f4a7c15ull ^ k.y * 0xc2b2ae3d27d4eb4full ^
                      k.z * 0x165667b19e3779f9ull);
    }
  };
  auto cell = [t_c](const Eigen::Vector3d& p) {
    return K{(int64_t)std::floor(p.x() / t_c), (int64_t)std::floor(p.y() / t_c),
             (int64_t)std::floor(p.z() / t_c)};
  };
  std::unordered_map<K, std::vector<int>, KH> grid;
  for (size_t i = 0; i < pb.size(); ++i) grid[cell(pb[i])].push_back((int)i);

  long long covered = 0;
  for (const auto& p : pa) {
    K c = cell(p);
    bool hit = false;
    for (int64_t dx = -1; dx <= 1 && !hit; ++dx)
      for (int64_t dy = -1; dy <= 1 && !hit; ++dy)
        for (int64_t dz = -1; dz <= 1 && !hit; ++dz) {
          auto it = grid.find(K{c.x + dx, c.y + dy, c.z + dz});
          if (it == grid.end()) continue;
          for (int j : it->second)
            if ((pb[j] - p).norm() < t_c) {
              hit = true;
              break;
            }
        }
    if (hit) ++covered;
  }
  return (double)covered / (double)pa.size();
}

double overlap_ratio(const PointMap& a, const PointMap& b, double t_c) {
  return 0.5 * (coverage(a, b, t_c) + coverage(b, a, t_c));
}

double overlap_ratio_normalized(const PointMap& a, const PointMap& b, double t_c) {
  std::vector<PointMap> pair = {a, b};
  zero_center(pair);
  double z = scale_norm_factor(pair);
  if (!(z > 0)) throw std::invalid_argument("overlap_ratio_normalized: degenerate pair");
  for (PointMap& m : pair)
    for (size_t i = 0; i < m.pts.size(); ++i)
      if (m.valid[i]) m.pts[i] /= z;
  return overlap_ratio(pair[0], pair[1], t_c);
}

double auto_tc(int width) { return 0.0015 * 224.0 / (double)width; }

namespace {

struct CamSample {
  Eigen::Vector3d pos;
  double yaw, pitch;
};

std::optional<CamSample> random_camera(const Scene& scene, Rng& rng) {
  for (int tries = 0; tries < 64; ++tries) {
    const Room& r = scene.rooms[rng.below(scene.rooms.size())];
    double m = 0.4;
    Eigen::Vector3d pos(rng.uniform(r.lo.x() + m, r.hi.x() - m),
                        rng.uniform(r.lo.y() + m, r.hi.y() - m),
                        rng.uniform(1.0, std::min(1.8, r.hi.z() - 0.3)));
    if (scene.inside_prop(pos, 0.15)) continue;
    return CamSample{pos, rng.uniform(0, 2 * M_PI), rng.uniform(-0.25, 0.15)};
  }
  return std::nullopt;
}

std::optional<CamSample> perturbed_camera(const Scene& scene, const CamSample& base, Rng& rng,
                                          double pos_sigma, double yaw_sigma) {
  for (int tries = 0; tries < 16; ++tries) {
    Eigen::Vector3d pos = base.pos + Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) *
                                         pos_sigma;
    pos.z() = std::clamp(pos.z(), 0.8, 2.0);
    int room = scene.room_containing(pos);
    if (room < 0) continue;
    const Room& r = scene.rooms[room];
    double m = 0.25;
    if (pos.x() < r.lo.x() + m || pos.x() > r.hi.x() - m || pos.y() < r.lo.y() + m ||
        pos.y() > r.hi.y() - m || pos.z() > r.hi.z() - 0.25)
      continue;
    if (scene.inside_prop(pos, 0.15)) continue;
    double yaw = base.yaw + rng.normal() * yaw_sigma;
    double pitch = std::clamp(base.pitch + rng.normal() * 0.15, -0.5, 0.4);
    return CamSample{pos, yaw, pitch};
  }
  return std::nullopt;
}

// World-frame cloud of a rendered view.
PointMap world_points(const RenderedView& rv, const Pose& pose, const Pinhole& cam) {
  return depth_to_pointmap(rv.depth, cam, pose.inverse());
}

}  // namespace

std::optional<Trajectory> sample_trajectory(const Scene& scene, const Pinhole& cam,
                                            const SamplerConfig& cfg, uint64_t seed) {
  if (!(cfg.tmin < cfg.tmax)) throw std::invalid_argument("sample_trajectory: need tmin < tmax");
  if (cfg.n_views < 2) throw std::invalid_argument("sample_trajectory: need n_views >= 2");
  int n_input = cfg.n_views - cfg.n_novel;
  if (n_input < 1) throw std::invalid_argument("sample_trajectory: no input views left");
  double tc = cfg.tc > 0 ? cfg.tc : auto_tc(cam.width);

  Rng rng(seed ^ 0x51c0b8d3a9e7f215ull);
  Trajectory traj;
  traj.scene_seed = scene.seed;
  traj.traj_seed = seed;
  traj.tmin = cfg.tmin;
  traj.tmax = cfg.tmax;
  traj.tc = tc;
  traj.cam = cam;
  traj.n_input = n_input;

  std::vector<CamSample> samples;
  std::vector<PointMap> clouds;  // world frame, for overlap tests
  int attempts = 0;

  auto try_add = [&](const CamSample& cs) -> bool {
    Pose pose = look_pose(cs.pos, cs.yaw, cs.pitch);
    RenderedView rv = render_view(scene, pose, cam);
    PointMap wp = world_points(rv, pose, cam);
    if (wp.valid_count() < (long long)(0.9 * cam.width * cam.height)) return false;
    if (!clouds.empty()) {
      double max_o = 0;
      for (const PointMap& prev : clouds) max_o = std::max(max_o, overlap_ratio_normalized(wp, prev, tc));
      if (max_o < cfg.tmin || max_o > cfg.tmax) return false;
    }
    samples.push_back(cs);
    clouds.push_back(std::move(wp));
    traj.views.push_back(TrajectoryView{std::move(rv.rgb), std::move(rv.depth), pose});
    return true;
  };

  while ((int)samples.size() < n_input) {
    if (attempts++ > cfg.max_attempts) return std::nullopt;
    std::optional<CamSample> cand;
    if (samples.empty()) {
      cand = random_camera(scene, rng);
    } else {
      const CamSample& base = samples[rng.below(samples.size())];
      cand = perturbed_camera(scene, base, rng, 0.35, 0.6);
    }
    if (!cand) continue;
    try_add(*cand);
  }

  // Novel views: each is anchored to a group of input views and must be well
  // covered by it (max overlap with the group at least tmin).
  int group = std::max(1, (n_input + std::max(1, cfg.n_novel) - 1) / std::max(1, cfg.n_novel));
  for (int k = 0; k < cfg.n_novel; ++k) {
    int g0 = std::min(k * group, n_input - 1);
    int g1 = std::min(g0 + group, n_input);
    bool placed = false;
    while (!placed) {
      if (attempts++ > cfg.max_attempts) return std::nullopt;
      const CamSample& base = samples[g0 + (int)rng.below((uint64_t)(g1 - g0))];
      std::optional<CamSample> cand = perturbed_camera(scene, base, rng, 0.2, 0.35);
      if (!cand) continue;
      Pose pose = look_pose(cand->pos, cand->yaw, cand->pitch);
      RenderedView rv = render_view(scene, pose, cam);
      PointMap wp = world_points(rv, pose, cam);
      if (wp.valid_count() < (long long)(0.9 * cam.width * cam.height)) continue;
      double max_o = 0;
      for (int j = g0; j < g1; ++j)
        max_o = std::max(max_o, overlap_ratio_normalized(wp, clouds[j], tc));
      if (max_o < cfg.tmin) continue;
      traj.views.push_back(TrajectoryView{std::move(rv.rgb), std::move(rv.depth), pose});
      placed = true;
    }
  }
  return traj;
}

}  // namespace mvrec
