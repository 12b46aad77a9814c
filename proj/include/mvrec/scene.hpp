#pragma once

#include <optional>
#include <vector>

#include "mvrec/geometry.hpp"

namespace mvrec {

struct Prop {
  enum Kind { Box, Sphere } kind = Box;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half = Eigen::Vector3d::Zero();  // box half extents
  double radius = 0;                               // sphere
  Eigen::Vector3d color = Eigen::Vector3d::Ones();
};

struct Room {
  Eigen::Vector3d lo, hi;                       // axis-aligned interior
  std::array<Eigen::Vector3d, 6> face_colors;   // -x,+x,-y,+y,-z,+z
};

// Rectangular opening on the shared +x/-x wall between two adjacent rooms.
struct Door {
  int room_a = 0, room_b = 0;
  double plane_x = 0;
  double y0 = 0, y1 = 0, z0 = 0, z1 = 0;
};

// Multi-room world, z-up, meters. Rooms chain along +x through doors.
struct Scene {
  uint64_t seed = 0;
  std::vector<Room> rooms;
  std::vector<Door> doors;
  std::vector<Prop> props;

  int room_containing(const Eigen::Vector3d& p) const;  // -1 when outside
  bool inside_prop(const Eigen::Vector3d& p, double margin = 0.0) const;
};

Scene generate_scene(uint64_t seed, int n_rooms, int n_props);

struct RenderedView {
  std::vector<double> rgb;    // 3*H*W channel-major, [0,1]
  std::vector<double> depth;  // H*W camera-frame z; 0 where nothing was hit
};

// Per-pixel raycast with Lambertian shading under a fixed light. A camera
// outside every room or inside a prop yields an all-invalid view.
RenderedView render_view(const Scene& scene, const Pose& cam_from_world, const Pinhole& cam);

// Camera-from-world pose at `position` looking along yaw/pitch (z-up world,
// image y runs downward).
Pose look_pose(const Eigen::Vector3d& position, double yaw, double pitch);

// Fraction of points of a whose nearest neighbor in b is closer than t_c.
// Both clouds must already be in a shared normalized frame.
double coverage(const PointMap& a, const PointMap& b, double t_c);
// Symmetric mean of the two coverages.
double overlap_ratio(const PointMap& a, const PointMap& b, double t_c);
// Overlap after jointly centering and scaling the pair, which is how the
// trajectory sampler applies the threshold.
double overlap_ratio_normalized(const PointMap& a, const PointMap& b, double t_c);

struct TrajectoryView {
  std::vector<double> rgb;
  std::vector<double> depth;
  Pose pose;  // camera-from-world
};

struct Trajectory {
  uint64_t scene_seed = 0, traj_seed = 0;
  double tmin = 0.3, tmax = 0.7, tc = 0.0;
  Pinhole cam;
  std::vector<TrajectoryView> views;
  int n_input = 0;  // views [0, n_input) are inputs, the rest novel targets
};

struct SamplerConfig {
  int n_views = 10;
  int n_novel = 2;
  double tmin = 0.3, tmax = 0.7;
  // Paper-scale nearest-distance threshold is 0.0015 at 224 px; it tracks the
  // surface sample spacing, which grows as 1/resolution.
  double tc = 0.0;  // 0 = auto: 0.0015 * 224 / width
  int max_attempts = 4000;
};

std::optional<Trajectory> sample_trajectory(const Scene& scene, const Pinhole& cam,
                                            const SamplerConfig& cfg, uint64_t seed);

double auto_tc(int width);

}  // namespace mvrec
