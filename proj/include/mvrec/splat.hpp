#pragma once

#include <vector>

#include "mvrec/geometry.hpp"
#include "mvrec/tensor.hpp"

namespace mvrec {

// Pixel-aligned 3D Gaussian primitives, spherical harmonics degree 0
// (view-independent colors). Quaternions stored (w,x,y,z), unit norm.
struct GaussianSet {
  std::vector<Eigen::Vector3d> centers;
  std::vector<Eigen::Vector3d> scales;   // strictly positive, world units
  std::vector<Eigen::Vector4d> quats;
  std::vector<double> opacities;         // in (0,1)
  std::vector<Eigen::Vector3d> colors;   // in [0,1]
  size_t size() const { return centers.size(); }
};

// Per-view Gaussian parameter maps in plain value form.
struct GsParamMaps {
  std::vector<double> scales;   // HW x 3
  std::vector<double> quats;    // HW x 4
  std::vector<double> opac;     // HW
};

// One Gaussian per valid pixel per view, concatenated over views; colors are
// the source pixel values.
GaussianSet assemble_gaussians(const std::vector<PointMap>& pointmaps,
                               const std::vector<std::vector<double>>& images,
                               const std::vector<GsParamMaps>& params);

// Fixed-parameter baseline: constant 0.001 scale, identity rotation, opacity
// 1 (clamped just below so transmittance stays positive), with the lowest
// drop_pct percent of pixels by confidence removed.
GaussianSet heuristic_gaussians(const std::vector<PointMap>& pointmaps,
                                const std::vector<std::vector<double>>& images,
                                const std::vector<ConfidenceMap>& confs, double drop_pct = 3.0);

// Isotropic Gaussians sized to roughly one pixel footprint (kappa * z / f),
// used for render round-trips from ground-truth geometry.
GaussianSet pixel_footprint_gaussians(const PointMap& pm, const std::vector<double>& image,
                                      double focal, double kappa = 0.7, double opacity = 0.995);

// Re-expresses Gaussians predicted in the frame of p_ref into the frame of
// p_tgt, fixing the scale gap: centers scaled by zbar/z then moved by the
// relative pose; scales multiplied by zbar/z; rotations left-composed.
GaussianSet transform_gaussians(const GaussianSet& g, const Pose& p_ref, const Pose& p_tgt,
                                double z, double zbar);

struct SplatImage {
  int height = 0, width = 0;
  std::vector<double> rgb;    // 3*H*W, channel-major
  std::vector<double> alpha;  // H*W
};

// Forward alpha-compositing splat renderer. Gaussians must already be in the
// camera frame; front-to-back order by center depth, ties broken by index.
SplatImage render_splats(const GaussianSet& g, const Pinhole& cam);

// ---- differentiable path ----

struct GaussTensors {
  Tensor centers;    // {K,3}
  Tensor scales;     // {K,3}
  Tensor quats;      // {K,4}
  Tensor opacities;  // {K}
  Tensor colors;     // {K,3}
};

GaussTensors concat_gaussians(const std::vector<GaussTensors>& parts);

// Tensor counterpart of transform_gaussians; z is a scalar tensor so the
// scale correction can carry gradients back into the predictions.
GaussTensors transform_gaussians_t(const GaussTensors& g, const Pose& rel, const Tensor& z,
                                   double zbar);

// Renders to a {3,H,W} tensor with gradients for centers, scales, quats,
// opacities and colors.
Tensor render_splats_t(const GaussTensors& g, const Pinhole& cam);

GaussianSet gaussians_from_tensors(const GaussTensors& g);

}  // namespace mvrec
