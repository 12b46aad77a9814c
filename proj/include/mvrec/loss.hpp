#pragma once

#include <vector>

#include "mvrec/geometry.hpp"
#include "mvrec/tensor.hpp"

namespace mvrec {

struct LossWeights {
  double beta = 0.2;
  double gamma = 1.0;
  double delta = 1.0;
};

// Ground truth for one view, already expressed in the reference frame of the
// path being scored. The valid mask is 0/1 per pixel, flat over H*W.
struct GtView {
  Tensor pointmap;  // {3,H,W}
  Tensor valid;     // {H*W}
  long long n_valid = 0;
};

GtView make_gt_view(const PointMap& pm);

// Mean distance of predicted points to the origin over valid pixels of all
// views, as a differentiable scalar; detach produces a constant instead.
Tensor scale_norm_tensor(const std::vector<Tensor>& pointmaps, const std::vector<GtView>& gts,
                         bool detach);

// Per-pixel ||pred/z - gt/zbar|| over valid pixels (zero elsewhere).
Tensor regr_residual_map(const Tensor& pred, const Tensor& inv_z, const GtView& gt,
                         double inv_zbar);

// Confidence-weighted regression: mean over valid pixels of
// C * r - beta * log C, views pooled. Confidences must be >= 1.
Tensor conf_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& confs,
                 const std::vector<GtView>& gts, double beta, bool detach_norm = false);

// Multi-level image difference standing in for a learned perceptual score:
// mean squared difference summed over three pyramid levels (full, 1/2, 1/4).
Tensor perceptual_proxy(const Tensor& a, const Tensor& b);

// Mean over rendered/target pairs of MSE + gamma * proxy.
Tensor render_loss(const std::vector<Tensor>& rendered, const std::vector<Tensor>& targets,
                   double gamma);

Tensor total_loss(const Tensor& conf_term, const Tensor& render_term, double delta);

}  // namespace mvrec
