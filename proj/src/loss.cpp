#include "mvrec/loss.hpp"

#include <stdexcept>

#include "mvrec/nn.hpp"

namespace mvrec {

GtView make_gt_view(const PointMap& pm) {
  GtView v;
  int h = pm.height, w = pm.width;
  v.pointmap = Tensor::zeros({3, h, w});
  v.valid = Tensor::zeros({h * w});
  for (int i = 0; i < h * w; ++i) {
    if (!pm.valid[i]) continue;
    v.valid.at(i) = 1.0;
    v.n_valid++;
    for (int c = 0; c < 3; ++c) v.pointmap.at((size_t)c * h * w + i) = pm.pts[i][c];
  }
  return v;
}

Tensor scale_norm_tensor(const std::vector<Tensor>& pointmaps, const std::vector<GtView>& gts,
                         bool detach) {
  if (pointmaps.size() != gts.size() || pointmaps.empty())
    throw std::invalid_argument("scale_norm_tensor: view count mismatch");
  long long n_total = 0;
  for (const GtView& g : gts) n_total += g.n_valid;
  if (n_total == 0) throw std::invalid_argument("scale_norm_tensor: no valid pixels");

  if (detach) {
    double acc = 0;
    for (size_t v = 0; v < pointmaps.size(); ++v) {
      const Tensor& pm = pointmaps[v];
      size_t plane = (size_t)pm.shape[1] * pm.shape[2];
      for (size_t p = 0; p < plane; ++p) {
        if (gts[v].valid.at(p) == 0.0) continue;
        double x = pm.at(p), y = pm.at(plane + p), z = pm.at(2 * plane + p);
        acc += std::sqrt(x * x + y * y + z * z);
      }
    }
    return Tensor::scalar(acc / (double)n_total);
  }

  Tensor acc;
  for (size_t v = 0; v < pointmaps.size(); ++v) {
    Tensor norms = sqrt_eps(sum_chan(mul(pointmaps[v], pointmaps[v])), 1e-24);
    Tensor masked = sum(mul(norms, gts[v].valid));
    acc = v == 0 ? masked : add(acc, masked);
  }
  return scale_const(acc, 1.0 / (double)n_total);
}

Tensor regr_residual_map(const Tensor& pred, const Tensor& inv_z, const GtView& gt,
                         double inv_zbar) {
  if (pred.shape != gt.pointmap.shape)
    throw std::invalid_argument("regr_residual_map: shape mismatch");
  Tensor diff = sub(mul_scalar_t(pred, inv_z), scale_const(gt.pointmap, inv_zbar));
  Tensor norms = sqrt_eps(sum_chan(mul(diff, diff)), 1e-24);
  return mul(norms, gt.valid);
}

Tensor conf_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& confs,
                 const std::vector<GtView>& gts, double beta, bool detach_norm) {
  if (preds.size() != confs.size() || preds.size() != gts.size() || preds.empty())
    throw std::invalid_argument("conf_loss: view count mismatch");
  long long n_total = 0;
  for (const GtView& g : gts) n_total += g.n_valid;
  if (n_total == 0) throw std::invalid_argument("conf_loss: only invalid pixels");

  // z over predictions, zbar over ground truth, both pooled across views
  Tensor z = scale_norm_tensor(preds, gts, detach_norm);
  double zbar = 0;
  {
    long long n = 0;
    for (const GtView& g : gts) {
      size_t plane = (size_t)g.pointmap.shape[1] * g.pointmap.shape[2];
      for (size_t p = 0; p < plane; ++p) {
        if (g.valid.at(p) == 0.0) continue;
        double x = g.pointmap.at(p), y = g.pointmap.at(plane + p),
               zz = g.pointmap.at(2 * plane + p);
        zbar += std::sqrt(x * x + y * y + zz * zz);
        ++n;
      }
    }
    zbar /= (double)n;
  }
  if (zbar <= 0) throw std::invalid_argument("conf_loss: degenerate ground-truth cloud");
  Tensor inv_z = reciprocal(z);

  Tensor acc;
  for (size_t v = 0; v < preds.size(); ++v) {
    Tensor r = regr_residual_map(preds[v], inv_z, gts[v], 1.0 / zbar);
    Tensor weighted = sum(mul(confs[v], r));
    Tensor bonus = sum(mul(log_t(confs[v]), gts[v].valid));
    Tensor term = sub(weighted, scale_const(bonus, beta));
    acc = v == 0 ? term : add(acc, term);
  }
  return scale_const(acc, 1.0 / (double)n_total);
}

Tensor perceptual_proxy(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape || a.shape.size() != 3)
    throw std::invalid_argument("perceptual_proxy: want matching {3,H,W} images");
  Tensor la = a, lb = b, acc;
  for (int level = 0; level < 3; ++level) {
    Tensor d = sub(la, lb);
    Tensor msd = mean(mul(d, d));
    acc = level == 0 ? msd : add(acc, msd);
    if (level < 2) {
      la = avgpool2(la);
      lb = avgpool2(lb);
    }
  }
  return acc;
}

Tensor render_loss(const std::vector<Tensor>& rendered, const std::vector<Tensor>& targets,
                   double gamma) {
  if (rendered.size() != targets.size() || rendered.empty())
    throw std::invalid_argument("render_loss: pair count mismatch");
  Tensor acc;
  for (size_t i = 0; i < rendered.size(); ++i) {
    if (rendered[i].shape != targets[i].shape)
      throw std::invalid_argument("render_loss: resolution mismatch");
    Tensor d = sub(rendered[i], targets[i]);
    Tensor term = mean(mul(d, d));
    if (gamma != 0.0)
      term = add(term, scale_const(perceptual_proxy(rendered[i], targets[i]), gamma));
    acc = i == 0 ? term : add(acc, term);
  }
  return scale_const(acc, 1.0 / (double)rendered.size());
}

Tensor total_loss(const Tensor& conf_term, const Tensor& render_term, double delta) {
  return add(conf_term, scale_const(render_term, delta));
}

}  // namespace mvrec
