#include "mvrec/trainer.hpp"

#include <cmath>
#include <stdexcept>

#include "mvrec/loss.hpp"
#include "mvrec/splat.hpp"

namespace mvrec {

void TrainConfig::validate() const {
  if (lr <= 0) throw std::invalid_argument("train config: lr must be > 0");
  if (n_ref_views > n_input_views)
    throw std::invalid_argument("train config: M must not exceed N");
  if (epochs < 0 || steps_per_epoch < 1) throw std::invalid_argument("train config: bad schedule");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  auto put = [&](const char* k, double v) {
    char buf[40];
    snprintf(buf, sizeof buf, "%.17g", v);
    kv[k] = buf;
  };
  kv["epochs"] = std::to_string(epochs);
  kv["steps_per_epoch"] = std::to_string(steps_per_epoch);
  put("lr", lr);
  kv["batch_trajectories"] = std::to_string(batch_trajectories);
  kv["n_input_views"] = std::to_string(n_input_views);
  kv["m_paths"] = std::to_string(n_ref_views);
  kv["stage2"] = stage2 ? "1" : "0";
  kv["stage2_nmin"] = std::to_string(stage2_nmin);
  kv["stage2_nmax"] = std::to_string(stage2_nmax);
  put("beta", beta);
  put("gamma", gamma);
  put("delta", delta);
  kv["detach_norm"] = detach_norm ? "1" : "0";
  put("warmup_frac", warmup_frac);
  kv["seed"] = std::to_string(seed);
  return kv;
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  auto geti = [&](const char* k, int& dst) {
    auto it = kv.find(k);
    if (it != kv.end()) dst = std::stoi(it->second);
  };
  auto getd = [&](const char* k, double& dst) {
    auto it = kv.find(k);
    if (it != kv.end()) dst = std::stod(it->second);
  };
  auto getb = [&](const char* k, bool& dst) {
    auto it = kv.find(k);
    if (it != kv.end()) dst = it->second == "1" || it->second == "true";
  };
  geti("epochs", c.epochs);
  geti("steps_per_epoch", c.steps_per_epoch);
  getd("lr", c.lr);
  geti("batch_trajectories", c.batch_trajectories);
  geti("n_input_views", c.n_input_views);
  geti("m_paths", c.n_ref_views);
  getb("stage2", c.stage2);
  geti("stage2_nmin", c.stage2_nmin);
  geti("stage2_nmax", c.stage2_nmax);
  getd("beta", c.beta);
  getd("gamma", c.gamma);
  getd("delta", c.delta);
  getb("detach_norm", c.detach_norm);
  getd("warmup_frac", c.warmup_frac);
  auto it = kv.find("seed");
  if (it != kv.end()) c.seed = std::stoull(it->second);
  c.validate();
  return c;
}

double lr_at(long long step, long long total_steps, double peak, double warmup_frac) {
  long long warm = std::max(1ll, (long long)std::llround(warmup_frac * (double)total_steps));
  if (step < warm) return peak * (double)(step + 1) / (double)warm;
  long long rest = std::max(1ll, total_steps - warm);
  double x = (double)(step - warm) / (double)rest;
  return peak * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, x)));
}

std::vector<int> sample_ref_views(int n_views, int m, RefMode mode, Rng* rng) {
  if (m > n_views) throw std::invalid_argument("sample_ref_views: M exceeds view count");
  if (m < 1) throw std::invalid_argument("sample_ref_views: M must be >= 1");
  std::vector<int> out;
  if (mode == RefMode::Infer) {
    out.reserve(m);
    for (int k = 0; k < m; ++k) out.push_back(k * n_views / m);  // always contains view 0
    return out;
  }
  if (!rng) throw std::invalid_argument("sample_ref_views: train mode needs an rng");
  out.resize(m);
  rng->sample_indices(n_views, m, out.begin());
  return out;
}

void adam_update(Weights& w, AdamState& st,
                 const std::map<std::string, std::vector<double>>& grads, double lr, double beta1,
                 double beta2, double eps) {
  st.t += 1;
  double bc1 = 1.0 - std::pow(beta1, (double)st.t);
  double bc2 = 1.0 - std::pow(beta2, (double)st.t);
  for (auto& [name, param] : w.params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const std::vector<double>& g = git->second;
    std::vector<double>& m = st.m[name];
    std::vector<double>& v = st.v[name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    auto fresh = std::make_shared<std::vector<double>>(*param.data);
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
      double mhat = m[i] / bc1, vhat = v[i] / bc2;
      (*fresh)[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    param.data = fresh;  // leave buffers already captured by graphs untouched
  }
}

StepRecord train_step(const std::vector<const TrainTrajectory*>& batch, Weights& weights,
                      AdamState& adam, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      double lr, int n_views_used, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");

  Graph g;
  ParamBinder bind(g, weights);
  Tensor conf_total, render_total;
  int render_pairs = 0;
  int n_last = 0;

  for (const TrainTrajectory* traj : batch) {
    int n = std::min(n_views_used, traj->n_input);
    if (n < 2) throw std::invalid_argument("train_step: trajectory has fewer than 2 input views");
    n_last = n;
    int m = std::min(tcfg.n_ref_views, n);
    std::vector<int> refs = sample_ref_views(n, m, RefMode::Train, &rng);

    std::vector<Tensor> images;
    images.reserve(n);
    for (int v = 0; v < n; ++v) images.push_back(traj->views[v].image);
    auto paths = forward_multi_path(images, refs, bind, mcfg);

    Tensor conf_acc;
    std::vector<std::vector<GtView>> gts(m);
    for (int mi = 0; mi < m; ++mi) {
      const Pose& ref_pose = traj->views[refs[mi]].pose;
      std::vector<Tensor> preds, confs;
      for (int v = 0; v < n; ++v) {
        Pose rel = relative_pose(traj->views[v].pose, ref_pose);
        gts[mi].push_back(make_gt_view(depth_to_pointmap(traj->views[v].depth, traj->cam, rel)));
        preds.push_back(paths[mi][v].pointmap);
        confs.push_back(paths[mi][v].conf);
      }
      Tensor lc = conf_loss(preds, confs, gts[mi], tcfg.beta, tcfg.detach_norm);
      conf_acc = mi == 0 ? lc : add(conf_acc, lc);
    }
    conf_acc = scale_const(conf_acc, 1.0 / m);  // averaged over reference views
    conf_total = conf_total.data ? add(conf_total, conf_acc) : conf_acc;

    if (mcfg.gs_head && tcfg.delta != 0.0) {
      std::vector<Tensor> rendered, targets;
      for (int mi = 0; mi < m; ++mi) {
        std::vector<Tensor> preds;
        for (int v = 0; v < n; ++v) preds.push_back(paths[mi][v].pointmap);
        Tensor z = scale_norm_tensor(preds, gts[mi], tcfg.detach_norm);
        double zbar = 0;
        {
          long long cnt = 0;
          for (const GtView& gv : gts[mi]) {
            size_t plane = (size_t)gv.pointmap.shape[1] * gv.pointmap.shape[2];
            for (size_t p = 0; p < plane; ++p) {
              if (gv.valid.at(p) == 0.0) continue;
              double xx = gv.pointmap.at(p), yy = gv.pointmap.at(plane + p),
                     zz = gv.pointmap.at(2 * plane + p);
              zbar += std::sqrt(xx * xx + yy * yy + zz * zz);
              ++cnt;
            }
          }
          zbar /= (double)cnt;
        }
        std::vector<GaussTensors> parts;
        for (int v = 0; v < n; ++v) {
          GaussTensors gt_v;
          gt_v.centers = chw_to_tokens(paths[mi][v].pointmap);
          gt_v.scales = paths[mi][v].gs_scale;
          gt_v.quats = paths[mi][v].gs_quat;
          gt_v.opacities = paths[mi][v].gs_opacity;
          gt_v.colors = chw_to_tokens(images[v]);
          parts.push_back(std::move(gt_v));
        }
        GaussTensors all = concat_gaussians(parts);
        const Pose& ref_pose = traj->views[refs[mi]].pose;
        // render every input view and every novel view of the trajectory
        for (int k = 0; k < (int)traj->views.size(); ++k) {
          if (k >= n && k < traj->n_input) continue;  // unused extra inputs
          Pose rel = relative_pose(ref_pose, traj->views[k].pose);
          GaussTensors moved = transform_gaussians_t(all, rel, z, zbar);
          rendered.push_back(render_splats_t(moved, traj->cam));
          targets.push_back(traj->views[k].image);
        }
      }
      Tensor lr_term = render_loss(rendered, targets, tcfg.gamma);
      render_pairs += (int)rendered.size();
      render_total = render_total.data ? add(render_total, lr_term) : lr_term;
    }
  }

  double inv_b = 1.0 / (double)batch.size();
  Tensor l_conf = scale_const(conf_total, inv_b);
  Tensor l_all = l_conf;
  double l_render_val = 0;
  if (render_total.data) {
    Tensor l_render = scale_const(render_total, inv_b);
    l_render_val = l_render.value();
    l_all = total_loss(l_conf, l_render, tcfg.delta);
  }

  if (!std::isfinite(l_all.value()))
    throw std::runtime_error("train_step: non-finite loss");

  auto grads = g.backward(l_all);
  std::map<std::string, std::vector<double>> by_name;
  for (const auto& [name, node] : bind.leaf_nodes()) {
    if (node < (int)grads.size() && !grads[node].empty()) by_name[name] = std::move(grads[node]);
  }
  adam_update(weights, adam, by_name, lr);

  StepRecord rec;
  rec.l_conf = l_conf.value();
  rec.l_render = l_render_val;
  rec.l_all = l_all.value();
  rec.lr = lr;
  rec.n_views = n_last;
  (void)render_pairs;
  return rec;
}

}  // namespace mvrec
