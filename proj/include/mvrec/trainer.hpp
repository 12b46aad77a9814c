#pragma once

#include <map>
#include <vector>

#include "mvrec/geometry.hpp"
#include "mvrec/model.hpp"
#include "mvrec/rng.hpp"

namespace mvrec {

struct TrainConfig {
  int epochs = 4;
  int steps_per_epoch = 64;
  double lr = 1.5e-4;
  int batch_trajectories = 1;
  int n_input_views = 8;   // N
  int n_ref_views = 2;     // M
  bool stage2 = false;     // mixed view counts, resumed from stage-1 weights
  int stage2_nmin = 4;
  int stage2_nmax = 12;
  double beta = 0.2, gamma = 1.0, delta = 1.0;
  bool detach_norm = false;
  double warmup_frac = 0.05;
  uint64_t seed = 0;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
};

struct TrainView {
  Tensor image;               // {3,H,W}
  std::vector<double> depth;  // H*W
  Pose pose;                  // camera-from-world
};

struct TrainTrajectory {
  Pinhole cam;
  std::vector<TrainView> views;
  int n_input = 0;
};

struct AdamState {
  std::map<std::string, std::vector<double>> m, v;
  long long t = 0;
};

struct StepRecord {
  long long step = 0;
  double l_conf = 0, l_render = 0, l_all = 0, lr = 0;
  int n_views = 0;
};

// Linear warmup to the peak followed by a cosine decay to zero.
double lr_at(long long step, long long total_steps, double peak, double warmup_frac);

enum class RefMode { Train, Infer };

// Train: uniform subset without replacement. Infer: view 0 plus evenly
// spaced indices floor(k*n/m).
std::vector<int> sample_ref_views(int n_views, int m, RefMode mode, Rng* rng);

// One forward/backward/update over a batch of trajectories. n_views_used
// limits how many input views are consumed this step (mixed-view training).
StepRecord train_step(const std::vector<const TrainTrajectory*>& batch, Weights& weights,
                      AdamState& adam, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      double lr, int n_views_used, Rng& rng);

void adam_update(Weights& w, AdamState& st, const std::map<std::string, std::vector<double>>& grads,
                 double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace mvrec
