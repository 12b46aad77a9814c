#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvrec/formats.hpp"
#include "mvrec/metrics.hpp"
#include "mvrec/model.hpp"
#include "mvrec/pose.hpp"
#include "mvrec/scene.hpp"
#include "mvrec/splat.hpp"
#include "mvrec/trainer.hpp"

namespace mvrec {

// Bad options or flags; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Numerical failure (non-finite loss, solver breakdown); exit code 4.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenDataOptions {
  int scenes = 8;
  int trajectories = 16;
  int views = 10;
  int novel = 2;
  int rooms = 2;
  int props = 4;
  int image_size = 32;
  double tmin = 0.3, tmax = 0.7;
  double tc = 0.0;  // 0 = auto from resolution
  double focal = 0.0;  // 0 = 60-degree horizontal field of view
  uint64_t seed = 1;
  std::string out_dir;
};
struct GenDataSummary {
  int written = 0;
  int failed = 0;
};
GenDataSummary run_gen_data(const GenDataOptions& opts);

struct TrainOptions {
  std::string data_dir;
  std::string out_dir;
  std::string config_file;   // optional, key = value with [model]/[train]
  std::string overrides;     // optional inline text, highest precedence
  std::string resume_ckpt;   // optional, stage-2 style resume
};
struct TrainSummary {
  long long steps = 0;
  double final_l_conf = 0, final_l_all = 0;
  std::string final_checkpoint;
};
TrainSummary run_train(const TrainOptions& opts);

struct ReconstructOptions {
  std::string ckpt;
  std::vector<std::string> images;  // PPM paths; or use trajectory_dir
  std::string trajectory_dir;
  std::string out_dir;
  int m_paths = 0;  // 0 = model default
  double filter_pct = 3.0;
  uint64_t seed = 0;
};
struct ReconstructSummary {
  long long ply_points = 0;
  double focal = 0;
};
ReconstructSummary run_reconstruct(const ReconstructOptions& opts);

struct EvalOptions {
  std::string ckpt;
  std::string data_dir;
  std::string out_dir;
  int views = 8;
  std::string tasks = "mvs,pose";  // comma list of mvs,pose,nvs
  int m_paths = 0;
  bool oracle = false;        // ground truth as prediction
  bool nvs_baseline = false;  // heuristic Gaussians instead of the GS head
  long long cd_max_points = 50000;
  uint64_t seed = 0;
};
struct EvalSummary {
  MetricReport aggregate;
  std::string report_path;
};
EvalSummary run_eval(const EvalOptions& opts);

struct RenderOptions {
  std::string ckpt;
  std::string trajectory_dir;
  std::string out_dir;
  int target_index = 0;
  std::string source = "model";  // model | baseline | gt
  int m_paths = 0;
  double filter_pct = 3.0;  // baseline confidence filter
};
struct RenderSummary {
  std::string image_path;
  double psnr_vs_target = 0;
};
RenderSummary run_render(const RenderOptions& opts);

// ---- shared helpers ----

struct StoredView {
  std::string image_path, depth_path;
  Pose pose;
  bool novel = false;
};
struct StoredTrajectory {
  std::string dir;
  double tmin = 0, tmax = 0, tc = 0;
  uint64_t scene_seed = 0, traj_seed = 0;
  Pinhole cam;
  std::vector<StoredView> views;
  int n_input = 0;
};

StoredTrajectory read_trajectory_manifest(const std::string& traj_dir);
std::vector<std::string> list_dataset_trajectories(const std::string& data_dir);
TrainTrajectory load_train_trajectory(const std::string& traj_dir);

struct InferenceResult {
  std::vector<PointMap> pointmaps;  // path-1 predictions, frame of view 0
  std::vector<ConfidenceMap> confs;
  std::vector<GsParamMaps> gs;      // empty when the model has no GS head
  double pred_scale = 0;            // scale_norm_factor of the predictions
};

InferenceResult run_inference(const ModelConfig& cfg, const Weights& w,
                              const std::vector<Tensor>& images, int m_paths);

struct PoseRecovery {
  double focal = 0;
  std::vector<Pose> poses;  // camera-from-reference per view
  std::vector<int> inliers;
};
PoseRecovery recover_poses(const InferenceResult& inf, int width, int height, uint64_t seed);

Tensor image_to_tensor(const std::vector<double>& rgb, int width, int height);

}  // namespace mvrec
