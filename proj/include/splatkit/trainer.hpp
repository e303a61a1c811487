#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "splatkit/fields.hpp"
#include "splatkit/flow.hpp"
#include "splatkit/metrics.hpp"
#include "splatkit/rasterizer.hpp"

namespace splatkit {

enum class TrainMode { Free3dgs, Free3dgsMoran, SplatFields3d, SplatFields4d };

TrainMode train_mode_from_string(const std::string& name);
std::string to_string(TrainMode mode);

struct LossConfig {
  double lambda_dssim = 0.2;   // D-SSIM mix (1-l)*L1 + l*D-SSIM
  double lambda_mask = 0.0;    // accumulated-opacity vs mask
  double lambda_norm = 0.0;    // mean ||p_hat||_2 over splats
  double lambda_moran = 0.0;   // lambda * (1 - E[I])
  Vec3 background = Vec3::Zero();
};

struct TrainConfig {
  TrainMode mode = TrainMode::Free3dgs;
  int iterations = 2000;
  int batch_size = 0;          // views per step; 0 = 1 static, 5 dynamic
  double lr_start = 8e-4;
  double lr_end = 1.6e-6;
  int lr_end_iteration = 40000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-15;
  int densify_interval = 500;  // <= 0 disables density control
  int densify_until = 0;       // last eligible iteration; 0 = iterations / 2
  double prune_opacity = 0.005;
  double clone_grad_threshold = 2e-4;  // on NDC-space positional gradients
  int init_count = 100;        // random free-mode fallback when no init points
  // Per-group learning-rate multipliers for the raw splat parameters,
  // mirroring the reference splatting optimizer's group ratios. Network
  // weights always train at the base schedule.
  double lr_scale_position = 1.0;
  double lr_scale_color = 3.0;
  double lr_scale_opacity = 50.0;
  double lr_scale_scale = 6.0;
  double lr_scale_rotation = 1.25;
  unsigned long long seed = 0;
  int eval_interval = 200;
  int moran_neighbors = 5;
  LossConfig loss;
  FieldConfig fields;
  FlowConfig flow;
  RasterConfig raster;
};

struct SceneView {
  Camera camera;
  Frame frame;
  TimeStamp time;
  bool is_test = false;
};

struct SceneData {
  std::vector<SceneView> views;
  Tensor init_points;              // {K,3}; empty when absent
  std::optional<SceneAabb> aabb;   // manifest override
  Vec3 background = Vec3::Zero();
  int t_steps = 1;

  std::vector<int> split_indices(bool test) const;
};

// Geometric interpolation from lr_start to lr_end, constant afterwards.
double lr_at(int iteration, const TrainConfig& cfg);
double lr_at(int iteration, double lr_start, double lr_end, int end_iteration);

struct AdamState {
  Tensor m, v;
};

// Standard bias-corrected Adam update. Throws NumericalError on non-finite
// gradients.
void adam_step(Tensor& value, const Tensor& grad, AdamState& state, int64_t step, double lr,
               double beta1, double beta2, double eps);

struct LossBreakdown {
  double l1 = 0.0, dssim = 0.0, mask = 0.0, norm = 0.0, moran = 0.0;
};

// Single-view photometric loss: (1-l1)*L1 + l1*D-SSIM + l2*mask + l3*norm.
// The Moran term is appended by the trainer where enabled. p_hat may be an
// invalid Value when lambda_norm is zero.
Value total_loss(Tape& tape, const RenderValues& rendered, const Frame& target, Value p_hat,
                 const LossConfig& cfg, LossBreakdown* breakdown = nullptr);

struct Checkpoint {
  int version = 1;
  TrainConfig config;
  int iteration = 0;
  int64_t adam_steps = 0;
  std::vector<Parameter> params;
  std::vector<AdamState> adam;
  std::string rng_state;
  std::vector<double> grad_accum;
  std::vector<int> grad_count;
  int last_densify = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct EvalRow {
  int iteration = 0;
  double loss = 0.0;
  double train_psnr = 0.0, test_psnr = 0.0;
  double train_ssim = 0.0, test_ssim = 0.0;
  MoranReport moran;
  int splat_count = 0;
};

// Owns every mutable training structure: parameters, optimizer state,
// density control and the RNG stream. One instance per run.
class Trainer {
public:
  Trainer(SceneData scene, TrainConfig cfg, const Checkpoint* resume = nullptr);

  void step();
  // Full loop with periodic evaluation; writes one CSV row per eval.
  // On a numerical failure the last good checkpoint is written to
  // `rescue_path` (when non-empty) and the error is rethrown.
  void run(const std::string& metrics_csv = "", const std::string& rescue_path = "");

  int iteration() const { return iteration_; }
  int splat_count() const;
  const TrainConfig& config() const { return cfg_; }
  const SceneData& scene() const { return scene_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  // Current splats: raw attributes in free modes, baked fields otherwise
  // (canonical +z color; positions flow-warped at `time` in 4D mode).
  SplatAttributes current_attributes(std::optional<TimeStamp> time = std::nullopt) const;
  RenderOutput render_view(const SceneView& view) const;
  EvalRow evaluate(double last_loss = 0.0);
  MoranReport moran_report(std::optional<TimeStamp> time = std::nullopt) const;
  // Warped canonical splat centers at every frame, {T_steps, K, 3} (4D only).
  Tensor flow_trajectory() const;

  Checkpoint snapshot() const;
  void restore(const Checkpoint& ckpt);

  double last_loss() const { return last_loss_; }
  const LossBreakdown& last_breakdown() const { return breakdown_; }
  const SceneAabb& aabb() const { return aabb_; }
  const FlowField& flow() const { return flow_; }
  const SplatFieldModel& field_model() const { return field_model_; }

private:
  bool field_mode() const {
    return cfg_.mode == TrainMode::SplatFields3d || cfg_.mode == TrainMode::SplatFields4d;
  }
  void init_parameters();
  double lr_multiplier(int param_id) const;
  // Projected {K,6} nodes plus image sizes, for screen-space gradient stats.
  struct ProjectionRecord {
    Value packed;
    int width, height;
  };
  Value build_step_loss(Tape& tape, const std::vector<int>& view_ids,
                        std::vector<ProjectionRecord>* projections);
  void density_control();
  void apply_row_edit(const std::vector<int>& keep, const std::vector<int>& clones);

  SceneData scene_;
  TrainConfig cfg_;
  ParameterStore store_;
  std::vector<AdamState> adam_;
  int64_t adam_steps_ = 0;
  int iteration_ = 0;
  std::mt19937_64 rng_;
  double last_loss_ = 0.0;
  LossBreakdown breakdown_;

  // free-mode parameter ids
  int pos_ = -1, log_scale_ = -1, rot_ = -1, opacity_ = -1, color_ = -1;
  // field-mode members
  int latent_ = -1;
  SplatFieldModel field_model_;
  FlowField flow_;
  SceneAabb aabb_;

  // density control state
  std::vector<double> grad_accum_;
  std::vector<int> grad_count_;
  int last_densify_ = 0;
};

}  // namespace splatkit
