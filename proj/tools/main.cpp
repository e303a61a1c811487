#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "splatkit/io.hpp"

namespace {

using namespace splatkit;
using nlohmann::json;

json number_or_inf(double v) {
  if (std::isinf(v)) return "inf";
  if (std::isnan(v)) return nullptr;
  return v;
}

json moran_to_json(const MoranReport& report) {
  auto group = [](const MoranGroupScore& g) {
    return g.score ? json(*g.score) : json(nullptr);
  };
  return json{{"N", report.neighbors},
              {"groups",
               {{"color", group(report.color)},
                {"opacity", group(report.opacity)},
                {"covariance", group(report.covariance)}}},
              {"skipped_count", report.skipped_total()}};
}

void write_json_output(const json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write output: " + path);
  out << j.dump(2) << "\n";
}

TimeStamp timestamp_for(double t, int t_steps) {
  TimeStamp ts;
  ts.t = t;
  ts.frame_index = t_steps > 1 ? static_cast<int>(std::lround(t * (t_steps - 1))) : 0;
  return ts;
}

struct TrainCliOptions {
  std::string scene_dir;
  std::string out_path = "checkpoint.bin";
  std::string metrics_csv;
  std::string resume_path;
  std::string mode = "free_3dgs";
  std::string flow_variant = "se3";
  std::vector<double> background;
  bool no_triplane = false;
  bool relu = false;
  TrainConfig cfg;
};

void add_train_options(CLI::App* cmd, TrainCliOptions& opt) {
  cmd->add_option("--scene", opt.scene_dir, "Scene directory (manifest.json inside)")->required();
  cmd->add_option("--out", opt.out_path, "Checkpoint output path");
  cmd->add_option("--metrics", opt.metrics_csv, "Metrics CSV path");
  cmd->add_option("--resume", opt.resume_path, "Checkpoint to resume from");
  cmd->add_option("--mode", opt.mode,
                  "free_3dgs | free_3dgs_moran | splatfields3d | splatfields4d");
  cmd->add_option("--iterations", opt.cfg.iterations, "Optimization steps");
  cmd->add_option("--batch", opt.cfg.batch_size, "Views per step");
  cmd->add_option("--seed", opt.cfg.seed, "RNG seed");
  cmd->add_option("--lr-start", opt.cfg.lr_start, "Initial learning rate");
  cmd->add_option("--lr-end", opt.cfg.lr_end, "Final learning rate");
  cmd->add_option("--lr-end-iteration", opt.cfg.lr_end_iteration, "Decay endpoint iteration");
  cmd->add_option("--eval-interval", opt.cfg.eval_interval, "Evaluation cadence");
  cmd->add_option("--densify-interval", opt.cfg.densify_interval,
                  "Density control cadence (0 disables)");
  cmd->add_option("--densify-until", opt.cfg.densify_until,
                  "Last densify iteration (0 = half the run)");
  cmd->add_option("--prune-opacity", opt.cfg.prune_opacity, "Prune threshold");
  cmd->add_option("--clone-threshold", opt.cfg.clone_grad_threshold,
                  "Positional-gradient clone threshold");
  cmd->add_option("--init-count", opt.cfg.init_count, "Random init count without a point cloud");
  cmd->add_option("--lambda-dssim", opt.cfg.loss.lambda_dssim, "D-SSIM mix weight");
  cmd->add_option("--lambda-mask", opt.cfg.loss.lambda_mask, "Mask loss weight");
  cmd->add_option("--lambda-norm", opt.cfg.loss.lambda_norm, "Splat norm weight");
  cmd->add_option("--lambda-moran", opt.cfg.loss.lambda_moran, "Moran loss weight");
  cmd->add_option("--moran-neighbors", opt.cfg.moran_neighbors, "Moran neighborhood size");
  cmd->add_option("--background", opt.background, "Background RGB override")->expected(3);
  cmd->add_option("--width-scale", opt.cfg.fields.width_scale, "Field width multiplier");
  cmd->add_option("--base-scale", opt.cfg.fields.base_scale, "Base splat scale");
  cmd->add_flag("--no-triplane", opt.no_triplane, "MLP-only fields (triplane ablation)");
  cmd->add_flag("--relu", opt.relu, "ReLU activations instead of softplus");
  cmd->add_option("--resfield-rank", opt.cfg.fields.resfield_rank, "ResField rank (4D)");
  cmd->add_option("--noise-res", opt.cfg.fields.triplane.noise_res, "Triplane noise resolution");
  cmd->add_option("--triplane-channels", opt.cfg.fields.triplane.channels, "Decoder channels");
  cmd->add_option("--triplane-upsamples", opt.cfg.fields.triplane.n_up, "Upsampling blocks");
  cmd->add_option("--feature-dim", opt.cfg.fields.triplane.feature_dim, "Plane feature dim");
  cmd->add_option("--flow-variant", opt.flow_variant, "offset | se3 | scaled_se3 | dct");
  cmd->add_option("--dct-basis", opt.cfg.flow.dct_basis, "DCT basis size");
  cmd->add_option("--z-near", opt.cfg.raster.z_near, "Near plane");
  cmd->add_option("--dilation", opt.cfg.raster.dilation, "Screen-space dilation");
}

TrainConfig finalize_train_config(TrainCliOptions& opt, const SceneData& scene) {
  TrainConfig cfg = opt.cfg;
  cfg.mode = train_mode_from_string(opt.mode);
  cfg.flow.variant = flow_variant_from_string(opt.flow_variant);
  cfg.flow.resfield_rank = cfg.fields.resfield_rank;
  cfg.fields.use_triplane = !opt.no_triplane;
  if (opt.relu) {
    cfg.fields.act = Activation::Relu;
    cfg.fields.triplane.act = Activation::Relu;
    cfg.flow.act = Activation::Relu;
  }
  if (opt.background.size() == 3)
    cfg.loss.background = Vec3(opt.background[0], opt.background[1], opt.background[2]);
  else
    cfg.loss.background = scene.background;
  return cfg;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Neural splat reconstruction toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  // Config file (TOML/INI, one [subcommand] section per command). Options on
  // the command line override file values, which override built-in defaults.
  app.set_config("--config");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  SynthSpec spec;
  std::string synth_out;
  std::vector<double> synth_bg;
  synth->add_option("--out", synth_out, "Output scene directory")->required();
  synth->add_option("--gaussians", spec.gaussians, "Ground-truth Gaussian count");
  synth->add_option("--views", spec.views, "Camera count");
  synth->add_option("--holdout", spec.holdout, "Held-out (test) camera count");
  synth->add_option("--width", spec.width, "Image width");
  synth->add_option("--height", spec.height, "Image height");
  synth->add_option("--tsteps", spec.t_steps, "Frames for a dynamic scene");
  synth->add_option("--seed", spec.seed, "RNG seed");
  synth->add_option("--init-noise", spec.init_noise, "Init point jitter");
  synth->add_option("--background", synth_bg, "Background RGB")->expected(3);

  // train
  auto* train = app.add_subcommand("train", "Optimize a scene");
  TrainCliOptions train_opt;
  add_train_options(train, train_opt);

  // render
  auto* render_cmd = app.add_subcommand("render", "Render a checkpoint view to PNG");
  std::string render_ckpt, render_scene, render_out = "render.png";
  int render_view_idx = 0;
  double render_time = -1.0;
  render_cmd->add_option("--checkpoint", render_ckpt)->required();
  render_cmd->add_option("--scene", render_scene, "Scene directory for cameras")->required();
  render_cmd->add_option("--view", render_view_idx, "View index in the manifest");
  render_cmd->add_option("--time", render_time, "Override time in [0,1]");
  render_cmd->add_option("--out", render_out, "Output PNG");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against a scene");
  std::string eval_ckpt, eval_scene, eval_out;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--scene", eval_scene)->required();
  eval_cmd->add_option("--out", eval_out, "Metrics JSON path (stdout when omitted)");

  // moran
  auto* moran_cmd = app.add_subcommand("moran", "Spatial-autocorrelation report");
  std::string moran_ckpt, moran_ply, moran_out;
  int moran_neighbors = 5;
  bool moran_centered = false;
  double moran_time = 0.0;
  moran_cmd->add_option("--checkpoint", moran_ckpt, "Checkpoint input");
  moran_cmd->add_option("--ply", moran_ply, "Splat PLY input");
  moran_cmd->add_option("--neighbors", moran_neighbors, "Neighborhood size N");
  moran_cmd->add_flag("--centered", moran_centered, "Classical mean-centered variant");
  moran_cmd->add_option("--time", moran_time, "Evaluation time (4D checkpoints)");
  moran_cmd->add_option("--out", moran_out, "Report JSON path (stdout when omitted)");

  // export-ply
  auto* export_cmd = app.add_subcommand("export-ply", "Bake a checkpoint to a splat PLY");
  std::string export_ckpt, export_out = "splats.ply";
  double export_time = 0.0;
  export_cmd->add_option("--checkpoint", export_ckpt)->required();
  export_cmd->add_option("--out", export_out, "Output PLY path");
  export_cmd->add_option("--time", export_time, "Bake time (4D checkpoints)");

  // trajectory
  auto* traj_cmd = app.add_subcommand("trajectory", "Export per-splat flow trajectories as CSV");
  std::string traj_ckpt, traj_out = "trajectory.csv";
  traj_cmd->add_option("--checkpoint", traj_ckpt)->required();
  traj_cmd->add_option("--out", traj_out, "Output CSV path");

  CLI11_PARSE(app, argc, argv);

  if (*synth) {
    if (synth_bg.size() == 3) spec.background = Vec3(synth_bg[0], synth_bg[1], synth_bg[2]);
    synth_scene(spec, synth_out);
    std::cout << "scene written to " << synth_out << "\n";
    return 0;
  }

  if (*train) {
    SceneData scene = load_scene(train_opt.scene_dir);
    TrainConfig cfg = finalize_train_config(train_opt, scene);
    std::optional<Checkpoint> resume;
    if (!train_opt.resume_path.empty()) resume = load_checkpoint(train_opt.resume_path);
    Trainer trainer(std::move(scene), cfg, resume ? &*resume : nullptr);
    trainer.run(train_opt.metrics_csv, train_opt.out_path + ".rescue");
    save_checkpoint(trainer.snapshot(), train_opt.out_path);
    EvalRow row = trainer.evaluate();
    std::cout << "iteration " << row.iteration << " train_psnr " << row.train_psnr
              << " test_psnr " << row.test_psnr << " splats " << row.splat_count << "\n";
    return 0;
  }

  if (*render_cmd) {
    Checkpoint ckpt = load_checkpoint(render_ckpt);
    SceneData scene = load_scene(render_scene);
    if (render_view_idx < 0 || render_view_idx >= static_cast<int>(scene.views.size()))
      throw DataError("view index out of range");
    Trainer trainer(scene, ckpt.config, &ckpt);
    SceneView view = scene.views[static_cast<size_t>(render_view_idx)];
    if (render_time >= 0.0) view.time = timestamp_for(render_time, scene.t_steps);
    RenderOutput out = trainer.render_view(view);
    write_png(render_out, out.color, &out.accumulated_opacity);
    std::cout << "wrote " << render_out << "\n";
    return 0;
  }

  if (*eval_cmd) {
    Checkpoint ckpt = load_checkpoint(eval_ckpt);
    SceneData scene = load_scene(eval_scene);
    Trainer trainer(std::move(scene), ckpt.config, &ckpt);
    EvalRow row = trainer.evaluate();
    json j{{"iteration", row.iteration},
           {"splat_count", row.splat_count},
           {"train", {{"psnr", number_or_inf(row.train_psnr)}, {"ssim", row.train_ssim}}},
           {"test", {{"psnr", number_or_inf(row.test_psnr)}, {"ssim", row.test_ssim}}},
           {"moran", moran_to_json(row.moran)}};
    write_json_output(j, eval_out);
    return 0;
  }

  if (*moran_cmd) {
    MoranReport report;
    if (!moran_ply.empty()) {
      report = morans_i(read_splat_ply(moran_ply), moran_neighbors, moran_centered);
    } else if (!moran_ckpt.empty()) {
      Checkpoint ckpt = load_checkpoint(moran_ckpt);
      Trainer trainer(SceneData{}, ckpt.config, &ckpt);
      TimeStamp ts = timestamp_for(moran_time, ckpt.config.fields.t_steps);
      report = morans_i(trainer.current_attributes(ts), moran_neighbors, moran_centered);
    } else {
      throw UsageError("moran: provide --checkpoint or --ply");
    }
    write_json_output(moran_to_json(report), moran_out);
    return 0;
  }

  if (*export_cmd) {
    Checkpoint ckpt = load_checkpoint(export_ckpt);
    Trainer trainer(SceneData{}, ckpt.config, &ckpt);
    TimeStamp ts = timestamp_for(export_time, ckpt.config.fields.t_steps);
    SplatSet set = to_splat_set(trainer.current_attributes(ts));
    if (set.count() == 0) throw DataError("export-ply: checkpoint holds no splats");
    write_splat_ply(set, export_out);
    std::cout << "wrote " << export_out << "\n";
    return 0;
  }

  if (*traj_cmd) {
    Checkpoint ckpt = load_checkpoint(traj_ckpt);
    Trainer trainer(SceneData{}, ckpt.config, &ckpt);
    write_trajectory_csv(trainer.flow_trajectory(), traj_out);
    std::cout << "wrote " << traj_out << "\n";
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
