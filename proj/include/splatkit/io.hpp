#pragma once

#include <optional>
#include <string>
#include <vector>

#include "splatkit/trainer.hpp"

namespace splatkit {

// ---- PNG ----

struct ImageData {
  Tensor pixels;               // {H,W,3} in [0,1]
  std::optional<Tensor> alpha; // {H,W} in [0,1] when the file carries one
};

ImageData read_png(const std::string& path);
// Writes 8-bit RGBA; values clamped to [0,1] then quantized. alpha == nullptr
// writes opaque. Output bytes are deterministic for identical inputs.
void write_png(const std::string& path, const Tensor& pixels, const Tensor* alpha = nullptr);
// The exact quantize-and-back mapping applied by write_png, exposed so
// round-trip checks can reproduce stored pixel values.
Tensor quantize8(const Tensor& pixels);

// ---- splat PLY ----

// Binary little-endian PLY with float32 properties
// x,y,z,scale_0..2,rot_0..3,opacity,f_dc_0..2 (community splat layout).
void write_splat_ply(const SplatSet& set, const std::string& path);
SplatSet read_splat_ply(const std::string& path);

// ---- scene manifest ----

struct ManifestEntry {
  std::string file_path;
  Eigen::Matrix4d transform;   // camera-to-world
  double fl_x = 0, fl_y = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  std::optional<double> time;
  std::string split = "train";
  std::optional<std::string> mask_path;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  Vec3 background = Vec3::Zero();
  std::optional<SceneAabb> aabb;
  std::optional<std::string> init_points;  // relative PLY path
  int t_steps = 1;
};

Manifest read_manifest(const std::string& path);
void write_manifest(const Manifest& manifest, const std::string& path);

// Loads manifest.json + images from a scene directory. Camera extrinsics are
// derived by inverting the camera-to-world transforms.
SceneData load_scene(const std::string& scene_dir);
Camera camera_from_entry(const ManifestEntry& entry);

// ---- synthetic scenes ----

struct SynthSpec {
  int gaussians = 20;
  int views = 16;
  int holdout = 4;
  int width = 64, height = 64;
  int t_steps = 1;             // > 1 renders a dynamic sequence
  unsigned long long seed = 0;
  double init_noise = 0.02;    // jitter on the exported initial point cloud
  Vec3 background = Vec3::Zero();
};

// Samples spatially smooth ground-truth Gaussians in the unit box, places
// cameras on a sphere, renders ground truth with this rasterizer and writes
// manifest + PNGs + gt.ply + init_points.ply into out_dir.
void synth_scene(const SynthSpec& spec, const std::string& out_dir);

// Flow trajectories {T_steps, K, 3} as CSV rows (frame_index, splat_id, x, y, z).
void write_trajectory_csv(const Tensor& trajectory, const std::string& path);

// Ground-truth attributes of the synthetic scene at one frame (test support).
SplatSet synth_ground_truth(const SynthSpec& spec, int frame_index);

}  // namespace splatkit
