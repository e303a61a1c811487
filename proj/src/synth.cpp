#include <filesystem>
#include <random>

#include "splatkit/common.hpp"
#include "splatkit/io.hpp"

namespace splatkit {

namespace {

namespace fs = std::filesystem;

// Smooth low-frequency scalar field over the unit box; one random phase and
// direction per channel keeps nearby points correlated.
struct SmoothField {
  Vec3 freq;
  double phase;
  double eval(const Vec3& p) const { return std::sin(2.0 * M_PI * freq.dot(p) + phase); }
};

SmoothField random_field(std::mt19937_64& rng, double max_freq) {
  std::uniform_real_distribution<double> f(-max_freq, max_freq);
  std::uniform_real_distribution<double> ph(0.0, 2.0 * M_PI);
  return {Vec3(f(rng), f(rng), f(rng)), ph(rng)};
}

struct Motion {
  double angle_amp = 0.5;      // radians about +y
  Vec3 translation_amp = Vec3(0.15, 0.08, 0.0);

  void apply(double t, Splat* s) const {
    double angle = angle_amp * std::sin(2.0 * M_PI * t);
    Eigen::AngleAxisd rot(angle, Vec3::UnitY());
    Vec3 shift = translation_amp * std::sin(2.0 * M_PI * t);
    s->position = rot * s->position + shift;
    Eigen::Quaterniond q(rot);
    Eigen::Quaterniond base(s->rotation[0], s->rotation[1], s->rotation[2], s->rotation[3]);
    Eigen::Quaterniond combined = q * base;
    s->rotation = Vec4(combined.w(), combined.x(), combined.y(), combined.z());
  }
};

SplatSet base_ground_truth(const SynthSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> box(-0.5, 0.5);
  std::uniform_real_distribution<double> scale(0.06, 0.14);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SmoothField color_fields[3] = {random_field(rng, 1.2), random_field(rng, 1.2),
                                 random_field(rng, 1.2)};
  SmoothField opacity_field = random_field(rng, 1.0);

  SplatSet set;
  for (int i = 0; i < spec.gaussians; ++i) {
    Splat s;
    s.position = Vec3(box(rng), box(rng), box(rng));
    s.log_scale = Vec3(std::log(scale(rng)), std::log(scale(rng)), std::log(scale(rng)));
    Vec4 q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    s.rotation = normalize_quaternion(q);
    for (int c = 0; c < 3; ++c)
      s.color[c] = 0.5 + 0.42 * color_fields[c].eval(s.position);
    s.opacity_logit = 1.6 + 1.4 * opacity_field.eval(s.position);
    set.splats.push_back(s);
  }
  return set;
}

Camera orbit_camera(int index, int total, int width, int height) {
  // Golden-spiral directions, biased away from the poles.
  double golden = M_PI * (3.0 - std::sqrt(5.0));
  double y = 1.0 - 2.0 * (index + 0.5) / total;
  y *= 0.7;
  double r = std::sqrt(1.0 - y * y);
  double theta = golden * index;
  Vec3 eye = 2.1 * Vec3(r * std::cos(theta), y, r * std::sin(theta));

  Vec3 forward = (-eye).normalized();  // look at the origin
  Vec3 world_up(0, 1, 0);
  Vec3 right = forward.cross(world_up).normalized();
  Vec3 down = forward.cross(right);  // +y is down in camera space

  Camera cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = cam.fy = 1.2 * width;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

Eigen::Matrix4d camera_to_world(const Camera& cam) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = cam.rotation.transpose();
  m.block<3, 1>(0, 3) = cam.position();
  return m;
}

}  // namespace

SplatSet synth_ground_truth(const SynthSpec& spec, int frame_index) {
  SplatSet set = base_ground_truth(spec);
  if (spec.t_steps > 1) {
    double t = frame_index / static_cast<double>(spec.t_steps - 1);
    Motion motion;
    for (Splat& s : set.splats) motion.apply(t, &s);
  }
  return set;
}

void synth_scene(const SynthSpec& spec, const std::string& out_dir) {
  if (spec.gaussians < 1 || spec.views < 1 || spec.holdout >= spec.views)
    throw ConfigError("synth: invalid counts");
  fs::create_directories(fs::path(out_dir) / "images");

  // Evenly spread test cameras.
  std::vector<bool> is_test(static_cast<size_t>(spec.views), false);
  for (int j = 0; j < spec.holdout; ++j)
    is_test[static_cast<size_t>(j * spec.views / spec.holdout)] = true;

  RasterConfig raster;
  raster.background = spec.background;

  Manifest manifest;
  manifest.background = spec.background;
  manifest.t_steps = spec.t_steps;
  manifest.init_points = "init_points.ply";

  int frames = std::max(1, spec.t_steps);
  for (int f = 0; f < frames; ++f) {
    SplatSet gt = synth_ground_truth(spec, f);
    SplatAttributes attrs = to_attributes(gt);
    for (int v = 0; v < spec.views; ++v) {
      Camera cam = orbit_camera(v, spec.views, spec.width, spec.height);
      RenderOutput out = render(attrs, cam, raster);
      std::string name = "images/v" + std::to_string(v) +
                         (frames > 1 ? "_f" + std::to_string(f) : std::string()) + ".png";
      write_png((fs::path(out_dir) / name).string(), out.color, &out.accumulated_opacity);

      ManifestEntry entry;
      entry.file_path = name;
      entry.transform = camera_to_world(cam);
      entry.fl_x = cam.fx;
      entry.fl_y = cam.fy;
      entry.cx = cam.cx;
      entry.cy = cam.cy;
      entry.width = cam.width;
      entry.height = cam.height;
      entry.split = is_test[static_cast<size_t>(v)] ? "test" : "train";
      if (frames > 1) entry.time = f / static_cast<double>(frames - 1);
      manifest.entries.push_back(entry);
    }
  }

  SplatSet gt0 = synth_ground_truth(spec, 0);
  write_splat_ply(gt0, (fs::path(out_dir) / "gt.ply").string());

  // Initial point cloud: jittered ground-truth centers, standing in for an
  // SfM/visual-hull initialization.
  std::mt19937_64 rng(spec.seed + 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> jitter(0.0, spec.init_noise);
  SplatSet init = gt0;
  for (Splat& s : init.splats) {
    s.position += Vec3(jitter(rng), jitter(rng), jitter(rng));
    s.log_scale = Vec3::Constant(std::log(0.05));
    s.rotation = Vec4(1, 0, 0, 0);
    s.opacity_logit = logit(0.1);
    s.color = Vec3(0.5, 0.5, 0.5);
  }
  write_splat_ply(init, (fs::path(out_dir) / "init_points.ply").string());

  write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
}

}  // namespace splatkit
