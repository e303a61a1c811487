#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "splatkit/rasterizer.hpp"
#include "splatkit/scene.hpp"
#include "splatkit/tape.hpp"

namespace splatkit {

// NeRF-convention positional encoding: the raw input followed by
// [sin(2^l pi x), cos(2^l pi x)] for l = 0..levels-1.
Tensor positional_encoding(const Tensor& x, int levels);
Value positional_encode(Value x, int levels);

enum class Activation { Softplus, Relu };
Value activate(Value x, Activation act);

// Axis-aligned scene bounds used to normalize points into triplane UVs.
struct SceneAabb {
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);

  static SceneAabb from_points(const Tensor& points, double padding = 0.1);
  Vec3 normalize(const Vec3& p) const;  // clamped to [0,1]^3
};

// One affine layer with an optional low-rank time-indexed residual:
// W(t) = W + sum_r coeff_r(t) * M_r with coefficients linearly interpolated
// between adjacent frame rows of the table.
struct ResFieldLayer {
  int weight = -1;  // {in,out}
  int bias = -1;    // {out}
  int basis = -1;   // {rank,in,out}
  int coeffs = -1;  // {t_steps,rank}
  int rank = 0;
  int t_steps = 0;
};

Value resfield_apply(Tape& tape, const ParameterStore& store, const ResFieldLayer& layer,
                     Value input, std::optional<double> t);

struct MlpConfig {
  int in_dim = 0;
  int width = 64;
  int out_dim = 0;
  int layers = 2;             // total number of affine layers
  Activation act = Activation::Softplus;
  bool activate_output = false;
  bool zero_init_last = false;
  std::vector<double> last_bias;  // optional init for the final bias
  int resfield_rank = 0;
  int t_steps = 0;
};

class Mlp {
public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& prefix, const MlpConfig& cfg,
      std::mt19937_64& rng);

  Value apply(Tape& tape, const ParameterStore& store, Value input,
              std::optional<double> t = std::nullopt) const;
  const std::vector<ResFieldLayer>& layers() const { return layers_; }
  std::vector<int> param_ids() const;

private:
  std::vector<ResFieldLayer> layers_;
  MlpConfig cfg_;
};

// ---- triplane generator ----

struct TriplaneConfig {
  int noise_res = 8;       // h0; planes come out at h0 * 2^n_up
  int noise_channels = 8;
  int channels = 16;       // decoder width
  int n_up = 2;
  int feature_dim = 16;    // l
  Activation act = Activation::Softplus;
};

// Three CNN decoders mapping fixed seeded noise to axis-aligned feature
// planes. The noise is never trained; only the decoder weights are.
class TriplaneGenerator {
public:
  TriplaneGenerator() = default;
  TriplaneGenerator(ParameterStore& store, const TriplaneConfig& cfg, std::mt19937_64& rng);

  std::array<Value, 3> generate(Tape& tape, const ParameterStore& store) const;
  int plane_resolution() const { return cfg_.noise_res * (1 << cfg_.n_up); }
  const TriplaneConfig& config() const { return cfg_; }
  std::vector<int> param_ids() const;  // learnable decoder weights only
  int final_conv_weight(int decoder) const;

private:
  struct Decoder {
    int expand_w = -1, expand_b = -1;
    struct UpBlock {
      int r1a_w, r1a_b, r1b_w, r1b_b;
      int r2a_w, r2a_b, r2b_w, r2b_b;
      int up_w, up_b;
    };
    std::vector<UpBlock> blocks;
    int final_w = -1, final_b = -1;
  };
  std::array<Decoder, 3> decoders_;
  std::array<int, 3> noise_ = {-1, -1, -1};
  TriplaneConfig cfg_;
};

// Taped convolution / upsample / plane-sampling primitives.
Value conv2d(Value input, Value kernel, Value bias);  // 'same' zero padding
Value upsample2x(Value input);
// coords {K,2} are constant UVs in [0,1]^2 (align-corners bilinear).
Value bilinear_sample(Value plane, const Tensor& coords);

// ---- field bundle ----

struct FieldConfig {
  int pe_levels = 4;
  int fuser_width = 48;
  int deform_layers = 8, deform_width = 128;
  int color_layers = 6, color_width = 128;
  int scale_layers = 5, scale_width = 64;
  int opacity_layers = 5, opacity_width = 64;
  int rotation_layers = 4, rotation_width = 64;
  double width_scale = 1.0;     // desk-scale knob; layer counts stay fixed
  double base_scale = 0.05;     // world-units scale multiplier under exp
  bool use_triplane = true;     // false = MLP-only ablation (f = zero vector)
  bool time_conditioned = false;
  int resfield_rank = 0;
  int t_steps = 0;
  TriplaneConfig triplane;
  Activation act = Activation::Softplus;
};

struct FieldGeometry {
  Value features;    // {K,48}
  Value p_hat;       // {K,3}
  Value log_scale;   // {K,3}
  Value alpha;       // {K,1}, in (0,1)
  Value rotation;    // {K,4}, unit rows
  Value head_input;  // shared [pe(p_hat), f, pe(t)] block reused by the color head
};

// The neural generator stack: triplane features, deform MLP and the
// per-attribute heads. Latent point positions are inputs, not parameters.
class SplatFieldModel {
public:
  SplatFieldModel() = default;
  SplatFieldModel(ParameterStore& store, const FieldConfig& cfg, std::mt19937_64& rng);

  // Evaluates sampling + deform + scale/opacity/rotation heads at one time.
  FieldGeometry evaluate_geometry(Tape& tape, const ParameterStore& store,
                                  const Tensor& latent_positions, const SceneAabb& aabb,
                                  std::optional<TimeStamp> time = std::nullopt) const;

  // View-dependent color head; view_dirs {K,3} are unit rows, treated as
  // constants of the tape.
  Value evaluate_color(Tape& tape, const ParameterStore& store, const FieldGeometry& geom,
                       const Tensor& view_dirs, std::optional<TimeStamp> time = std::nullopt) const;

  // Bakes plain splat attributes at a canonical +z view direction.
  SplatAttributes bake(const ParameterStore& store, const Tensor& latent_positions,
                       const SceneAabb& aabb, std::optional<TimeStamp> time = std::nullopt) const;

  const FieldConfig& config() const { return cfg_; }
  const TriplaneGenerator& generator() const { return generator_; }
  const Mlp& deform_mlp() const { return deform_; }
  std::vector<int> param_ids() const;

private:
  FieldConfig cfg_;
  TriplaneGenerator generator_;
  Mlp fuser_, deform_, color_trunk_, scale_, opacity_, rotation_;
  ResFieldLayer color_view_layer_;  // last color layer, fed the encoded view

  Value sampled_features(Tape& tape, const ParameterStore& store,
                         const Tensor& latent_positions, const SceneAabb& aabb) const;
};

}  // namespace splatkit
