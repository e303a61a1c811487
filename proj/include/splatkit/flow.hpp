#pragma once

#include <optional>
#include <string>

#include "splatkit/fields.hpp"

namespace splatkit {

enum class FlowVariant { Offset, Se3, ScaledSe3, Dct };

FlowVariant flow_variant_from_string(const std::string& name);
std::string to_string(FlowVariant variant);

struct FlowConfig {
  FlowVariant variant = FlowVariant::Se3;
  int layers = 8;
  int width = 128;
  double width_scale = 1.0;
  int feature_dim = 48;     // matches the fuser output
  int pe_levels = 4;
  int dct_basis = 8;        // B cosine basis functions
  int t_steps = 2;
  int resfield_rank = 0;    // forced to 0 for the DCT variant
  Activation act = Activation::Softplus;
};

// Rotate row vectors of v {K,3} by unit quaternions q {K,4}.
Value quat_rotate(Value q, Value v);

// Time-conditioned forward flow warping splat centers to the observation
// time. The head layer is zero-initialized so identity parameters produce
// the identity warp in every variant.
class FlowField {
public:
  FlowField() = default;
  FlowField(ParameterStore& store, const FlowConfig& cfg, std::mt19937_64& rng);

  // p_hat {K,3} taped, features {K,F} taped.
  Value warp(Tape& tape, const ParameterStore& store, Value p_hat, Value features,
             const TimeStamp& time) const;

  // Eager evaluation of the warp at every frame index; {T_steps, K, 3}.
  Tensor trajectory(const ParameterStore& store, const Tensor& p_hat,
                    const Tensor& features) const;

  const FlowConfig& config() const { return cfg_; }
  std::vector<int> param_ids() const;

private:
  FlowConfig cfg_;
  Mlp trunk_;
  ResFieldLayer head_;

  int head_dim() const;
};

}  // namespace splatkit
