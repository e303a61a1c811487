#pragma once

#include <optional>
#include <vector>

#include "splatkit/scene.hpp"
#include "splatkit/tape.hpp"

namespace splatkit {

// Peak signal-to-noise ratio with MAX = 1; identical inputs return +inf.
double psnr(const Tensor& a, const Tensor& b);
double psnr(const Frame& a, const Frame& b);

// Wang-style SSIM: 11x11 Gaussian window, sigma 1.5, C1 = 0.01^2,
// C2 = 0.03^2, valid windows only, mean over positions and channels.
double ssim(const Tensor& a, const Tensor& b);
Value ssim_value(Value a, Value b);
Value d_ssim(Value a, Value b);  // (1 - ssim) / 2

// ---- Moran's I spatial autocorrelation ----

// Frozen k-nearest-neighbor graph: per splat, its N neighbors, the N x N
// inverse-distance weight matrix and its sum. Distances are clamped below
// at min_distance so duplicate points stay finite.
struct MoranGraph {
  int count = 0;
  int neighbors = 0;
  std::vector<int> index;         // {K*N} neighbor splat ids
  std::vector<double> weights;    // {K*N*N} row-major per-splat W matrices
  std::vector<double> weight_sums;  // {K}
};

MoranGraph build_moran_graph(const Tensor& positions, int neighbors,
                             double min_distance = 1e-8);

struct MoranGroupScore {
  std::optional<double> score;   // nullopt when every local score is skipped
  int skipped = 0;               // (splat, dim) locals with zero attr energy
  std::vector<double> locals;    // per-splat score averaged over valid dims (NaN if none)
};

// Attribute autocorrelation over a {K,D} tensor, averaged across dims.
// The uncentered form follows the committed formula; `centered` subtracts
// the neighborhood mean first (classical variant, analysis only).
MoranGroupScore moran_group(const MoranGraph& graph, const Tensor& attrs,
                            bool centered = false);

struct MoranReport {
  int neighbors = 0;
  MoranGroupScore color;
  MoranGroupScore opacity;
  MoranGroupScore covariance;  // six unique world-covariance entries
  int skipped_total() const { return color.skipped + opacity.skipped + covariance.skipped; }
};

MoranReport morans_i(const SplatSet& set, int neighbors, bool centered = false);
MoranReport morans_i(const SplatAttributes& attrs, int neighbors, bool centered = false);

// Taped group score with the neighbor graph frozen; gradients flow only
// through the attribute values. Throws NumericalError if every local score
// is skipped.
Value moran_score(Value attrs, const MoranGraph& graph);

// lambda * (1 - mean of group scores).
Value moran_loss(const std::vector<Value>& group_scores, double lambda);

}  // namespace splatkit
