#pragma once

#include <vector>

#include "splatkit/scene.hpp"
#include "splatkit/tape.hpp"

namespace splatkit {

struct RasterConfig {
  double z_near = 0.01;
  double dilation = 0.3;        // screen-space low-pass added to the 2D covariance diagonal
  double sigma_extent = 3.0;    // per-splat bounding box, in marginal sigmas
  double weight_cutoff = 1.0 / 255.0;  // skip contributions with alpha*G below this
  double alpha_min = 1e-6;
  double alpha_max = 0.999;
  Vec3 background = Vec3::Zero();
};

struct ProjectedSplat {
  Vec2 center2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  double depth = 0.0;
  Vec3 color = Vec3::Zero();
  double alpha = 0.0;
  bool valid = false;           // false when culled by the near plane
  int source = 0;               // index into the input splat list
};

struct Contribution {
  int splat = 0;                // source splat index
  double gauss = 0.0;           // 2D Gaussian value at the pixel
  double transmittance = 0.0;   // transmittance in front of this contribution
  double weight = 0.0;          // alpha * gauss * transmittance
};

struct RenderOutput {
  Tensor color;                 // {H,W,3}
  Tensor accumulated_opacity;   // {H,W}
  std::vector<std::vector<Contribution>> contributors;  // per pixel, row-major
  std::vector<double> final_transmittance;              // per pixel

  int height() const { return color.dim(0); }
  int width() const { return color.dim(1); }
};

// Projection primitives. project_point returns false when the point
// is culled by the near plane.
bool project_point(const Vec3& p, const Camera& cam, double z_near, Vec2* out, double* depth);
Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p_cam, double fx, double fy);
Mat2 project_covariance(const Mat3& sigma, const Mat3& rotation,
                        const Eigen::Matrix<double, 2, 3>& jacobian, double dilation);
double eval_gaussian_2d(const Vec2& x, const Vec2& center, const Mat2& cov2d);

// Stable ascending sort by depth; ties keep input order.
std::vector<int> depth_sort(const std::vector<ProjectedSplat>& projected);

std::vector<ProjectedSplat> project_splats(const SplatAttributes& attrs, const Camera& cam,
                                           const RasterConfig& cfg);

// Front-to-back alpha compositing over the depth-sorted projected splats.
// `alphas` are post-sigmoid opacities; projected[i].alpha/color are ignored
// in favor of the explicit arrays so the taped and eager paths share this
// kernel exactly.
RenderOutput composite(const std::vector<ProjectedSplat>& projected, const Tensor& colors,
                       const Tensor& alphas, const Camera& cam, const RasterConfig& cfg);

RenderOutput render(const SplatAttributes& attrs, const Camera& cam,
                    const RasterConfig& cfg = {});
RenderOutput render(const SplatSet& set, const Camera& cam, const RasterConfig& cfg = {});

// ---- taped rendering ----

// Projects splats onto the image plane; output {K,6} rows are
// [u, v, cov_a, cov_b, cov_c, depth]. Culled rows are zero and carry no
// gradient. Gradients flow to position, log_scale and rotation.
Value ewa_project(Value position, Value log_scale, Value rotation, const Camera& cam,
                  const RasterConfig& cfg);

struct RenderValues {
  Value rgba;     // {H,W,4}: color + accumulated opacity
  Value color;    // {H,W,3} slice
  Value opacity;  // {H,W,1} slice
};

// Compositing node over the projection output; the depth column orders the
// blend but receives no gradient (sort order is frozen during backward).
RenderValues composite_node(Value projected, Value colors, Value alphas, const Camera& cam,
                            const RasterConfig& cfg);

// Packed world-space covariance entries (xx,xy,xz,yy,yz,zz) per splat, {K,6}.
Value covariance6(Value log_scale, Value rotation);

}  // namespace splatkit
