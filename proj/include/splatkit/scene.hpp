#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "splatkit/tensor.hpp"

namespace splatkit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// One rendering primitive. Scales live in log-space and opacity in
// logit-space so unconstrained optimization respects the bounds.
// Quaternion order is (w,x,y,z). In field-driven modes the color entry is
// ignored; the color head supplies appearance instead.
struct Splat {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4(1, 0, 0, 0);
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Zero();
};

struct SplatSet {
  std::vector<Splat> splats;
  int count() const { return static_cast<int>(splats.size()); }
};

// Pinhole camera, world-to-camera extrinsics, +z forward, +y down.
struct Camera {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 1, height = 1;

  Vec3 position() const { return -rotation.transpose() * translation; }
  // Throws DataError when the rotation block is not orthonormal within tol
  // or the image dimensions are invalid.
  void validate(double tol = 1e-6) const;
};

// Target image; channel values in [0,1]. Optional mask in [0,1].
struct Frame {
  Tensor pixels;                // {H,W,3}
  std::optional<Tensor> mask;   // {H,W}

  int height() const { return pixels.dim(0); }
  int width() const { return pixels.dim(1); }
  void validate() const;
};

struct TimeStamp {
  double t = 0.0;       // normalized sequence time in [0,1]
  int frame_index = 0;
};

// Structure-of-arrays splat attributes, the layout the optimizer and
// rasterizer work in. Rotations may be unnormalized; consumers normalize.
struct SplatAttributes {
  Tensor position;       // {K,3}
  Tensor log_scale;      // {K,3}
  Tensor rotation;       // {K,4}
  Tensor opacity_logit;  // {K,1}
  Tensor color;          // {K,3}

  int count() const { return position.empty() ? 0 : position.dim(0); }
};

SplatAttributes to_attributes(const SplatSet& set);
SplatSet to_splat_set(const SplatAttributes& attrs);

// Unit-normalizes q and canonicalizes the sign so the first nonzero
// component is non-negative (stable serialization under the double cover).
Vec4 normalize_quaternion(const Vec4& q);

// Rotation matrix of a unit quaternion (w,x,y,z).
Mat3 quat_to_matrix(const Vec4& unit_q);

// Partial derivatives of quat_to_matrix w.r.t. each unit-quaternion
// component, evaluated treating the components as free variables.
std::array<Mat3, 4> quat_to_matrix_jacobian(const Vec4& unit_q);

// Sigma = O diag(s) diag(s)^T O^T with s = exp(log_scale) and O the rotation
// of q normalized; symmetric positive semi-definite by construction.
Mat3 covariance_from_scale_rotation(const Vec3& log_scale, const Vec4& q);

double sigmoid(double x);
double logit(double p);

}  // namespace splatkit
