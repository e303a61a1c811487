#include "splatkit/scene.hpp"

#include <cmath>

#include "splatkit/common.hpp"

namespace splatkit {

void Camera::validate(double tol) const {
  if (width < 1 || height < 1) throw DataError("camera: image dimensions must be >= 1");
  Mat3 gram = rotation.transpose() * rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol)
    throw DataError("camera: rotation block is not orthonormal");
}

void Frame::validate() const {
  if (pixels.rank() != 3 || pixels.dim(2) != 3) throw DataError("frame: pixels must be {H,W,3}");
  for (int64_t i = 0; i < pixels.numel(); ++i) {
    double v = pixels[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw DataError("frame: channel value outside [0,1]");
  }
  if (mask) {
    if (mask->rank() != 2 || mask->dim(0) != pixels.dim(0) || mask->dim(1) != pixels.dim(1))
      throw DataError("frame: mask dimensions do not match pixels");
  }
}

SplatAttributes to_attributes(const SplatSet& set) {
  int k = set.count();
  SplatAttributes a;
  a.position = Tensor({k, 3});
  a.log_scale = Tensor({k, 3});
  a.rotation = Tensor({k, 4});
  a.opacity_logit = Tensor({k, 1});
  a.color = Tensor({k, 3});
  for (int i = 0; i < k; ++i) {
    const Splat& s = set.splats[static_cast<size_t>(i)];
    for (int c = 0; c < 3; ++c) {
      a.position.at(i, c) = s.position[c];
      a.log_scale.at(i, c) = s.log_scale[c];
      a.color.at(i, c) = s.color[c];
    }
    for (int c = 0; c < 4; ++c) a.rotation.at(i, c) = s.rotation[c];
    a.opacity_logit.at(i, 0) = s.opacity_logit;
  }
  return a;
}

SplatSet to_splat_set(const SplatAttributes& attrs) {
  SplatSet set;
  int k = attrs.count();
  set.splats.resize(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    Splat& s = set.splats[static_cast<size_t>(i)];
    for (int c = 0; c < 3; ++c) {
      s.position[c] = attrs.position.at(i, c);
      s.log_scale[c] = attrs.log_scale.at(i, c);
      s.color[c] = attrs.color.at(i, c);
    }
    for (int c = 0; c < 4; ++c) s.rotation[c] = attrs.rotation.at(i, c);
    s.opacity_logit = attrs.opacity_logit.at(i, 0);
  }
  return set;
}

Vec4 normalize_quaternion(const Vec4& q) {
  double norm = q.norm();
  if (norm < 1e-12) throw DegenerateRotationError("quaternion norm below 1e-12");
  Vec4 u = q / norm;
  for (int i = 0; i < 4; ++i) {
    if (u[i] != 0.0) {
      if (u[i] < 0.0) u = -u;
      break;
    }
  }
  return u;
}

Mat3 quat_to_matrix(const Vec4& q) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

std::array<Mat3, 4> quat_to_matrix_jacobian(const Vec4& q) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> d;
  d[0] << 0, -z, y,
          z, 0, -x,
          -y, x, 0;
  d[1] << 0, y, z,
          y, -2 * x, -w,
          z, w, -2 * x;
  d[2] << -2 * y, x, w,
          x, 0, z,
          -w, z, -2 * y;
  d[3] << -2 * z, -w, x,
          w, -2 * z, y,
          x, y, 0;
  for (auto& m : d) m *= 2.0;
  return d;
}

Mat3 covariance_from_scale_rotation(const Vec3& log_scale, const Vec4& q) {
  double norm = q.norm();
  if (norm < 1e-12) throw DegenerateRotationError("quaternion norm below 1e-12");
  Mat3 rot = quat_to_matrix(q / norm);
  Vec3 s = log_scale.array().exp();
  Mat3 m = rot * s.asDiagonal();
  return m * m.transpose();
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace splatkit
