#include "splatkit/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splatkit/common.hpp"

namespace splatkit {

namespace {

// Saved per-splat covariance chain state for the backward pass.
struct CovState {
  Vec4 q_hat = Vec4(1, 0, 0, 0);
  double q_norm = 1.0;
  Mat3 rot = Mat3::Identity();
  Vec3 s = Vec3::Ones();
  Mat3 m = Mat3::Identity();  // rot * diag(s)
};

CovState cov_forward(const Vec3& log_scale, const Vec4& q) {
  CovState st;
  st.q_norm = q.norm();
  if (st.q_norm < 1e-12) throw DegenerateRotationError("quaternion norm below 1e-12");
  st.q_hat = q / st.q_norm;
  st.rot = quat_to_matrix(st.q_hat);
  st.s = log_scale.array().exp();
  st.m = st.rot * st.s.asDiagonal();
  return st;
}

void cov_backward(const CovState& st, const Mat3& sigma_bar, Vec3* log_scale_bar, Vec4* q_bar) {
  Mat3 m_bar = (sigma_bar + sigma_bar.transpose()) * st.m;
  Mat3 rot_bar = m_bar * st.s.asDiagonal();
  Vec3 s_bar;
  for (int j = 0; j < 3; ++j) s_bar[j] = m_bar.col(j).dot(st.rot.col(j));
  *log_scale_bar += s_bar.cwiseProduct(st.s);

  std::array<Mat3, 4> jac = quat_to_matrix_jacobian(st.q_hat);
  Vec4 qhat_bar;
  for (int c = 0; c < 4; ++c) qhat_bar[c] = rot_bar.cwiseProduct(jac[static_cast<size_t>(c)]).sum();
  *q_bar += (qhat_bar - qhat_bar.dot(st.q_hat) * st.q_hat) / st.q_norm;
}

}  // namespace

bool project_point(const Vec3& p, const Camera& cam, double z_near, Vec2* out, double* depth) {
  Vec3 p_cam = cam.rotation * p + cam.translation;
  if (p_cam.z() <= z_near) return false;
  out->x() = cam.fx * p_cam.x() / p_cam.z() + cam.cx;
  out->y() = cam.fy * p_cam.y() / p_cam.z() + cam.cy;
  *depth = p_cam.z();
  return true;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p_cam, double fx, double fy) {
  double z = p_cam.z();
  Eigen::Matrix<double, 2, 3> j;
  j << fx / z, 0, -fx * p_cam.x() / (z * z),
       0, fy / z, -fy * p_cam.y() / (z * z);
  return j;
}

Mat2 project_covariance(const Mat3& sigma, const Mat3& rotation,
                        const Eigen::Matrix<double, 2, 3>& jacobian, double dilation) {
  if (!sigma.allFinite() || !rotation.allFinite() || !jacobian.allFinite())
    throw NumericalError("project_covariance: non-finite input");
  Eigen::Matrix<double, 2, 3> w = jacobian * rotation;
  Mat2 cov2d = w * sigma * w.transpose();
  cov2d(0, 0) += dilation;
  cov2d(1, 1) += dilation;
  return cov2d;
}

double eval_gaussian_2d(const Vec2& x, const Vec2& center, const Mat2& cov2d) {
  double det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(1, 0);
  if (std::fabs(det) < 1e-12) throw SingularCovarianceError("2D covariance is singular");
  Vec2 d = x - center;
  double inv_a = cov2d(1, 1) / det, inv_b = -cov2d(0, 1) / det, inv_c = cov2d(0, 0) / det;
  double sigma = 0.5 * (inv_a * d.x() * d.x() + 2.0 * inv_b * d.x() * d.y() + inv_c * d.y() * d.y());
  return std::exp(-sigma);
}

std::vector<int> depth_sort(const std::vector<ProjectedSplat>& projected) {
  std::vector<int> order(projected.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return projected[static_cast<size_t>(a)].depth < projected[static_cast<size_t>(b)].depth;
  });
  return order;
}

std::vector<ProjectedSplat> project_splats(const SplatAttributes& attrs, const Camera& cam,
                                           const RasterConfig& cfg) {
  int k = attrs.count();
  std::vector<ProjectedSplat> out(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    ProjectedSplat& ps = out[static_cast<size_t>(i)];
    ps.source = i;
    Vec3 p(attrs.position.at(i, 0), attrs.position.at(i, 1), attrs.position.at(i, 2));
    if (!project_point(p, cam, cfg.z_near, &ps.center2d, &ps.depth)) continue;
    Vec3 ls(attrs.log_scale.at(i, 0), attrs.log_scale.at(i, 1), attrs.log_scale.at(i, 2));
    Vec4 q(attrs.rotation.at(i, 0), attrs.rotation.at(i, 1), attrs.rotation.at(i, 2),
           attrs.rotation.at(i, 3));
    Mat3 sigma = covariance_from_scale_rotation(ls, q);
    Vec3 p_cam = cam.rotation * p + cam.translation;
    ps.cov2d = project_covariance(sigma, cam.rotation, projection_jacobian(p_cam, cam.fx, cam.fy),
                                  cfg.dilation);
    for (int c = 0; c < 3; ++c) ps.color[c] = attrs.color.at(i, c);
    ps.alpha = sigmoid(attrs.opacity_logit.at(i, 0));
    ps.valid = true;
  }
  return out;
}

RenderOutput composite(const std::vector<ProjectedSplat>& projected, const Tensor& colors,
                       const Tensor& alphas, const Camera& cam, const RasterConfig& cfg) {
  int height = cam.height, width = cam.width;
  RenderOutput out;
  out.color = Tensor({height, width, 3});
  out.accumulated_opacity = Tensor({height, width});
  out.contributors.assign(static_cast<size_t>(height) * width, {});
  out.final_transmittance.assign(static_cast<size_t>(height) * width, 1.0);

  std::vector<int> order = depth_sort(projected);

  // Per-splat precomputation: bbox half-extents and the inverse conic.
  struct Prep {
    double rx, ry;
    double inv_a, inv_b, inv_c;
  };
  std::vector<Prep> prep(projected.size());
  for (size_t i = 0; i < projected.size(); ++i) {
    const ProjectedSplat& ps = projected[i];
    if (!ps.valid) continue;
    double a = ps.cov2d(0, 0), b = ps.cov2d(0, 1), c = ps.cov2d(1, 1);
    double det = a * c - b * b;
    if (std::fabs(det) < 1e-12) throw SingularCovarianceError("2D covariance is singular");
    prep[i] = {cfg.sigma_extent * std::sqrt(a), cfg.sigma_extent * std::sqrt(c),
               c / det, -b / det, a / det};
  }

  for (int py = 0; py < height; ++py) {
    for (int px = 0; px < width; ++px) {
      Vec2 x(px + 0.5, py + 0.5);
      double transmittance = 1.0;
      Vec3 rgb = Vec3::Zero();
      double acc = 0.0;
      auto& list = out.contributors[static_cast<size_t>(py) * width + px];
      for (int oi : order) {
        const ProjectedSplat& ps = projected[static_cast<size_t>(oi)];
        if (!ps.valid) continue;
        const Prep& pr = prep[static_cast<size_t>(oi)];
        double dx = x.x() - ps.center2d.x();
        double dy = x.y() - ps.center2d.y();
        if (std::fabs(dx) > pr.rx || std::fabs(dy) > pr.ry) continue;
        double sigma = 0.5 * (pr.inv_a * dx * dx + 2.0 * pr.inv_b * dx * dy + pr.inv_c * dy * dy);
        double gauss = std::exp(-sigma);
        double alpha = std::clamp(alphas.at(ps.source, 0), cfg.alpha_min, cfg.alpha_max);
        double a = alpha * gauss;
        if (a < cfg.weight_cutoff) continue;
        double w = a * transmittance;
        for (int ch = 0; ch < 3; ++ch) rgb[ch] += w * colors.at(ps.source, ch);
        acc += w;
        list.push_back({ps.source, gauss, transmittance, w});
        transmittance *= 1.0 - a;
      }
      for (int ch = 0; ch < 3; ++ch)
        out.color.at(py, px, ch) = rgb[ch] + transmittance * cfg.background[ch];
      out.accumulated_opacity.at(py, px) = acc;
      out.final_transmittance[static_cast<size_t>(py) * width + px] = transmittance;
    }
  }
  return out;
}

RenderOutput render(const SplatAttributes& attrs, const Camera& cam, const RasterConfig& cfg) {
  std::vector<ProjectedSplat> projected = project_splats(attrs, cam, cfg);
  Tensor alphas({attrs.count(), 1});
  for (int i = 0; i < attrs.count(); ++i) alphas.at(i, 0) = sigmoid(attrs.opacity_logit.at(i, 0));
  return composite(projected, attrs.color, alphas, cam, cfg);
}

RenderOutput render(const SplatSet& set, const Camera& cam, const RasterConfig& cfg) {
  return render(to_attributes(set), cam, cfg);
}

// ---- tape nodes ----

namespace {

struct EwaState {
  bool valid = false;
  CovState cov;
  Mat3 sigma = Mat3::Identity();
  Vec3 p_cam = Vec3::Zero();
  Eigen::Matrix<double, 2, 3> w = Eigen::Matrix<double, 2, 3>::Zero();  // J * R
};

class EwaProjectOp : public CustomOp {
public:
  Camera cam;
  RasterConfig cfg;
  std::vector<EwaState> states;

  const char* name() const override { return "ewa_project"; }

  void backward(Tape& tape, const Node& node) override {
    const Tensor& g = node.grad;
    int k = node.value.dim(0);
    Tensor gp({k, 3}), gls({k, 3}), gq({k, 4});
    const Tensor& rotation = tape.node(node.inputs[2]).value;
    for (int i = 0; i < k; ++i) {
      const EwaState& st = states[static_cast<size_t>(i)];
      if (!st.valid) continue;
      double gu = g.at(i, 0), gv = g.at(i, 1);
      double ga = g.at(i, 2), gb = g.at(i, 3), gc = g.at(i, 4);
      double gz = g.at(i, 5);

      Vec3 w0 = st.w.row(0), w1 = st.w.row(1);
      Mat3 sigma_bar = ga * w0 * w0.transpose() + gb * w0 * w1.transpose() +
                       gc * w1 * w1.transpose();
      Vec3 wbar0 = 2.0 * ga * st.sigma * w0 + gb * st.sigma * w1;
      Vec3 wbar1 = gb * st.sigma * w0 + 2.0 * gc * st.sigma * w1;
      Eigen::Matrix<double, 2, 3> w_bar;
      w_bar.row(0) = wbar0.transpose();
      w_bar.row(1) = wbar1.transpose();
      Eigen::Matrix<double, 2, 3> j_bar = w_bar * cam.rotation.transpose();

      Vec3 ls_bar = Vec3::Zero();
      Vec4 q_raw(rotation.at(i, 0), rotation.at(i, 1), rotation.at(i, 2), rotation.at(i, 3));
      (void)q_raw;
      Vec4 q_bar = Vec4::Zero();
      cov_backward(st.cov, sigma_bar, &ls_bar, &q_bar);

      double x = st.p_cam.x(), y = st.p_cam.y(), z = st.p_cam.z();
      double z2 = z * z, z3 = z2 * z;
      double fx = cam.fx, fy = cam.fy;
      double x_bar = gu * fx / z + j_bar(0, 2) * (-fx / z2);
      double y_bar = gv * fy / z + j_bar(1, 2) * (-fy / z2);
      double z_bar = gz - gu * fx * x / z2 - gv * fy * y / z2 +
                     j_bar(0, 0) * (-fx / z2) + j_bar(1, 1) * (-fy / z2) +
                     j_bar(0, 2) * (2.0 * fx * x / z3) + j_bar(1, 2) * (2.0 * fy * y / z3);
      Vec3 p_bar = cam.rotation.transpose() * Vec3(x_bar, y_bar, z_bar);

      for (int c = 0; c < 3; ++c) {
        gp.at(i, c) = p_bar[c];
        gls.at(i, c) = ls_bar[c];
      }
      for (int c = 0; c < 4; ++c) gq.at(i, c) = q_bar[c];
    }
    tape.accum_grad(node.inputs[0], gp);
    tape.accum_grad(node.inputs[1], gls);
    tape.accum_grad(node.inputs[2], gq);
  }
};

class CompositeOp : public CustomOp {
public:
  Camera cam;
  RasterConfig cfg;
  RenderOutput saved;

  const char* name() const override { return "composite"; }

  void backward(Tape& tape, const Node& node) override {
    const Tensor& g = node.grad;
    const Tensor& packed = tape.node(node.inputs[0]).value;
    const Tensor& colors = tape.node(node.inputs[1]).value;
    const Tensor& alphas = tape.node(node.inputs[2]).value;
    int k = packed.dim(0);
    int height = node.value.dim(0), width = node.value.dim(1);
    Tensor gpacked({k, 6}), gcolors({k, 3}), galphas({k, 1});

    for (int py = 0; py < height; ++py) {
      for (int px = 0; px < width; ++px) {
        size_t pix = static_cast<size_t>(py) * width + px;
        const auto& list = saved.contributors[pix];
        if (list.empty()) continue;
        Vec3 g_rgb(g.at(py, px, 0), g.at(py, px, 1), g.at(py, px, 2));
        double g_acc = g.at(py, px, 3);
        double t_final = saved.final_transmittance[pix];
        Vec3 suffix_rgb = Vec3::Zero();
        double suffix_acc = 0.0;
        for (auto it = list.rbegin(); it != list.rend(); ++it) {
          int idx = it->splat;
          double gauss = it->gauss;
          double trans = it->transmittance;
          double alpha_raw = alphas.at(idx, 0);
          double alpha = std::clamp(alpha_raw, cfg.alpha_min, cfg.alpha_max);
          double a = alpha * gauss;
          double w = a * trans;
          Vec3 c(colors.at(idx, 0), colors.at(idx, 1), colors.at(idx, 2));

          for (int ch = 0; ch < 3; ++ch) gcolors.at(idx, ch) += g_rgb[ch] * w;

          double one_minus = 1.0 - a;
          Vec3 dpix_da = c * trans - (suffix_rgb + t_final * cfg.background) / one_minus;
          double dacc_da = trans - suffix_acc / one_minus;
          double da = g_rgb.dot(dpix_da) + g_acc * dacc_da;

          if (alpha_raw > cfg.alpha_min && alpha_raw < cfg.alpha_max)
            galphas.at(idx, 0) += da * gauss;

          // G = exp(-sigma); chain into the quadratic form.
          double sigma_bar = -gauss * da * alpha;
          double ca = packed.at(idx, 2), cb = packed.at(idx, 3), cc = packed.at(idx, 4);
          double det = ca * cc - cb * cb;
          double inv_a = cc / det, inv_b = -cb / det, inv_c = ca / det;
          double dx = px + 0.5 - packed.at(idx, 0);
          double dy = py + 0.5 - packed.at(idx, 1);
          double g0 = inv_a * dx + inv_b * dy;
          double g1 = inv_b * dx + inv_c * dy;
          gpacked.at(idx, 0) += -sigma_bar * g0;
          gpacked.at(idx, 1) += -sigma_bar * g1;
          gpacked.at(idx, 2) += sigma_bar * (-0.5 * g0 * g0);
          gpacked.at(idx, 3) += sigma_bar * (-g0 * g1);
          gpacked.at(idx, 4) += sigma_bar * (-0.5 * g1 * g1);

          suffix_rgb += c * w;
          suffix_acc += w;
        }
      }
    }
    tape.accum_grad(node.inputs[0], gpacked);
    tape.accum_grad(node.inputs[1], gcolors);
    tape.accum_grad(node.inputs[2], galphas);
  }
};

class Covariance6Op : public CustomOp {
public:
  std::vector<CovState> states;

  const char* name() const override { return "covariance6"; }

  void backward(Tape& tape, const Node& node) override {
    const Tensor& g = node.grad;
    int k = node.value.dim(0);
    Tensor gls({k, 3}), gq({k, 4});
    for (int i = 0; i < k; ++i) {
      Mat3 sigma_bar = Mat3::Zero();
      sigma_bar(0, 0) = g.at(i, 0);
      sigma_bar(0, 1) = g.at(i, 1);
      sigma_bar(0, 2) = g.at(i, 2);
      sigma_bar(1, 1) = g.at(i, 3);
      sigma_bar(1, 2) = g.at(i, 4);
      sigma_bar(2, 2) = g.at(i, 5);
      Vec3 ls_bar = Vec3::Zero();
      Vec4 q_bar = Vec4::Zero();
      cov_backward(states[static_cast<size_t>(i)], sigma_bar, &ls_bar, &q_bar);
      for (int c = 0; c < 3; ++c) gls.at(i, c) = ls_bar[c];
      for (int c = 0; c < 4; ++c) gq.at(i, c) = q_bar[c];
    }
    tape.accum_grad(node.inputs[0], gls);
    tape.accum_grad(node.inputs[1], gq);
  }
};

}  // namespace

Value ewa_project(Value position, Value log_scale, Value rotation, const Camera& cam,
                  const RasterConfig& cfg) {
  const Tensor& p = position.val();
  const Tensor& ls = log_scale.val();
  const Tensor& q = rotation.val();
  int k = p.dim(0);
  auto op = std::make_shared<EwaProjectOp>();
  op->cam = cam;
  op->cfg = cfg;
  op->states.resize(static_cast<size_t>(k));
  Tensor out({k, 6});
  for (int i = 0; i < k; ++i) {
    EwaState& st = op->states[static_cast<size_t>(i)];
    Vec3 pw(p.at(i, 0), p.at(i, 1), p.at(i, 2));
    st.p_cam = cam.rotation * pw + cam.translation;
    if (st.p_cam.z() <= cfg.z_near) continue;
    st.valid = true;
    st.cov = cov_forward(Vec3(ls.at(i, 0), ls.at(i, 1), ls.at(i, 2)),
                         Vec4(q.at(i, 0), q.at(i, 1), q.at(i, 2), q.at(i, 3)));
    st.sigma = st.cov.m * st.cov.m.transpose();
    st.w = projection_jacobian(st.p_cam, cam.fx, cam.fy) * cam.rotation;
    Mat2 cov2d = st.w * st.sigma * st.w.transpose();
    out.at(i, 0) = cam.fx * st.p_cam.x() / st.p_cam.z() + cam.cx;
    out.at(i, 1) = cam.fy * st.p_cam.y() / st.p_cam.z() + cam.cy;
    out.at(i, 2) = cov2d(0, 0) + cfg.dilation;
    out.at(i, 3) = cov2d(0, 1);
    out.at(i, 4) = cov2d(1, 1) + cfg.dilation;
    out.at(i, 5) = st.p_cam.z();
  }
  return position.tape->custom(std::move(out), {position, log_scale, rotation}, op);
}

RenderValues composite_node(Value projected, Value colors, Value alphas, const Camera& cam,
                            const RasterConfig& cfg) {
  const Tensor& packed = projected.val();
  int k = packed.dim(0);
  std::vector<ProjectedSplat> ps(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    ProjectedSplat& s = ps[static_cast<size_t>(i)];
    s.source = i;
    s.depth = packed.at(i, 5);
    if (s.depth <= cfg.z_near) continue;
    s.valid = true;
    s.center2d = Vec2(packed.at(i, 0), packed.at(i, 1));
    s.cov2d << packed.at(i, 2), packed.at(i, 3), packed.at(i, 3), packed.at(i, 4);
  }
  auto op = std::make_shared<CompositeOp>();
  op->cam = cam;
  op->cfg = cfg;
  op->saved = composite(ps, colors.val(), alphas.val(), cam, cfg);

  int height = cam.height, width = cam.width;
  Tensor rgba({height, width, 4});
  for (int py = 0; py < height; ++py)
    for (int px = 0; px < width; ++px) {
      for (int ch = 0; ch < 3; ++ch) rgba.at(py, px, ch) = op->saved.color.at(py, px, ch);
      rgba.at(py, px, 3) = op->saved.accumulated_opacity.at(py, px);
    }
  RenderValues rv;
  rv.rgba = projected.tape->custom(std::move(rgba), {projected, colors, alphas}, op);
  rv.color = slice(rv.rgba, 2, 0, 3);
  rv.opacity = slice(rv.rgba, 2, 3, 1);
  return rv;
}

Value covariance6(Value log_scale, Value rotation) {
  const Tensor& ls = log_scale.val();
  const Tensor& q = rotation.val();
  int k = ls.dim(0);
  auto op = std::make_shared<Covariance6Op>();
  op->states.resize(static_cast<size_t>(k));
  Tensor out({k, 6});
  for (int i = 0; i < k; ++i) {
    CovState& st = op->states[static_cast<size_t>(i)];
    st = cov_forward(Vec3(ls.at(i, 0), ls.at(i, 1), ls.at(i, 2)),
                     Vec4(q.at(i, 0), q.at(i, 1), q.at(i, 2), q.at(i, 3)));
    Mat3 sigma = st.m * st.m.transpose();
    out.at(i, 0) = sigma(0, 0);
    out.at(i, 1) = sigma(0, 1);
    out.at(i, 2) = sigma(0, 2);
    out.at(i, 3) = sigma(1, 1);
    out.at(i, 4) = sigma(1, 2);
    out.at(i, 5) = sigma(2, 2);
  }
  return log_scale.tape->custom(std::move(out), {log_scale, rotation}, op);
}

}  // namespace splatkit
