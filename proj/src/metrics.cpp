#include "splatkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "splatkit/common.hpp"
#include "splatkit/rasterizer.hpp"

namespace splatkit {

double psnr(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw DataError("psnr: dimension mismatch");
  double mse = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const Frame& a, const Frame& b) { return psnr(a.pixels, b.pixels); }

// ---- SSIM ----

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWindow>& window_taps() {
  static const std::array<double, kWindow> taps = [] {
    std::array<double, kWindow> w{};
    double total = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      double x = i - (kWindow - 1) / 2.0;
      w[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * kSigma * kSigma));
      total += w[static_cast<size_t>(i)];
    }
    for (double& v : w) v /= total;
    return w;
  }();
  return taps;
}

Tensor blur_valid_forward(const Tensor& in) {
  const auto& w = window_taps();
  int height = in.dim(0), width = in.dim(1), ch = in.dim(2);
  int out_h = height - kWindow + 1, out_w = width - kWindow + 1;
  Tensor tmp({height, out_w, ch});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < out_w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int dx = 0; dx < kWindow; ++dx) acc += w[static_cast<size_t>(dx)] * in.at(y, x + dx, c);
        tmp.at(y, x, c) = acc;
      }
  Tensor out({out_h, out_w, ch});
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < kWindow; ++dy) acc += w[static_cast<size_t>(dy)] * tmp.at(y + dy, x, c);
        out.at(y, x, c) = acc;
      }
  return out;
}

class BlurValidOp : public CustomOp {
public:
  const char* name() const override { return "gaussian_blur_valid"; }

  void backward(Tape& tape, const Node& node) override {
    const auto& w = window_taps();
    const Tensor& in = tape.node(node.inputs[0]).value;
    const Tensor& g = node.grad;
    int height = in.dim(0), width = in.dim(1), ch = in.dim(2);
    int out_h = g.dim(0), out_w = g.dim(1);
    Tensor tmp({height, out_w, ch});
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x)
        for (int c = 0; c < ch; ++c) {
          double go = g.at(y, x, c);
          if (go == 0.0) continue;
          for (int dy = 0; dy < kWindow; ++dy)
            tmp.at(y + dy, x, c) += go * w[static_cast<size_t>(dy)];
        }
    Tensor gin(in.shape());
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < out_w; ++x)
        for (int c = 0; c < ch; ++c) {
          double tv = tmp.at(y, x, c);
          if (tv == 0.0) continue;
          for (int dx = 0; dx < kWindow; ++dx)
            gin.at(y, x + dx, c) += tv * w[static_cast<size_t>(dx)];
        }
    (void)width;
    tape.accum_grad(node.inputs[0], gin);
  }
};

Value blur_valid(Value img) {
  const Tensor& in = img.val();
  if (in.dim(0) < kWindow || in.dim(1) < kWindow)
    throw DataError("ssim: frame smaller than the 11x11 window");
  return img.tape->custom(blur_valid_forward(in), {img}, std::make_shared<BlurValidOp>());
}

}  // namespace

Value ssim_value(Value a, Value b) {
  if (!a.val().same_shape(b.val())) throw DataError("ssim: dimension mismatch");
  Value mu1 = blur_valid(a);
  Value mu2 = blur_valid(b);
  Value mu1_sq = mul(mu1, mu1);
  Value mu2_sq = mul(mu2, mu2);
  Value mu12 = mul(mu1, mu2);
  Value sigma1_sq = sub(blur_valid(mul(a, a)), mu1_sq);
  Value sigma2_sq = sub(blur_valid(mul(b, b)), mu2_sq);
  Value sigma12 = sub(blur_valid(mul(a, b)), mu12);
  Value num = mul(add_scalar(mul_scalar(mu12, 2.0), kC1), add_scalar(mul_scalar(sigma12, 2.0), kC2));
  Value den = mul(add_scalar(add(mu1_sq, mu2_sq), kC1), add_scalar(add(sigma1_sq, sigma2_sq), kC2));
  return mean(div(num, den));
}

Value d_ssim(Value a, Value b) {
  return mul_scalar(add_scalar(neg(ssim_value(a, b)), 1.0), 0.5);
}

double ssim(const Tensor& a, const Tensor& b) {
  Tape tape;
  return ssim_value(tape.constant(a), tape.constant(b)).val().item();
}

// ---- Moran's I ----

MoranGraph build_moran_graph(const Tensor& positions, int neighbors, double min_distance) {
  int k = positions.dim(0);
  if (k <= neighbors) throw DataError("moran: need more splats than neighbors");
  MoranGraph graph;
  graph.count = k;
  graph.neighbors = neighbors;
  graph.index.resize(static_cast<size_t>(k) * neighbors);
  graph.weights.assign(static_cast<size_t>(k) * neighbors * neighbors, 0.0);
  graph.weight_sums.resize(static_cast<size_t>(k));

  auto point = [&](int i) {
    return Vec3(positions.at(i, 0), positions.at(i, 1), positions.at(i, 2));
  };
  std::vector<std::pair<double, int>> dist(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    Vec3 pi = point(i);
    dist.clear();
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      dist.emplace_back((point(j) - pi).norm(), j);
    }
    std::partial_sort(dist.begin(), dist.begin() + neighbors, dist.end());
    for (int n = 0; n < neighbors; ++n)
      graph.index[static_cast<size_t>(i) * neighbors + n] = dist[static_cast<size_t>(n)].second;

    double total = 0.0;
    double* w = graph.weights.data() + static_cast<size_t>(i) * neighbors * neighbors;
    for (int a = 0; a < neighbors; ++a)
      for (int b = 0; b < neighbors; ++b) {
        if (a == b) continue;
        int na = graph.index[static_cast<size_t>(i) * neighbors + a];
        int nb = graph.index[static_cast<size_t>(i) * neighbors + b];
        double d = std::max((point(na) - point(nb)).norm(), min_distance);
        double wij = 1.0 / d;
        w[a * neighbors + b] = wij;
        total += wij;
      }
    graph.weight_sums[static_cast<size_t>(i)] = total;
  }
  return graph;
}

MoranGroupScore moran_group(const MoranGraph& graph, const Tensor& attrs, bool centered) {
  int k = graph.count, n = graph.neighbors, dims = attrs.dim(1);
  MoranGroupScore out;
  out.locals.assign(static_cast<size_t>(k), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> local_sum(static_cast<size_t>(k), 0.0);
  std::vector<int> local_count(static_cast<size_t>(k), 0);

  double dim_total = 0.0;
  int dims_used = 0;
  std::vector<double> a(static_cast<size_t>(n));
  for (int d = 0; d < dims; ++d) {
    double acc = 0.0;
    int valid = 0;
    for (int i = 0; i < k; ++i) {
      const int* nb = graph.index.data() + static_cast<size_t>(i) * n;
      const double* w = graph.weights.data() + static_cast<size_t>(i) * n * n;
      double den = 0.0;
      for (int x = 0; x < n; ++x) {
        a[static_cast<size_t>(x)] = attrs.at(nb[x], d);
      }
      if (centered) {
        double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
        for (double& v : a) v -= mean_a;
      }
      for (int x = 0; x < n; ++x) den += a[static_cast<size_t>(x)] * a[static_cast<size_t>(x)];
      if (den == 0.0) {
        ++out.skipped;
        continue;
      }
      double num = 0.0;
      for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y) num += w[x * n + y] * a[static_cast<size_t>(x)] * a[static_cast<size_t>(y)];
      double score = (n / graph.weight_sums[static_cast<size_t>(i)]) * num / den;
      acc += score;
      ++valid;
      local_sum[static_cast<size_t>(i)] += score;
      ++local_count[static_cast<size_t>(i)];
    }
    if (valid > 0) {
      dim_total += acc / valid;
      ++dims_used;
    }
  }
  for (int i = 0; i < k; ++i)
    if (local_count[static_cast<size_t>(i)] > 0)
      out.locals[static_cast<size_t>(i)] = local_sum[static_cast<size_t>(i)] / local_count[static_cast<size_t>(i)];
  if (dims_used > 0) out.score = dim_total / dims_used;
  return out;
}

namespace {

Tensor covariance_attributes(const SplatAttributes& attrs) {
  int k = attrs.count();
  Tensor cov({k, 6});
  for (int i = 0; i < k; ++i) {
    Mat3 sigma = covariance_from_scale_rotation(
        Vec3(attrs.log_scale.at(i, 0), attrs.log_scale.at(i, 1), attrs.log_scale.at(i, 2)),
        Vec4(attrs.rotation.at(i, 0), attrs.rotation.at(i, 1), attrs.rotation.at(i, 2),
             attrs.rotation.at(i, 3)));
    cov.at(i, 0) = sigma(0, 0);
    cov.at(i, 1) = sigma(0, 1);
    cov.at(i, 2) = sigma(0, 2);
    cov.at(i, 3) = sigma(1, 1);
    cov.at(i, 4) = sigma(1, 2);
    cov.at(i, 5) = sigma(2, 2);
  }
  return cov;
}

}  // namespace

MoranReport morans_i(const SplatAttributes& attrs, int neighbors, bool centered) {
  MoranGraph graph = build_moran_graph(attrs.position, neighbors);
  MoranReport report;
  report.neighbors = neighbors;
  report.color = moran_group(graph, attrs.color, centered);
  Tensor alpha({attrs.count(), 1});
  for (int i = 0; i < attrs.count(); ++i) alpha.at(i, 0) = sigmoid(attrs.opacity_logit.at(i, 0));
  report.opacity = moran_group(graph, alpha, centered);
  report.covariance = moran_group(graph, covariance_attributes(attrs), centered);
  return report;
}

MoranReport morans_i(const SplatSet& set, int neighbors, bool centered) {
  return morans_i(to_attributes(set), neighbors, centered);
}

namespace {

class MoranScoreOp : public CustomOp {
public:
  MoranGraph graph;

  const char* name() const override { return "moran_score"; }

  void backward(Tape& tape, const Node& node) override {
    const Tensor& attrs = tape.node(node.inputs[0]).value;
    int k = graph.count, n = graph.neighbors, dims = attrs.dim(1);
    double gout = node.grad[0];
    Tensor gattrs(attrs.shape());

    // First pass to recover the per-dim valid counts used by the forward mean.
    std::vector<int> valid_per_dim(static_cast<size_t>(dims), 0);
    int dims_used = 0;
    for (int d = 0; d < dims; ++d) {
      for (int i = 0; i < k; ++i) {
        const int* nb = graph.index.data() + static_cast<size_t>(i) * n;
        double den = 0.0;
        for (int x = 0; x < n; ++x) den += attrs.at(nb[x], d) * attrs.at(nb[x], d);
        if (den != 0.0) ++valid_per_dim[static_cast<size_t>(d)];
      }
      if (valid_per_dim[static_cast<size_t>(d)] > 0) ++dims_used;
    }

    std::vector<double> a(static_cast<size_t>(n));
    for (int d = 0; d < dims; ++d) {
      int valid = valid_per_dim[static_cast<size_t>(d)];
      if (valid == 0) continue;
      double outer = gout / (static_cast<double>(dims_used) * valid);
      for (int i = 0; i < k; ++i) {
        const int* nb = graph.index.data() + static_cast<size_t>(i) * n;
        const double* w = graph.weights.data() + static_cast<size_t>(i) * n * n;
        double den = 0.0;
        for (int x = 0; x < n; ++x) {
          a[static_cast<size_t>(x)] = attrs.at(nb[x], d);
          den += a[static_cast<size_t>(x)] * a[static_cast<size_t>(x)];
        }
        if (den == 0.0) continue;
        double num = 0.0;
        for (int x = 0; x < n; ++x)
          for (int y = 0; y < n; ++y)
            num += w[x * n + y] * a[static_cast<size_t>(x)] * a[static_cast<size_t>(y)];
        double factor = n / graph.weight_sums[static_cast<size_t>(i)];
        for (int x = 0; x < n; ++x) {
          double wa = 0.0;
          for (int y = 0; y < n; ++y) wa += w[x * n + y] * a[static_cast<size_t>(y)];
          double dnum = 2.0 * wa;
          double dden = 2.0 * a[static_cast<size_t>(x)];
          double di = factor * (dnum * den - num * dden) / (den * den);
          gattrs.at(nb[x], d) += outer * di;
        }
      }
    }
    tape.accum_grad(node.inputs[0], gattrs);
  }
};

}  // namespace

Value moran_score(Value attrs, const MoranGraph& graph) {
  MoranGroupScore score = moran_group(graph, attrs.val(), false);
  if (!score.score)
    throw NumericalError("moran_score: every local score skipped (zero attributes)");
  auto op = std::make_shared<MoranScoreOp>();
  op->graph = graph;
  return attrs.tape->custom(Tensor::scalar(*score.score), {attrs}, op);
}

Value moran_loss(const std::vector<Value>& group_scores, double lambda) {
  if (group_scores.empty()) throw UsageError("moran_loss: no group scores");
  Value total = group_scores[0];
  for (size_t i = 1; i < group_scores.size(); ++i) total = add(total, group_scores[i]);
  Value mean_score = mul_scalar(total, 1.0 / static_cast<double>(group_scores.size()));
  return mul_scalar(add_scalar(neg(mean_score), 1.0), lambda);
}

}  // namespace splatkit
