#include "splatkit/fields.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "splatkit/common.hpp"

namespace splatkit {

namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor xavier(std::vector<int> shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

Tensor gaussian_noise(std::vector<int> shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

Tensor positional_encoding(const Tensor& x, int levels) {
  int rows = x.rank() == 1 ? 1 : x.dim(0);
  int d = x.rank() == 1 ? x.dim(0) : x.dim(1);
  int out_d = d + 2 * d * levels;
  Tensor y(x.rank() == 1 ? std::vector<int>{out_d} : std::vector<int>{rows, out_d});
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data() + static_cast<int64_t>(r) * d;
    double* yr = y.data() + static_cast<int64_t>(r) * out_d;
    for (int c = 0; c < d; ++c) yr[c] = xr[c];
    int col = d;
    for (int l = 0; l < levels; ++l) {
      double freq = std::ldexp(kPi, l);  // 2^l * pi
      for (int c = 0; c < d; ++c) yr[col + c] = std::sin(freq * xr[c]);
      col += d;
      for (int c = 0; c < d; ++c) yr[col + c] = std::cos(freq * xr[c]);
      col += d;
    }
  }
  return y;
}

Value positional_encode(Value x, int levels) {
  if (levels == 0) return x;
  std::vector<Value> parts{x};
  for (int l = 0; l < levels; ++l) {
    Value scaled = mul_scalar(x, std::ldexp(kPi, l));
    parts.push_back(sin(scaled));
    parts.push_back(cos(scaled));
  }
  return concat_cols(parts);
}

Value activate(Value x, Activation act) {
  return act == Activation::Softplus ? softplus(x) : relu(x);
}

SceneAabb SceneAabb::from_points(const Tensor& points, double padding) {
  SceneAabb box;
  box.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  box.hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
  for (int i = 0; i < points.dim(0); ++i)
    for (int c = 0; c < 3; ++c) {
      box.lo[c] = std::min(box.lo[c], points.at(i, c));
      box.hi[c] = std::max(box.hi[c], points.at(i, c));
    }
  Vec3 pad = padding * (box.hi - box.lo);
  box.lo -= pad;
  box.hi += pad;
  return box;
}

Vec3 SceneAabb::normalize(const Vec3& p) const {
  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    double extent = hi[c] - lo[c];
    if (!(extent > 0.0)) throw ConfigError("aabb has zero extent on an axis");
    out[c] = std::clamp((p[c] - lo[c]) / extent, 0.0, 1.0);
  }
  return out;
}

Value resfield_apply(Tape& tape, const ParameterStore& store, const ResFieldLayer& layer,
                     Value input, std::optional<double> t) {
  Value w = tape.param(store, layer.weight);
  if (layer.rank > 0 && t.has_value()) {
    if (layer.basis < 0 || layer.coeffs < 0 || store[layer.coeffs].value.numel() == 0)
      throw ConfigError("resfield layer has rank > 0 but no coefficient table");
    int t_steps = layer.t_steps;
    double x = std::clamp(*t, 0.0, 1.0) * static_cast<double>(t_steps - 1);
    int i0 = std::min(static_cast<int>(std::floor(x)), t_steps - 1);
    int i1 = std::min(i0 + 1, t_steps - 1);
    double frac = x - static_cast<double>(i0);
    Value table = tape.param(store, layer.coeffs);
    Value c = slice(table, 0, i0, 1);
    if (i1 != i0 && frac != 0.0)
      c = add(mul_scalar(c, 1.0 - frac), mul_scalar(slice(table, 0, i1, 1), frac));
    w = lincomb(w, tape.param(store, layer.basis), c);
  }
  return linear(input, w, tape.param(store, layer.bias));
}

Mlp::Mlp(ParameterStore& store, const std::string& prefix, const MlpConfig& cfg,
         std::mt19937_64& rng)
    : cfg_(cfg) {
  for (int i = 0; i < cfg.layers; ++i) {
    int in = i == 0 ? cfg.in_dim : cfg.width;
    int out = i == cfg.layers - 1 ? cfg.out_dim : cfg.width;
    ResFieldLayer layer;
    std::string name = prefix + ".layer" + std::to_string(i);
    bool zero = cfg.zero_init_last && i == cfg.layers - 1;
    Tensor w = zero ? Tensor({in, out}) : xavier({in, out}, in, out, rng);
    layer.weight = store.add(name + ".weight", std::move(w));
    Tensor b({out});
    if (i == cfg.layers - 1 && !cfg.last_bias.empty()) {
      for (int c = 0; c < out && c < static_cast<int>(cfg.last_bias.size()); ++c)
        b[c] = cfg.last_bias[static_cast<size_t>(c)];
    }
    layer.bias = store.add(name + ".bias", std::move(b));
    if (cfg.resfield_rank > 0 && cfg.t_steps > 0) {
      layer.rank = cfg.resfield_rank;
      layer.t_steps = cfg.t_steps;
      std::normal_distribution<double> dist(0.0, 0.02);
      Tensor basis({layer.rank, in, out});
      for (int64_t k = 0; k < basis.numel(); ++k) basis[k] = dist(rng);
      layer.basis = store.add(name + ".resfield_basis", std::move(basis));
      layer.coeffs = store.add(name + ".resfield_coeffs", Tensor({cfg.t_steps, layer.rank}));
    }
    layers_.push_back(layer);
  }
}

Value Mlp::apply(Tape& tape, const ParameterStore& store, Value input,
                 std::optional<double> t) const {
  Value h = input;
  for (size_t i = 0; i < layers_.size(); ++i) {
    h = resfield_apply(tape, store, layers_[i], h, t);
    if (i + 1 < layers_.size() || cfg_.activate_output) h = activate(h, cfg_.act);
  }
  return h;
}

std::vector<int> Mlp::param_ids() const {
  std::vector<int> ids;
  for (const auto& l : layers_) {
    ids.push_back(l.weight);
    ids.push_back(l.bias);
    if (l.basis >= 0) ids.push_back(l.basis);
    if (l.coeffs >= 0) ids.push_back(l.coeffs);
  }
  return ids;
}

// ---- taped CNN primitives ----

namespace {

class Conv2dOp : public CustomOp {
public:
  const char* name() const override { return "conv2d"; }

  void backward(Tape& tape, const Node& node) override {
    const Tensor& in = tape.node(node.inputs[0]).value;
    const Tensor& k = tape.node(node.inputs[1]).value;
    const Tensor& g = node.grad;
    int height = in.dim(0), width = in.dim(1), cin = in.dim(2);
    int kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
    int ph = kh / 2, pw = kw / 2;
    Tensor gin(in.shape()), gk(k.shape()), gb({cout});
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int dy = 0; dy < kh; ++dy) {
          int yi = y + dy - ph;
          if (yi < 0 || yi >= height) continue;
          for (int dx = 0; dx < kw; ++dx) {
            int xi = x + dx - pw;
            if (xi < 0 || xi >= width) continue;
            for (int ci = 0; ci < cin; ++ci) {
              double inv = in.at(yi, xi, ci);
              double acc = 0.0;
              for (int co = 0; co < cout; ++co) {
                double go = g.at(y, x, co);
                acc += go * k.at(dy, dx, ci, co);
                gk.at(dy, dx, ci, co) += go * inv;
              }
              gin.at(yi, xi, ci) += acc;
            }
          }
        }
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int co = 0; co < cout; ++co) gb[co] += g.at(y, x, co);
    tape.accum_grad(node.inputs[0], gin);
    tape.accum_grad(node.inputs[1], gk);
    tape.accum_grad(node.inputs[2], gb);
  }
};

class Upsample2xOp : public CustomOp {
public:
  const char* name() const override { return "upsample2x"; }

  void backward(Tape& tape, const Node& node) override {
    const Tensor& in = tape.node(node.inputs[0]).value;
    const Tensor& g = node.grad;
    int height = in.dim(0), width = in.dim(1), ch = in.dim(2);
    Tensor gin(in.shape());
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < ch; ++c)
          gin.at(y, x, c) = g.at(2 * y, 2 * x, c) + g.at(2 * y, 2 * x + 1, c) +
                            g.at(2 * y + 1, 2 * x, c) + g.at(2 * y + 1, 2 * x + 1, c);
    tape.accum_grad(node.inputs[0], gin);
  }
};

struct BilinearTap {
  int x0, y0;
  double fx, fy;
};

BilinearTap bilinear_tap(double u, double v, int width, int height) {
  BilinearTap tap;
  double x = u * static_cast<double>(width - 1);
  double y = v * static_cast<double>(height - 1);
  tap.x0 = width > 1 ? std::min(static_cast<int>(std::floor(x)), width - 2) : 0;
  tap.y0 = height > 1 ? std::min(static_cast<int>(std::floor(y)), height - 2) : 0;
  tap.fx = width > 1 ? x - tap.x0 : 0.0;
  tap.fy = height > 1 ? y - tap.y0 : 0.0;
  return tap;
}

class BilinearSampleOp : public CustomOp {
public:
  Tensor coords;  // {K,2} UVs in [0,1]

  const char* name() const override { return "bilinear_sample"; }

  void backward(Tape& tape, const Node& node) override {
    const Tensor& plane = tape.node(node.inputs[0]).value;
    const Tensor& g = node.grad;
    int height = plane.dim(0), width = plane.dim(1), ch = plane.dim(2);
    Tensor gp(plane.shape());
    for (int i = 0; i < coords.dim(0); ++i) {
      BilinearTap tap = bilinear_tap(coords.at(i, 0), coords.at(i, 1), width, height);
      int x1 = std::min(tap.x0 + 1, width - 1), y1 = std::min(tap.y0 + 1, height - 1);
      for (int c = 0; c < ch; ++c) {
        double go = g.at(i, c);
        gp.at(tap.y0, tap.x0, c) += go * (1 - tap.fy) * (1 - tap.fx);
        gp.at(tap.y0, x1, c) += go * (1 - tap.fy) * tap.fx;
        gp.at(y1, tap.x0, c) += go * tap.fy * (1 - tap.fx);
        gp.at(y1, x1, c) += go * tap.fy * tap.fx;
      }
    }
    tape.accum_grad(node.inputs[0], gp);
  }
};

}  // namespace

Value conv2d(Value input, Value kernel, Value bias) {
  const Tensor& in = input.val();
  const Tensor& k = kernel.val();
  const Tensor& b = bias.val();
  int height = in.dim(0), width = in.dim(1), cin = in.dim(2);
  int kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  if (k.dim(2) != cin) throw UsageError("conv2d: channel mismatch");
  int ph = kh / 2, pw = kw / 2;
  Tensor out({height, width, cout});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double* orow = out.data() + (static_cast<int64_t>(y) * width + x) * cout;
      for (int co = 0; co < cout; ++co) orow[co] = b[co];
      for (int dy = 0; dy < kh; ++dy) {
        int yi = y + dy - ph;
        if (yi < 0 || yi >= height) continue;
        for (int dx = 0; dx < kw; ++dx) {
          int xi = x + dx - pw;
          if (xi < 0 || xi >= width) continue;
          for (int ci = 0; ci < cin; ++ci) {
            double inv = in.at(yi, xi, ci);
            if (inv == 0.0) continue;
            const double* krow = k.data() + ((static_cast<int64_t>(dy) * kw + dx) * cin + ci) * cout;
            for (int co = 0; co < cout; ++co) orow[co] += inv * krow[co];
          }
        }
      }
    }
  return input.tape->custom(std::move(out), {input, kernel, bias}, std::make_shared<Conv2dOp>());
}

Value upsample2x(Value input) {
  const Tensor& in = input.val();
  int height = in.dim(0), width = in.dim(1), ch = in.dim(2);
  Tensor out({2 * height, 2 * width, ch});
  for (int y = 0; y < 2 * height; ++y)
    for (int x = 0; x < 2 * width; ++x)
      for (int c = 0; c < ch; ++c) out.at(y, x, c) = in.at(y / 2, x / 2, c);
  return input.tape->custom(std::move(out), {input}, std::make_shared<Upsample2xOp>());
}

Value bilinear_sample(Value plane, const Tensor& coords) {
  const Tensor& p = plane.val();
  int height = p.dim(0), width = p.dim(1), ch = p.dim(2);
  int k = coords.dim(0);
  Tensor out({k, ch});
  for (int i = 0; i < k; ++i) {
    BilinearTap tap = bilinear_tap(coords.at(i, 0), coords.at(i, 1), width, height);
    int x1 = std::min(tap.x0 + 1, width - 1), y1 = std::min(tap.y0 + 1, height - 1);
    for (int c = 0; c < ch; ++c)
      out.at(i, c) = (1 - tap.fy) * ((1 - tap.fx) * p.at(tap.y0, tap.x0, c) + tap.fx * p.at(tap.y0, x1, c)) +
                     tap.fy * ((1 - tap.fx) * p.at(y1, tap.x0, c) + tap.fx * p.at(y1, x1, c));
  }
  auto op = std::make_shared<BilinearSampleOp>();
  op->coords = coords;
  return plane.tape->custom(std::move(out), {plane}, op);
}

// ---- triplane generator ----

TriplaneGenerator::TriplaneGenerator(ParameterStore& store, const TriplaneConfig& cfg,
                                     std::mt19937_64& rng)
    : cfg_(cfg) {
  const char* axes[3] = {"xy", "xz", "yz"};
  for (int d = 0; d < 3; ++d) {
    std::string prefix = std::string("triplane.") + axes[d];
    noise_[d] = store.add(prefix + ".noise",
                          gaussian_noise({cfg.noise_res, cfg.noise_res, cfg.noise_channels}, rng),
                          /*learnable=*/false);
    Decoder& dec = decoders_[static_cast<size_t>(d)];
    auto conv_params = [&](const std::string& name, int kh, int cin, int cout, int* w, int* b) {
      *w = store.add(prefix + "." + name + ".weight",
                     xavier({kh, kh, cin, cout}, kh * kh * cin, kh * kh * cout, rng));
      *b = store.add(prefix + "." + name + ".bias", Tensor({cout}));
    };
    conv_params("expand", 3, cfg.noise_channels, cfg.channels, &dec.expand_w, &dec.expand_b);
    for (int u = 0; u < cfg.n_up; ++u) {
      Decoder::UpBlock blk{};
      std::string base = "up" + std::to_string(u);
      conv_params(base + ".res1a", 3, cfg.channels, cfg.channels, &blk.r1a_w, &blk.r1a_b);
      conv_params(base + ".res1b", 3, cfg.channels, cfg.channels, &blk.r1b_w, &blk.r1b_b);
      conv_params(base + ".res2a", 3, cfg.channels, cfg.channels, &blk.r2a_w, &blk.r2a_b);
      conv_params(base + ".res2b", 3, cfg.channels, cfg.channels, &blk.r2b_w, &blk.r2b_b);
      conv_params(base + ".upconv", 3, cfg.channels, cfg.channels, &blk.up_w, &blk.up_b);
      dec.blocks.push_back(blk);
    }
    conv_params("final", 1, cfg.channels, cfg.feature_dim, &dec.final_w, &dec.final_b);
  }
}

std::array<Value, 3> TriplaneGenerator::generate(Tape& tape, const ParameterStore& store) const {
  std::array<Value, 3> planes;
  for (int d = 0; d < 3; ++d) {
    const Decoder& dec = decoders_[static_cast<size_t>(d)];
    Value x = tape.param(store, noise_[d]);
    auto conv = [&](Value v, int w, int b) {
      return conv2d(v, tape.param(store, w), tape.param(store, b));
    };
    x = activate(conv(x, dec.expand_w, dec.expand_b), cfg_.act);
    for (const auto& blk : dec.blocks) {
      Value h = conv(activate(conv(x, blk.r1a_w, blk.r1a_b), cfg_.act), blk.r1b_w, blk.r1b_b);
      x = activate(add(x, h), cfg_.act);
      h = conv(activate(conv(x, blk.r2a_w, blk.r2a_b), cfg_.act), blk.r2b_w, blk.r2b_b);
      x = activate(add(x, h), cfg_.act);
      x = activate(conv(upsample2x(x), blk.up_w, blk.up_b), cfg_.act);
    }
    planes[static_cast<size_t>(d)] = conv(x, dec.final_w, dec.final_b);
  }
  return planes;
}

std::vector<int> TriplaneGenerator::param_ids() const {
  std::vector<int> ids;
  for (const auto& dec : decoders_) {
    ids.push_back(dec.expand_w);
    ids.push_back(dec.expand_b);
    for (const auto& blk : dec.blocks) {
      for (int id : {blk.r1a_w, blk.r1a_b, blk.r1b_w, blk.r1b_b, blk.r2a_w, blk.r2a_b,
                     blk.r2b_w, blk.r2b_b, blk.up_w, blk.up_b})
        ids.push_back(id);
    }
    ids.push_back(dec.final_w);
    ids.push_back(dec.final_b);
  }
  return ids;
}

int TriplaneGenerator::final_conv_weight(int decoder) const {
  return decoders_[static_cast<size_t>(decoder)].final_w;
}

// ---- field bundle ----

namespace {

int scaled_width(int width, double factor) {
  return std::max(4, static_cast<int>(std::lround(width * factor)));
}

Tensor repeat_row(const Tensor& row, int rows) {
  Tensor out({rows, static_cast<int>(row.numel())});
  for (int r = 0; r < rows; ++r)
    for (int64_t c = 0; c < row.numel(); ++c) out.at(r, static_cast<int>(c)) = row[c];
  return out;
}

}  // namespace

SplatFieldModel::SplatFieldModel(ParameterStore& store, const FieldConfig& cfg,
                                 std::mt19937_64& rng)
    : cfg_(cfg) {
  int pe_p = 3 + 6 * cfg.pe_levels;
  int pe_t = cfg.time_conditioned ? 1 + 2 * cfg.pe_levels : 0;
  int pe_v = 3 + 6 * cfg.pe_levels;
  int feat = scaled_width(cfg.fuser_width, cfg.width_scale);
  int rank = cfg.time_conditioned ? cfg.resfield_rank : 0;

  if (cfg.use_triplane) {
    generator_ = TriplaneGenerator(store, cfg.triplane, rng);
    MlpConfig fuser;
    fuser.in_dim = 3 * cfg.triplane.feature_dim;
    fuser.width = feat;
    fuser.out_dim = feat;
    fuser.layers = 2;
    fuser.act = cfg.act;
    fuser_ = Mlp(store, "fuser", fuser, rng);
  }

  auto field_cfg = [&](int layers, int width, int out_dim) {
    MlpConfig m;
    m.in_dim = pe_p + feat + pe_t;
    m.width = scaled_width(width, cfg.width_scale);
    m.out_dim = out_dim;
    m.layers = layers;
    m.act = cfg.act;
    m.resfield_rank = rank;
    m.t_steps = cfg.t_steps;
    return m;
  };

  MlpConfig deform = field_cfg(cfg.deform_layers, cfg.deform_width, 3);
  deform.zero_init_last = true;
  deform_ = Mlp(store, "deform", deform, rng);

  MlpConfig trunk = field_cfg(cfg.color_layers - 1, cfg.color_width,
                              scaled_width(cfg.color_width, cfg.width_scale));
  trunk.activate_output = true;
  color_trunk_ = Mlp(store, "color.trunk", trunk, rng);
  int trunk_out = trunk.out_dim;
  // Damped init keeps the sigmoid preactivation near zero; the all-positive
  // trunk activations would otherwise saturate the color output at start.
  Tensor view_w = xavier({trunk_out + pe_v, 3}, trunk_out + pe_v, 3, rng);
  for (int64_t i = 0; i < view_w.numel(); ++i) view_w[i] *= 0.1;
  color_view_layer_.weight = store.add("color.view.weight", std::move(view_w));
  color_view_layer_.bias = store.add("color.view.bias", Tensor({3}));

  MlpConfig scale = field_cfg(cfg.scale_layers, cfg.scale_width, 3);
  scale.zero_init_last = true;
  scale_ = Mlp(store, "scale", scale, rng);

  MlpConfig opacity = field_cfg(cfg.opacity_layers, cfg.opacity_width, 1);
  opacity.zero_init_last = true;
  opacity.last_bias = {logit(0.1)};
  opacity_ = Mlp(store, "opacity", opacity, rng);

  MlpConfig rotation = field_cfg(cfg.rotation_layers, cfg.rotation_width, 4);
  rotation.zero_init_last = true;
  rotation.last_bias = {1.0, 0.0, 0.0, 0.0};
  rotation_ = Mlp(store, "rotation", rotation, rng);
}

Value SplatFieldModel::sampled_features(Tape& tape, const ParameterStore& store,
                                        const Tensor& latent_positions,
                                        const SceneAabb& aabb) const {
  int k = latent_positions.dim(0);
  std::array<Value, 3> planes = generator_.generate(tape, store);
  Tensor cxy({k, 2}), cxz({k, 2}), cyz({k, 2});
  for (int i = 0; i < k; ++i) {
    Vec3 n = aabb.normalize(Vec3(latent_positions.at(i, 0), latent_positions.at(i, 1),
                                 latent_positions.at(i, 2)));
    cxy.at(i, 0) = n.x();
    cxy.at(i, 1) = n.y();
    cxz.at(i, 0) = n.x();
    cxz.at(i, 1) = n.z();
    cyz.at(i, 0) = n.y();
    cyz.at(i, 1) = n.z();
  }
  Value raw = concat_cols({bilinear_sample(planes[0], cxy), bilinear_sample(planes[1], cxz),
                           bilinear_sample(planes[2], cyz)});
  return fuser_.apply(tape, store, raw);
}

FieldGeometry SplatFieldModel::evaluate_geometry(Tape& tape, const ParameterStore& store,
                                                 const Tensor& latent_positions,
                                                 const SceneAabb& aabb,
                                                 std::optional<TimeStamp> time) const {
  int k = latent_positions.dim(0);
  int feat = scaled_width(cfg_.fuser_width, cfg_.width_scale);
  Value f = cfg_.use_triplane ? sampled_features(tape, store, latent_positions, aabb)
                              : tape.constant(Tensor({k, feat}));

  std::optional<double> t01;
  Value pe_t;
  if (cfg_.time_conditioned && time.has_value()) {
    t01 = time->t;
    Tensor t_row = positional_encoding(Tensor::from({1}, {time->t}), cfg_.pe_levels);
    pe_t = tape.constant(repeat_row(t_row, k));
  }

  Value pe_p = tape.constant(positional_encoding(latent_positions, cfg_.pe_levels));
  std::vector<Value> deform_in{pe_p, f};
  if (pe_t.valid()) deform_in.push_back(pe_t);
  Value delta = deform_.apply(tape, store, concat_cols(deform_in), t01);
  Value p_hat = add(tape.constant(latent_positions), delta);

  std::vector<Value> head_in{positional_encode(p_hat, cfg_.pe_levels), f};
  if (pe_t.valid()) head_in.push_back(pe_t);
  Value head_input = concat_cols(head_in);

  FieldGeometry geom;
  geom.features = f;
  geom.p_hat = p_hat;
  geom.log_scale = add_scalar(scale_.apply(tape, store, head_input, t01),
                              std::log(cfg_.base_scale));
  geom.alpha = sigmoid(opacity_.apply(tape, store, head_input, t01));
  geom.rotation = normalize_rows(rotation_.apply(tape, store, head_input, t01));
  geom.head_input = head_input;
  return geom;
}

Value SplatFieldModel::evaluate_color(Tape& tape, const ParameterStore& store,
                                      const FieldGeometry& geom, const Tensor& view_dirs,
                                      std::optional<TimeStamp> time) const {
  std::optional<double> t01;
  if (cfg_.time_conditioned && time.has_value()) t01 = time->t;
  Value hidden = color_trunk_.apply(tape, store, geom.head_input, t01);
  Value pe_v = tape.constant(positional_encoding(view_dirs, cfg_.pe_levels));
  Value view_in = concat_cols({hidden, pe_v});
  return sigmoid(resfield_apply(tape, store, color_view_layer_, view_in, std::nullopt));
}

SplatAttributes SplatFieldModel::bake(const ParameterStore& store,
                                      const Tensor& latent_positions, const SceneAabb& aabb,
                                      std::optional<TimeStamp> time) const {
  Tape tape;
  FieldGeometry geom = evaluate_geometry(tape, store, latent_positions, aabb, time);
  int k = latent_positions.dim(0);
  Tensor views({k, 3});
  for (int i = 0; i < k; ++i) views.at(i, 2) = 1.0;  // canonical +z view direction
  Value color = evaluate_color(tape, store, geom, views, time);

  SplatAttributes attrs;
  attrs.position = geom.p_hat.val();
  attrs.log_scale = geom.log_scale.val();
  attrs.rotation = geom.rotation.val();
  attrs.color = color.val();
  attrs.opacity_logit = Tensor({k, 1});
  for (int i = 0; i < k; ++i) attrs.opacity_logit.at(i, 0) = logit(geom.alpha.val().at(i, 0));
  return attrs;
}

std::vector<int> SplatFieldModel::param_ids() const {
  std::vector<int> ids;
  auto append = [&](const std::vector<int>& more) { ids.insert(ids.end(), more.begin(), more.end()); };
  if (cfg_.use_triplane) {
    append(generator_.param_ids());
    append(fuser_.param_ids());
  }
  append(deform_.param_ids());
  append(color_trunk_.param_ids());
  ids.push_back(color_view_layer_.weight);
  ids.push_back(color_view_layer_.bias);
  append(scale_.param_ids());
  append(opacity_.param_ids());
  append(rotation_.param_ids());
  return ids;
}

}  // namespace splatkit
