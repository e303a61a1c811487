#include "splatkit/flow.hpp"

#include <cmath>

#include "splatkit/common.hpp"

namespace splatkit {

FlowVariant flow_variant_from_string(const std::string& name) {
  if (name == "offset") return FlowVariant::Offset;
  if (name == "se3") return FlowVariant::Se3;
  if (name == "scaled_se3") return FlowVariant::ScaledSe3;
  if (name == "dct") return FlowVariant::Dct;
  throw ConfigError("unknown flow variant: " + name);
}

std::string to_string(FlowVariant variant) {
  switch (variant) {
    case FlowVariant::Offset: return "offset";
    case FlowVariant::Se3: return "se3";
    case FlowVariant::ScaledSe3: return "scaled_se3";
    case FlowVariant::Dct: return "dct";
  }
  throw ConfigError("unknown flow variant");
}

namespace {

class QuatRotateOp : public CustomOp {
public:
  const char* name() const override { return "quat_rotate"; }

  void backward(Tape& tape, const Node& node) override {
    const Tensor& q = tape.node(node.inputs[0]).value;
    const Tensor& v = tape.node(node.inputs[1]).value;
    const Tensor& g = node.grad;
    int k = v.dim(0);
    Tensor gq({k, 4}), gv({k, 3});
    for (int i = 0; i < k; ++i) {
      Vec4 qi(q.at(i, 0), q.at(i, 1), q.at(i, 2), q.at(i, 3));
      Vec3 vi(v.at(i, 0), v.at(i, 1), v.at(i, 2));
      Vec3 gi(g.at(i, 0), g.at(i, 1), g.at(i, 2));
      Mat3 rot = quat_to_matrix(qi);
      Vec3 gvi = rot.transpose() * gi;
      auto jac = quat_to_matrix_jacobian(qi);
      for (int c = 0; c < 4; ++c) gq.at(i, c) = gi.dot(jac[static_cast<size_t>(c)] * vi);
      for (int c = 0; c < 3; ++c) gv.at(i, c) = gvi[c];
    }
    tape.accum_grad(node.inputs[0], gq);
    tape.accum_grad(node.inputs[1], gv);
  }
};

double dct_basis(int b, int frame_index, int t_steps) {
  return std::cos(M_PI * static_cast<double>(b) * (frame_index + 0.5) /
                  static_cast<double>(t_steps));
}

}  // namespace

Value quat_rotate(Value q, Value v) {
  const Tensor& qv = q.val();
  const Tensor& vv = v.val();
  int k = vv.dim(0);
  Tensor out({k, 3});
  for (int i = 0; i < k; ++i) {
    Mat3 rot = quat_to_matrix(Vec4(qv.at(i, 0), qv.at(i, 1), qv.at(i, 2), qv.at(i, 3)));
    Vec3 r = rot * Vec3(vv.at(i, 0), vv.at(i, 1), vv.at(i, 2));
    for (int c = 0; c < 3; ++c) out.at(i, c) = r[c];
  }
  return q.tape->custom(std::move(out), {q, v}, std::make_shared<QuatRotateOp>());
}

int FlowField::head_dim() const {
  switch (cfg_.variant) {
    case FlowVariant::Offset: return 3;
    case FlowVariant::Se3: return 7;
    case FlowVariant::ScaledSe3: return 8;
    case FlowVariant::Dct: return 3 * cfg_.dct_basis;
  }
  throw ConfigError("unknown flow variant");
}

FlowField::FlowField(ParameterStore& store, const FlowConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  // DCT coefficients must not depend on t; the basis carries all time
  // dependence, so the trunk gets neither the encoded time nor residuals.
  bool timed = cfg.variant != FlowVariant::Dct;
  int pe_p = 3 + 6 * cfg.pe_levels;
  int pe_t = timed ? 1 + 2 * cfg.pe_levels : 0;
  int width = std::max(4, static_cast<int>(std::lround(cfg.width * cfg.width_scale)));

  MlpConfig trunk;
  trunk.in_dim = pe_p + cfg.feature_dim + pe_t;
  trunk.width = width;
  trunk.out_dim = width;
  trunk.layers = std::max(1, cfg.layers - 1);
  trunk.act = cfg.act;
  trunk.activate_output = true;
  trunk.resfield_rank = timed ? cfg.resfield_rank : 0;
  trunk.t_steps = cfg.t_steps;
  trunk_ = Mlp(store, "flow.trunk", trunk, rng);

  int out = head_dim();
  head_.weight = store.add("flow.head.weight", Tensor({width, out}));
  Tensor bias({out});
  if (cfg.variant == FlowVariant::Se3 || cfg.variant == FlowVariant::ScaledSe3)
    bias[0] = 1.0;  // identity quaternion start
  head_.bias = store.add("flow.head.bias", std::move(bias));
}

Value FlowField::warp(Tape& tape, const ParameterStore& store, Value p_hat, Value features,
                      const TimeStamp& time) const {
  bool timed = cfg_.variant != FlowVariant::Dct;
  std::vector<Value> parts{positional_encode(p_hat, cfg_.pe_levels), features};
  std::optional<double> t01;
  if (timed) {
    t01 = time.t;
    Tensor t_row = positional_encoding(Tensor::from({1}, {time.t}), cfg_.pe_levels);
    int k = p_hat.val().dim(0);
    Tensor rows({k, static_cast<int>(t_row.numel())});
    for (int r = 0; r < k; ++r)
      for (int64_t c = 0; c < t_row.numel(); ++c) rows.at(r, static_cast<int>(c)) = t_row[c];
    parts.push_back(tape.constant(rows));
  }
  Value hidden = trunk_.apply(tape, store, concat_cols(parts), t01);
  Value raw = resfield_apply(tape, store, head_, hidden, std::nullopt);

  switch (cfg_.variant) {
    case FlowVariant::Offset:
      return add(p_hat, raw);
    case FlowVariant::Se3: {
      Value q = normalize_rows(slice(raw, 1, 0, 4));
      Value t = slice(raw, 1, 4, 3);
      return add(quat_rotate(q, p_hat), t);
    }
    case FlowVariant::ScaledSe3: {
      Value q = normalize_rows(slice(raw, 1, 0, 4));
      Value t = slice(raw, 1, 4, 3);
      Value s = repeat_cols(exp(slice(raw, 1, 7, 1)), 3);
      return add(mul(s, quat_rotate(q, p_hat)), t);
    }
    case FlowVariant::Dct: {
      Value out = p_hat;
      for (int b = 1; b <= cfg_.dct_basis; ++b) {
        Value w = slice(raw, 1, 3 * (b - 1), 3);
        out = add(out, mul_scalar(w, dct_basis(b, time.frame_index, cfg_.t_steps)));
      }
      return out;
    }
  }
  throw ConfigError("unknown flow variant");
}

Tensor FlowField::trajectory(const ParameterStore& store, const Tensor& p_hat,
                             const Tensor& features) const {
  int k = p_hat.dim(0);
  Tensor out({cfg_.t_steps, k, 3});
  for (int frame = 0; frame < cfg_.t_steps; ++frame) {
    TimeStamp ts;
    ts.frame_index = frame;
    ts.t = cfg_.t_steps > 1 ? static_cast<double>(frame) / (cfg_.t_steps - 1) : 0.0;
    Tape tape;
    Value warped = warp(tape, store, tape.constant(p_hat), tape.constant(features), ts);
    for (int i = 0; i < k; ++i)
      for (int c = 0; c < 3; ++c) out.at(frame, i, c) = warped.val().at(i, c);
  }
  return out;
}

std::vector<int> FlowField::param_ids() const {
  std::vector<int> ids = trunk_.param_ids();
  ids.push_back(head_.weight);
  ids.push_back(head_.bias);
  return ids;
}

}  // namespace splatkit
