#include "splatkit/tape.hpp"

#include <algorithm>
#include <cmath>

namespace splatkit {

namespace {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::AddScalar: return "add_scalar";
    case Op::MulScalar: return "mul_scalar";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Relu: return "relu";
    case Op::Sqrt: return "sqrt";
    case Op::Abs: return "abs";
    case Op::PowConst: return "pow_const";
    case Op::MatMul: return "matmul";
    case Op::Linear: return "linear";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::RowSum: return "row_sum";
    case Op::ConcatCols: return "concat_cols";
    case Op::Slice: return "slice";
    case Op::Normalize: return "normalize";
    case Op::RepeatCols: return "repeat_cols";
    case Op::LinComb: return "lincomb";
    case Op::Custom: return "custom";
  }
  return "?";
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

void require(bool cond, const char* msg) {
  if (!cond) throw UsageError(msg);
}

}  // namespace

const Tensor& Value::val() const { return tape->node(id).value; }

Value Tape::emit(Node n) {
  if (!n.value.all_finite()) {
    throw NumericalError(std::string("non-finite output of ") + op_name(n.op) +
                         (n.custom ? std::string("/") + n.custom->name() : std::string()) +
                         " node #" + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::constant(Tensor v) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(v);
  return emit(std::move(n));
}

Value Tape::param(const ParameterStore& store, int id) {
  Node n;
  const Parameter& p = store[id];
  if (p.learnable) {
    n.op = Op::Leaf;
    n.param_id = id;
  } else {
    n.op = Op::Constant;
  }
  n.value = p.value;
  return emit(std::move(n));
}

Value Tape::custom(Tensor value, std::vector<Value> inputs, std::shared_ptr<CustomOp> op) {
  Node n;
  n.op = Op::Custom;
  n.value = std::move(value);
  n.custom = std::move(op);
  n.inputs.reserve(inputs.size());
  for (const Value& v : inputs) {
    require(v.tape == this, "custom op input from a different tape");
    n.inputs.push_back(v.id);
  }
  return emit(std::move(n));
}

void Tape::accum_grad(int id, const Tensor& g) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor(n.value.shape());
  assert(n.grad.same_shape(g));
  double* dst = n.grad.data();
  const double* src = g.data();
  for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

const Tensor& Tape::grad(Value v) {
  Node& n = nodes_[static_cast<size_t>(v.id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate_param_grads(ParameterStore& store) const {
  for (const Node& n : nodes_) {
    if (n.param_id < 0 || n.grad.empty()) continue;
    Parameter& p = store[n.param_id];
    double* dst = p.grad.data();
    const double* src = n.grad.data();
    for (int64_t i = 0; i < n.grad.numel(); ++i) dst[i] += src[i];
  }
}

void Tape::backward(Value output) {
  require(output.tape == this && output.id >= 0 && output.id < size(),
          "backward called without a forward result");
  require(!ran_backward_, "backward already ran on this tape");
  require(node(output.id).value.numel() == 1, "backward output must be scalar");
  ran_backward_ = true;

  Node& out = node(output.id);
  out.grad = Tensor(out.value.shape());
  out.grad[0] = 1.0;

  for (int id = output.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) continue;
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant:
        break;
      case Op::Add: {
        accum_grad(n.inputs[0], g);
        accum_grad(n.inputs[1], g);
        break;
      }
      case Op::Sub: {
        accum_grad(n.inputs[0], g);
        Tensor gb(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] = -g[i];
        accum_grad(n.inputs[1], gb);
        break;
      }
      case Op::Mul: {
        const Tensor& a = node(n.inputs[0]).value;
        const Tensor& b = node(n.inputs[1]).value;
        Tensor ga(g.shape()), gb(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
          ga[i] = g[i] * b[i];
          gb[i] = g[i] * a[i];
        }
        accum_grad(n.inputs[0], ga);
        accum_grad(n.inputs[1], gb);
        break;
      }
      case Op::Div: {
        const Tensor& a = node(n.inputs[0]).value;
        const Tensor& b = node(n.inputs[1]).value;
        Tensor ga(g.shape()), gb(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
          ga[i] = g[i] / b[i];
          gb[i] = -g[i] * a[i] / (b[i] * b[i]);
        }
        accum_grad(n.inputs[0], ga);
        accum_grad(n.inputs[1], gb);
        break;
      }
      case Op::Neg: {
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] = -g[i];
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::AddScalar:
        accum_grad(n.inputs[0], g);
        break;
      case Op::MulScalar: {
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * n.scalar;
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::Exp: {
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * n.value[i];
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::Log: {
        const Tensor& x = node(n.inputs[0]).value;
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] / x[i];
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::Sin: {
        const Tensor& x = node(n.inputs[0]).value;
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * std::cos(x[i]);
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::Cos: {
        const Tensor& x = node(n.inputs[0]).value;
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] = -g[i] * std::sin(x[i]);
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::Sigmoid: {
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
          double y = n.value[i];
          ga[i] = g[i] * y * (1.0 - y);
        }
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::Softplus: {
        const Tensor& x = node(n.inputs[0]).value;
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * stable_sigmoid(x[i]);
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::Relu: {
        const Tensor& x = node(n.inputs[0]).value;
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::Sqrt: {
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
          double y = n.value[i];
          ga[i] = y > 0.0 ? g[i] / (2.0 * y) : 0.0;  // flat subgradient at 0
        }
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::Abs: {
        const Tensor& x = node(n.inputs[0]).value;
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i)
          ga[i] = x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::PowConst: {
        const Tensor& x = node(n.inputs[0]).value;
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.numel(); ++i)
          ga[i] = g[i] * n.scalar * std::pow(x[i], n.scalar - 1.0);
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::MatMul: {
        const Tensor& a = node(n.inputs[0]).value;  // {M,K}
        const Tensor& b = node(n.inputs[1]).value;  // {K,N}
        int M = a.dim(0), K = a.dim(1), N = b.dim(1);
        Tensor ga(a.shape()), gb(b.shape());
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j) {
            double gij = g.at(i, j);
            if (gij == 0.0) continue;
            for (int k = 0; k < K; ++k) {
              ga.at(i, k) += gij * b.at(k, j);
              gb.at(k, j) += gij * a.at(i, k);
            }
          }
        accum_grad(n.inputs[0], ga);
        accum_grad(n.inputs[1], gb);
        break;
      }
      case Op::Linear: {
        const Tensor& x = node(n.inputs[0]).value;  // {K,in}
        const Tensor& w = node(n.inputs[1]).value;  // {in,out}
        int K = x.dim(0), in = x.dim(1), out = w.dim(1);
        Tensor gx(x.shape()), gw(w.shape());
        for (int r = 0; r < K; ++r)
          for (int o = 0; o < out; ++o) {
            double go = g.at(r, o);
            if (go == 0.0) continue;
            for (int i = 0; i < in; ++i) {
              gx.at(r, i) += go * w.at(i, o);
              gw.at(i, o) += go * x.at(r, i);
            }
          }
        accum_grad(n.inputs[0], gx);
        accum_grad(n.inputs[1], gw);
        if (n.inputs.size() == 3) {
          Tensor gb(node(n.inputs[2]).value.shape());
          for (int r = 0; r < K; ++r)
            for (int o = 0; o < out; ++o) gb[o] += g.at(r, o);
          accum_grad(n.inputs[2], gb);
        }
        break;
      }
      case Op::Sum:
      case Op::Mean: {
        const Tensor& x = node(n.inputs[0]).value;
        double w = g[0] * (n.op == Op::Mean ? 1.0 / static_cast<double>(x.numel()) : 1.0);
        Tensor ga = Tensor::full(x.shape(), w);
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::RowSum: {
        const Tensor& x = node(n.inputs[0]).value;
        int K = x.dim(0), D = x.dim(1);
        Tensor ga(x.shape());
        for (int r = 0; r < K; ++r)
          for (int c = 0; c < D; ++c) ga.at(r, c) = g.at(r, 0);
        accum_grad(n.inputs[0], ga);
        break;
      }
      case Op::ConcatCols: {
        int K = n.value.dim(0);
        int col = 0;
        for (int src : n.inputs) {
          const Tensor& x = node(src).value;
          int d = x.dim(1);
          Tensor gs(x.shape());
          for (int r = 0; r < K; ++r)
            for (int c = 0; c < d; ++c) gs.at(r, c) = g.at(r, col + c);
          accum_grad(src, gs);
          col += d;
        }
        break;
      }
      case Op::Slice: {
        const Tensor& x = node(n.inputs[0]).value;
        int axis = n.i0, start = n.i1;
        int64_t outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= x.dim(d);
        for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
        int len = n.value.dim(axis);
        Tensor gx(x.shape());
        for (int64_t o = 0; o < outer; ++o)
          for (int m = 0; m < len; ++m)
            for (int64_t i = 0; i < inner; ++i)
              gx[(o * x.dim(axis) + start + m) * inner + i] = g[(o * len + m) * inner + i];
        accum_grad(n.inputs[0], gx);
        break;
      }
      case Op::Normalize: {
        const Tensor& x = node(n.inputs[0]).value;
        int K = x.rank() == 1 ? 1 : x.dim(0);
        int D = x.rank() == 1 ? x.dim(0) : x.dim(1);
        Tensor gx(x.shape());
        for (int r = 0; r < K; ++r) {
          const double* xr = x.data() + static_cast<int64_t>(r) * D;
          const double* yr = n.value.data() + static_cast<int64_t>(r) * D;
          const double* gr = g.data() + static_cast<int64_t>(r) * D;
          double norm = 0.0, dot = 0.0;
          for (int c = 0; c < D; ++c) norm += xr[c] * xr[c];
          norm = std::sqrt(norm);
          for (int c = 0; c < D; ++c) dot += gr[c] * yr[c];
          double* dst = gx.data() + static_cast<int64_t>(r) * D;
          for (int c = 0; c < D; ++c) dst[c] = (gr[c] - dot * yr[c]) / norm;
        }
        accum_grad(n.inputs[0], gx);
        break;
      }
      case Op::RepeatCols: {
        const Tensor& x = node(n.inputs[0]).value;
        int K = x.dim(0), D = n.value.dim(1);
        Tensor gx(x.shape());
        for (int r = 0; r < K; ++r) {
          double s = 0.0;
          for (int c = 0; c < D; ++c) s += g.at(r, c);
          gx.at(r, 0) = s;
        }
        accum_grad(n.inputs[0], gx);
        break;
      }
      case Op::LinComb: {
        const Tensor& stack = node(n.inputs[1]).value;
        const Tensor& coeffs = node(n.inputs[2]).value;
        int R = static_cast<int>(coeffs.numel());
        int64_t block = g.numel();
        accum_grad(n.inputs[0], g);
        Tensor gstack(stack.shape()), gc(coeffs.shape());
        for (int r = 0; r < R; ++r) {
          const double* br = stack.data() + static_cast<int64_t>(r) * block;
          double* gbr = gstack.data() + static_cast<int64_t>(r) * block;
          double dot = 0.0;
          for (int64_t i = 0; i < block; ++i) {
            gbr[i] = coeffs[r] * g[i];
            dot += g[i] * br[i];
          }
          gc[r] = dot;
        }
        accum_grad(n.inputs[1], gstack);
        accum_grad(n.inputs[2], gc);
        break;
      }
      case Op::Custom:
        n.custom->backward(*this, n);
        break;
    }
  }
}

// ---- builders ----

namespace {

Tensor map_unary(const Tensor& x, double (*f)(double)) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  return y;
}

Value emit_unary(Op op, Value a, Tensor value, double scalar = 0.0) {
  Node n;
  n.op = op;
  n.inputs = {a.id};
  n.value = std::move(value);
  n.scalar = scalar;
  return a.tape->emit(std::move(n));
}

Value emit_binary(Op op, Value a, Value b, Tensor value) {
  require(a.tape == b.tape, "operands belong to different tapes");
  Node n;
  n.op = op;
  n.inputs = {a.id, b.id};
  n.value = std::move(value);
  return a.tape->emit(std::move(n));
}

}  // namespace

Value add(Value a, Value b) {
  require(a.val().same_shape(b.val()), "add: shape mismatch");
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] + b.val()[i];
  return emit_binary(Op::Add, a, b, std::move(y));
}

Value sub(Value a, Value b) {
  require(a.val().same_shape(b.val()), "sub: shape mismatch");
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] - b.val()[i];
  return emit_binary(Op::Sub, a, b, std::move(y));
}

Value mul(Value a, Value b) {
  require(a.val().same_shape(b.val()), "mul: shape mismatch");
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] * b.val()[i];
  return emit_binary(Op::Mul, a, b, std::move(y));
}

Value div(Value a, Value b) {
  require(a.val().same_shape(b.val()), "div: shape mismatch");
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] / b.val()[i];
  return emit_binary(Op::Div, a, b, std::move(y));
}

Value neg(Value a) {
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = -a.val()[i];
  return emit_unary(Op::Neg, a, std::move(y));
}

Value add_scalar(Value a, double c) {
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] + c;
  return emit_unary(Op::AddScalar, a, std::move(y), c);
}

Value mul_scalar(Value a, double c) {
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.val()[i] * c;
  return emit_unary(Op::MulScalar, a, std::move(y), c);
}

Value exp(Value a) { return emit_unary(Op::Exp, a, map_unary(a.val(), [](double x) { return std::exp(x); })); }
Value log(Value a) { return emit_unary(Op::Log, a, map_unary(a.val(), [](double x) { return std::log(x); })); }
Value sin(Value a) { return emit_unary(Op::Sin, a, map_unary(a.val(), [](double x) { return std::sin(x); })); }
Value cos(Value a) { return emit_unary(Op::Cos, a, map_unary(a.val(), [](double x) { return std::cos(x); })); }
Value sigmoid(Value a) { return emit_unary(Op::Sigmoid, a, map_unary(a.val(), &stable_sigmoid)); }
Value softplus(Value a) { return emit_unary(Op::Softplus, a, map_unary(a.val(), &stable_softplus)); }
Value relu(Value a) {
  return emit_unary(Op::Relu, a, map_unary(a.val(), [](double x) { return x > 0.0 ? x : 0.0; }));
}
Value sqrt(Value a) { return emit_unary(Op::Sqrt, a, map_unary(a.val(), [](double x) { return std::sqrt(x); })); }
Value abs(Value a) { return emit_unary(Op::Abs, a, map_unary(a.val(), [](double x) { return std::fabs(x); })); }

Value pow_const(Value a, double c) {
  Tensor y(a.val().shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::pow(a.val()[i], c);
  return emit_unary(Op::PowConst, a, std::move(y), c);
}

Value matmul(Value a, Value b) {
  const Tensor& x = a.val();
  const Tensor& w = b.val();
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0), "matmul: bad shapes");
  int M = x.dim(0), K = x.dim(1), N = w.dim(1);
  Tensor y({M, N});
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < K; ++k) {
      double xv = x.at(i, k);
      if (xv == 0.0) continue;
      for (int j = 0; j < N; ++j) y.at(i, j) += xv * w.at(k, j);
    }
  return emit_binary(Op::MatMul, a, b, std::move(y));
}

Value linear(Value x, Value w, Value b) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0), "linear: bad shapes");
  int K = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  Tensor y({K, out});
  if (b.valid()) {
    const Tensor& bv = b.val();
    require(bv.rank() == 1 && bv.dim(0) == out, "linear: bad bias shape");
    for (int r = 0; r < K; ++r)
      for (int o = 0; o < out; ++o) y.at(r, o) = bv[o];
  }
  for (int r = 0; r < K; ++r)
    for (int i = 0; i < in; ++i) {
      double xv2 = xv.at(r, i);
      if (xv2 == 0.0) continue;
      for (int o = 0; o < out; ++o) y.at(r, o) += xv2 * wv.at(i, o);
    }
  Node n;
  n.op = Op::Linear;
  n.inputs = b.valid() ? std::vector<int>{x.id, w.id, b.id} : std::vector<int>{x.id, w.id};
  n.value = std::move(y);
  return x.tape->emit(std::move(n));
}

Value linear(Value x, Value w) { return linear(x, w, Value{}); }

Value sum(Value a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
  return emit_unary(Op::Sum, a, Tensor::scalar(s));
}

Value mean(Value a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
  return emit_unary(Op::Mean, a, Tensor::scalar(s / static_cast<double>(a.val().numel())));
}

Value row_sum(Value a) {
  const Tensor& x = a.val();
  require(x.rank() == 2, "row_sum: rank-2 input required");
  Tensor y({x.dim(0), 1});
  for (int r = 0; r < x.dim(0); ++r) {
    double s = 0.0;
    for (int c = 0; c < x.dim(1); ++c) s += x.at(r, c);
    y.at(r, 0) = s;
  }
  return emit_unary(Op::RowSum, a, std::move(y));
}

Value concat_cols(const std::vector<Value>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  int K = parts[0].val().dim(0);
  int total = 0;
  for (const Value& p : parts) {
    require(p.val().rank() == 2 && p.val().dim(0) == K, "concat_cols: row mismatch");
    total += p.val().dim(1);
  }
  Tensor y({K, total});
  int col = 0;
  for (const Value& p : parts) {
    const Tensor& x = p.val();
    for (int r = 0; r < K; ++r)
      for (int c = 0; c < x.dim(1); ++c) y.at(r, col + c) = x.at(r, c);
    col += x.dim(1);
  }
  Node n;
  n.op = Op::ConcatCols;
  for (const Value& p : parts) n.inputs.push_back(p.id);
  n.value = std::move(y);
  return parts[0].tape->emit(std::move(n));
}

Value slice(Value a, int axis, int start, int length) {
  const Tensor& x = a.val();
  require(axis >= 0 && axis < x.rank(), "slice: bad axis");
  require(start >= 0 && start + length <= x.dim(axis), "slice: out of range");
  std::vector<int> shape = x.shape();
  shape[static_cast<size_t>(axis)] = length;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  Tensor y(shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int m = 0; m < length; ++m)
      for (int64_t i = 0; i < inner; ++i)
        y[(o * length + m) * inner + i] = x[(o * x.dim(axis) + start + m) * inner + i];
  Node n;
  n.op = Op::Slice;
  n.inputs = {a.id};
  n.i0 = axis;
  n.i1 = start;
  n.value = std::move(y);
  return a.tape->emit(std::move(n));
}

Value normalize_rows(Value a) {
  const Tensor& x = a.val();
  require(x.rank() == 1 || x.rank() == 2, "normalize: rank-1/2 input required");
  int K = x.rank() == 1 ? 1 : x.dim(0);
  int D = x.rank() == 1 ? x.dim(0) : x.dim(1);
  Tensor y(x.shape());
  for (int r = 0; r < K; ++r) {
    const double* xr = x.data() + static_cast<int64_t>(r) * D;
    double norm = 0.0;
    for (int c = 0; c < D; ++c) norm += xr[c] * xr[c];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw DegenerateRotationError("normalize: near-zero row norm");
    double* yr = y.data() + static_cast<int64_t>(r) * D;
    for (int c = 0; c < D; ++c) yr[c] = xr[c] / norm;
  }
  return emit_unary(Op::Normalize, a, std::move(y));
}

Value repeat_cols(Value a, int d) {
  const Tensor& x = a.val();
  require(x.rank() == 2 && x.dim(1) == 1, "repeat_cols: {K,1} input required");
  Tensor y({x.dim(0), d});
  for (int r = 0; r < x.dim(0); ++r)
    for (int c = 0; c < d; ++c) y.at(r, c) = x.at(r, 0);
  Node n;
  n.op = Op::RepeatCols;
  n.inputs = {a.id};
  n.value = std::move(y);
  return a.tape->emit(std::move(n));
}

Value lincomb(Value base, Value stack, Value coeffs) {
  const Tensor& b = base.val();
  const Tensor& s = stack.val();
  const Tensor& c = coeffs.val();
  require(s.rank() >= 2 && s.dim(0) == c.numel(), "lincomb: bad shapes");
  require(s.numel() == c.numel() * b.numel(), "lincomb: stack/base mismatch");
  Tensor y = b;
  int R = static_cast<int>(c.numel());
  int64_t block = b.numel();
  for (int r = 0; r < R; ++r) {
    double cr = c[r];
    if (cr == 0.0) continue;
    const double* br = s.data() + static_cast<int64_t>(r) * block;
    for (int64_t i = 0; i < block; ++i) y[i] += cr * br[i];
  }
  Node n;
  n.op = Op::LinComb;
  n.inputs = {base.id, stack.id, coeffs.id};
  n.value = std::move(y);
  return base.tape->emit(std::move(n));
}

double gradient_check(ParameterStore& store, const std::vector<int>& ids,
                      const std::function<Value(Tape&)>& forward, double h) {
  store.zero_grads();
  {
    Tape tape;
    Value out = forward(tape);
    tape.backward(out);
    tape.accumulate_param_grads(store);
  }
  auto eval = [&]() {
    Tape tape;
    return forward(tape).val().item();
  };
  double max_err = 0.0;
  for (int id : ids) {
    Parameter& p = store[id];
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      double saved = p.value[i];
      p.value[i] = saved + h;
      double fp = eval();
      p.value[i] = saved - h;
      double fm = eval();
      p.value[i] = saved;
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = p.grad[i];
      double err = std::fabs(analytic - numeric) /
                   std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace splatkit
