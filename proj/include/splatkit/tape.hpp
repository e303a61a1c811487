#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "splatkit/tensor.hpp"

namespace splatkit {

class Tape;
struct Node;

// Operations recorded on the tape. Simple elementwise/linear-algebra ops are
// dispatched by enum; domain-specific fat nodes (convolution, plane sampling,
// splat projection, compositing, spatial autocorrelation) attach a CustomOp.
enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  AddScalar,
  MulScalar,
  Exp,
  Log,
  Sin,
  Cos,
  Sigmoid,
  Softplus,
  Relu,
  Sqrt,
  Abs,
  PowConst,
  MatMul,
  Linear,         // x @ W + b (bias broadcast over rows)
  Sum,
  Mean,
  RowSum,         // {K,D} -> {K,1}
  ConcatCols,     // along last axis of rank-2 tensors
  Slice,          // axis i0, start i1, length from output shape
  Normalize,      // rowwise L2 normalize; rank-1 treated as one row
  RepeatCols,     // {K,1} -> {K,D}
  LinComb,        // A + sum_r c[r] * B[r]; B stacked {R,m,n}, c {R}
  Custom,
};

// Handle to a tape node. Valid for the lifetime of its tape.
struct Value {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
  const std::vector<int>& shape() const { return val().shape(); }
};

// Fat operations implement their own adjoint rule. The builder computes the
// forward value; backward() accumulates into the input nodes' grads.
class CustomOp {
public:
  virtual ~CustomOp() = default;
  virtual const char* name() const = 0;
  virtual void backward(Tape& tape, const Node& node) = 0;
};

struct Node {
  Op op = Op::Constant;
  std::vector<int> inputs;
  Tensor value;
  Tensor grad;              // empty until touched by backward
  double scalar = 0.0;      // attribute for AddScalar/MulScalar/PowConst
  int i0 = 0, i1 = 0;       // slice/concat metadata
  int param_id = -1;        // Leaf association with a ParameterStore entry
  std::shared_ptr<CustomOp> custom;
};

// A named tensor with a gradient slot. Learnable parameters receive gradients
// from Tape::accumulate_param_grads; detached ones stay at zero.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool learnable = true;
};

class ParameterStore {
public:
  int add(std::string name, Tensor value, bool learnable = true) {
    Parameter p;
    p.name = std::move(name);
    p.grad = Tensor(value.shape());
    p.value = std::move(value);
    p.learnable = learnable;
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }
  Parameter& operator[](int id) { return params_[static_cast<size_t>(id)]; }
  const Parameter& operator[](int id) const { return params_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(params_.size()); }
  void zero_grads() {
    for (auto& p : params_) p.grad.fill(0.0);
  }
  int find(const std::string& name) const {
    for (size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return static_cast<int>(i);
    return -1;
  }

private:
  std::vector<Parameter> params_;
};

// Append-only record of one forward computation. backward() visits nodes in
// exact reverse creation order, so results are deterministic.
class Tape {
public:
  Value constant(Tensor v);
  Value scalar(double v) { return constant(Tensor::scalar(v)); }
  // Learnable parameters become Leaf nodes tied to the store entry;
  // non-learnable ones are recorded as constants and receive no gradient.
  Value param(const ParameterStore& store, int id);

  Value custom(Tensor value, std::vector<Value> inputs, std::shared_ptr<CustomOp> op);

  void backward(Value output);
  const Tensor& grad(Value v);
  void accumulate_param_grads(ParameterStore& store) const;

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  void accum_grad(int id, const Tensor& g);
  // Raw node append used by the op builders in ops.cpp.
  Value emit(Node n);

private:
  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// ---- primitive op builders ----
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value div(Value a, Value b);
Value neg(Value a);
Value add_scalar(Value a, double c);
Value mul_scalar(Value a, double c);
Value exp(Value a);
Value log(Value a);
Value sin(Value a);
Value cos(Value a);
Value sigmoid(Value a);
Value softplus(Value a);
Value relu(Value a);
Value sqrt(Value a);
Value abs(Value a);
Value pow_const(Value a, double c);
Value matmul(Value a, Value b);
Value linear(Value x, Value w, Value b);   // pass b.valid()==false for no bias
Value linear(Value x, Value w);
Value sum(Value a);
Value mean(Value a);
Value row_sum(Value a);
Value concat_cols(const std::vector<Value>& parts);
Value slice(Value a, int axis, int start, int length);
Value normalize_rows(Value a);
Value repeat_cols(Value a, int d);
Value lincomb(Value base, Value stack, Value coeffs);

inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }
inline Value operator/(Value a, Value b) { return div(a, b); }
inline Value operator-(Value a) { return neg(a); }

// Max relative error between analytic gradients and central finite
// differences of `forward` over the listed parameters:
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double gradient_check(ParameterStore& store, const std::vector<int>& ids,
                      const std::function<Value(Tape&)>& forward, double h);

}  // namespace splatkit
