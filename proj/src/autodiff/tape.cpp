#include "metaplast/autodiff/tape.hpp"

#include <algorithm>
#include <string>

#include "metaplast/autodiff/ops.hpp"
#include "metaplast/errors.hpp"

namespace metaplast::ad {

std::string to_string(const Shape& s) {
  return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Affine: return "affine";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Relu: return "relu";
    case OpKind::Clamp: return "clamp";
    case OpKind::PowClamped: return "pow_clamped";
    case OpKind::Sum: return "sum";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::MatVec: return "matvec";
    case OpKind::MaskedMatVec: return "masked_matvec";
    case OpKind::Outer: return "outer";
    case OpKind::Spike: return "spike";
    case OpKind::ResetGate: return "reset_gate";
    case OpKind::LeakyIntegrate: return "leaky_integrate";
    case OpKind::TraceUpdate: return "trace_update";
    case OpKind::DecayAccumulateOuter: return "decay_accumulate_outer";
    case OpKind::Modulate: return "modulate";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::InstanceNorm: return "instance_norm";
    case OpKind::MaxPool2x2: return "max_pool2x2";
  }
  return "unknown";
}

const Shape& Value::shape() const { return tape_->node(id_).shape; }

std::span<const double> Value::data() const { return tape_->node(id_).data; }

std::span<const double> Value::grad() const { return tape_->node(id_).grad; }

double Value::item() const {
  const Node& n = tape_->node(id_);
  if (!n.shape.is_scalar()) throw ShapeError("item() on non-scalar value of shape " + to_string(n.shape));
  return n.data[0];
}

bool Value::requires_grad() const { return tape_->node(id_).requires_grad; }

Tape::Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

Value Tape::constant(std::vector<double> data, Shape shape) {
  if (frozen_) throw FrozenTapeError();
  if (data.size() != shape.size()) {
    throw ShapeError("constant: " + std::to_string(data.size()) + " values for shape " + to_string(shape));
  }
  Node n;
  n.shape = shape;
  n.data = std::move(data);
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<NodeId>(nodes_.size() - 1));
}

Value Tape::parameter(const std::string& name, std::vector<double> data, Shape shape) {
  if (!grad_enabled_) return constant(std::move(data), shape);
  if (std::find(param_names_.begin(), param_names_.end(), name) != param_names_.end()) {
    throw Error("parameter '" + name + "' registered twice on one tape");
  }
  Value v = constant(std::move(data), shape);
  Node& n = nodes_[v.id()];
  n.requires_grad = true;
  n.param = static_cast<std::int32_t>(param_names_.size());
  param_names_.push_back(name);
  return v;
}

Value Tape::record(OpKind kind, std::span<const Value> inputs, std::vector<double> data, Shape shape,
                   const Attrs& attr, std::vector<double> saved) {
  if (frozen_) throw FrozenTapeError();
  if (data.size() != shape.size()) {
    throw ShapeError(std::string("record(") + to_string(kind) + "): data size " + std::to_string(data.size()) +
                     " does not match shape " + to_string(shape));
  }
  Node n;
  n.kind = kind;
  n.shape = shape;
  n.data = std::move(data);
  n.attr = attr;
  bool needs = false;
  n.inputs.reserve(inputs.size());
  for (const Value& in : inputs) {
    if (&in.tape() != this || in.id() >= nodes_.size()) {
      throw Error(std::string("record(") + to_string(kind) + "): input is not on this tape");
    }
    n.inputs.push_back(in.id());
    needs = needs || nodes_[in.id()].requires_grad;
  }
  n.requires_grad = grad_enabled_ && needs;
  if (n.requires_grad) n.saved = std::move(saved);
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<NodeId>(nodes_.size() - 1));
}

GradientMap Tape::backward(Value loss) {
  if (&loss.tape() != this) throw Error("backward: loss is not on this tape");
  if (!loss.shape().is_scalar()) {
    throw NonScalarLossError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  frozen_ = true;
  GradientMap out;
  if (!nodes_[loss.id()].requires_grad) return out;

  nodes_[loss.id()].grad.assign(1, 1.0);
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || n.grad.empty() || n.kind == OpKind::Leaf) continue;
    backward_node(*this, n);
  }
  for (const Node& n : nodes_) {
    if (n.param >= 0 && !n.grad.empty()) out[param_names_[static_cast<std::size_t>(n.param)]] = n.grad;
  }
  return out;
}

void accumulate(std::vector<double>& dst, std::span<const double> src) {
  if (dst.empty()) {
    dst.assign(src.begin(), src.end());
    return;
  }
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace metaplast::ad
