#pragma once

// Reverse-mode tape over dense real arrays.
//
// Every array-valued operation appends one node to the tape. Nodes are stored
// in creation order, which is a topological order because an op can only read
// nodes that already exist. backward() walks the list once in reverse.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace metaplast::ad {

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

using NodeId = std::uint32_t;
using GradientMap = std::map<std::string, std::vector<double>>;

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Affine,
  Exp,
  Log,
  Sigmoid,
  Relu,
  Clamp,
  PowClamped,
  Sum,
  Concat,
  Slice,
  MatVec,
  MaskedMatVec,
  Outer,
  Spike,
  ResetGate,
  LeakyIntegrate,
  TraceUpdate,
  DecayAccumulateOuter,
  Modulate,
  LogSoftmax,
  Conv2d,
  InstanceNorm,
  MaxPool2x2,
};

const char* to_string(OpKind kind);

using Attrs = std::array<double, 6>;

struct Node {
  OpKind kind = OpKind::Leaf;
  Shape shape;
  bool requires_grad = false;
  std::int32_t param = -1;  // index into Tape::param_names() for parameter leaves
  std::vector<NodeId> inputs;
  std::vector<double> data;
  std::vector<double> grad;   // sized lazily during backward
  std::vector<double> saved;  // op-specific forward byproducts
  Attrs attr{};
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }

  const Shape& shape() const;
  std::size_t size() const { return shape().size(); }
  std::span<const double> data() const;
  std::span<const double> grad() const;
  double item() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

class Tape {
 public:
  // With grad disabled, parameters are recorded as constants and nothing
  // is kept for the backward pass.
  explicit Tape(bool grad_enabled = true);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value constant(std::vector<double> data, Shape shape);
  Value constant(double x) { return constant({x}, Shape{}); }
  Value zeros(Shape shape) { return constant(std::vector<double>(shape.size(), 0.0), shape); }
  Value parameter(const std::string& name, std::vector<double> data, Shape shape);

  // Appends a node computed by `kind` from `inputs`. `data` must already hold
  // the forward result.
  Value record(OpKind kind, std::span<const Value> inputs, std::vector<double> data, Shape shape,
               const Attrs& attr = {}, std::vector<double> saved = {});

  // Populates grad slots for every node the scalar `loss` depends on and
  // returns the gradients of all reachable parameters. Freezes the tape.
  GradientMap backward(Value loss);

  bool frozen() const { return frozen_; }
  bool grad_enabled() const { return grad_enabled_; }

  // When set, Spike nodes use the smooth logistic forward regardless of the
  // configuration they were built with.
  void force_smooth_spikes(bool on) { force_smooth_ = on; }
  bool smooth_spikes_forced() const { return force_smooth_; }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }
  Node& node(NodeId id) { return nodes_[id]; }
  const std::vector<std::string>& param_names() const { return param_names_; }

  void reserve(std::size_t n) { nodes_.reserve(n); }

 private:
  std::vector<Node> nodes_;
  std::vector<std::string> param_names_;
  bool grad_enabled_;
  bool frozen_ = false;
  bool force_smooth_ = false;
};

// Accumulates `src` into `dst` element-wise, growing `dst` on first use.
void accumulate(std::vector<double>& dst, std::span<const double> src);

}  // namespace metaplast::ad
