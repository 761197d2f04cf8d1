#pragma once

// Differentiable operations recorded on a Tape.
//
// Binary element-wise ops accept equal shapes or a 1x1 scalar on either side.
// Matrices are row-major; a weight matrix W has one row per pre-synaptic
// neuron and one column per post-synaptic neuron.

#include <cstddef>
#include <cstdint>
#include <span>

#include "metaplast/autodiff/tape.hpp"

namespace metaplast::ad {

enum class SpikeMode : std::uint8_t { Hard, Smooth };

// Threshold nonlinearity. Hard mode: Heaviside forward (v > v_th), backward
// uses magnitude * exp(-|v - v_th| / scale). Smooth mode: logistic forward
// sigmoid((v - v_th) / scale) with its exact derivative; meant for gradient
// verification only.
struct SpikeFunctionConfig {
  SpikeMode mode = SpikeMode::Hard;
  double surrogate_scale = 0.25;  // 0.25 * v_th at the default threshold of 1
  double surrogate_magnitude = 0.3;

  void validate() const;
};

enum class ModulationIndex : std::uint8_t { Global, Post, Pre };

Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }

// scale * a + shift
Value affine(Value a, double scale, double shift);
inline Value neg(Value a) { return affine(a, -1.0, 0.0); }
Value exp(Value a);
Value log(Value a);
Value sigmoid(Value a);
Value relu(Value a);
// Gradient passes where lo <= a <= hi.
Value clamp(Value a, double lo, double hi);
// max(base, 0)^exponent; zero derivative where base <= 0. exponent == 0 gives 1.
Value pow_clamped(Value base, double exponent);

Value sum(Value a);
Value concat(std::span<const Value> parts);
Value slice(Value a, std::size_t offset, std::size_t length);

// y[j] = sum_i w[i,j] * x[i]
Value matvec(Value w, Value x);
// y[j] = sum_i mask[i,j] * w[i,j] * x[i]; mask receives no gradient.
Value masked_matvec(Value w, Value mask, Value x);
Value outer(Value a, Value b);

Value spike(Value v, double v_th, const SpikeFunctionConfig& cfg);
// v * (1 - s) + v_rest * s
Value reset_gate(Value v, Value s, double v_rest);
// x - alpha * (x - rest) + gain * input
Value leaky_integrate(Value x, Value input, double alpha, double rest, double gain);
// linear:     alpha * x + beta * s
// saturating: alpha * x + beta * (x_max - x) * s
// alpha and beta may be scalars or per-neuron vectors.
Value trace_update(Value x, Value s, Value alpha, Value beta, bool saturating, double x_max);
// gamma * e + coef ⊙ (a ⊗ b); coef is 1x1 or the shape of e.
Value decay_accumulate_outer(Value e, Value gamma, Value coef, Value a, Value b);
// clamp(w + m_plus[k] * e_plus + m_minus[k] * e_minus, lo, hi), k chosen by `index`.
Value modulate(Value w, Value e_plus, Value e_minus, Value m_plus, Value m_minus,
               ModulationIndex index, double lo, double hi);

Value log_softmax(Value a);

struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t kernel = 3;
  std::size_t padding = 1;
};
// x: in_channels x (height*width); w: out_channels x (in_channels*kernel*kernel);
// b: out_channels. Stride 1.
Value conv2d(Value x, Value w, Value b, const ConvGeometry& g);
// Per-row normalization over columns, then per-row affine.
Value instance_norm(Value x, Value gamma, Value beta, double eps);
// x: channels x (height*width) -> channels x (height/2 * width/2)
Value max_pool2x2(Value x, std::size_t height, std::size_t width);

// Dispatches the backward rule of `n` into its inputs' grad slots.
void backward_node(Tape& tape, const Node& n);

}  // namespace metaplast::ad
