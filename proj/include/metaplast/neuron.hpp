#pragma once

// Leaky integrate-and-fire (LIF) and current-based LIF (CUBA) layers as
// single 1 ms state transitions. Order within a step is fixed:
// integrate, threshold, reset.

#include <cstddef>

#include "metaplast/autodiff/ops.hpp"
#include "metaplast/autodiff/tape.hpp"

namespace metaplast::neuron {

struct NeuronParams {
  double alpha_v = 0.1;  // membrane leak per step, in [0, 1]
  double alpha_u = 0.3;  // current-trace leak per step, in [0, 1]
  double v_rest = 0.0;
  double u_rest = 0.0;
  double resistance = 1.0;
  double v_th = 1.0;

  void validate() const;
};

struct NeuronLayerState {
  ad::Value v;
  ad::Value u;
  ad::Value s;

  std::size_t size() const { return v.size(); }
};

// v = v_rest, u = u_rest, s = 0.
NeuronLayerState rest_state(ad::Tape& tape, std::size_t n, const NeuronParams& p);

// v' = v - alpha_v (v - v_rest) + R I; s' = H(v'); v' <- v_rest where s' = 1.
// u is carried through unchanged.
NeuronLayerState step_lif(const NeuronLayerState& state, ad::Value current, const NeuronParams& p,
                          const ad::SpikeFunctionConfig& cfg);

// u' = u - alpha_u (u - u_rest) + I; v' = v - alpha_v (v - v_rest) + R u';
// then threshold and reset as in step_lif.
NeuronLayerState step_cuba(const NeuronLayerState& state, ad::Value current, const NeuronParams& p,
                           const ad::SpikeFunctionConfig& cfg);

}  // namespace metaplast::neuron
