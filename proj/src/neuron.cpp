#include "metaplast/neuron.hpp"

#include <cmath>
#include <vector>

#include "metaplast/errors.hpp"

namespace metaplast::neuron {

void NeuronParams::validate() const {
  if (!(alpha_v >= 0.0 && alpha_v <= 1.0)) throw ConfigError("neuron: alpha_v must lie in [0, 1]");
  if (!(alpha_u >= 0.0 && alpha_u <= 1.0)) throw ConfigError("neuron: alpha_u must lie in [0, 1]");
  if (!(resistance > 0.0)) throw ConfigError("neuron: resistance must be positive");
  if (!(v_th > v_rest)) throw ConfigError("neuron: v_th must exceed v_rest");
}

NeuronLayerState rest_state(ad::Tape& tape, std::size_t n, const NeuronParams& p) {
  const ad::Shape s{n, 1};
  return NeuronLayerState{tape.constant(std::vector<double>(n, p.v_rest), s),
                          tape.constant(std::vector<double>(n, p.u_rest), s), tape.zeros(s)};
}

namespace {

NeuronLayerState fire(ad::Value v_pre, ad::Value u, const NeuronParams& p, const ad::SpikeFunctionConfig& cfg) {
  const ad::Value s = ad::spike(v_pre, p.v_th, cfg);
  return NeuronLayerState{ad::reset_gate(v_pre, s, p.v_rest), u, s};
}

}  // namespace

NeuronLayerState step_lif(const NeuronLayerState& state, ad::Value current, const NeuronParams& p,
                          const ad::SpikeFunctionConfig& cfg) {
  if (current.size() != state.size()) {
    throw ShapeError("step_lif: current of length " + std::to_string(current.size()) + " for layer of " +
                     std::to_string(state.size()));
  }
  const ad::Value v = ad::leaky_integrate(state.v, current, p.alpha_v, p.v_rest, p.resistance);
  return fire(v, state.u, p, cfg);
}

NeuronLayerState step_cuba(const NeuronLayerState& state, ad::Value current, const NeuronParams& p,
                           const ad::SpikeFunctionConfig& cfg) {
  if (current.size() != state.size()) {
    throw ShapeError("step_cuba: current of length " + std::to_string(current.size()) + " for layer of " +
                     std::to_string(state.size()));
  }
  const ad::Value u = ad::leaky_integrate(state.u, current, p.alpha_u, p.u_rest, 1.0);
  const ad::Value v = ad::leaky_integrate(state.v, u, p.alpha_v, p.v_rest, p.resistance);
  return fire(v, u, p, cfg);
}

}  // namespace metaplast::neuron
