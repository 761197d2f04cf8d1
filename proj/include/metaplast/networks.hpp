#pragma once

// The two-network system: a plastic task network (DP-SNN) whose input->hidden
// synapses learn through modulated eligibility traces, a non-plastic
// neuromodulatory network (NM-SNN) emitting per-input modulation, readouts and
// a small convolutional image encoder.
//
// Outer-loop parameters live in an ad::ParamSet under "dp.", "nm." and "cnn."
// prefixes. bind_*() pulls them off a tape's Bindings once per episode.

#include <cstddef>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "metaplast/autodiff/ops.hpp"
#include "metaplast/autodiff/tape.hpp"
#include "metaplast/autodiff/tensor.hpp"
#include "metaplast/neuromodulation.hpp"
#include "metaplast/neuron.hpp"
#include "metaplast/plasticity.hpp"

namespace metaplast::networks {

// ---------------------------------------------------------------- connectivity

struct ConnectivityMask {
  ad::Tensor present;  // 1 where a synapse exists
  ad::Tensor sign;     // +1 excitatory, -1 inhibitory, 0 where absent

  double inhibitory_fraction() const;
  std::size_t count() const;
};

struct Connectivity {
  ConnectivityMask mask;
  ad::Tensor weights;  // non-negative magnitudes; zero where absent
};

Connectivity init_connectivity(std::size_t n_pre, std::size_t n_post, double density, double inhib_frac,
                               double w_init_scale, std::mt19937_64& rng);

// ---------------------------------------------------------------------- DP-SNN

enum class EtaGranularity { Layer, Synapse };

struct DPSNNConfig {
  std::size_t n_input = 20;
  std::size_t n_hidden = 48;
  std::size_t n_output = 2;
  plasticity::Rule rule = plasticity::Rule::Pair;
  neuron::NeuronParams hidden_neuron;
  neuron::NeuronParams output_neuron;
  ad::SpikeFunctionConfig spike;
  plasticity::WeightBounds bounds{0.0, 0.0, 1.0};
  plasticity::TraceForm trace_form = plasticity::TraceForm::Linear;
  double trace_beta = 1.0;
  double trace_x_max = 1.0;
  double density = 0.5;
  double inhib_frac = 0.2;
  double w_init_scale = 0.5;
  EtaGranularity eta_granularity = EtaGranularity::Layer;
  // initial values of outer-loop parameters
  double eta_plus = 1.0;
  double eta_minus = 1.0;
  double alpha_e = 0.1;
  double gamma = 0.98;
  double trace_alpha_pre = 0.9;
  double trace_alpha_post = 0.9;
  double trace_alpha_slow = 0.97;
  double w_out_scale = 0.5;
  double w_out_mean = 0.0;  // offset added to the zero-mean hidden->output init

  void validate() const;
};

// dp.w0 (initial plastic magnitudes), dp.sign (constant), dp.present
// (constant), dp.w_out, dp.eta_plus, dp.eta_minus, dp.alpha_e, dp.gamma,
// dp.trace_pre, dp.trace_post and, for the triplet rule, dp.trace_slow.
void add_dpsnn_params(ad::ParamSet& ps, const DPSNNConfig& cfg, std::mt19937_64& rng);

struct DPSNN {
  const DPSNNConfig* cfg = nullptr;
  ad::Value w0, sign, w_out;
  ad::Value eta_plus, eta_minus, gamma;
  ad::Value coef_base;  // alpha_e ⊙ present
  ad::Value coef_plus, coef_minus;  // coef_base ⊙ eta±, precomputed when mu = 0
  plasticity::TraceParams pre_trace, post_trace, slow_trace;
};

DPSNN bind_dpsnn(ad::Tape& tape, const ad::Bindings& b, const DPSNNConfig& cfg);

struct DPState {
  neuron::NeuronLayerState hidden;
  neuron::NeuronLayerState output;
  ad::Value w;  // plastic magnitudes
  neuromod::EligibilityState e;
  ad::Value x_pre, x_post, x_slow;
  ad::Value s_in;  // last input spikes
};

// Plastic weights at their initial values, everything else at rest.
DPState dpsnn_init(ad::Tape& tape, const DPSNN& net);

// One 1 ms step. `current_in` drives the hidden layer through the signed,
// masked plastic weights; the hidden layer drives the output through w_out.
// Traces, STDP terms and eligibility are then advanced and the plastic weights
// move by the (pre-indexed) modulation, clamped to [W_min, W_max].
DPState dpsnn_step(const DPSNN& net, const DPState& state, ad::Value input_spikes,
                   const neuromod::ModulationSignal& modulation);

// Neuron dynamics only; weights, traces and eligibility carried over. Equal
// to dpsnn_step under zero modulation as far as spikes and weights go, and
// used where modulation is known to be off for the rest of an episode.
DPState dpsnn_forward(const DPSNN& net, const DPState& state, ad::Value input_spikes);

// Effective (signed) input->hidden weights of a state.
ad::Value effective_weights(const DPSNN& net, const DPState& state);

// ---------------------------------------------------------------------- NM-SNN

struct NMSNNConfig {
  std::size_t n_input = 70;  // sensory + DP hidden + feedback channels
  std::size_t n_layer1 = 64;
  std::size_t n_layer2 = 64;
  std::size_t n_modulated = 20;
  neuron::NeuronParams neuron;
  ad::SpikeFunctionConfig spike;
  double w1_scale = 0.5;
  double w2_scale = 0.5;
  double readout_scale = 0.05;

  void validate() const;
};

// nm.w1, nm.w2, nm.readout; fully connected, unconstrained sign.
void add_nmsnn_params(ad::ParamSet& ps, const NMSNNConfig& cfg, std::mt19937_64& rng);

struct NMSNN {
  const NMSNNConfig* cfg = nullptr;
  ad::Value w1, w2, readout;
};

NMSNN bind_nmsnn(const ad::Bindings& b, const NMSNNConfig& cfg);

struct NMState {
  neuron::NeuronLayerState l1;
  neuron::NeuronLayerState l2;
};

NMState nmsnn_init(ad::Tape& tape, const NMSNN& net);

// Advances both layers one step on `input` and reads out (m_plus, m_minus),
// each indexed by the DP-SNN's input neurons.
std::pair<neuromod::ModulationSignal, NMState> nmsnn_step(const NMSNN& net, const NMState& state, ad::Value input);

neuromod::ModulationSignal zero_modulation(ad::Tape& tape, std::size_t n_modulated);

// ------------------------------------------------------------------------- CNN

struct CNNEncoderConfig {
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t channels = 4;
  std::size_t kernel = 3;
  std::size_t padding = 1;
  double norm_eps = 1e-5;
  double norm_gain = 1.0;  // initial instance-norm scale
  double out_gain = 1.0;   // initial scale of the second norm

  std::size_t output_size() const;
  void validate() const;
};

// cnn.k1, cnn.b1, cnn.g1, cnn.h1, cnn.k2, cnn.b2, cnn.g2, cnn.h2
void add_cnn_params(ad::ParamSet& ps, const CNNEncoderConfig& cfg, std::mt19937_64& rng);

struct CNN {
  const CNNEncoderConfig* cfg = nullptr;
  ad::Value k1, b1, g1, h1, k2, b2, g2, h2;
};

CNN bind_cnn(const ad::Bindings& b, const CNNEncoderConfig& cfg);

// image: height*width values in [0, 1] (any 1-row or 1-column shape).
// conv -> instance norm -> ReLU -> 2x2 max pool, twice, then flatten.
ad::Value cnn_encode(const CNN& net, ad::Value image);

// --------------------------------------------------------------------- readout

// score_i = w_i * sum_t s_i(t) + b_i over the window. `bias` may be invalid
// (no bias).
ad::Value readout_scores(std::span<const ad::Value> window, ad::Value weights, ad::Value bias);

// Spike count per neuron over a window.
ad::Value spike_counts(std::span<const ad::Value> window);

}  // namespace metaplast::networks
