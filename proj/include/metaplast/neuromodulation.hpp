#pragma once

// Eligibility traces and third-factor modulated weight application.
//
// Plasticity rules never write weights directly: their LTP and LTD parts are
// accumulated into two eligibility traces, which only move the weights when
// multiplied by a modulation signal.

#include <cstdint>

#include "metaplast/autodiff/ops.hpp"
#include "metaplast/autodiff/tape.hpp"
#include "metaplast/plasticity.hpp"

namespace metaplast::neuromod {

struct EligibilityParams {
  ad::Value gamma;    // decay in [0, 1], scalar
  ad::Value alpha_e;  // accumulation rate, scalar or per synapse
};

struct EligibilityState {
  ad::Value e_plus;
  ad::Value e_minus;
};

EligibilityState zero_eligibility(ad::Tape& tape, ad::Shape shape);

// E±' = gamma E± + alpha_e ⊙ increment±
EligibilityState eligibility_step(const EligibilityState& e, ad::Value ltp_increment, ad::Value ltd_increment,
                                  const EligibilityParams& p);

// Same update with increments given in factored form; the terms' coefficients
// must already include alpha_e.
EligibilityState eligibility_step(const EligibilityState& e, const plasticity::StdpTerms& scaled_terms,
                                  ad::Value gamma);

struct ModulationSignal {
  ad::Value m_plus;
  ad::Value m_minus;
  ad::ModulationIndex indexing = ad::ModulationIndex::Pre;
};

// W'[i,j] = clamp(W[i,j] + m_plus[k] E_plus[i,j] + m_minus[k] E_minus[i,j], lo, hi)
// with k = 0, j or i for global, post- or pre-synaptic indexing.
ad::Value apply_modulation(ad::Value w, const EligibilityState& e, const ModulationSignal& m, double lo, double hi);

enum class Response : std::uint8_t { Identity, Tanh };

// h(b_j M) for every post-synaptic neuron j, on both channels.
ModulationSignal response_function(ad::Value m, ad::Value gains, Response h = Response::Identity);

}  // namespace metaplast::neuromod
