#pragma once

// Synaptic activity traces and spike-timing-dependent plasticity rules.
//
// Convention: on every step the traces are advanced first (so x(t) already
// includes a spike emitted at t), then the rules read them. The triplet rule's
// slow post-synaptic trace is read from the previous step.
//
// The LTD part of a rule is carried with its sign: ltd = -A_-(W) x_post s_pre,
// so a rule's weight change is always ltp + ltd.

#include <cstdint>

#include "metaplast/autodiff/ops.hpp"
#include "metaplast/autodiff/tape.hpp"

namespace metaplast::plasticity {

enum class TraceForm : std::uint8_t { Linear, Saturating };
enum class Direction : std::uint8_t { LTP, LTD };
enum class Rule : std::uint8_t { Pair, Triplet };

struct TraceParams {
  ad::Value alpha;  // decay in (0, 1); scalar or per neuron
  ad::Value beta;   // increment gain; scalar or per neuron
  TraceForm form = TraceForm::Linear;
  double x_max = 1.0;  // saturation point, saturating form only
};

TraceParams constant_trace(ad::Tape& tape, double alpha, double beta, TraceForm form = TraceForm::Linear,
                           double x_max = 1.0);

struct WeightBounds {
  double mu = 0.0;  // 0 additive, 1 multiplicative
  double w_min = 0.0;
  double w_max = 1.0;

  void validate() const;
};

struct PlasticityParams {
  ad::Value eta_plus;   // scalar or n_pre x n_post
  ad::Value eta_minus;  // scalar or n_pre x n_post
  WeightBounds bounds;
};

// linear:     x' = alpha x + beta s
// saturating: x' = alpha x + beta (x_max - x) s
ad::Value trace_step(ad::Value x, ad::Value s, const TraceParams& p);

// LTP: eta_plus  (W_max - W)^mu
// LTD: eta_minus (W - W_min)^mu
// The power's base is clamped at 0.
ad::Value weight_dependence(ad::Value w, const PlasticityParams& p, Direction direction);

// coef[i,j] * pre[i] * post[j], kept factored so it can be folded into an
// eligibility update without materializing the outer product.
struct OuterTerm {
  ad::Value coef;  // scalar or n_pre x n_post
  ad::Value pre;
  ad::Value post;
};

struct StdpTerms {
  OuterTerm ltp;
  OuterTerm ltd;
};

// ltp = a_plus ⊙ (x_pre ⊗ s_post); ltd = -a_minus ⊙ (s_pre ⊗ x_post)
StdpTerms pair_stdp_terms(ad::Value a_plus, ad::Value a_minus, ad::Value x_pre, ad::Value x_post, ad::Value s_pre,
                          ad::Value s_post);

// ltp = a_plus ⊙ (x_pre ⊗ (x_post_slow_prev ⊙ s_post)); ltd as for the pair rule
// with the fast post-synaptic trace.
StdpTerms triplet_stdp_terms(ad::Value a_plus, ad::Value a_minus, ad::Value x_pre, ad::Value x_post_fast,
                             ad::Value x_post_slow_prev, ad::Value s_pre, ad::Value s_post);

// Scales both terms' coefficients by `factor` (scalar or matrix).
StdpTerms scale_terms(const StdpTerms& t, ad::Value factor);

ad::Value materialize(const OuterTerm& term);

// ΔW[i,j] = A+(W[i,j]) x_pre[i] s_post[j] - A-(W[i,j]) x_post[j] s_pre[i]
ad::Value pair_stdp_delta(ad::Value w, ad::Value x_pre, ad::Value x_post, ad::Value s_pre, ad::Value s_post,
                          const PlasticityParams& p);

// ΔW[i,j] = A+(W) x_pre[i] x_slow_prev[j] s_post[j] - A-(W) x_post_fast[j] s_pre[i]
ad::Value triplet_stdp_delta(ad::Value w, ad::Value x_pre, ad::Value x_post_fast, ad::Value x_post_slow_prev,
                             ad::Value s_pre, ad::Value s_post, const PlasticityParams& p);

}  // namespace metaplast::plasticity
