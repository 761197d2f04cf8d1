#include "metaplast/neuromodulation.hpp"

#include "metaplast/errors.hpp"

namespace metaplast::neuromod {

EligibilityState zero_eligibility(ad::Tape& tape, ad::Shape shape) {
  return EligibilityState{tape.zeros(shape), tape.zeros(shape)};
}

namespace {

void check_gamma(const ad::Value& gamma) {
  if (!gamma.shape().is_scalar()) throw ShapeError("eligibility: gamma must be scalar");
}

}  // namespace

EligibilityState eligibility_step(const EligibilityState& e, ad::Value ltp_increment, ad::Value ltd_increment,
                                  const EligibilityParams& p) {
  check_gamma(p.gamma);
  const ad::Shape s = e.e_plus.shape();
  if (!(ltp_increment.shape() == s) || !(ltd_increment.shape() == s) || !(e.e_minus.shape() == s)) {
    throw ShapeError("eligibility: increments " + ad::to_string(ltp_increment.shape()) + " / " +
                     ad::to_string(ltd_increment.shape()) + " vs traces " + ad::to_string(s));
  }
  return EligibilityState{p.gamma * e.e_plus + p.alpha_e * ltp_increment,
                          p.gamma * e.e_minus + p.alpha_e * ltd_increment};
}

EligibilityState eligibility_step(const EligibilityState& e, const plasticity::StdpTerms& t, ad::Value gamma) {
  check_gamma(gamma);
  return EligibilityState{ad::decay_accumulate_outer(e.e_plus, gamma, t.ltp.coef, t.ltp.pre, t.ltp.post),
                          ad::decay_accumulate_outer(e.e_minus, gamma, t.ltd.coef, t.ltd.pre, t.ltd.post)};
}

ad::Value apply_modulation(ad::Value w, const EligibilityState& e, const ModulationSignal& m, double lo, double hi) {
  return ad::modulate(w, e.e_plus, e.e_minus, m.m_plus, m.m_minus, m.indexing, lo, hi);
}

ModulationSignal response_function(ad::Value m, ad::Value gains, Response h) {
  if (!m.shape().is_scalar()) throw ShapeError("response_function: modulator must be scalar");
  ad::Value x = gains * m;
  if (h == Response::Tanh) x = ad::affine(ad::sigmoid(ad::affine(x, 2.0, 0.0)), 2.0, -1.0);
  return ModulationSignal{x, x, ad::ModulationIndex::Post};
}

}  // namespace metaplast::neuromod
