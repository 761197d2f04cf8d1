#include "metaplast/plasticity.hpp"

#include "metaplast/errors.hpp"

namespace metaplast::plasticity {

TraceParams constant_trace(ad::Tape& tape, double alpha, double beta, TraceForm form, double x_max) {
  return TraceParams{tape.constant(alpha), tape.constant(beta), form, x_max};
}

void WeightBounds::validate() const {
  if (!(w_min < w_max)) throw ConfigError("plasticity: w_min must be below w_max");
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("plasticity: mu must lie in [0, 1]");
}

ad::Value trace_step(ad::Value x, ad::Value s, const TraceParams& p) {
  const bool saturating = p.form == TraceForm::Saturating;
  if (saturating && !(p.x_max > 0.0)) throw ConfigError("trace: saturating form requires x_max > 0");
  return ad::trace_update(x, s, p.alpha, p.beta, saturating, p.x_max);
}

ad::Value weight_dependence(ad::Value w, const PlasticityParams& p, Direction direction) {
  // (W_max - W) for LTP, (W - W_min) for LTD
  const ad::Value base = direction == Direction::LTP ? ad::affine(w, -1.0, p.bounds.w_max)
                                                     : ad::affine(w, 1.0, -p.bounds.w_min);
  const ad::Value eta = direction == Direction::LTP ? p.eta_plus : p.eta_minus;
  return eta * ad::pow_clamped(base, p.bounds.mu);
}

StdpTerms pair_stdp_terms(ad::Value a_plus, ad::Value a_minus, ad::Value x_pre, ad::Value x_post, ad::Value s_pre,
                          ad::Value s_post) {
  if (x_pre.size() != s_pre.size() || x_post.size() != s_post.size()) {
    throw ShapeError("pair_stdp: trace and spike lengths differ");
  }
  return StdpTerms{OuterTerm{a_plus, x_pre, s_post}, OuterTerm{ad::neg(a_minus), s_pre, x_post}};
}

StdpTerms triplet_stdp_terms(ad::Value a_plus, ad::Value a_minus, ad::Value x_pre, ad::Value x_post_fast,
                             ad::Value x_post_slow_prev, ad::Value s_pre, ad::Value s_post) {
  if (x_pre.size() != s_pre.size() || x_post_fast.size() != s_post.size() ||
      x_post_slow_prev.size() != s_post.size()) {
    throw ShapeError("triplet_stdp: trace and spike lengths differ");
  }
  return StdpTerms{OuterTerm{a_plus, x_pre, x_post_slow_prev * s_post}, OuterTerm{ad::neg(a_minus), s_pre, x_post_fast}};
}

StdpTerms scale_terms(const StdpTerms& t, ad::Value factor) {
  return StdpTerms{OuterTerm{t.ltp.coef * factor, t.ltp.pre, t.ltp.post},
                   OuterTerm{t.ltd.coef * factor, t.ltd.pre, t.ltd.post}};
}

ad::Value materialize(const OuterTerm& term) {
  const ad::Value o = ad::outer(term.pre, term.post);
  if (!term.coef.shape().is_scalar() && !(term.coef.shape() == o.shape())) {
    throw ShapeError("stdp: coefficient shape " + ad::to_string(term.coef.shape()) + " vs weights " +
                     ad::to_string(o.shape()));
  }
  return term.coef * o;
}

namespace {

void check_weights(const ad::Value& w, const ad::Value& x_pre, const ad::Value& x_post) {
  if (w.shape().rows != x_pre.size() || w.shape().cols != x_post.size()) {
    throw ShapeError("stdp: weights " + ad::to_string(w.shape()) + " vs " + std::to_string(x_pre.size()) +
                     " pre / " + std::to_string(x_post.size()) + " post neurons");
  }
}

}  // namespace

ad::Value pair_stdp_delta(ad::Value w, ad::Value x_pre, ad::Value x_post, ad::Value s_pre, ad::Value s_post,
                          const PlasticityParams& p) {
  check_weights(w, x_pre, x_post);
  const StdpTerms t = pair_stdp_terms(weight_dependence(w, p, Direction::LTP), weight_dependence(w, p, Direction::LTD),
                                      x_pre, x_post, s_pre, s_post);
  return materialize(t.ltp) + materialize(t.ltd);
}

ad::Value triplet_stdp_delta(ad::Value w, ad::Value x_pre, ad::Value x_post_fast, ad::Value x_post_slow_prev,
                             ad::Value s_pre, ad::Value s_post, const PlasticityParams& p) {
  check_weights(w, x_pre, x_post_fast);
  const StdpTerms t =
      triplet_stdp_terms(weight_dependence(w, p, Direction::LTP), weight_dependence(w, p, Direction::LTD), x_pre,
                         x_post_fast, x_post_slow_prev, s_pre, s_post);
  return materialize(t.ltp) + materialize(t.ltd);
}

}  // namespace metaplast::plasticity
