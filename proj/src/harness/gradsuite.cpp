#include "metaplast/harness/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "metaplast/neuromodulation.hpp"
#include "metaplast/neuron.hpp"
#include "metaplast/plasticity.hpp"

namespace metaplast::harness {

using ad::Tensor;
using ad::Value;

namespace {

struct Draw {
  std::mt19937_64 rng;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  std::size_t pick(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }
  Tensor tensor(std::size_t r, std::size_t c, double lo, double hi) {
    Tensor t({r, c});
    for (auto& x : t.data) x = uniform(lo, hi);
    return t;
  }
};

struct Spec {
  std::size_t n_pre = 0, n_post = 0, steps = 0;
  bool cuba = false;
  neuron::NeuronParams neuron;
  ad::SpikeFunctionConfig spike;
  plasticity::Rule rule = plasticity::Rule::Pair;
  plasticity::WeightBounds bounds{0.0, -2.0, 3.0};
  plasticity::TraceForm form = plasticity::TraceForm::Linear;
  ad::ModulationIndex indexing = ad::ModulationIndex::Pre;
  bool fused = false;
  double trace_beta = 1.0;
  std::vector<double> drive;    // steps x n_pre
  std::vector<double> rhythm;   // per-step modulation envelope
  std::vector<double> readout;  // n_post
  std::vector<double> w_weight; // n_pre x n_post
};

const char* name(ad::ModulationIndex m) {
  switch (m) {
    case ad::ModulationIndex::Global: return "global";
    case ad::ModulationIndex::Post: return "post";
    case ad::ModulationIndex::Pre: return "pre";
  }
  return "?";
}

Value run(const Spec& s, ad::Tape& tape, const ad::Bindings& b) {
  auto step = [&](const neuron::NeuronLayerState& st, Value current) {
    return s.cuba ? neuron::step_cuba(st, current, s.neuron, s.spike) : neuron::step_lif(st, current, s.neuron, s.spike);
  };
  const Value beta = tape.constant(s.trace_beta);
  const plasticity::TraceParams tp_pre{b.at("trace.pre"), beta, s.form, 1.0};
  const plasticity::TraceParams tp_post{b.at("trace.post"), beta, s.form, 1.0};
  const plasticity::PlasticityParams pp{b.at("eta.plus"), b.at("eta.minus"), s.bounds};
  const Value alpha_e = b.at("elig.alpha");
  const Value gamma = b.at("elig.gamma");

  neuron::NeuronLayerState pre = neuron::rest_state(tape, s.n_pre, s.neuron);
  neuron::NeuronLayerState post = neuron::rest_state(tape, s.n_post, s.neuron);
  Value w = b.at("w0");
  neuromod::EligibilityState e = neuromod::zero_eligibility(tape, {s.n_pre, s.n_post});
  Value x_pre = tape.zeros({s.n_pre, 1});
  Value x_post = tape.zeros({s.n_post, 1});
  Value x_slow = tape.zeros({s.n_post, 1});
  const Value readout = tape.constant(s.readout, {s.n_post, 1});
  Value loss = tape.constant(0.0);

  for (std::size_t t = 0; t < s.steps; ++t) {
    const Value drive =
        tape.constant(std::vector<double>(s.drive.begin() + t * s.n_pre, s.drive.begin() + (t + 1) * s.n_pre),
                      {s.n_pre, 1});
    pre = step(pre, drive * b.at("in.gain"));
    post = step(post, ad::matvec(w, pre.s));
    const Value slow_prev = x_slow;
    x_pre = plasticity::trace_step(x_pre, pre.s, tp_pre);
    x_post = plasticity::trace_step(x_post, post.s, tp_post);
    if (s.rule == plasticity::Rule::Triplet) {
      x_slow = plasticity::trace_step(x_slow, post.s, {b.at("trace.slow"), beta, s.form, 1.0});
    }
    const Value a_plus = plasticity::weight_dependence(w, pp, plasticity::Direction::LTP);
    const Value a_minus = plasticity::weight_dependence(w, pp, plasticity::Direction::LTD);
    const plasticity::StdpTerms terms =
        s.rule == plasticity::Rule::Pair
            ? plasticity::pair_stdp_terms(a_plus, a_minus, x_pre, x_post, pre.s, post.s)
            : plasticity::triplet_stdp_terms(a_plus, a_minus, x_pre, x_post, slow_prev, pre.s, post.s);
    if (s.fused) {
      e = neuromod::eligibility_step(e, plasticity::scale_terms(terms, alpha_e), gamma);
    } else {
      e = neuromod::eligibility_step(e, plasticity::materialize(terms.ltp), plasticity::materialize(terms.ltd),
                                     {gamma, alpha_e});
    }
    const Value r = tape.constant(s.rhythm[t]);
    const neuromod::ModulationSignal m{b.at("mod.plus") * r, b.at("mod.minus") * r, s.indexing};
    w = neuromod::apply_modulation(w, e, m, s.bounds.w_min, s.bounds.w_max);
    loss = loss + ad::sum(post.s * readout);
  }
  return loss + ad::sum(w * tape.constant(s.w_weight, {s.n_pre, s.n_post}));
}

}  // namespace

RandomProgram random_program(std::uint64_t seed, std::size_t max_neurons, std::size_t max_steps) {
  Draw d{std::mt19937_64(seed)};
  Spec s;
  const std::size_t cap = std::max<std::size_t>(max_neurons, 2);
  s.n_pre = d.pick(1, std::min<std::size_t>(5, cap - 1));
  s.n_post = d.pick(1, std::min<std::size_t>(5, cap - s.n_pre));
  s.steps = d.pick(std::min<std::size_t>(10, max_steps), max_steps);
  s.cuba = d.pick(0, 1) == 1;
  s.neuron.alpha_v = d.uniform(0.05, 0.3);
  s.neuron.alpha_u = d.uniform(0.2, 0.6);
  s.spike.mode = ad::SpikeMode::Smooth;
  // a softer logistic keeps third derivatives small enough for eps = 1e-4
  s.spike.surrogate_scale = d.uniform(0.4, 0.6);
  s.rule = d.pick(0, 1) ? plasticity::Rule::Triplet : plasticity::Rule::Pair;
  const double mus[] = {0.0, 0.5, 1.0};
  s.bounds.mu = mus[d.pick(0, 2)];
  s.form = d.pick(0, 1) ? plasticity::TraceForm::Saturating : plasticity::TraceForm::Linear;
  const ad::ModulationIndex idx[] = {ad::ModulationIndex::Global, ad::ModulationIndex::Post, ad::ModulationIndex::Pre};
  s.indexing = idx[d.pick(0, 2)];
  s.fused = d.pick(0, 1) == 1;
  s.trace_beta = d.uniform(0.1, 0.3);
  for (std::size_t i = 0; i < s.steps * s.n_pre; ++i) s.drive.push_back(d.uniform(0.0, 0.6));
  for (std::size_t t = 0; t < s.steps; ++t) s.rhythm.push_back(std::cos(0.3 * static_cast<double>(t)) + d.uniform(-0.2, 0.2));
  for (std::size_t j = 0; j < s.n_post; ++j) s.readout.push_back(d.uniform(-1.0, 1.0));
  for (std::size_t k = 0; k < s.n_pre * s.n_post; ++k) s.w_weight.push_back(d.uniform(-1.0, 1.0));
  const bool per_synapse = d.pick(0, 1) == 1;

  RandomProgram p;
  const std::size_t eta_r = per_synapse ? s.n_pre : 1, eta_c = per_synapse ? s.n_post : 1;
  p.params.add("in.gain", d.tensor(s.n_pre, 1, 0.8, 2.0));
  p.params.add("w0", d.tensor(s.n_pre, s.n_post, 0.3, 0.9));
  p.params.add("eta.plus", d.tensor(eta_r, eta_c, 0.03, 0.1));
  p.params.add("eta.minus", d.tensor(eta_r, eta_c, 0.03, 0.1));
  p.params.add("elig.alpha", d.tensor(s.n_pre, s.n_post, 0.02, 0.08));
  p.params.add("elig.gamma", d.tensor(1, 1, 0.8, 0.95));
  p.params.add("trace.pre", d.tensor(1, 1, 0.6, 0.9));
  p.params.add("trace.post", d.tensor(1, 1, 0.6, 0.9));
  if (s.rule == plasticity::Rule::Triplet) p.params.add("trace.slow", d.tensor(1, 1, 0.9, 0.97));
  const std::size_t k = s.indexing == ad::ModulationIndex::Global ? 1
                        : s.indexing == ad::ModulationIndex::Post ? s.n_post
                                                                  : s.n_pre;
  p.params.add("mod.plus", d.tensor(k, 1, -0.5, 0.5));
  p.params.add("mod.minus", d.tensor(k, 1, -0.5, 0.5));

  std::ostringstream os;
  os << (s.cuba ? "cuba" : "lif") << ' ' << s.n_pre << "->" << s.n_post << " T=" << s.steps << ' '
     << (s.rule == plasticity::Rule::Pair ? "pair" : "triplet") << " mu=" << s.bounds.mu << ' '
     << (s.form == plasticity::TraceForm::Linear ? "linear" : "saturating") << ' ' << name(s.indexing) << "-indexed "
     << (per_synapse ? "per-synapse-eta " : "") << (s.fused ? "fused" : "generic");
  p.description = os.str();
  p.program = [s](ad::Tape& tape, const ad::Bindings& b) { return run(s, tape, b); };
  return p;
}

GradSuiteResult run_gradcheck_suite(std::size_t n_programs, std::uint64_t seed, double eps, double tolerance,
                                    std::size_t max_neurons, std::size_t max_steps) {
  GradSuiteResult out;
  std::mt19937_64 seeds(seed);
  for (std::size_t i = 0; i < n_programs; ++i) {
    RandomProgram p = random_program(seeds(), max_neurons, max_steps);
    GradSuiteEntry e;
    e.description = p.description;
    e.report = ad::finite_difference_check(p.program, p.params, eps, true);
    e.passed = e.report.max_rel_error < tolerance;
    out.worst = std::max(out.worst, e.report.max_rel_error);
    out.passed += e.passed ? 1 : 0;
    out.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace metaplast::harness
