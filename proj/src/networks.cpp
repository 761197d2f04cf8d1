#include "metaplast/networks.hpp"

#include <cmath>
#include <string>

#include "metaplast/errors.hpp"

namespace metaplast::networks {

using ad::Shape;
using ad::Tensor;
using ad::Value;

namespace {

Tensor uniform_tensor(Shape s, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (auto& x : t.data) x = d(rng);
  return t;
}

// Zero-mean uniform init with variance scale^2 / fan_in.
Tensor fan_in_tensor(Shape s, std::size_t fan_in, double scale, std::mt19937_64& rng) {
  const double a = scale * std::sqrt(3.0 / static_cast<double>(fan_in));
  return uniform_tensor(s, -a, a, rng);
}

void require_unit(const char* what, double x, bool open) {
  const bool ok = open ? (x > 0.0 && x < 1.0) : (x >= 0.0 && x <= 1.0);
  if (!ok) throw ConfigError(std::string(what) + " out of range: " + std::to_string(x));
}

}  // namespace

// ----------------------------------------------------------------------------

double ConnectivityMask::inhibitory_fraction() const {
  std::size_t n = 0, inh = 0;
  for (std::size_t i = 0; i < present.data.size(); ++i) {
    if (present.data[i] != 0.0) {
      ++n;
      if (sign.data[i] < 0.0) ++inh;
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(inh) / static_cast<double>(n);
}

std::size_t ConnectivityMask::count() const {
  std::size_t n = 0;
  for (double p : present.data) n += p != 0.0;
  return n;
}

Connectivity init_connectivity(std::size_t n_pre, std::size_t n_post, double density, double inhib_frac,
                               double w_init_scale, std::mt19937_64& rng) {
  require_unit("connection density", density, false);
  require_unit("inhibitory fraction", inhib_frac, false);
  if (!(w_init_scale >= 0.0)) throw ConfigError("w_init_scale must be non-negative");
  const Shape s{n_pre, n_post};
  Connectivity c{ConnectivityMask{Tensor(s), Tensor(s)}, Tensor(s)};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    // three draws per candidate synapse, always, so the stream layout does
    // not depend on the outcomes
    const double p = u(rng), q = u(rng), m = u(rng);
    if (p < density) {
      c.mask.present.data[i] = 1.0;
      c.mask.sign.data[i] = q < inhib_frac ? -1.0 : 1.0;
      c.weights.data[i] = m * w_init_scale;
    }
  }
  return c;
}

// ----------------------------------------------------------------------------

void DPSNNConfig::validate() const {
  if (n_input == 0 || n_hidden == 0 || n_output == 0) throw ConfigError("dp-snn: layer sizes must be positive");
  hidden_neuron.validate();
  output_neuron.validate();
  spike.validate();
  bounds.validate();
  require_unit("density", density, false);
  require_unit("inhib_frac", inhib_frac, false);
  require_unit("gamma", gamma, false);
  require_unit("trace_alpha_pre", trace_alpha_pre, true);
  require_unit("trace_alpha_post", trace_alpha_post, true);
  if (rule == plasticity::Rule::Triplet) {
    require_unit("trace_alpha_slow", trace_alpha_slow, true);
    if (!(trace_alpha_slow > trace_alpha_post)) {
      throw ConfigError("dp-snn: slow trace must decay slower than the fast post-synaptic trace");
    }
  }
  if (trace_form == plasticity::TraceForm::Saturating && !(trace_x_max > 0.0)) {
    throw ConfigError("dp-snn: saturating traces need x_max > 0");
  }
  if (!(w_init_scale >= 0.0) || w_init_scale > bounds.w_max) {
    throw ConfigError("dp-snn: w_init_scale must lie in [0, w_max]");
  }
  if (bounds.w_min > 0.0) throw ConfigError("dp-snn: plastic magnitudes need w_min <= 0 to allow zero");
}

void add_dpsnn_params(ad::ParamSet& ps, const DPSNNConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const Shape ws{cfg.n_input, cfg.n_hidden};
  Connectivity c = init_connectivity(cfg.n_input, cfg.n_hidden, cfg.density, cfg.inhib_frac, cfg.w_init_scale, rng);
  ps.add("dp.w0", std::move(c.weights));
  ps.add("dp.sign", std::move(c.mask.sign), false);
  ps.add("dp.present", std::move(c.mask.present), false);
  Tensor w_out = fan_in_tensor({cfg.n_hidden, cfg.n_output}, cfg.n_hidden, cfg.w_out_scale, rng);
  for (double& x : w_out.data) x += cfg.w_out_mean;
  ps.add("dp.w_out", std::move(w_out));
  const Shape es = cfg.eta_granularity == EtaGranularity::Synapse ? ws : Shape{};
  ps.add("dp.eta_plus", Tensor(es, cfg.eta_plus));
  ps.add("dp.eta_minus", Tensor(es, cfg.eta_minus));
  ps.add("dp.alpha_e", Tensor(ws, cfg.alpha_e));
  ps.add("dp.gamma", Tensor({}, cfg.gamma));
  ps.add("dp.trace_pre", Tensor({}, cfg.trace_alpha_pre));
  ps.add("dp.trace_post", Tensor({}, cfg.trace_alpha_post));
  if (cfg.rule == plasticity::Rule::Triplet) ps.add("dp.trace_slow", Tensor({}, cfg.trace_alpha_slow));
}

DPSNN bind_dpsnn(ad::Tape& tape, const ad::Bindings& b, const DPSNNConfig& cfg) {
  DPSNN n;
  n.cfg = &cfg;
  n.w0 = b.at("dp.w0");
  n.sign = b.at("dp.sign");
  n.w_out = b.at("dp.w_out");
  n.eta_plus = b.at("dp.eta_plus");
  n.eta_minus = b.at("dp.eta_minus");
  n.gamma = b.at("dp.gamma");
  n.coef_base = b.at("dp.alpha_e") * b.at("dp.present");
  if (cfg.bounds.mu == 0.0) {
    n.coef_plus = n.coef_base * n.eta_plus;
    n.coef_minus = ad::neg(n.coef_base * n.eta_minus);
  }
  const Value beta = tape.constant(cfg.trace_beta);
  n.pre_trace = plasticity::TraceParams{b.at("dp.trace_pre"), beta, cfg.trace_form, cfg.trace_x_max};
  n.post_trace = plasticity::TraceParams{b.at("dp.trace_post"), beta, cfg.trace_form, cfg.trace_x_max};
  if (cfg.rule == plasticity::Rule::Triplet) {
    n.slow_trace = plasticity::TraceParams{b.at("dp.trace_slow"), beta, cfg.trace_form, cfg.trace_x_max};
  }
  const auto& w = n.w0.shape();
  if (w.rows != cfg.n_input || w.cols != cfg.n_hidden || n.w_out.shape().rows != cfg.n_hidden ||
      n.w_out.shape().cols != cfg.n_output) {
    throw ShapeError("dp-snn: parameter shapes do not match the configuration");
  }
  return n;
}

DPState dpsnn_init(ad::Tape& tape, const DPSNN& net) {
  const DPSNNConfig& c = *net.cfg;
  DPState s;
  s.hidden = neuron::rest_state(tape, c.n_hidden, c.hidden_neuron);
  s.output = neuron::rest_state(tape, c.n_output, c.output_neuron);
  s.w = net.w0;
  s.e = neuromod::zero_eligibility(tape, net.w0.shape());
  s.x_pre = tape.zeros({c.n_input, 1});
  s.x_post = tape.zeros({c.n_hidden, 1});
  s.x_slow = tape.zeros({c.n_hidden, 1});
  s.s_in = tape.zeros({c.n_input, 1});
  return s;
}

DPState dpsnn_forward(const DPSNN& net, const DPState& st, Value input_spikes) {
  const DPSNNConfig& c = *net.cfg;
  if (input_spikes.size() != c.n_input) throw ShapeError("dpsnn_forward: input length mismatch");
  DPState out = st;
  out.s_in = input_spikes;
  out.hidden = neuron::step_cuba(st.hidden, ad::masked_matvec(st.w, net.sign, input_spikes), c.hidden_neuron, c.spike);
  out.output = neuron::step_cuba(st.output, ad::matvec(net.w_out, out.hidden.s), c.output_neuron, c.spike);
  return out;
}

Value effective_weights(const DPSNN& net, const DPState& state) { return state.w * net.sign; }

DPState dpsnn_step(const DPSNN& net, const DPState& st, Value input_spikes,
                   const neuromod::ModulationSignal& modulation) {
  const DPSNNConfig& c = *net.cfg;
  if (input_spikes.size() != c.n_input) {
    throw ShapeError("dpsnn_step: " + std::to_string(input_spikes.size()) + " inputs for " +
                     std::to_string(c.n_input) + " input neurons");
  }
  if (modulation.indexing != ad::ModulationIndex::Pre) {
    throw IndexingError("dpsnn_step: modulation must be indexed by input neurons");
  }
  DPState out;
  out.s_in = input_spikes;
  // sign is zero where no synapse exists, so it doubles as the mask
  out.hidden = neuron::step_cuba(st.hidden, ad::masked_matvec(st.w, net.sign, input_spikes), c.hidden_neuron, c.spike);
  out.output = neuron::step_cuba(st.output, ad::matvec(net.w_out, out.hidden.s), c.output_neuron, c.spike);

  out.x_pre = plasticity::trace_step(st.x_pre, input_spikes, net.pre_trace);
  out.x_post = plasticity::trace_step(st.x_post, out.hidden.s, net.post_trace);

  Value cp = net.coef_plus, cm = net.coef_minus;
  if (c.bounds.mu != 0.0) {
    plasticity::PlasticityParams pp{net.eta_plus, net.eta_minus, c.bounds};
    cp = plasticity::weight_dependence(st.w, pp, plasticity::Direction::LTP) * net.coef_base;
    cm = ad::neg(plasticity::weight_dependence(st.w, pp, plasticity::Direction::LTD) * net.coef_base);
  }
  plasticity::StdpTerms terms;
  if (c.rule == plasticity::Rule::Triplet) {
    out.x_slow = plasticity::trace_step(st.x_slow, out.hidden.s, net.slow_trace);
    terms.ltp = plasticity::OuterTerm{cp, out.x_pre, st.x_slow * out.hidden.s};
  } else {
    out.x_slow = st.x_slow;
    terms.ltp = plasticity::OuterTerm{cp, out.x_pre, out.hidden.s};
  }
  terms.ltd = plasticity::OuterTerm{cm, input_spikes, out.x_post};
  out.e = neuromod::eligibility_step(st.e, terms, net.gamma);
  out.w = neuromod::apply_modulation(st.w, out.e, modulation, c.bounds.w_min, c.bounds.w_max);
  return out;
}

// ----------------------------------------------------------------------------

void NMSNNConfig::validate() const {
  if (n_input == 0 || n_layer1 == 0 || n_layer2 == 0 || n_modulated == 0) {
    throw ConfigError("nm-snn: layer sizes must be positive");
  }
  neuron.validate();
  spike.validate();
}

void add_nmsnn_params(ad::ParamSet& ps, const NMSNNConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ps.add("nm.w1", fan_in_tensor({cfg.n_input, cfg.n_layer1}, cfg.n_input, cfg.w1_scale, rng));
  ps.add("nm.w2", fan_in_tensor({cfg.n_layer1, cfg.n_layer2}, cfg.n_layer1, cfg.w2_scale, rng));
  ps.add("nm.readout", fan_in_tensor({cfg.n_layer2, 2 * cfg.n_modulated}, cfg.n_layer2, cfg.readout_scale, rng));
}

NMSNN bind_nmsnn(const ad::Bindings& b, const NMSNNConfig& cfg) {
  NMSNN n{&cfg, b.at("nm.w1"), b.at("nm.w2"), b.at("nm.readout")};
  if (n.w1.shape().rows != cfg.n_input || n.w1.shape().cols != cfg.n_layer1 ||
      n.w2.shape().rows != cfg.n_layer1 || n.w2.shape().cols != cfg.n_layer2 ||
      n.readout.shape().rows != cfg.n_layer2 || n.readout.shape().cols != 2 * cfg.n_modulated) {
    throw ShapeError("nm-snn: parameter shapes do not match the configuration");
  }
  return n;
}

NMState nmsnn_init(ad::Tape& tape, const NMSNN& net) {
  return NMState{neuron::rest_state(tape, net.cfg->n_layer1, net.cfg->neuron),
                 neuron::rest_state(tape, net.cfg->n_layer2, net.cfg->neuron)};
}

std::pair<neuromod::ModulationSignal, NMState> nmsnn_step(const NMSNN& net, const NMState& st, Value input) {
  const NMSNNConfig& c = *net.cfg;
  if (input.size() != c.n_input) {
    throw ShapeError("nmsnn_step: input of length " + std::to_string(input.size()) + ", expected " +
                     std::to_string(c.n_input));
  }
  NMState out;
  out.l1 = neuron::step_cuba(st.l1, ad::matvec(net.w1, input), c.neuron, c.spike);
  out.l2 = neuron::step_cuba(st.l2, ad::matvec(net.w2, out.l1.s), c.neuron, c.spike);
  const Value r = ad::matvec(net.readout, out.l2.s);
  neuromod::ModulationSignal m{ad::slice(r, 0, c.n_modulated), ad::slice(r, c.n_modulated, c.n_modulated),
                               ad::ModulationIndex::Pre};
  return {m, out};
}

neuromod::ModulationSignal zero_modulation(ad::Tape& tape, std::size_t n_modulated) {
  const Value z = tape.zeros({n_modulated, 1});
  return neuromod::ModulationSignal{z, z, ad::ModulationIndex::Pre};
}

// ----------------------------------------------------------------------------

std::size_t CNNEncoderConfig::output_size() const {
  const std::size_t h1 = (height + 2 * padding - kernel + 1) / 2;
  const std::size_t w1 = (width + 2 * padding - kernel + 1) / 2;
  return channels * ((h1 + 2 * padding - kernel + 1) / 2) * ((w1 + 2 * padding - kernel + 1) / 2);
}

void CNNEncoderConfig::validate() const {
  if (channels == 0 || kernel == 0) throw ConfigError("cnn: channels and kernel must be positive");
  const std::size_t h1 = height + 2 * padding - kernel + 1;
  const std::size_t w1 = width + 2 * padding - kernel + 1;
  if (height + 2 * padding < kernel || h1 % 2 || w1 % 2 || (h1 / 2 + 2 * padding - kernel + 1) % 2 ||
      (w1 / 2 + 2 * padding - kernel + 1) % 2) {
    throw ConfigError("cnn: geometry does not pool evenly twice");
  }
  if (!(norm_eps > 0.0)) throw ConfigError("cnn: norm_eps must be positive");
}

void add_cnn_params(ad::ParamSet& ps, const CNNEncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t k2 = cfg.kernel * cfg.kernel;
  const std::size_t c = cfg.channels;
  ps.add("cnn.k1", fan_in_tensor({c, k2}, k2, 1.0, rng));
  ps.add("cnn.b1", Tensor({c, 1}, 0.0));
  ps.add("cnn.g1", Tensor({c, 1}, cfg.norm_gain));
  ps.add("cnn.h1", Tensor({c, 1}, 0.0));
  ps.add("cnn.k2", fan_in_tensor({c, c * k2}, c * k2, 1.0, rng));
  ps.add("cnn.b2", Tensor({c, 1}, 0.0));
  ps.add("cnn.g2", Tensor({c, 1}, cfg.out_gain));
  ps.add("cnn.h2", Tensor({c, 1}, 0.0));
}

CNN bind_cnn(const ad::Bindings& b, const CNNEncoderConfig& cfg) {
  return CNN{&cfg,          b.at("cnn.k1"), b.at("cnn.b1"), b.at("cnn.g1"), b.at("cnn.h1"),
             b.at("cnn.k2"), b.at("cnn.b2"), b.at("cnn.g2"), b.at("cnn.h2")};
}

Value cnn_encode(const CNN& net, Value image) {
  const CNNEncoderConfig& c = *net.cfg;
  const std::size_t hw = c.height * c.width;
  if (image.size() != hw) {
    throw ShapeError("cnn_encode: image has " + std::to_string(image.size()) + " pixels, expected " +
                     std::to_string(c.height) + "x" + std::to_string(c.width));
  }
  Value x = image;
  if (x.shape().rows != 1) {
    if (x.requires_grad()) throw ShapeError("cnn_encode: image must be a single row");
    x = image.tape().constant(std::vector<double>(image.data().begin(), image.data().end()), {1, hw});
  }
  ad::ConvGeometry g1{1, c.height, c.width, c.kernel, c.padding};
  Value h = ad::conv2d(x, net.k1, net.b1, g1);
  const std::size_t oh1 = c.height + 2 * c.padding - c.kernel + 1;
  const std::size_t ow1 = c.width + 2 * c.padding - c.kernel + 1;
  h = ad::max_pool2x2(ad::relu(ad::instance_norm(h, net.g1, net.h1, c.norm_eps)), oh1, ow1);
  ad::ConvGeometry g2{c.channels, oh1 / 2, ow1 / 2, c.kernel, c.padding};
  h = ad::conv2d(h, net.k2, net.b2, g2);
  const std::size_t oh2 = oh1 / 2 + 2 * c.padding - c.kernel + 1;
  const std::size_t ow2 = ow1 / 2 + 2 * c.padding - c.kernel + 1;
  h = ad::max_pool2x2(ad::relu(ad::instance_norm(h, net.g2, net.h2, c.norm_eps)), oh2, ow2);
  return ad::slice(h, 0, h.size());
}

// ----------------------------------------------------------------------------

Value spike_counts(std::span<const Value> window) {
  if (window.empty()) throw Error("readout: empty decision window");
  Value acc = window[0];
  for (std::size_t t = 1; t < window.size(); ++t) acc = acc + window[t];
  return acc;
}

Value readout_scores(std::span<const Value> window, Value weights, Value bias) {
  const Value counts = spike_counts(window);
  if (weights.size() != counts.size() && !weights.shape().is_scalar()) {
    throw ShapeError("readout: " + std::to_string(weights.size()) + " weights for " + std::to_string(counts.size()) +
                     " output neurons");
  }
  Value score = counts * weights;
  if (bias.valid()) score = score + bias;
  return score;
}

}  // namespace metaplast::networks
