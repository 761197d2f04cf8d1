#include "metaplast/harness/model.hpp"

#include <algorithm>
#include <cmath>

#include "metaplast/errors.hpp"
#include "metaplast/networks.hpp"

namespace metaplast::harness {

using ad::Tape;
using ad::Tensor;
using ad::Value;

ad::ParamSet init_params(const TrainConfig& cfg) {
  std::seed_seq seq{cfg.seed, std::uint64_t{0x1f2e3d4c}};
  std::mt19937_64 rng(seq);
  ad::ParamSet ps;
  networks::add_dpsnn_params(ps, cfg.dp, rng);
  networks::add_nmsnn_params(ps, cfg.nm, rng);
  if (cfg.task == TaskKind::Cue) {
    ps.add("ro.w", Tensor({2, 1}, cfg.readout_weight));
    ps.add("ro.b", Tensor({2, 1}, cfg.readout_bias));
  } else {
    networks::add_cnn_params(ps, cfg.cnn, rng);
    ps.add("ro.w", Tensor({1, 1}, cfg.readout_weight));
  }
  return ps;
}

namespace {

void clamp_all(ad::ParamSet& ps, const char* name, double lo, double hi) {
  if (!ps.contains(name)) return;
  for (auto& x : ps.at(name).data) x = std::clamp(x, lo, hi);
}

}  // namespace

void apply_constraints(ad::ParamSet& ps, const TrainConfig& cfg) {
  clamp_all(ps, "dp.w0", std::max(cfg.dp.bounds.w_min, 0.0), cfg.dp.bounds.w_max);
  clamp_all(ps, "dp.eta_plus", 0.0, 1e300);
  clamp_all(ps, "dp.eta_minus", 0.0, 1e300);
  clamp_all(ps, "dp.gamma", 0.0, 1.0);
  clamp_all(ps, "dp.trace_pre", 1e-3, 0.999);
  clamp_all(ps, "dp.trace_post", 1e-3, 0.999);
  if (ps.contains("dp.trace_slow")) {
    // the slow trace has to stay slower than the fast one
    const double fast = ps.at("dp.trace_post").data[0];
    clamp_all(ps, "dp.trace_slow", std::min(fast + 1e-3, 0.9995), 0.9995);
  }
}

namespace {

Value column(Tape& t, std::vector<double> v) {
  const std::size_t n = v.size();
  return t.constant(std::move(v), {n, 1});
}

// Gradient entries for every learnable parameter, zero where unreachable.
ad::GradientMap complete(ad::GradientMap g, const ad::ParamSet& ps) {
  for (const auto& [name, e] : ps.entries()) {
    if (!e.learnable) continue;
    auto& slot = g[name];
    if (slot.empty()) slot.assign(e.tensor.data.size(), 0.0);
  }
  return g;
}

void check_finite(double loss) {
  if (!std::isfinite(loss)) throw DivergenceError("non-finite meta-loss");
}

void finish(EpisodeResult& r, Tape& tape, Value loss, const ad::ParamSet& ps, Mode mode) {
  r.loss = loss.item();
  check_finite(r.loss);
  if (mode == Mode::TrainGrad) {
    r.grads = complete(tape.backward(loss), ps);
    for (const auto& [name, g] : r.grads) {
      for (double x : g) {
        if (!std::isfinite(x)) throw DivergenceError("non-finite gradient for " + name);
      }
    }
  }
}

void record_weights(EpisodeResult& r, const Value& w0, const Value& w1, bool keep) {
  double drift = 0.0;
  const auto a = w0.data(), b = w1.data();
  for (std::size_t i = 0; i < a.size(); ++i) drift = std::max(drift, std::abs(b[i] - a[i]));
  r.weight_drift = drift;
  if (keep) {
    r.w_initial.assign(a.begin(), a.end());
    r.w_final.assign(b.begin(), b.end());
  }
}

}  // namespace

EpisodeResult run_cue_episode(const ad::ParamSet& ps, const TrainConfig& cfg, const tasks::CueEpisode& ep, Mode mode,
                              const EpisodeOptions& opt) {
  if (cfg.task != TaskKind::Cue) throw ConfigError("run_cue_episode: configuration is not a cue task");
  Tape tape(mode == Mode::TrainGrad);
  tape.reserve(ep.total_steps() * 40 + 64);
  const ad::Bindings b = ad::bind(tape, ps);
  const networks::DPSNN dp = networks::bind_dpsnn(tape, b, cfg.dp);
  const networks::NMSNN nm = networks::bind_nmsnn(b, cfg.nm);
  const std::size_t n_in = cfg.dp.n_input;
  if (ep.permutation.size() != n_in) throw ShapeError("cue episode width does not match the network input layer");

  networks::DPState ds = networks::dpsnn_init(tape, dp);
  networks::NMState ns = networks::nmsnn_init(tape, nm);
  const neuromod::ModulationSignal zero = networks::zero_modulation(tape, n_in);
  std::vector<Value> window;
  double hidden_spikes = 0.0, output_spikes = 0.0, nm_spikes = 0.0;

  const auto& test = ep.test_trial();
  const std::size_t total = ep.total_steps();
  const std::size_t win_begin = cfg.readout_window == ReadoutWindow::Trial ? total - test.steps : ep.eval_begin;
  const std::size_t win_end = ep.eval_end;

  std::size_t step = 0;
  for (const auto& tr : ep.trials) {
    for (std::size_t t = 0; t < tr.steps; ++t, ++step) {
      std::vector<double> s(n_in);
      for (std::size_t i = 0; i < n_in; ++i) s[i] = tr.spike(t, i);
      const Value sensory = column(tape, std::move(s));
      const Value fb = column(tape, {cfg.feedback_gain * tr.feedback[2 * t], cfg.feedback_gain * tr.feedback[2 * t + 1]});
      const Value parts[] = {sensory, ds.hidden.s, fb};
      auto [mod, next] = networks::nmsnn_step(nm, ns, ad::concat(parts));
      ns = next;
      ds = networks::dpsnn_step(dp, ds, sensory, opt.zero_modulation ? zero : mod);
      for (double x : ds.hidden.s.data()) hidden_spikes += x;
      for (double x : ds.output.s.data()) output_spikes += x;
      for (double x : ns.l2.s.data()) nm_spikes += x;
      if (step >= win_begin && step < win_end) window.push_back(ds.output.s);
    }
  }

  EpisodeResult r;
  const Value scores = networks::readout_scores(window, b.at("ro.w"), b.at("ro.b"));
  r.scores.assign(scores.data().begin(), scores.data().end());
  r.target = static_cast<std::size_t>(test.label);
  r.prediction = static_cast<std::size_t>(tasks::decide(r.scores[0], r.scores[1]));
  r.correct = r.prediction == r.target;
  r.hidden_rate = hidden_spikes / static_cast<double>(total * cfg.dp.n_hidden);
  r.output_rate = output_spikes / static_cast<double>(total * cfg.dp.n_output);
  r.nm_rate = nm_spikes / static_cast<double>(total * cfg.nm.n_layer2);
  record_weights(r, dp.w0, ds.w, opt.record_weights);
  finish(r, tape, tasks::cue_loss_from_scores(scores, test.label), ps, mode);
  return r;
}

EpisodeResult run_character_episode(const ad::ParamSet& ps, const TrainConfig& cfg, const tasks::CharacterEpisode& ep,
                                    Mode mode, const EpisodeOptions& opt) {
  if (cfg.task != TaskKind::Character) throw ConfigError("run_character_episode: configuration is not a character task");
  const std::size_t slots = ep.phase2.size();
  const std::size_t present = cfg.character.present_ms;
  Tape tape(mode == Mode::TrainGrad);
  tape.reserve((slots + 1) * present * 40 + 256);
  const ad::Bindings b = ad::bind(tape, ps);
  const networks::DPSNN dp = networks::bind_dpsnn(tape, b, cfg.dp);
  const networks::NMSNN nm = networks::bind_nmsnn(b, cfg.nm);
  const networks::CNN cnn = networks::bind_cnn(b, cfg.cnn);
  const std::size_t n_in = cfg.dp.n_input;
  const bool modulate = cfg.plastic && !opt.zero_modulation;

  auto image_value = [&](const tasks::GrayImage* img) {
    if (img->height != cfg.cnn.height || img->width != cfg.cnn.width) {
      throw ShapeError("character image is " + std::to_string(img->height) + "x" + std::to_string(img->width));
    }
    return tape.constant(std::vector<double>(img->pixels.begin(), img->pixels.end()), {1, img->pixels.size()});
  };
  std::vector<Value> currents;
  currents.push_back(ad::affine(networks::cnn_encode(cnn, image_value(ep.phase1)), cfg.input_gain, 0.0));
  for (const auto* img : ep.phase2) {
    currents.push_back(ad::affine(networks::cnn_encode(cnn, image_value(img)), cfg.input_gain, 0.0));
  }

  neuron::NeuronLayerState input = neuron::rest_state(tape, n_in, cfg.input_neuron);
  networks::DPState ds = networks::dpsnn_init(tape, dp);
  networks::NMState ns = networks::nmsnn_init(tape, nm);
  const neuromod::ModulationSignal zero = networks::zero_modulation(tape, n_in);
  std::vector<Value> counts;
  double hidden_spikes = 0.0, output_spikes = 0.0, nm_spikes = 0.0;

  for (std::size_t slot = 0; slot <= slots; ++slot) {
    std::vector<Value> window;
    for (std::size_t t = 0; t < present; ++t) {
      input = neuron::step_cuba(input, currents[slot], cfg.input_neuron, cfg.spike);
      if (slot == 0) {
        // phase 1: the only window in which modulation reaches the synapses
        const Value parts[] = {input.s, ds.hidden.s};
        auto [mod, next] = networks::nmsnn_step(nm, ns, ad::concat(parts));
        ns = next;
        ds = networks::dpsnn_step(dp, ds, input.s, modulate ? mod : zero);
        for (double x : ns.l2.s.data()) nm_spikes += x;
      } else {
        ds = networks::dpsnn_forward(dp, ds, input.s);
        window.push_back(ds.output.s);
      }
      for (double x : ds.hidden.s.data()) hidden_spikes += x;
      for (double x : ds.output.s.data()) output_spikes += x;
    }
    if (slot > 0) counts.push_back(networks::spike_counts(window));
  }

  EpisodeResult r;
  const Value scores = ad::concat(counts) * b.at("ro.w");
  r.scores.assign(scores.data().begin(), scores.data().end());
  r.target = ep.target;
  const double best = *std::max_element(r.scores.begin(), r.scores.end());
  std::vector<std::size_t> tied;
  for (std::size_t k = 0; k < r.scores.size(); ++k) {
    if (r.scores[k] == best) tied.push_back(k);
  }
  r.prediction = tied[opt.tie_break % tied.size()];
  r.correct = r.prediction == r.target;
  r.hidden_rate = hidden_spikes / static_cast<double>((slots + 1) * present * cfg.dp.n_hidden);
  r.output_rate = output_spikes / static_cast<double>((slots + 1) * present * cfg.dp.n_output);
  r.nm_rate = nm_spikes / static_cast<double>(present * cfg.nm.n_layer2);
  record_weights(r, dp.w0, ds.w, opt.record_weights);
  std::vector<double> onehot(slots, 0.0);
  onehot[ep.target] = 1.0;
  const Value loss = ad::neg(ad::sum(ad::log_softmax(scores) * column(tape, onehot)));
  finish(r, tape, loss, ps, mode);
  return r;
}

TaskData load_task_data(const TrainConfig& cfg) {
  TaskData d;
  if (cfg.task != TaskKind::Character) return d;
  if (cfg.manifest.empty()) throw ConfigError("character task needs character.manifest");
  tasks::DatasetIndex idx = tasks::load_dataset_manifest(cfg.manifest);
  if (cfg.augment) idx = tasks::augment_rotations(idx);
  std::mt19937_64 rng(cfg.split_seed);
  auto [train, test] = tasks::split_train_test(idx, cfg.test_frac, rng);
  d.train = tasks::load_images(train, cfg.cnn.height);
  d.test = tasks::load_images(test, cfg.cnn.height);
  return d;
}

EpisodeResult run_seeded_episode(const ad::ParamSet& ps, const TrainConfig& cfg, const TaskData& data,
                                 std::uint64_t seed, Mode mode, Split split, const EpisodeOptions& opt) {
  std::mt19937_64 rng(seed);
  if (cfg.task == TaskKind::Cue) {
    const tasks::CueEpisode ep = tasks::build_cue_episode(cfg.cue, cfg.one_shot, rng);
    return run_cue_episode(ps, cfg, ep, mode, opt);
  }
  const tasks::CharacterEpisode ep =
      tasks::generate_character_episode(split == Split::Train ? data.train : data.test, cfg.character, rng);
  EpisodeOptions o = opt;
  o.tie_break = rng();
  return run_character_episode(ps, cfg, ep, mode, o);
}

}  // namespace metaplast::harness
