#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "metaplast/errors.hpp"
#include "metaplast/tasks.hpp"

namespace metaplast::tasks {

const char* to_string(Side s) { return s == Side::Right ? "right" : "left"; }

std::size_t CueEpisodeSpec::trial_length() const {
  return n_cues * (cue_duration + inter_cue_gap) + pre_decision_gap + decision_duration;
}

void CueEpisodeSpec::validate() const {
  if (n_cues == 0) throw ConfigError("cue task: M must be at least 1");
  if (n_shot == 0) throw ConfigError("cue task: n_shot must be at least 1");
  if (group_size == 0 || 4 * group_size != n_sensory) {
    throw ConfigError("cue task: n_sensory must hold four groups of group_size neurons");
  }
  if (!(p_active >= 0.0 && p_active <= 1.0) || !(p_background >= 0.0 && p_background <= 1.0)) {
    throw ConfigError("cue task: firing probabilities must lie in [0, 1]");
  }
  if (cue_duration == 0 || decision_duration == 0) throw ConfigError("cue task: empty cue or decision window");
}

Permutation sample_permutation(std::mt19937_64& rng, std::size_t n) {
  Permutation p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

namespace {

// Uniform over cue-side sequences whose strict majority is `side`.
std::vector<Side> sample_cue_sides(std::size_t m, Side side, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<Side> seq(m);
  for (;;) {
    std::size_t n_side = 0;
    for (auto& s : seq) {
      s = coin(rng) ? Side::Right : Side::Left;
      n_side += s == side;
    }
    if (2 * n_side > m) return seq;
  }
}

}  // namespace

CueTrial generate_cue_trial(const Permutation& perm, Side side, const CueEpisodeSpec& spec, std::mt19937_64& rng,
                            bool training) {
  spec.validate();
  if (perm.size() != spec.n_sensory) throw ShapeError("cue trial: permutation size differs from n_sensory");
  CueTrial tr;
  tr.steps = spec.trial_length();
  tr.n_sensory = spec.n_sensory;
  tr.label = side;
  tr.is_test = !training;
  tr.cue_sides = sample_cue_sides(spec.n_cues, side, rng);
  tr.decision_begin = tr.steps - spec.decision_duration;
  tr.decision_end = tr.steps;

  // per-step firing probability of every logical channel
  const std::size_t g = spec.group_size;
  std::vector<double> prob(tr.steps * spec.n_sensory, spec.p_background);
  auto activate = [&](std::size_t group, std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      for (std::size_t k = group * g; k < (group + 1) * g; ++k) prob[t * spec.n_sensory + k] = spec.p_active;
    }
  };
  for (std::size_t c = 0; c < spec.n_cues; ++c) {
    const std::size_t begin = c * (spec.cue_duration + spec.inter_cue_gap);
    activate(tr.cue_sides[c] == Side::Right ? 0 : 1, begin, begin + spec.cue_duration);
  }
  activate(2, tr.decision_begin, tr.decision_end);

  std::uniform_real_distribution<double> u(0.0, 1.0);
  tr.raster.assign(tr.steps * spec.n_sensory, 0);
  for (std::size_t t = 0; t < tr.steps; ++t) {
    for (std::size_t k = 0; k < spec.n_sensory; ++k) {
      const bool fire = u(rng) < prob[t * spec.n_sensory + k];
      tr.raster[t * spec.n_sensory + perm[k]] = fire ? 1 : 0;
    }
  }

  tr.feedback.assign(tr.steps * 2, 0.0);
  if (training) {
    const std::size_t ch = side == Side::Right ? 0 : 1;
    for (std::size_t t = tr.decision_begin; t < tr.decision_end; ++t) tr.feedback[t * 2 + ch] = 1.0;
  }
  return tr;
}

std::size_t CueEpisode::total_steps() const {
  std::size_t n = 0;
  for (const auto& t : trials) n += t.steps;
  return n;
}

CueEpisode build_cue_episode(const CueEpisodeSpec& spec, bool one_shot, std::mt19937_64& rng) {
  spec.validate();
  CueEpisode ep;
  ep.permutation = sample_permutation(rng, spec.n_sensory);
  const std::size_t shots = one_shot ? 1 : spec.n_shot;
  std::vector<Side> order;
  for (std::size_t i = 0; i < shots; ++i) {
    order.push_back(Side::Right);
    order.push_back(Side::Left);
  }
  std::shuffle(order.begin(), order.end(), rng);
  for (Side s : order) ep.trials.push_back(generate_cue_trial(ep.permutation, s, spec, rng, true));
  std::bernoulli_distribution coin(0.5);
  const Side test_side = coin(rng) ? Side::Right : Side::Left;
  ep.trials.push_back(generate_cue_trial(ep.permutation, test_side, spec, rng, false));
  const std::size_t offset = ep.total_steps() - ep.trials.back().steps;
  ep.eval_begin = offset + ep.trials.back().decision_begin;
  ep.eval_end = offset + ep.trials.back().decision_end;
  return ep;
}

std::array<double, 2> one_hot(Side s) {
  return s == Side::Right ? std::array<double, 2>{1.0, 0.0} : std::array<double, 2>{0.0, 1.0};
}

ad::Value meta_loss_bce(ad::Value p, const std::array<double, 2>& y) {
  if (p.size() != 2) throw ShapeError("meta_loss_bce: expected two probabilities");
  for (double v : p.data()) {
    if (!(v > 0.0 && v < 1.0)) throw DomainError("meta_loss_bce: probability " + std::to_string(v) + " not in (0, 1)");
  }
  ad::Tape& t = p.tape();
  const ad::Value yv = t.constant({y[0], y[1]}, p.shape());
  const ad::Value ny = t.constant({1.0 - y[0], 1.0 - y[1]}, p.shape());
  return ad::neg(ad::sum(yv * ad::log(p) + ny * ad::log(ad::affine(p, -1.0, 1.0))));
}

double meta_loss_bce(const std::array<double, 2>& p, const std::array<double, 2>& y) {
  double l = 0.0;
  for (int i = 0; i < 2; ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0)) throw DomainError("meta_loss_bce: probability not in (0, 1)");
    l -= y[i] * std::log(p[i]) + (1.0 - y[i]) * std::log(1.0 - p[i]);
  }
  return l;
}

ad::Value cue_loss_from_scores(ad::Value scores, Side label) {
  return meta_loss_bce(ad::clamp(ad::sigmoid(scores), 1e-7, 1.0 - 1e-7), one_hot(label));
}

Side decide(double score_right, double score_left) { return score_right > score_left ? Side::Right : Side::Left; }

void write_raster_csv(std::ostream& os, const CueEpisode& ep) {
  os << "step,neuron,spike\n";
  std::size_t step = 0;
  for (const auto& tr : ep.trials) {
    for (std::size_t t = 0; t < tr.steps; ++t, ++step) {
      for (std::size_t i = 0; i < tr.n_sensory; ++i) os << step << ',' << i << ',' << int(tr.spike(t, i)) << '\n';
    }
  }
}

}  // namespace metaplast::tasks
