#pragma once

// Outer-loop parameter set ω and the inner loop: one episode simulated from
// a fresh inner state, returning the meta-loss (and its gradient in train
// mode).

#include <cstdint>
#include <random>
#include <vector>

#include "metaplast/autodiff/tape.hpp"
#include "metaplast/autodiff/tensor.hpp"
#include "metaplast/harness/config.hpp"
#include "metaplast/tasks.hpp"

namespace metaplast::harness {

enum class Mode { TrainGrad, Eval };

// Initial ω for the configured task.
ad::ParamSet init_params(const TrainConfig& cfg);

// Projects constrained entries of ω back into their valid ranges.
void apply_constraints(ad::ParamSet& ps, const TrainConfig& cfg);

struct EpisodeOptions {
  bool zero_modulation = false;  // NM output replaced by zeros
  bool record_weights = false;   // keep initial/final plastic weights
  std::uint64_t tie_break = 0;   // picks among equal character-slot scores
};

struct EpisodeResult {
  double loss = 0.0;
  std::size_t prediction = 0;  // cue: 0 right, 1 left; character: slot
  std::size_t target = 0;
  bool correct = false;
  std::vector<double> scores;
  ad::GradientMap grads;  // train mode only; every learnable entry present
  // inner-state summary
  double hidden_rate = 0.0;  // mean hidden spikes per neuron per step
  double output_rate = 0.0;
  double nm_rate = 0.0;  // NM-SNN second layer, over the steps it ran
  double weight_drift = 0.0;  // max |W_final - W_initial|
  std::vector<double> w_initial, w_final;
};

EpisodeResult run_cue_episode(const ad::ParamSet& ps, const TrainConfig& cfg, const tasks::CueEpisode& ep, Mode mode,
                              const EpisodeOptions& opt = {});

EpisodeResult run_character_episode(const ad::ParamSet& ps, const TrainConfig& cfg, const tasks::CharacterEpisode& ep,
                                    Mode mode, const EpisodeOptions& opt = {});

// Task data that outlives single episodes (decoded images).
struct TaskData {
  tasks::ImageSet train;
  tasks::ImageSet test;
};

TaskData load_task_data(const TrainConfig& cfg);

enum class Split { Train, Test };

// Builds the episode for `seed` and runs it.
EpisodeResult run_seeded_episode(const ad::ParamSet& ps, const TrainConfig& cfg, const TaskData& data,
                                 std::uint64_t seed, Mode mode, Split split, const EpisodeOptions& opt = {});

}  // namespace metaplast::harness
