#pragma once

// Training configuration and its text form.
//
// The file format is INI: "[section]" headers followed by "key = value"
// lines; '#' and ';' start comments. Every field has a default and unknown
// keys are rejected. to_text() writes every field in a fixed order with
// round-trippable numbers, which is also what checkpoints store.

#include <cstdint>
#include <filesystem>
#include <string>

#include "metaplast/autodiff/ops.hpp"
#include "metaplast/networks.hpp"
#include "metaplast/neuron.hpp"
#include "metaplast/tasks.hpp"

namespace metaplast::harness {

enum class TaskKind { Cue, Character };
enum class OptimizerKind { Sgd, Adam };
enum class ReadoutWindow { Decision, Trial };

struct TrainConfig {
  // [train]
  TaskKind task = TaskKind::Cue;
  std::size_t batch_episodes = 64;
  std::size_t outer_updates = 1000;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 100;
  std::uint64_t eval_seed = 1000003;

  // [spike]
  ad::SpikeFunctionConfig spike;

  // [cue]
  tasks::CueEpisodeSpec cue;
  bool one_shot = true;
  ReadoutWindow readout_window = ReadoutWindow::Decision;
  double feedback_gain = 1.0;

  // [character]
  std::string manifest;
  bool augment = true;
  double test_frac = 0.2;
  std::uint64_t split_seed = 7;
  tasks::CharacterEpisodeSpec character;
  bool plastic = true;  // false: modulation forced to zero (ablation)
  neuron::NeuronParams input_neuron;
  double input_gain = 1.0;

  // [dp], [dp_hidden], [dp_output], [nm], [nm_neuron], [cnn]
  networks::DPSNNConfig dp;
  networks::NMSNNConfig nm;
  networks::CNNEncoderConfig cnn;

  // [readout]
  double readout_weight = 0.1;
  double readout_bias = 0.0;

  // Fills layer sizes that follow from the task and copies shared settings
  // into the nested network configs.
  void derive();
  void validate() const;
};

// Defaults for a task, with character-specific overrides applied.
TrainConfig default_config(TaskKind task = TaskKind::Cue);

// Defaults for the task named in the text, overlaid with its keys.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

// Overlays the keys of an INI text onto an existing configuration.
TrainConfig overlay_config(const std::string& text, TrainConfig base);

std::string read_text_file(const std::filesystem::path& path);

std::string to_text(const TrainConfig& cfg);

const char* to_string(TaskKind t);

}  // namespace metaplast::harness
