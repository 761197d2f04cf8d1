#pragma once

// Outer loop: batched episodes, gradient averaging, optimiser steps,
// metrics and checkpoints. Also evaluation and the cue-count sweep.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "metaplast/harness/checkpoint.hpp"
#include "metaplast/harness/config.hpp"
#include "metaplast/harness/model.hpp"

namespace metaplast::harness {

struct MetricsRecord {
  std::uint64_t update = 0;
  double loss = 0.0;       // mean meta-loss over the batch
  double accuracy = 0.0;   // test-trial accuracy over the batch (fresh episodes)
  double grad_norm = 0.0;  // global norm of the averaged gradient, before clipping
  double hidden_rate = 0.0;
  double wall_time = 0.0;  // seconds since the run (or resume) started

  std::string to_json(bool with_time = true) const;
  static MetricsRecord from_json(const std::string& line);
};

struct BatchResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double hidden_rate = 0.0;
  ad::GradientMap grads;  // averaged
};

// Runs one episode per seed across `workers` threads; results are merged in
// seed order so the sum does not depend on the thread count.
BatchResult run_batch(const ad::ParamSet& ps, const TrainConfig& cfg, const TaskData& data,
                      const std::vector<std::uint64_t>& seeds, Mode mode, Split split, std::size_t workers,
                      const EpisodeOptions& opt = {});

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::size_t workers = 1;
  std::optional<std::filesystem::path> resume;
  std::ostream* log = nullptr;  // JSON lines echoed here as well
  // Stop after this many updates in this invocation (tests interrupt runs).
  std::optional<std::uint64_t> stop_after;
  std::function<void(const MetricsRecord&)> on_record;
};

Checkpoint new_checkpoint(const TrainConfig& cfg);

// Returns the checkpoint reached (the final one unless stop_after cut in).
Checkpoint train(const TrainConfig& cfg, const TrainOptions& opt);

struct EvalResult {
  std::size_t episodes = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double ci_half_width = 0.0;  // 95% normal-approximation interval
  double mean_loss = 0.0;
  std::vector<int> outcomes;  // per episode, 1 correct
};

// Fresh episodes from cfg.eval_seed (test split for the character task).
EvalResult evaluate(const ad::ParamSet& ps, const TrainConfig& cfg, const TaskData& data, std::size_t n_episodes,
                    std::size_t workers = 1, const EpisodeOptions& opt = {});

// Throws ShapeError unless `ps` has exactly the entries and shapes `cfg` implies.
void check_compatible(const ad::ParamSet& ps, const TrainConfig& cfg);

struct SweepRow {
  std::size_t n_cues = 0;
  EvalResult result;
};

std::vector<SweepRow> sweep_cues(const ad::ParamSet& ps, TrainConfig cfg, std::size_t m_min, std::size_t m_max,
                                 std::size_t n_episodes, std::size_t workers = 1);

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace metaplast::harness
