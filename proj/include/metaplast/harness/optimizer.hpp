#pragma once

// Outer-loop update rules: plain gradient descent and Adam.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metaplast/autodiff/tape.hpp"
#include "metaplast/autodiff/tensor.hpp"

namespace metaplast::harness {

struct OptimizerSettings {
  bool adam = true;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m, v;  // Adam moments, keyed like the params

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// Zero moments for every learnable entry.
OptimizerState init_optimizer(const ad::ParamSet& ps);

// Applies one step in place. `grads` must hold exactly the learnable entries
// of `ps`, each with matching length (MissingGradientError / ShapeError).
void outer_update(ad::ParamSet& ps, const ad::GradientMap& grads, OptimizerState& state, const OptimizerSettings& s);

double global_norm(const ad::GradientMap& grads);

// Rescales so the global norm is at most max_norm (no-op for max_norm <= 0).
void clip_global_norm(ad::GradientMap& grads, double max_norm);

}  // namespace metaplast::harness
