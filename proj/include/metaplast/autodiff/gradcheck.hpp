#pragma once

#include <functional>
#include <string>

#include "metaplast/autodiff/tape.hpp"
#include "metaplast/autodiff/tensor.hpp"

namespace metaplast::ad {

// A scalar function of named parameters, built on the tape it is handed.
using Program = std::function<Value(Tape&, const Bindings&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;  // number of scalar parameters perturbed
};

// Forward value of `program`; `smooth` forces logistic spikes.
double evaluate(const Program& program, const ParamSet& params, bool smooth);

// Reverse-mode gradient of every learnable parameter (zeros where unreachable).
GradientMap gradients(const Program& program, const ParamSet& params, bool smooth, double* loss = nullptr);

// Compares reverse-mode gradients with central differences
//   (f(p + eps) - f(p - eps)) / (2 eps)
// over every learnable scalar and returns the largest
//   |numeric - analytic| / (|analytic| + 1e-12).
// Throws NonDeterministicProgramError if two identical forward passes differ.
// With enforce_smooth the tape forces smooth spikes; a hard-threshold program
// is not expected to pass, since the surrogate is not the true derivative.
GradCheckReport finite_difference_check(const Program& program, const ParamSet& params, double eps = 1e-4,
                                        bool enforce_smooth = true);

}  // namespace metaplast::ad
