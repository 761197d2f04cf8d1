#pragma once

// Random small spiking programs with plasticity, used to check reverse-mode
// gradients against finite differences. Each program draws its own layer
// sizes (at most 10 neurons), length (at most 50 steps), neuron model, STDP
// rule, weight dependence, trace form, modulation indexing and eligibility
// path.

#include <cstdint>
#include <string>
#include <vector>

#include "metaplast/autodiff/gradcheck.hpp"

namespace metaplast::harness {

struct RandomProgram {
  std::string description;
  ad::ParamSet params;
  ad::Program program;
};

RandomProgram random_program(std::uint64_t seed, std::size_t max_neurons = 10, std::size_t max_steps = 50);

struct GradSuiteEntry {
  std::string description;
  ad::GradCheckReport report;
  bool passed = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double worst = 0.0;
  std::size_t passed = 0;
  bool all_passed() const { return passed == entries.size(); }
};

GradSuiteResult run_gradcheck_suite(std::size_t n_programs, std::uint64_t seed, double eps = 1e-4,
                                    double tolerance = 1e-4, std::size_t max_neurons = 10,
                                    std::size_t max_steps = 50);

}  // namespace metaplast::harness
