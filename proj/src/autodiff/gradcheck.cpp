#include "metaplast/autodiff/gradcheck.hpp"

#include <cmath>
#include <cstring>

#include "metaplast/errors.hpp"

namespace metaplast::ad {

double evaluate(const Program& program, const ParamSet& params, bool smooth) {
  Tape tape(false);
  tape.force_smooth_spikes(smooth);
  const Bindings b = bind(tape, params);
  const Value loss = program(tape, b);
  if (!loss.shape().is_scalar()) throw NonScalarLossError("program returned non-scalar of shape " + to_string(loss.shape()));
  return loss.item();
}

GradientMap gradients(const Program& program, const ParamSet& params, bool smooth, double* loss) {
  Tape tape(true);
  tape.force_smooth_spikes(smooth);
  const Bindings b = bind(tape, params);
  const Value l = program(tape, b);
  if (loss) *loss = l.item();
  GradientMap g = tape.backward(l);
  for (const auto& [name, e] : params.entries()) {
    if (e.learnable && g.count(name) == 0) g[name].assign(e.tensor.data.size(), 0.0);
  }
  return g;
}

GradCheckReport finite_difference_check(const Program& program, const ParamSet& params, double eps,
                                        bool enforce_smooth) {
  const double first = evaluate(program, params, enforce_smooth);
  const double second = evaluate(program, params, enforce_smooth);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw NonDeterministicProgramError("program returned " + std::to_string(first) + " then " +
                                       std::to_string(second) + " for identical inputs");
  }
  const GradientMap analytic = gradients(program, params, enforce_smooth);

  GradCheckReport report;
  ParamSet probe = params;
  for (const auto& [name, e] : params.entries()) {
    if (!e.learnable) continue;
    std::vector<double>& data = probe.at(name).data;
    const std::vector<double>& grad = analytic.at(name);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + eps;
      const double up = evaluate(program, probe, enforce_smooth);
      data[i] = orig - eps;
      const double down = evaluate(program, probe, enforce_smooth);
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double rel = std::abs(numeric - grad[i]) / (std::abs(grad[i]) + 1e-12);
      ++report.checked;
      if (rel > report.max_rel_error || std::isnan(rel)) {
        report.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        report.worst_param = name;
        report.worst_index = i;
        report.analytic = grad[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace metaplast::ad
