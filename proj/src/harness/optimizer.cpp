#include "metaplast/harness/optimizer.hpp"

#include <cmath>

#include "metaplast/errors.hpp"

namespace metaplast::harness {

OptimizerState init_optimizer(const ad::ParamSet& ps) {
  OptimizerState st;
  for (const auto& [name, e] : ps.entries()) {
    if (!e.learnable) continue;
    st.m[name].assign(e.tensor.data.size(), 0.0);
    st.v[name].assign(e.tensor.data.size(), 0.0);
  }
  return st;
}

void outer_update(ad::ParamSet& ps, const ad::GradientMap& grads, OptimizerState& state, const OptimizerSettings& s) {
  for (const auto& [name, e] : ps.entries()) {
    if (!e.learnable) continue;
    auto it = grads.find(name);
    if (it == grads.end()) throw MissingGradientError("no gradient for parameter " + name);
    if (it->second.size() != e.tensor.data.size()) throw ShapeError("gradient length mismatch for " + name);
  }
  for (const auto& [name, g] : grads) {
    if (!ps.contains(name) || !ps.learnable(name)) throw MissingGradientError("gradient for unknown parameter " + name);
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (auto& [name, e] : ps.entries()) {
    if (!e.learnable) continue;
    const auto& g = grads.at(name);
    auto& w = e.tensor.data;
    if (!s.adam) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= s.lr * g[i];
      continue;
    }
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != w.size()) m.assign(w.size(), 0.0);
    if (v.size() != w.size()) v.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      w[i] -= s.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
    }
  }
}

double global_norm(const ad::GradientMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double x : g) sq += x * x;
  }
  return std::sqrt(sq);
}

void clip_global_norm(ad::GradientMap& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = global_norm(grads);
  if (n <= max_norm) return;
  const double k = max_norm / n;
  for (auto& [name, g] : grads) {
    for (double& x : g) x *= k;
  }
}

}  // namespace metaplast::harness
