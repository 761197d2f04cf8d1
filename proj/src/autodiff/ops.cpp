#include "metaplast/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "metaplast/errors.hpp"

namespace metaplast::ad {

namespace {

std::string shape_msg(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b);
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (a.is_scalar()) return b;
  if (b.is_scalar()) return a;
  throw ShapeError(shape_msg(op, a, b));
}

// Element i of an operand that is either full-size or a broadcast scalar.
inline double at(std::span<const double> d, std::size_t i) { return d.size() == 1 ? d[0] : d[i]; }

// Grad slot of node `id`, allocated and zeroed on first use; nullptr when the
// node does not need a gradient.
double* slot(Tape& tape, NodeId id) {
  Node& n = tape.node(id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.shape.size(), 0.0);
  return n.grad.data();
}

// Adds g[i] into a slot that may be a broadcast scalar.
inline void add_into(double* dst, std::size_t dst_size, std::size_t i, double g) {
  if (dst_size == 1) {
    dst[0] += g;
  } else {
    dst[i] += g;
  }
}

Value unary(OpKind kind, Value a, std::vector<double> out, const Attrs& attr = {}) {
  const Value in[] = {a};
  return a.tape().record(kind, in, std::move(out), a.shape(), attr);
}

void require_vector(const char* op, const Value& v) {
  if (v.shape().cols != 1) throw ShapeError(std::string(op) + ": expected column vector, got " + to_string(v.shape()));
}

void require_same_tape(const Value& a, const Value& b) {
  if (&a.tape() != &b.tape()) throw Error("operands live on different tapes");
}

}  // namespace

void SpikeFunctionConfig::validate() const {
  if (!(surrogate_scale > 0.0) || !std::isfinite(surrogate_scale)) {
    throw ConfigError("spike function: surrogate scale must be positive");
  }
  if (!(surrogate_magnitude > 0.0) || !std::isfinite(surrogate_magnitude)) {
    throw ConfigError("spike function: surrogate magnitude must be positive");
  }
}

// ---------------------------------------------------------------------------
// Element-wise

Value add(Value a, Value b) {
  require_same_tape(a, b);
  const Shape s = broadcast_shape("add", a.shape(), b.shape());
  std::vector<double> out(s.size());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(da, i) + at(db, i);
  const Value in[] = {a, b};
  return a.tape().record(OpKind::Add, in, std::move(out), s);
}

Value sub(Value a, Value b) {
  require_same_tape(a, b);
  const Shape s = broadcast_shape("sub", a.shape(), b.shape());
  std::vector<double> out(s.size());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(da, i) - at(db, i);
  const Value in[] = {a, b};
  return a.tape().record(OpKind::Sub, in, std::move(out), s);
}

Value mul(Value a, Value b) {
  require_same_tape(a, b);
  const Shape s = broadcast_shape("mul", a.shape(), b.shape());
  std::vector<double> out(s.size());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(da, i) * at(db, i);
  const Value in[] = {a, b};
  return a.tape().record(OpKind::Mul, in, std::move(out), s);
}

Value affine(Value a, double scale, double shift) {
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = scale * d[i] + shift;
  return unary(OpKind::Affine, a, std::move(out), Attrs{scale, shift});
}

Value exp(Value a) {
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = std::exp(d[i]);
  return unary(OpKind::Exp, a, std::move(out));
}

Value log(Value a) {
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(d[i] > 0.0)) throw DivergenceError("log of non-positive value " + std::to_string(d[i]));
    out[i] = std::log(d[i]);
  }
  return unary(OpKind::Log, a, std::move(out));
}

Value sigmoid(Value a) {
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-d[i]));
  return unary(OpKind::Sigmoid, a, std::move(out));
}

Value relu(Value a) {
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] > 0.0 ? d[i] : 0.0;
  return unary(OpKind::Relu, a, std::move(out));
}

Value clamp(Value a, double lo, double hi) {
  if (lo > hi) throw Error("clamp: lo > hi");
  const auto d = a.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = std::clamp(d[i], lo, hi);
  return unary(OpKind::Clamp, a, std::move(out), Attrs{lo, hi});
}

Value pow_clamped(Value base, double exponent) {
  const auto d = base.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = exponent == 0.0 ? 1.0 : std::pow(std::max(d[i], 0.0), exponent);
  return unary(OpKind::PowClamped, base, std::move(out), Attrs{exponent});
}

// ---------------------------------------------------------------------------
// Structural

Value sum(Value a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  const Value in[] = {a};
  return a.tape().record(OpKind::Sum, in, {acc}, Shape{});
}

Value concat(std::span<const Value> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::size_t total = 0;
  for (const Value& p : parts) {
    require_vector("concat", p);
    require_same_tape(parts[0], p);
    total += p.size();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const Value& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return parts[0].tape().record(OpKind::Concat, parts, std::move(out), Shape{total, 1});
}

Value slice(Value a, std::size_t offset, std::size_t length) {
  if (offset + length > a.size()) throw ShapeError("slice: range exceeds input of size " + std::to_string(a.size()));
  const auto d = a.data();
  std::vector<double> out(d.begin() + static_cast<std::ptrdiff_t>(offset),
                          d.begin() + static_cast<std::ptrdiff_t>(offset + length));
  const Value in[] = {a};
  return a.tape().record(OpKind::Slice, in, std::move(out), Shape{length, 1},
                         Attrs{static_cast<double>(offset)});
}

// ---------------------------------------------------------------------------
// Linear algebra

Value matvec(Value w, Value x) {
  require_same_tape(w, x);
  require_vector("matvec", x);
  const Shape ws = w.shape();
  if (ws.rows != x.size()) throw ShapeError(shape_msg("matvec", ws, x.shape()));
  const auto dw = w.data();
  const auto dx = x.data();
  std::vector<double> out(ws.cols, 0.0);
  for (std::size_t i = 0; i < ws.rows; ++i) {
    const double xi = dx[i];
    if (xi == 0.0) continue;
    const double* row = dw.data() + i * ws.cols;
    for (std::size_t j = 0; j < ws.cols; ++j) out[j] += row[j] * xi;
  }
  const Value in[] = {w, x};
  return w.tape().record(OpKind::MatVec, in, std::move(out), Shape{ws.cols, 1});
}

Value masked_matvec(Value w, Value mask, Value x) {
  require_same_tape(w, x);
  require_same_tape(w, mask);
  require_vector("masked_matvec", x);
  const Shape ws = w.shape();
  if (ws.rows != x.size() || !(mask.shape() == ws)) throw ShapeError(shape_msg("masked_matvec", ws, x.shape()));
  if (mask.requires_grad()) throw Error("masked_matvec: mask must be constant");
  const auto dw = w.data();
  const auto dm = mask.data();
  const auto dx = x.data();
  std::vector<double> out(ws.cols, 0.0);
  for (std::size_t i = 0; i < ws.rows; ++i) {
    const double xi = dx[i];
    if (xi == 0.0) continue;
    const double* row = dw.data() + i * ws.cols;
    const double* mrow = dm.data() + i * ws.cols;
    for (std::size_t j = 0; j < ws.cols; ++j) out[j] += mrow[j] * row[j] * xi;
  }
  const Value in[] = {w, mask, x};
  return w.tape().record(OpKind::MaskedMatVec, in, std::move(out), Shape{ws.cols, 1});
}

Value outer(Value a, Value b) {
  require_same_tape(a, b);
  require_vector("outer", a);
  require_vector("outer", b);
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  const auto da = a.data();
  const auto db = b.data();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = da[i] * db[j];
  }
  const Value in[] = {a, b};
  return a.tape().record(OpKind::Outer, in, std::move(out), Shape{n, m});
}

// ---------------------------------------------------------------------------
// Neuron and synapse primitives

Value spike(Value v, double v_th, const SpikeFunctionConfig& cfg) {
  cfg.validate();
  const bool smooth = cfg.mode == SpikeMode::Smooth || v.tape().smooth_spikes_forced();
  const auto d = v.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = smooth ? 1.0 / (1.0 + std::exp(-(d[i] - v_th) / cfg.surrogate_scale)) : (d[i] > v_th ? 1.0 : 0.0);
  }
  return unary(OpKind::Spike, v, std::move(out),
               Attrs{v_th, smooth ? 1.0 : 0.0, cfg.surrogate_scale, cfg.surrogate_magnitude});
}

Value reset_gate(Value v, Value s, double v_rest) {
  require_same_tape(v, s);
  if (!(v.shape() == s.shape())) throw ShapeError(shape_msg("reset_gate", v.shape(), s.shape()));
  const auto dv = v.data();
  const auto ds = s.data();
  std::vector<double> out(dv.size());
  for (std::size_t i = 0; i < dv.size(); ++i) out[i] = dv[i] * (1.0 - ds[i]) + v_rest * ds[i];
  const Value in[] = {v, s};
  return v.tape().record(OpKind::ResetGate, in, std::move(out), v.shape(), Attrs{v_rest});
}

Value leaky_integrate(Value x, Value input, double alpha, double rest, double gain) {
  require_same_tape(x, input);
  if (!(x.shape() == input.shape())) throw ShapeError(shape_msg("leaky_integrate", x.shape(), input.shape()));
  const auto dx = x.data();
  const auto di = input.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = dx[i] - alpha * (dx[i] - rest) + gain * di[i];
  const Value in[] = {x, input};
  return x.tape().record(OpKind::LeakyIntegrate, in, std::move(out), x.shape(), Attrs{alpha, rest, gain});
}

Value trace_update(Value x, Value s, Value alpha, Value beta, bool saturating, double x_max) {
  require_same_tape(x, s);
  if (!(x.shape() == s.shape())) throw ShapeError(shape_msg("trace_update", x.shape(), s.shape()));
  if (!alpha.shape().is_scalar() && !(alpha.shape() == x.shape())) {
    throw ShapeError(shape_msg("trace_update(alpha)", alpha.shape(), x.shape()));
  }
  if (!beta.shape().is_scalar() && !(beta.shape() == x.shape())) {
    throw ShapeError(shape_msg("trace_update(beta)", beta.shape(), x.shape()));
  }
  const auto dx = x.data();
  const auto ds = s.data();
  const auto da = alpha.data();
  const auto db = beta.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double inc = saturating ? (x_max - dx[i]) * ds[i] : ds[i];
    out[i] = at(da, i) * dx[i] + at(db, i) * inc;
  }
  const Value in[] = {x, s, alpha, beta};
  return x.tape().record(OpKind::TraceUpdate, in, std::move(out), x.shape(),
                         Attrs{saturating ? 1.0 : 0.0, x_max});
}

Value decay_accumulate_outer(Value e, Value gamma, Value coef, Value a, Value b) {
  require_vector("decay_accumulate_outer", a);
  require_vector("decay_accumulate_outer", b);
  const Shape es = e.shape();
  if (es.rows != a.size() || es.cols != b.size()) throw ShapeError(shape_msg("decay_accumulate_outer", es, a.shape()));
  if (!gamma.shape().is_scalar()) throw ShapeError("decay_accumulate_outer: gamma must be scalar");
  if (!coef.shape().is_scalar() && !(coef.shape() == es)) {
    throw ShapeError(shape_msg("decay_accumulate_outer(coef)", coef.shape(), es));
  }
  const double g = gamma.data()[0];
  const auto de = e.data();
  const auto dc = coef.data();
  const auto da = a.data();
  const auto db = b.data();
  std::vector<double> out(es.size());
  for (std::size_t i = 0; i < es.rows; ++i) {
    const double ai = da[i];
    const std::size_t base = i * es.cols;
    if (ai == 0.0) {
      for (std::size_t j = 0; j < es.cols; ++j) out[base + j] = g * de[base + j];
      continue;
    }
    for (std::size_t j = 0; j < es.cols; ++j) out[base + j] = g * de[base + j] + at(dc, base + j) * ai * db[j];
  }
  const Value in[] = {e, gamma, coef, a, b};
  return e.tape().record(OpKind::DecayAccumulateOuter, in, std::move(out), es);
}

namespace {

std::size_t modulation_length(ModulationIndex index, const Shape& s) {
  switch (index) {
    case ModulationIndex::Global: return 1;
    case ModulationIndex::Post: return s.cols;
    case ModulationIndex::Pre: return s.rows;
  }
  return 0;
}

inline std::size_t modulation_slot(ModulationIndex index, std::size_t i, std::size_t j) {
  switch (index) {
    case ModulationIndex::Global: return 0;
    case ModulationIndex::Post: return j;
    case ModulationIndex::Pre: return i;
  }
  return 0;
}

}  // namespace

Value modulate(Value w, Value e_plus, Value e_minus, Value m_plus, Value m_minus, ModulationIndex index,
               double lo, double hi) {
  const Shape ws = w.shape();
  if (!(e_plus.shape() == ws) || !(e_minus.shape() == ws)) {
    throw ShapeError(shape_msg("modulate", ws, e_plus.shape()));
  }
  const std::size_t len = modulation_length(index, ws);
  if (m_plus.size() != len || m_minus.size() != len) {
    throw IndexingError("modulate: modulation length " + std::to_string(m_plus.size()) + "/" +
                        std::to_string(m_minus.size()) + " incompatible with weights " + to_string(ws) +
                        " (expected " + std::to_string(len) + ")");
  }
  if (lo > hi) throw Error("modulate: lo > hi");
  const auto dw = w.data();
  const auto dp = e_plus.data();
  const auto dm = e_minus.data();
  const auto mp = m_plus.data();
  const auto mm = m_minus.data();
  std::vector<double> out(ws.size());
  for (std::size_t i = 0; i < ws.rows; ++i) {
    for (std::size_t j = 0; j < ws.cols; ++j) {
      const std::size_t k = modulation_slot(index, i, j);
      const std::size_t e = i * ws.cols + j;
      out[e] = std::clamp(dw[e] + mp[k] * dp[e] + mm[k] * dm[e], lo, hi);
    }
  }
  const Value in[] = {w, e_plus, e_minus, m_plus, m_minus};
  return w.tape().record(OpKind::Modulate, in, std::move(out), ws,
                         Attrs{static_cast<double>(index), lo, hi});
}

Value log_softmax(Value a) {
  const auto d = a.data();
  if (d.empty()) throw ShapeError("log_softmax: empty input");
  const double mx = *std::max_element(d.begin(), d.end());
  double z = 0.0;
  for (double x : d) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] - lse;
  return unary(OpKind::LogSoftmax, a, std::move(out));
}

// ---------------------------------------------------------------------------
// Image encoder primitives

Value conv2d(Value x, Value w, Value b, const ConvGeometry& g) {
  const std::size_t k = g.kernel;
  const std::size_t cin = g.in_channels;
  if (x.shape().rows != cin || x.shape().cols != g.height * g.width) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " does not match geometry");
  }
  const std::size_t cout = w.shape().rows;
  if (w.shape().cols != cin * k * k) throw ShapeError("conv2d: kernel " + to_string(w.shape()) + " mismatch");
  if (b.size() != cout) throw ShapeError("conv2d: bias length mismatch");
  if (g.height + 2 * g.padding < k || g.width + 2 * g.padding < k) throw ShapeError("conv2d: kernel larger than input");
  const std::size_t oh = g.height + 2 * g.padding - k + 1;
  const std::size_t ow = g.width + 2 * g.padding - k + 1;
  const auto dx = x.data();
  const auto dw = w.data();
  const auto dbias = b.data();
  std::vector<double> out(cout * oh * ow);
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = dbias[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
              acc += dw[co * cin * k * k + ci * k * k + ky * k + kx] *
                     dx[ci * g.height * g.width + static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)];
            }
          }
        }
        out[co * oh * ow + oy * ow + ox] = acc;
      }
    }
  }
  const Value in[] = {x, w, b};
  return x.tape().record(OpKind::Conv2d, in, std::move(out), Shape{cout, oh * ow},
                         Attrs{static_cast<double>(cin), static_cast<double>(g.height), static_cast<double>(g.width),
                               static_cast<double>(k), static_cast<double>(g.padding)});
}

Value instance_norm(Value x, Value gamma, Value beta, double eps) {
  const std::size_t c = x.shape().rows;
  const std::size_t n = x.shape().cols;
  if (gamma.size() != c || beta.size() != c) throw ShapeError("instance_norm: affine length mismatch");
  const auto dx = x.data();
  const auto dg = gamma.data();
  const auto db = beta.data();
  std::vector<double> out(c * n);
  std::vector<double> saved(2 * c);
  for (std::size_t r = 0; r < c; ++r) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += dx[r * n + i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = dx[r * n + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    saved[2 * r] = mean;
    saved[2 * r + 1] = inv;
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = dg[r] * (dx[r * n + i] - mean) * inv + db[r];
  }
  const Value in[] = {x, gamma, beta};
  return x.tape().record(OpKind::InstanceNorm, in, std::move(out), x.shape(), Attrs{eps}, std::move(saved));
}

Value max_pool2x2(Value x, std::size_t height, std::size_t width) {
  const std::size_t c = x.shape().rows;
  if (x.shape().cols != height * width || height % 2 != 0 || width % 2 != 0) {
    throw ShapeError("max_pool2x2: input " + to_string(x.shape()) + " does not match even geometry");
  }
  const std::size_t oh = height / 2;
  const std::size_t ow = width / 2;
  const auto dx = x.data();
  std::vector<double> out(c * oh * ow);
  std::vector<double> arg(c * oh * ow);
  for (std::size_t r = 0; r < c; ++r) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = r * height * width + (2 * oy) * width + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dxx = 0; dxx < 2; ++dxx) {
            const std::size_t idx = r * height * width + (2 * oy + dy) * width + 2 * ox + dxx;
            if (dx[idx] > dx[best]) best = idx;
          }
        }
        out[r * oh * ow + oy * ow + ox] = dx[best];
        arg[r * oh * ow + oy * ow + ox] = static_cast<double>(best);
      }
    }
  }
  const Value in[] = {x};
  return x.tape().record(OpKind::MaxPool2x2, in, std::move(out), Shape{c, oh * ow},
                         Attrs{static_cast<double>(height), static_cast<double>(width)}, std::move(arg));
}

// ---------------------------------------------------------------------------
// Backward rules

namespace {

void backward_binary(Tape& tape, const Node& n) {
  const Node& a = tape.node(n.inputs[0]);
  const Node& b = tape.node(n.inputs[1]);
  const std::size_t na = a.shape.size();
  const std::size_t nb = b.shape.size();
  double* ga = slot(tape, n.inputs[0]);
  double* gb = slot(tape, n.inputs[1]);
  const std::span<const double> da = a.data;
  const std::span<const double> db = b.data;
  for (std::size_t i = 0; i < n.grad.size(); ++i) {
    const double g = n.grad[i];
    switch (n.kind) {
      case OpKind::Add:
        if (ga) add_into(ga, na, i, g);
        if (gb) add_into(gb, nb, i, g);
        break;
      case OpKind::Sub:
        if (ga) add_into(ga, na, i, g);
        if (gb) add_into(gb, nb, i, -g);
        break;
      case OpKind::Mul:
        if (ga) add_into(ga, na, i, g * at(db, i));
        if (gb) add_into(gb, nb, i, g * at(da, i));
        break;
      default: break;
    }
  }
}

void backward_unary(Tape& tape, const Node& n) {
  double* ga = slot(tape, n.inputs[0]);
  if (!ga) return;
  const std::vector<double>& x = tape.node(n.inputs[0]).data;
  const std::vector<double>& y = n.data;
  const std::vector<double>& g = n.grad;
  const std::size_t len = g.size();
  switch (n.kind) {
    case OpKind::Affine:
      for (std::size_t i = 0; i < len; ++i) ga[i] += n.attr[0] * g[i];
      break;
    case OpKind::Exp:
      for (std::size_t i = 0; i < len; ++i) ga[i] += y[i] * g[i];
      break;
    case OpKind::Log:
      for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] / x[i];
      break;
    case OpKind::Sigmoid:
      for (std::size_t i = 0; i < len; ++i) ga[i] += y[i] * (1.0 - y[i]) * g[i];
      break;
    case OpKind::Relu:
      for (std::size_t i = 0; i < len; ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
      break;
    case OpKind::Clamp:
      for (std::size_t i = 0; i < len; ++i) ga[i] += (x[i] >= n.attr[0] && x[i] <= n.attr[1]) ? g[i] : 0.0;
      break;
    case OpKind::PowClamped: {
      const double p = n.attr[0];
      if (p == 0.0) break;
      for (std::size_t i = 0; i < len; ++i) {
        if (x[i] > 0.0) ga[i] += p * std::pow(x[i], p - 1.0) * g[i];
      }
      break;
    }
    case OpKind::Spike: {
      const double v_th = n.attr[0];
      const bool smooth = n.attr[1] != 0.0;
      const double scale = n.attr[2];
      const double mag = n.attr[3];
      for (std::size_t i = 0; i < len; ++i) {
        const double d = smooth ? y[i] * (1.0 - y[i]) / scale : mag * std::exp(-std::abs(x[i] - v_th) / scale);
        ga[i] += d * g[i];
      }
      break;
    }
    case OpKind::LogSoftmax: {
      double gs = 0.0;
      for (double v : g) gs += v;
      for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] - std::exp(y[i]) * gs;
      break;
    }
    default: break;
  }
}

void backward_matvec(Tape& tape, const Node& n, bool masked) {
  const NodeId wid = n.inputs[0];
  const NodeId xid = masked ? n.inputs[2] : n.inputs[1];
  const Node& w = tape.node(wid);
  const Node& x = tape.node(xid);
  const std::vector<double>* mask = masked ? &tape.node(n.inputs[1]).data : nullptr;
  double* gw = slot(tape, wid);
  double* gx = slot(tape, xid);
  const std::size_t rows = w.shape.rows;
  const std::size_t cols = w.shape.cols;
  const double* g = n.grad.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double xi = x.data[i];
    const double* wr = w.data.data() + i * cols;
    const double* mr = masked ? mask->data() + i * cols : nullptr;
    if (gw && xi != 0.0) {
      double* gwr = gw + i * cols;
      if (masked) {
        for (std::size_t j = 0; j < cols; ++j) gwr[j] += mr[j] * g[j] * xi;
      } else {
        for (std::size_t j = 0; j < cols; ++j) gwr[j] += g[j] * xi;
      }
    }
    if (gx) {
      double acc = 0.0;
      if (masked) {
        for (std::size_t j = 0; j < cols; ++j) acc += mr[j] * wr[j] * g[j];
      } else {
        for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * g[j];
      }
      gx[i] += acc;
    }
  }
}

void backward_decay_accumulate_outer(Tape& tape, const Node& n) {
  const Node& e = tape.node(n.inputs[0]);
  const Node& coef = tape.node(n.inputs[2]);
  const Node& a = tape.node(n.inputs[3]);
  const Node& b = tape.node(n.inputs[4]);
  const double gamma = tape.node(n.inputs[1]).data[0];
  double* ge = slot(tape, n.inputs[0]);
  double* ggamma = slot(tape, n.inputs[1]);
  double* gc = slot(tape, n.inputs[2]);
  double* ga = slot(tape, n.inputs[3]);
  double* gb = slot(tape, n.inputs[4]);
  const std::size_t rows = e.shape.rows;
  const std::size_t cols = e.shape.cols;
  const bool coef_scalar = coef.shape.is_scalar();
  const std::span<const double> dc = coef.data;
  const double* g = n.grad.data();
  double gamma_acc = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t base = i * cols;
    const double ai = a.data[i];
    if (ge) {
      for (std::size_t j = 0; j < cols; ++j) ge[base + j] += gamma * g[base + j];
    }
    if (ggamma) {
      for (std::size_t j = 0; j < cols; ++j) gamma_acc += g[base + j] * e.data[base + j];
    }
    if (gc && ai != 0.0) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double v = g[base + j] * ai * b.data[j];
        if (coef_scalar) {
          gc[0] += v;
        } else {
          gc[base + j] += v;
        }
      }
    }
    if (ga) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += g[base + j] * at(dc, base + j) * b.data[j];
      ga[i] += acc;
    }
    if (gb && ai != 0.0) {
      for (std::size_t j = 0; j < cols; ++j) gb[j] += g[base + j] * at(dc, base + j) * ai;
    }
  }
  if (ggamma) ggamma[0] += gamma_acc;
}

void backward_modulate(Tape& tape, const Node& n) {
  const auto index = static_cast<ModulationIndex>(static_cast<int>(n.attr[0]));
  const double lo = n.attr[1];
  const double hi = n.attr[2];
  const Node& w = tape.node(n.inputs[0]);
  const Node& ep = tape.node(n.inputs[1]);
  const Node& em = tape.node(n.inputs[2]);
  const Node& mp = tape.node(n.inputs[3]);
  const Node& mm = tape.node(n.inputs[4]);
  double* gw = slot(tape, n.inputs[0]);
  double* gep = slot(tape, n.inputs[1]);
  double* gem = slot(tape, n.inputs[2]);
  double* gmp = slot(tape, n.inputs[3]);
  double* gmm = slot(tape, n.inputs[4]);
  const std::size_t rows = w.shape.rows;
  const std::size_t cols = w.shape.cols;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t e = i * cols + j;
      const std::size_t k = modulation_slot(index, i, j);
      const double raw = w.data[e] + mp.data[k] * ep.data[e] + mm.data[k] * em.data[e];
      if (raw < lo || raw > hi) continue;
      const double g = n.grad[e];
      if (gw) gw[e] += g;
      if (gep) gep[e] += g * mp.data[k];
      if (gem) gem[e] += g * mm.data[k];
      if (gmp) gmp[k] += g * ep.data[e];
      if (gmm) gmm[k] += g * em.data[e];
    }
  }
}

void backward_conv2d(Tape& tape, const Node& n) {
  const auto cin = static_cast<std::size_t>(n.attr[0]);
  const auto h = static_cast<std::size_t>(n.attr[1]);
  const auto wd = static_cast<std::size_t>(n.attr[2]);
  const auto k = static_cast<std::size_t>(n.attr[3]);
  const auto pad = static_cast<std::size_t>(n.attr[4]);
  const Node& x = tape.node(n.inputs[0]);
  const Node& w = tape.node(n.inputs[1]);
  double* gx = slot(tape, n.inputs[0]);
  double* gw = slot(tape, n.inputs[1]);
  double* gb = slot(tape, n.inputs[2]);
  const std::size_t cout = n.shape.rows;
  const std::size_t oh = h + 2 * pad - k + 1;
  const std::size_t ow = wd + 2 * pad - k + 1;
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double g = n.grad[co * oh * ow + oy * ow + ox];
        if (g == 0.0) continue;
        if (gb) gb[co] += g;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
              const std::size_t wi = co * cin * k * k + ci * k * k + ky * k + kx;
              const std::size_t xi = ci * h * wd + static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix);
              if (gw) gw[wi] += g * x.data[xi];
              if (gx) gx[xi] += g * w.data[wi];
            }
          }
        }
      }
    }
  }
}

void backward_instance_norm(Tape& tape, const Node& n) {
  const Node& x = tape.node(n.inputs[0]);
  const Node& gamma = tape.node(n.inputs[1]);
  double* gx = slot(tape, n.inputs[0]);
  double* gg = slot(tape, n.inputs[1]);
  double* gbeta = slot(tape, n.inputs[2]);
  const std::size_t c = n.shape.rows;
  const std::size_t len = n.shape.cols;
  const double nf = static_cast<double>(len);
  for (std::size_t r = 0; r < c; ++r) {
    const double mean = n.saved[2 * r];
    const double inv = n.saved[2 * r + 1];
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double xhat = (x.data[r * len + i] - mean) * inv;
      const double g = n.grad[r * len + i];
      if (gg) gg[r] += g * xhat;
      if (gbeta) gbeta[r] += g;
      const double dxhat = g * gamma.data[r];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    if (!gx) continue;
    for (std::size_t i = 0; i < len; ++i) {
      const double xhat = (x.data[r * len + i] - mean) * inv;
      const double dxhat = n.grad[r * len + i] * gamma.data[r];
      gx[r * len + i] += inv / nf * (nf * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
    }
  }
}

}  // namespace

void backward_node(Tape& tape, const Node& n) {
  switch (n.kind) {
    case OpKind::Leaf: return;
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: backward_binary(tape, n); return;
    case OpKind::Affine:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Sigmoid:
    case OpKind::Relu:
    case OpKind::Clamp:
    case OpKind::PowClamped:
    case OpKind::Spike:
    case OpKind::LogSoftmax: backward_unary(tape, n); return;
    case OpKind::Sum: {
      double* ga = slot(tape, n.inputs[0]);
      if (!ga) return;
      const std::size_t len = tape.node(n.inputs[0]).shape.size();
      for (std::size_t i = 0; i < len; ++i) ga[i] += n.grad[0];
      return;
    }
    case OpKind::Concat: {
      std::size_t off = 0;
      for (NodeId id : n.inputs) {
        const std::size_t len = tape.node(id).shape.size();
        if (double* g = slot(tape, id)) {
          for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[off + i];
        }
        off += len;
      }
      return;
    }
    case OpKind::Slice: {
      double* ga = slot(tape, n.inputs[0]);
      if (!ga) return;
      const auto off = static_cast<std::size_t>(n.attr[0]);
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga[off + i] += n.grad[i];
      return;
    }
    case OpKind::MatVec: backward_matvec(tape, n, false); return;
    case OpKind::MaskedMatVec: backward_matvec(tape, n, true); return;
    case OpKind::Outer: {
      const Node& a = tape.node(n.inputs[0]);
      const Node& b = tape.node(n.inputs[1]);
      double* ga = slot(tape, n.inputs[0]);
      double* gb = slot(tape, n.inputs[1]);
      const std::size_t m = b.shape.size();
      for (std::size_t i = 0; i < a.shape.size(); ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const double g = n.grad[i * m + j];
          if (ga) ga[i] += g * b.data[j];
          if (gb) gb[j] += g * a.data[i];
        }
      }
      return;
    }
    case OpKind::ResetGate: {
      const Node& v = tape.node(n.inputs[0]);
      const Node& s = tape.node(n.inputs[1]);
      double* gv = slot(tape, n.inputs[0]);
      double* gs = slot(tape, n.inputs[1]);
      const double v_rest = n.attr[0];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        if (gv) gv[i] += n.grad[i] * (1.0 - s.data[i]);
        if (gs) gs[i] += n.grad[i] * (v_rest - v.data[i]);
      }
      return;
    }
    case OpKind::LeakyIntegrate: {
      double* gx = slot(tape, n.inputs[0]);
      double* gi = slot(tape, n.inputs[1]);
      const double alpha = n.attr[0];
      const double gain = n.attr[2];
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        if (gx) gx[i] += (1.0 - alpha) * n.grad[i];
        if (gi) gi[i] += gain * n.grad[i];
      }
      return;
    }
    case OpKind::TraceUpdate: {
      const Node& x = tape.node(n.inputs[0]);
      const Node& s = tape.node(n.inputs[1]);
      const Node& al = tape.node(n.inputs[2]);
      const Node& be = tape.node(n.inputs[3]);
      double* gx = slot(tape, n.inputs[0]);
      double* gs = slot(tape, n.inputs[1]);
      double* ga = slot(tape, n.inputs[2]);
      double* gbeta = slot(tape, n.inputs[3]);
      const bool saturating = n.attr[0] != 0.0;
      const double x_max = n.attr[1];
      const std::size_t na = al.shape.size();
      const std::size_t nb = be.shape.size();
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const double g = n.grad[i];
        const double a = at(al.data, i);
        const double b = at(be.data, i);
        const double inc = saturating ? (x_max - x.data[i]) * s.data[i] : s.data[i];
        if (gx) gx[i] += g * (a - (saturating ? b * s.data[i] : 0.0));
        if (gs) gs[i] += g * b * (saturating ? (x_max - x.data[i]) : 1.0);
        if (ga) add_into(ga, na, i, g * x.data[i]);
        if (gbeta) add_into(gbeta, nb, i, g * inc);
      }
      return;
    }
    case OpKind::DecayAccumulateOuter: backward_decay_accumulate_outer(tape, n); return;
    case OpKind::Modulate: backward_modulate(tape, n); return;
    case OpKind::Conv2d: backward_conv2d(tape, n); return;
    case OpKind::InstanceNorm: backward_instance_norm(tape, n); return;
    case OpKind::MaxPool2x2: {
      double* ga = slot(tape, n.inputs[0]);
      if (!ga) return;
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga[static_cast<std::size_t>(n.saved[i])] += n.grad[i];
      return;
    }
  }
}

}  // namespace metaplast::ad
