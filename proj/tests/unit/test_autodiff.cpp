#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "metaplast/autodiff/gradcheck.hpp"
#include "metaplast/autodiff/ops.hpp"
#include "metaplast/autodiff/tape.hpp"
#include "metaplast/autodiff/tensor.hpp"
#include "metaplast/errors.hpp"

using namespace metaplast;
using namespace metaplast::ad;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng, double scale = 1.0, double shift = 0.0) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor t(s);
  for (auto& x : t.data) x = shift + scale * d(rng);
  return t;
}

Tensor uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (auto& x : t.data) x = d(rng);
  return t;
}

}  // namespace

TEST_CASE("record appends nodes with their data") {
  Tape tape;
  Value a = tape.constant({1.0, 2.0}, {1, 2});
  Value b = tape.constant({10.0, 20.0}, {1, 2});
  Value c = a + b;
  CHECK(c.data()[0] == 11.0);
  CHECK(c.data()[1] == 22.0);
  CHECK(tape.size() == 3);
  CHECK(tape.node(c.id()).kind == OpKind::Add);
}

TEST_CASE("recording after backward is rejected") {
  Tape tape;
  Value w = tape.parameter("w", {1.0}, {});
  Value l = w * w;
  tape.backward(l);
  CHECK(tape.frozen());
  CHECK_THROWS_AS(w + w, FrozenTapeError);
  CHECK_THROWS_AS(tape.constant(1.0), FrozenTapeError);
}

TEST_CASE("unrolled chain keeps creation order") {
  Tape tape;
  Value x = tape.constant(0.5);
  const std::size_t before = tape.size();
  for (int t = 0; t < 1000; ++t) x = affine(x, 0.9, 0.1);
  CHECK(tape.size() - before == 1000);
  for (NodeId id = 1; id < tape.size(); ++id) {
    for (NodeId in : tape.node(id).inputs) CHECK(in < id);
  }
}

TEST_CASE("backward of a constant loss is empty") {
  Tape tape;
  Value c = tape.constant(3.0);
  CHECK(tape.backward(c).empty());
}

TEST_CASE("backward of w*x") {
  Tape tape;
  Value w = tape.parameter("w", {0.7}, {});
  Value x = tape.constant(2.0);
  auto g = tape.backward(w * x);
  REQUIRE(g.count("w") == 1);
  CHECK(g["w"][0] == 2.0);
}

TEST_CASE("non-scalar loss is rejected") {
  Tape tape;
  Value w = tape.parameter("w", {1.0, 2.0}, {1, 2});
  CHECK_THROWS_AS(tape.backward(w), NonScalarLossError);
}

TEST_CASE("duplicate parameter names are rejected") {
  Tape tape;
  tape.parameter("w", {1.0}, {});
  CHECK_THROWS(tape.parameter("w", {1.0}, {}));
}

TEST_CASE("hard spike threshold") {
  Tape tape;
  SpikeFunctionConfig cfg;
  Value v = tape.constant({1.0, 1.0 + 1e-12, 0.5, 3.0}, {1, 4});
  Value s = spike(v, 1.0, cfg);
  CHECK(s.data()[0] == 0.0);
  CHECK(s.data()[1] == 1.0);
  CHECK(s.data()[2] == 0.0);
  CHECK(s.data()[3] == 1.0);
}

TEST_CASE("smooth spike is one half at threshold") {
  Tape tape;
  SpikeFunctionConfig cfg;
  cfg.mode = SpikeMode::Smooth;
  Value v = tape.constant(1.0);
  CHECK(spike(v, 1.0, cfg).item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("surrogate derivative values") {
  SpikeFunctionConfig cfg;
  for (double v0 : {-5.0, 0.0, 0.9, 1.0, 1.3, 40.0}) {
    Tape tape;
    Value v = tape.parameter("v", {v0}, {});
    auto g = tape.backward(sum(spike(v, 1.0, cfg)));
    const double expect = 0.3 * std::exp(-std::abs(v0 - 1.0) / 0.25);
    CHECK(g["v"][0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(std::isfinite(g["v"][0]));
    CHECK(g["v"][0] >= 0.0);
  }
}

TEST_CASE("invalid spike config") {
  SpikeFunctionConfig cfg;
  cfg.surrogate_scale = 0.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("finite differences on w^2") {
  ParamSet ps;
  ps.add("w", Tensor({1, 1}, {3.0}));
  Program f = [](Tape&, const Bindings& b) { return b.at("w") * b.at("w"); };
  auto r = finite_difference_check(f, ps, 1e-4);
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.checked == 1);
}

TEST_CASE("non-deterministic programs are detected") {
  ParamSet ps;
  ps.add("w", Tensor({1, 1}, {1.0}));
  int calls = 0;
  Program f = [&calls](Tape& t, const Bindings& b) { return b.at("w") + t.constant(double(calls++)); };
  CHECK_THROWS_AS(finite_difference_check(f, ps), NonDeterministicProgramError);
}

TEST_CASE("hard-mode spiking program is not validated by finite differences") {
  // The surrogate is not the derivative of a step function: away from the
  // threshold the true derivative is 0 while the surrogate is not.
  ParamSet ps;
  ps.add("w", Tensor({1, 4}, {0.3, 0.6, 1.4, 2.0}));
  Program f = [](Tape&, const Bindings& b) {
    SpikeFunctionConfig cfg;
    return sum(spike(b.at("w"), 1.0, cfg));
  };
  auto r = finite_difference_check(f, ps, 1e-4, false);
  CHECK(r.max_rel_error > 1e-4);
  auto smooth = finite_difference_check(f, ps, 1e-4, true);
  CHECK(smooth.max_rel_error < 1e-4);
}

TEST_CASE("unreachable parameters get zero gradient") {
  ParamSet ps;
  ps.add("a", Tensor({1, 3}, {1.0, 2.0, 3.0}));
  ps.add("b", Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Program f = [](Tape&, const Bindings& b) { return sum(exp(b.at("a"))); };
  auto g = gradients(f, ps, true);
  REQUIRE(g.count("b") == 1);
  for (double x : g["b"]) CHECK(x == 0.0);
  CHECK(g["a"][2] == doctest::Approx(std::exp(3.0)));
}

TEST_CASE("clamp and relu pass gradient only inside") {
  Tape tape;
  Value x = tape.parameter("x", {-1.0, 0.5, 2.0}, {1, 3});
  auto g = tape.backward(sum(clamp(x, 0.0, 1.0) + relu(x)));
  CHECK(g["x"][0] == 0.0);
  CHECK(g["x"][1] == 2.0);
  CHECK(g["x"][2] == 1.0);
}

TEST_CASE("pow_clamped with zero exponent is one with zero gradient") {
  Tape tape;
  Value x = tape.parameter("x", {-1.0, 0.0, 2.0}, {1, 3});
  Value y = pow_clamped(x, 0.0);
  for (double v : y.data()) CHECK(v == 1.0);
  auto g = tape.backward(sum(y));
  for (double v : g["x"]) CHECK(v == 0.0);
}

TEST_CASE("shape mismatch on element-wise ops") {
  Tape tape;
  Value a = tape.zeros({1, 3});
  Value b = tape.zeros({1, 4});
  CHECK_THROWS_AS(a + b, ShapeError);
  CHECK_THROWS_AS(matvec(tape.zeros({3, 2}), b), ShapeError);
}

TEST_CASE("modulate rejects wrong signal length") {
  Tape tape;
  Value w = tape.zeros({3, 2});
  Value m = tape.zeros({1, 2});
  CHECK_THROWS_AS(modulate(w, w, w, m, m, ModulationIndex::Pre, 0.0, 1.0), IndexingError);
  CHECK_NOTHROW(modulate(w, w, w, m, m, ModulationIndex::Post, 0.0, 1.0));
}

TEST_CASE("log rejects non-positive input") {
  Tape tape;
  CHECK_THROWS_AS(log(tape.constant(0.0)), DivergenceError);
}

// One program per op family, plus a mixed composite; everything smooth.
TEST_CASE("gradient correctness over random composites") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 12; ++trial) {
    ParamSet ps;
    const std::size_t n = 3 + trial % 3;
    const std::size_t m = 2 + trial % 2;
    ps.add("w", randn({n, m}, rng, 0.5));
    ps.add("x", randn({n, 1}, rng, 0.5));
    ps.add("e", randn({n, m}, rng, 0.2));
    ps.add("g", uniform({1, 1}, rng, 0.5, 0.95));
    ps.add("mp", randn({n, 1}, rng, 0.5));
    ps.add("mm", randn({n, 1}, rng, 0.5));
    ps.add("mask", uniform({n, m}, rng, 0.0, 1.0), false);
    for (auto& v : ps.at("mask").data) v = v < 0.7 ? 1.0 : 0.0;
    ps.add("alpha", uniform({m, 1}, rng, 0.5, 0.9));
    ps.add("beta", uniform({1, 1}, rng, 0.5, 1.5));
    ps.add("base", uniform({n, 1}, rng, 0.5, 2.0));

    Program f = [n](Tape& tape, const Bindings& b) {
      SpikeFunctionConfig cfg;
      cfg.mode = SpikeMode::Smooth;
      Value w = b.at("w");
      Value x = b.at("x");
      Value y = masked_matvec(w, b.at("mask"), sigmoid(x));
      Value s = spike(affine(y, 2.0, 0.8), 1.0, cfg);
      Value v = reset_gate(y, s, 0.1);
      Value tr = trace_update(v, s, b.at("alpha"), b.at("beta"), true, 1.5);
      Value e = decay_accumulate_outer(b.at("e"), b.at("g"), w, x, tr);
      Value w2 = modulate(w, e, b.at("e"), b.at("mp"), b.at("mm"), ModulationIndex::Pre, -50.0, 50.0);
      Value z = matvec(w2, pow_clamped(b.at("base"), 1.5));
      Value li = leaky_integrate(z, tr, 0.3, 0.05, 0.7);
      Value parts[] = {li, slice(x, 1, n - 1)};
      Value cat = concat(parts);
      Value ls = log_softmax(cat);
      Value o = outer(x, tr);
      return sum(ls) * tape.constant(0.1) + sum(exp(affine(o, 0.3, 0.0))) + log(sum(sigmoid(z)));
    };
    auto r = finite_difference_check(f, ps, 1e-4);
    INFO("trial " << trial << " worst " << r.worst_param << "[" << r.worst_index << "] an=" << r.analytic
                  << " num=" << r.numeric);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradient correctness of image ops") {
  std::mt19937_64 rng(11);
  ParamSet ps;
  ps.add("img", uniform({1, 36}, rng, 0.0, 1.0));
  ps.add("k1", randn({2, 9}, rng, 0.4));
  ps.add("b1", randn({1, 2}, rng, 0.1));
  ps.add("gamma", uniform({1, 2}, rng, 0.5, 1.5));
  ps.add("beta", randn({1, 2}, rng, 0.1));
  ps.add("w", randn({18, 1}, rng, 0.3));
  Program f = [](Tape&, const Bindings& b) {
    ConvGeometry g{1, 6, 6, 3, 1};
    Value c = conv2d(b.at("img"), b.at("k1"), b.at("b1"), g);
    Value nrm = instance_norm(c, b.at("gamma"), b.at("beta"), 1e-5);
    Value p = max_pool2x2(sigmoid(nrm), 6, 6);
    // flatten by reshaping into a constant-shaped row through slices
    Value rows[] = {slice(p, 0, 9), slice(p, 9, 9)};
    Value flat = concat(rows);
    return sum(matvec(b.at("w"), flat));
  };
  auto r = finite_difference_check(f, ps, 1e-4);
  INFO("worst " << r.worst_param << "[" << r.worst_index << "] an=" << r.analytic << " num=" << r.numeric);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("linearity of gradients") {
  std::mt19937_64 rng(3);
  ParamSet ps;
  ps.add("w", randn({4, 3}, rng));
  ps.add("x", randn({4, 1}, rng));
  Program f = [](Tape&, const Bindings& b) { return sum(sigmoid(matvec(b.at("w"), b.at("x")))); };
  Program g = [](Tape&, const Bindings& b) { return sum(exp(affine(outer(b.at("x"), b.at("x")), 0.1, 0.0))); };
  const double a = 1.7, c = -0.6;
  Program h = [&](Tape& t, const Bindings& b) {
    return f(t, b) * t.constant(a) + g(t, b) * t.constant(c);
  };
  auto gf = gradients(f, ps, true);
  auto gg = gradients(g, ps, true);
  auto gh = gradients(h, ps, true);
  for (const auto& [name, vals] : gh) {
    for (std::size_t i = 0; i < vals.size(); ++i) {
      CHECK(std::abs(vals[i] - (a * gf[name][i] + c * gg[name][i])) < 1e-10);
    }
  }
}

TEST_CASE("replay determinism") {
  std::mt19937_64 rng(5);
  ParamSet ps;
  ps.add("w", randn({5, 5}, rng));
  ps.add("x", randn({5, 1}, rng));
  Program f = [](Tape&, const Bindings& b) {
    SpikeFunctionConfig cfg;
    Value v = b.at("x");
    Value acc = sum(v);
    for (int t = 0; t < 20; ++t) {
      v = leaky_integrate(v, matvec(b.at("w"), v), 0.1, 0.0, 0.5);
      Value s = spike(v, 1.0, cfg);
      v = reset_gate(v, s, 0.0);
      acc = acc + sum(s);
    }
    return acc + sum(v);
  };
  Tape t1, t2;
  Value l1 = f(t1, bind(t1, ps));
  Value l2 = f(t2, bind(t2, ps));
  REQUIRE(t1.size() == t2.size());
  for (NodeId i = 0; i < t1.size(); ++i) {
    CHECK(t1.node(i).kind == t2.node(i).kind);
    CHECK(t1.node(i).data == t2.node(i).data);
  }
  auto g1 = t1.backward(l1);
  auto g2 = t2.backward(l2);
  CHECK(g1 == g2);
}

TEST_CASE("grad-disabled tape records parameters as constants") {
  Tape tape(false);
  Value w = tape.parameter("w", {2.0}, {});
  CHECK_FALSE(w.requires_grad());
  CHECK((w * w).item() == 4.0);
}
