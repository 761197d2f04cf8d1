#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "metaplast/errors.hpp"
#include "metaplast/networks.hpp"

using namespace metaplast;
using namespace metaplast::networks;
using ad::Tape;
using ad::Tensor;
using ad::Value;

namespace {

Value vec(Tape& t, std::vector<double> x) {
  const std::size_t n = x.size();
  return t.constant(std::move(x), {n, 1});
}

DPSNNConfig small_dp() {
  DPSNNConfig c;
  c.n_input = 6;
  c.n_hidden = 8;
  c.n_output = 2;
  c.w_init_scale = 0.6;
  c.density = 1.0;
  c.inhib_frac = 0.0;
  c.w_out_scale = 1.0;
  c.w_out_mean = 0.3;
  return c;
}

NMSNNConfig small_nm(std::size_t n_in, std::size_t n_mod) {
  NMSNNConfig c;
  c.n_input = n_in;
  c.n_layer1 = 16;
  c.n_layer2 = 16;
  c.n_modulated = n_mod;
  c.w1_scale = 3.0;
  c.w2_scale = 3.0;
  c.readout_scale = 1.0;
  return c;
}

}  // namespace

TEST_CASE("full density without inhibition connects everything excitatorily") {
  std::mt19937_64 rng(3);
  const Connectivity c = init_connectivity(20, 48, 1.0, 0.0, 0.5, rng);
  CHECK(c.mask.count() == 960);
  CHECK(c.mask.inhibitory_fraction() == 0.0);
  for (std::size_t i = 0; i < 960; ++i) {
    CHECK(c.mask.sign.data[i] == 1.0);
    CHECK(c.weights.data[i] >= 0.0);
    CHECK(c.weights.data[i] <= 0.5);
  }
}

TEST_CASE("half density lands inside the binomial 99% interval around 480") {
  // Binomial(960, 0.5): sd = sqrt(240), 99% half-width 2.576 sd
  const double half = 2.576 * std::sqrt(240.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Connectivity c = init_connectivity(20, 48, 0.5, 0.2, 0.5, rng);
    CHECK(std::abs(static_cast<double>(c.mask.count()) - 480.0) <= half);
    CHECK(std::abs(c.mask.inhibitory_fraction() - 0.2) <= 0.05);
    for (std::size_t i = 0; i < 960; ++i) {
      if (c.mask.present.data[i] == 0.0) {
        CHECK(c.mask.sign.data[i] == 0.0);
        CHECK(c.weights.data[i] == 0.0);
      }
    }
  }
}

TEST_CASE("connectivity is a function of the seed") {
  std::mt19937_64 a(11), b(11), c(12);
  const Connectivity x = init_connectivity(20, 48, 0.5, 0.2, 0.5, a);
  const Connectivity y = init_connectivity(20, 48, 0.5, 0.2, 0.5, b);
  const Connectivity z = init_connectivity(20, 48, 0.5, 0.2, 0.5, c);
  CHECK(x.mask.sign.data == y.mask.sign.data);
  CHECK(x.weights.data == y.weights.data);
  CHECK(x.mask.sign.data != z.mask.sign.data);
}

TEST_CASE("invalid density is rejected") {
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(init_connectivity(2, 2, 1.5, 0.0, 0.5, rng), ConfigError);
  CHECK_THROWS_AS(init_connectivity(2, 2, 0.5, -0.1, 0.5, rng), ConfigError);
}

TEST_CASE("zero modulation for a whole episode leaves plastic weights at their start") {
  DPSNNConfig cfg = small_dp();
  ad::ParamSet ps;
  std::mt19937_64 rng(5);
  add_dpsnn_params(ps, cfg, rng);
  Tape t(false);
  const auto b = ad::bind(t, ps);
  const DPSNN dp = bind_dpsnn(t, b, cfg);
  DPState s = dpsnn_init(t, dp);
  const auto zero = zero_modulation(t, cfg.n_input);
  std::bernoulli_distribution fire(0.5);
  double hidden = 0.0;
  for (int k = 0; k < 200; ++k) {
    std::vector<double> in(cfg.n_input);
    for (auto& x : in) x = fire(rng);
    s = dpsnn_step(dp, s, vec(t, in), zero);
    for (double x : s.hidden.s.data()) hidden += x;
  }
  CHECK(hidden > 0.0);  // the rule had something to work with
  const auto w0 = ps.at("dp.w0").data;
  for (std::size_t i = 0; i < w0.size(); ++i) CHECK(s.w.data()[i] == w0[i]);
}

TEST_CASE("silent input produces no spikes and lets traces decay") {
  DPSNNConfig cfg = small_dp();
  ad::ParamSet ps;
  std::mt19937_64 rng(6);
  add_dpsnn_params(ps, cfg, rng);
  Tape t(false);
  const auto b = ad::bind(t, ps);
  const DPSNN dp = bind_dpsnn(t, b, cfg);
  DPState s = dpsnn_init(t, dp);
  s.x_pre = vec(t, std::vector<double>(cfg.n_input, 2.0));
  s.x_post = vec(t, std::vector<double>(cfg.n_hidden, 1.0));
  const auto zero = zero_modulation(t, cfg.n_input);
  const Value silent = t.zeros({cfg.n_input, 1});
  double prev = 2.0;
  for (int k = 0; k < 100; ++k) {
    s = dpsnn_step(dp, s, silent, zero);
    for (double x : s.hidden.s.data()) CHECK(x == 0.0);
    for (double x : s.output.s.data()) CHECK(x == 0.0);
    CHECK(s.x_pre.data()[0] < prev);
    prev = s.x_pre.data()[0];
  }
  CHECK(prev < 2.0 * std::pow(0.9, 99));
  for (double x : s.x_post.data()) CHECK(x < 1e-4);
}

TEST_CASE("a single driven input owns the eligibility after 25 steps") {
  DPSNNConfig cfg = small_dp();
  cfg.w_init_scale = 1.0;
  ad::ParamSet ps;
  std::mt19937_64 rng(7);
  add_dpsnn_params(ps, cfg, rng);
  for (auto& w : ps.at("dp.w0").data) w = 1.0;
  Tape t(false);
  const auto b = ad::bind(t, ps);
  const DPSNN dp = bind_dpsnn(t, b, cfg);
  DPState s = dpsnn_init(t, dp);
  const auto zero = zero_modulation(t, cfg.n_input);
  std::bernoulli_distribution fire(0.75);
  for (int k = 0; k < 25; ++k) {
    std::vector<double> in(cfg.n_input, 0.0);
    in[2] = fire(rng);
    s = dpsnn_step(dp, s, vec(t, in), zero);
  }
  std::vector<double> row(cfg.n_input, 0.0);
  for (std::size_t i = 0; i < cfg.n_input; ++i) {
    for (std::size_t j = 0; j < cfg.n_hidden; ++j) {
      const std::size_t k = i * cfg.n_hidden + j;
      row[i] += std::abs(s.e.e_plus.data()[k]) + std::abs(s.e.e_minus.data()[k]);
    }
  }
  CHECK(row[2] > 0.0);
  for (std::size_t i = 0; i < cfg.n_input; ++i) {
    if (i != 2) CHECK(row[i] < 1e-3 * row[2]);
  }
}

TEST_CASE("dp-snn rejects a mis-sized input and non-presynaptic modulation") {
  DPSNNConfig cfg = small_dp();
  ad::ParamSet ps;
  std::mt19937_64 rng(8);
  add_dpsnn_params(ps, cfg, rng);
  Tape t(false);
  const auto b = ad::bind(t, ps);
  const DPSNN dp = bind_dpsnn(t, b, cfg);
  const DPState s = dpsnn_init(t, dp);
  auto zero = zero_modulation(t, cfg.n_input);
  CHECK_THROWS_AS(dpsnn_step(dp, s, t.zeros({3, 1}), zero), ShapeError);
  zero.indexing = ad::ModulationIndex::Post;
  CHECK_THROWS_AS(dpsnn_step(dp, s, t.zeros({cfg.n_input, 1}), zero), IndexingError);
}

TEST_CASE("nm-snn at rest on silent input emits zero modulation") {
  const NMSNNConfig cfg = small_nm(10, 4);
  ad::ParamSet ps;
  std::mt19937_64 rng(9);
  add_nmsnn_params(ps, cfg, rng);
  Tape t(false);
  const NMSNN nm = bind_nmsnn(ad::bind(t, ps), cfg);
  NMState s = nmsnn_init(t, nm);
  for (int k = 0; k < 50; ++k) {
    auto [m, next] = nmsnn_step(nm, s, t.zeros({10, 1}));
    s = next;
    for (double x : m.m_plus.data()) CHECK(x == 0.0);
    for (double x : m.m_minus.data()) CHECK(x == 0.0);
    CHECK(m.indexing == ad::ModulationIndex::Pre);
  }
  CHECK_THROWS_AS(nmsnn_step(nm, s, t.zeros({9, 1})), ShapeError);
}

TEST_CASE("flipping one feedback input makes modulation diverge after the flip") {
  const NMSNNConfig cfg = small_nm(10, 4);
  ad::ParamSet ps;
  std::mt19937_64 rng(10);
  add_nmsnn_params(ps, cfg, rng);
  std::vector<std::vector<double>> inputs(60, std::vector<double>(10, 0.0));
  std::bernoulli_distribution fire(0.2);
  for (auto& in : inputs) {
    for (std::size_t i = 0; i < 8; ++i) in[i] = fire(rng);
  }
  auto flipped = inputs;
  const std::size_t flip = 30;
  for (std::size_t k = flip; k < 60; ++k) flipped[k][9] = 1.0;  // the "left" feedback channel

  auto run = [&](const std::vector<std::vector<double>>& seq) {
    Tape t(false);
    const NMSNN nm = bind_nmsnn(ad::bind(t, ps), cfg);
    NMState s = nmsnn_init(t, nm);
    std::vector<std::vector<double>> out;
    for (const auto& in : seq) {
      auto [m, next] = nmsnn_step(nm, s, vec(t, in));
      s = next;
      std::vector<double> row(m.m_plus.data().begin(), m.m_plus.data().end());
      row.insert(row.end(), m.m_minus.data().begin(), m.m_minus.data().end());
      out.push_back(row);
    }
    return out;
  };
  const auto a = run(inputs), b = run(flipped);
  for (std::size_t k = 0; k < flip; ++k) CHECK(a[k] == b[k]);
  bool diverged = false;
  for (std::size_t k = flip; k < 60; ++k) diverged = diverged || a[k] != b[k];
  CHECK(diverged);
}

TEST_CASE("zeroed nm readout freezes the plastic network onto the non-plastic trajectory") {
  DPSNNConfig dcfg = small_dp();
  const NMSNNConfig ncfg = small_nm(dcfg.n_input + dcfg.n_hidden, dcfg.n_input);
  ad::ParamSet ps;
  std::mt19937_64 rng(11);
  add_dpsnn_params(ps, dcfg, rng);
  add_nmsnn_params(ps, ncfg, rng);
  for (auto& x : ps.at("nm.readout").data) x = 0.0;

  Tape t(false);
  const auto b = ad::bind(t, ps);
  const DPSNN dp = bind_dpsnn(t, b, dcfg);
  const NMSNN nm = bind_nmsnn(b, ncfg);
  DPState plastic = dpsnn_init(t, dp), fixed = plastic;
  NMState ns = nmsnn_init(t, nm);
  std::bernoulli_distribution fire(0.4);
  double nm_spikes = 0.0;
  for (int k = 0; k < 150; ++k) {
    std::vector<double> in(dcfg.n_input);
    for (auto& x : in) x = fire(rng);
    const Value s_in = vec(t, in);
    const Value parts[] = {s_in, plastic.hidden.s};
    auto [m, next] = nmsnn_step(nm, ns, ad::concat(parts));
    ns = next;
    for (double x : ns.l2.s.data()) nm_spikes += x;
    for (double x : m.m_plus.data()) CHECK(x == 0.0);
    plastic = dpsnn_step(dp, plastic, s_in, m);
    fixed = dpsnn_forward(dp, fixed, s_in);
    CHECK(std::vector<double>(plastic.hidden.v.data().begin(), plastic.hidden.v.data().end()) ==
          std::vector<double>(fixed.hidden.v.data().begin(), fixed.hidden.v.data().end()));
    CHECK(std::vector<double>(plastic.output.s.data().begin(), plastic.output.s.data().end()) ==
          std::vector<double>(fixed.output.s.data().begin(), fixed.output.s.data().end()));
  }
  CHECK(nm_spikes > 0.0);
  const auto w0 = ps.at("dp.w0").data;
  for (std::size_t i = 0; i < w0.size(); ++i) CHECK(plastic.w.data()[i] == w0[i]);
}

TEST_CASE("cnn encoder emits 196 values and is deterministic") {
  CNNEncoderConfig cfg;
  CHECK(cfg.output_size() == 196);
  ad::ParamSet ps;
  std::mt19937_64 rng(12);
  add_cnn_params(ps, cfg, rng);
  std::vector<double> img(28 * 28);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& x : img) x = u(rng);
  Tape t(false);
  const CNN cnn = bind_cnn(ad::bind(t, ps), cfg);
  const Value a = cnn_encode(cnn, t.constant(img, {1, 784}));
  const Value b = cnn_encode(cnn, t.constant(img, {784, 1}));
  CHECK(a.shape() == ad::Shape{196, 1});
  CHECK(std::vector<double>(a.data().begin(), a.data().end()) == std::vector<double>(b.data().begin(), b.data().end()));
  CHECK_THROWS_AS(cnn_encode(cnn, t.constant(std::vector<double>(27 * 28, 0.0), {1, 27 * 28})), ShapeError);
}

TEST_CASE("blank image encodes to the norm shift of the second block") {
  // zero image -> constant conv1 map -> normalized to 0 -> relu(h1) = 0 when
  // h1 = 0 -> constant conv2 map -> normalized to 0 -> relu(h2)
  CNNEncoderConfig cfg;
  ad::ParamSet ps;
  std::mt19937_64 rng(13);
  add_cnn_params(ps, cfg, rng);
  ps.at("cnn.b1").data = {0.3, -0.2, 0.1, 0.5};
  ps.at("cnn.b2").data = {1.0, -1.0, 0.2, 0.0};
  ps.at("cnn.h2").data = {0.25, -0.5, 1.5, 0.0};
  Tape t(false);
  const CNN cnn = bind_cnn(ad::bind(t, ps), cfg);
  const Value out = cnn_encode(cnn, t.zeros({1, 784}));
  const double expect[] = {0.25, 0.0, 1.5, 0.0};
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t k = 0; k < 49; ++k) CHECK(std::abs(out.data()[c * 49 + k] - expect[c]) < 1e-9);
  }
}

TEST_CASE("readout scores") {
  Tape t(false);
  const Value w = vec(t, {0.5, 0.5});
  const Value bias = vec(t, {0.0, 0.0});
  std::vector<Value> silent(10, t.zeros({2, 1}));
  const Value s0 = readout_scores(silent, w, bias);
  CHECK(s0.data()[0] == 0.0);
  CHECK(1.0 / (1.0 + std::exp(-s0.data()[0])) == 0.5);

  double prev = -1.0;
  for (std::size_t len = 1; len <= 12; ++len) {
    std::vector<Value> win(len, vec(t, {1.0, 0.0}));
    const Value s = readout_scores(win, w, bias);
    CHECK(s.data()[0] - s.data()[1] > prev);
    prev = s.data()[0] - s.data()[1];
  }

  std::vector<Value> win = {vec(t, {1.0, 0.0}), vec(t, {1.0, 1.0}), vec(t, {0.0, 1.0})};
  const Value once = readout_scores(win, vec(t, {0.3, 0.7}), Value());
  const Value twice = readout_scores(win, vec(t, {0.6, 1.4}), Value());
  CHECK(twice.data()[0] == 2.0 * once.data()[0]);
  CHECK(twice.data()[1] == 2.0 * once.data()[1]);

  std::vector<Value> empty;
  CHECK_THROWS_AS(readout_scores(empty, w, bias), Error);
}
