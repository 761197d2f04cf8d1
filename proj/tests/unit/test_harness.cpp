#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "metaplast/errors.hpp"
#include "metaplast/harness/checkpoint.hpp"
#include "metaplast/harness/config.hpp"
#include "metaplast/harness/model.hpp"
#include "metaplast/harness/optimizer.hpp"
#include "metaplast/harness/trainer.hpp"

using namespace metaplast;
using namespace metaplast::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("metaplast_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

TrainConfig small_cue(std::size_t m = 1) {
  TrainConfig c = parse_config(
      "[train]\nbatch_episodes = 4\nouter_updates = 3\ncheckpoint_every = 1\nseed = 11\n"
      "[cue]\nn_cues = " +
      std::to_string(m) + "\n");
  return c;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<MetricsRecord> read_metrics(const fs::path& p) {
  std::ifstream in(p);
  std::vector<MetricsRecord> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(MetricsRecord::from_json(line));
  }
  return out;
}

void require_same_stream(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].to_json(false) == b[i].to_json(false));
}

ad::ParamSet toy_params() {
  ad::ParamSet ps;
  ps.add("a", ad::Tensor({3, 1}, std::vector<double>{1.0, -2.0, 0.5}));
  ps.add("b", ad::Tensor({1, 1}, std::vector<double>{4.0}));
  ps.add("fixed", ad::Tensor({1, 1}, std::vector<double>{7.0}), false);
  return ps;
}

}  // namespace

// ------------------------------------------------------------------- config

TEST_CASE("config text round trips through the parser") {
  for (TaskKind k : {TaskKind::Cue, TaskKind::Character}) {
    TrainConfig c = default_config(k);
    c.learning_rate = 0.1 + 0.2;  // not exactly representable in short decimal
    c.seed = 18446744073709551557ull;
    const std::string text = to_text(c);
    CHECK(to_text(parse_config(text)) == text);
  }
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_config("[train]\nbatch_size = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nowhere]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nbatch_episodes = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nlearning_rate = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[cue]\nn_cues = 0\n"), ConfigError);
}

TEST_CASE("overlay keeps fields the overlay does not mention") {
  TrainConfig base = small_cue(5);
  base.seed = 99;
  const TrainConfig c = overlay_config("[cue]\nn_cues = 9\n", base);
  CHECK(c.cue.n_cues == 9);
  CHECK(c.seed == 99);
  CHECK(c.batch_episodes == 4);
}

// ---------------------------------------------------------------- optimizer

TEST_CASE("zero gradient leaves parameters unchanged") {
  for (bool adam : {false, true}) {
    ad::ParamSet ps = toy_params();
    const ad::ParamSet before = ps;
    OptimizerState st = init_optimizer(ps);
    ad::GradientMap g{{"a", {0, 0, 0}}, {"b", {0}}};
    OptimizerSettings s;
    s.adam = adam;
    for (int k = 0; k < 5; ++k) outer_update(ps, g, st, s);
    for (const auto& [name, e] : before.entries()) {
      for (std::size_t i = 0; i < e.tensor.data.size(); ++i) {
        CHECK(std::abs(ps.at(name).data[i] - e.tensor.data[i]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("sgd with unit rate on g = w lands on zero") {
  ad::ParamSet ps = toy_params();
  OptimizerState st = init_optimizer(ps);
  ad::GradientMap g{{"a", ps.at("a").data}, {"b", ps.at("b").data}};
  OptimizerSettings s;
  s.adam = false;
  s.lr = 1.0;
  outer_update(ps, g, st, s);
  for (double x : ps.at("a").data) CHECK(x == 0.0);
  CHECK(ps.at("b").data[0] == 0.0);
  CHECK(ps.at("fixed").data[0] == 7.0);
}

TEST_CASE("adam settles in a quadratic bowl") {
  // f = sum_k c_k (x_k - m_k)^2
  const std::vector<double> c{0.5, 2.0, 10.0}, m{1.5, -0.25, 3.0};
  ad::ParamSet ps;
  ps.add("x", ad::Tensor({3, 1}, std::vector<double>{-1.0, 2.0, 0.0}));
  OptimizerState st = init_optimizer(ps);
  OptimizerSettings s;
  s.lr = 0.05;
  for (int step = 0; step < 500; ++step) {
    std::vector<double> g(3);
    for (int k = 0; k < 3; ++k) g[k] = 2.0 * c[k] * (ps.at("x").data[k] - m[k]);
    outer_update(ps, {{"x", g}}, st, s);
  }
  for (int k = 0; k < 3; ++k) CHECK(std::abs(ps.at("x").data[k] - m[k]) < 1e-3);
  CHECK(st.step == 500);
}

TEST_CASE("first adam step moves every coordinate by the learning rate") {
  // bias correction makes m_hat / sqrt(v_hat) = sign(g) on step one
  ad::ParamSet ps = toy_params();
  OptimizerState st = init_optimizer(ps);
  OptimizerSettings s;
  s.lr = 0.01;
  outer_update(ps, {{"a", {3.0, -1e-3, 50.0}}, {"b", {-2.0}}}, st, s);
  CHECK(ps.at("a").data[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
  CHECK(ps.at("a").data[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-5));
  CHECK(ps.at("a").data[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-9));
  CHECK(ps.at("b").data[0] == doctest::Approx(4.0 + 0.01).epsilon(1e-9));
}

TEST_CASE("gradient map must cover the learnable set") {
  ad::ParamSet ps = toy_params();
  OptimizerState st = init_optimizer(ps);
  OptimizerSettings s;
  CHECK_THROWS_AS(outer_update(ps, {{"a", {1, 1, 1}}}, st, s), MissingGradientError);
  CHECK_THROWS_AS(outer_update(ps, {{"a", {1, 1, 1}}, {"b", {1}}, {"zzz", {1}}}, st, s), MissingGradientError);
  CHECK_THROWS_AS(outer_update(ps, {{"a", {1, 1}}, {"b", {1}}}, st, s), ShapeError);
}

TEST_CASE("global norm clipping") {
  ad::GradientMap g{{"a", {3.0, 0.0}}, {"b", {4.0}}};
  CHECK(global_norm(g) == doctest::Approx(5.0));
  clip_global_norm(g, 10.0);
  CHECK(g["a"][0] == 3.0);
  clip_global_norm(g, 1.0);
  CHECK(global_norm(g) == doctest::Approx(1.0));
  CHECK(g["b"][0] == doctest::Approx(0.8));
}

// ---------------------------------------------------------------- checkpoint

TEST_CASE("checkpoint encode/decode is lossless and byte stable") {
  TrainConfig cfg = small_cue();
  TrainOptions opt;
  opt.stop_after = 1;
  const Checkpoint ck = train(cfg, opt);
  const auto bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.params == ck.params);
  CHECK(back.optimizer == ck.optimizer);
  CHECK(back.rng_state == ck.rng_state);
  CHECK(back.update == 1);
  CHECK(back.config_text == ck.config_text);
  CHECK(encode_checkpoint(back) == bytes);

  const fs::path d = scratch_dir("ckpt");
  save_checkpoint(ck, d / "a.bin");
  save_checkpoint(load_checkpoint(d / "a.bin"), d / "b.bin");
  CHECK(file_bytes(d / "a.bin") == file_bytes(d / "b.bin"));
}

TEST_CASE("damaged checkpoints are rejected with typed errors") {
  const Checkpoint ck = new_checkpoint(small_cue());
  const auto bytes = encode_checkpoint(ck);

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{16}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> trunc(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_checkpoint(trunc), CorruptFileError);
  }
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 3, bytes.size() - 20}) {
    auto flipped = bytes;
    flipped[pos] ^= 0x10;
    CHECK_THROWS_AS(decode_checkpoint(flipped), CorruptFileError);
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CorruptFileError);

  auto newer = bytes;
  newer[8] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  CHECK_THROWS_AS(decode_checkpoint(newer), VersionMismatchError);

  CHECK_THROWS_AS(load_checkpoint(scratch_dir("missing") / "nope.bin"), CheckpointError);
}

TEST_CASE("evaluation of a reloaded checkpoint is bit-exact") {
  TrainConfig cfg = small_cue(3);
  const Checkpoint ck = new_checkpoint(cfg);
  const fs::path d = scratch_dir("evalck");
  save_checkpoint(ck, d / "ck.bin");
  const Checkpoint back = load_checkpoint(d / "ck.bin");
  const TaskData data;
  const EvalResult a = evaluate(ck.params, cfg, data, 12);
  const EvalResult b = evaluate(back.params, back.config(), data, 12);
  CHECK(a.outcomes == b.outcomes);
  CHECK(a.mean_loss == b.mean_loss);
}

// ---------------------------------------------------------------- episodes

TEST_CASE("episode loss is deterministic under seed") {
  const TrainConfig cfg = small_cue(3);
  const ad::ParamSet ps = init_params(cfg);
  const TaskData data;
  const auto a = run_seeded_episode(ps, cfg, data, 5, Mode::TrainGrad, Split::Train);
  const auto b = run_seeded_episode(ps, cfg, data, 5, Mode::TrainGrad, Split::Train);
  const auto e = run_seeded_episode(ps, cfg, data, 5, Mode::Eval, Split::Train);
  CHECK(a.loss == b.loss);
  CHECK(a.loss == e.loss);
  CHECK(a.grads == b.grads);
  CHECK(e.grads.empty());
  for (const auto& name : ps.learnable_names()) CHECK(a.grads.count(name) == 1);
}

TEST_CASE("one small sgd step on a fixed episode does not raise its loss") {
  const TrainConfig cfg = small_cue(3);
  ad::ParamSet ps = init_params(cfg);
  const TaskData data;
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    ad::ParamSet p = ps;
    const auto before = run_seeded_episode(p, cfg, data, seed, Mode::TrainGrad, Split::Train);
    OptimizerState st = init_optimizer(p);
    OptimizerSettings s;
    s.adam = false;
    s.lr = 1e-4;
    outer_update(p, before.grads, st, s);
    apply_constraints(p, cfg);
    const auto after = run_seeded_episode(p, cfg, data, seed, Mode::Eval, Split::Train);
    CHECK(after.loss <= before.loss);
  }
}

// ---------------------------------------------------------------- evaluate

TEST_CASE("evaluate rejects empty runs and mismatched parameters") {
  const TrainConfig cfg = small_cue(3);
  const ad::ParamSet ps = init_params(cfg);
  const TaskData data;
  CHECK_THROWS_AS(evaluate(ps, cfg, data, 0), ConfigError);

  TrainConfig wider = cfg;
  wider.dp.n_hidden = 40;
  CHECK_THROWS_AS(evaluate(ps, wider, data, 2), ShapeError);
  ad::ParamSet extra = ps;
  extra.add("dp.extra", ad::Tensor({1, 1}, std::vector<double>{0.0}));
  CHECK_THROWS_AS(check_compatible(extra, cfg), ShapeError);
}

TEST_CASE("evaluation does not depend on worker count or episode order") {
  const TrainConfig cfg = small_cue(3);
  const ad::ParamSet ps = init_params(cfg);
  const TaskData data;
  const EvalResult one = evaluate(ps, cfg, data, 10, 1);
  const EvalResult three = evaluate(ps, cfg, data, 10, 3);
  CHECK(one.outcomes == three.outcomes);
  CHECK(one.mean_loss == three.mean_loss);

  // the same seeds replayed back to front give the same per-episode results
  std::mt19937_64 seeds(cfg.eval_seed);
  std::vector<std::uint64_t> s(10);
  for (auto& x : s) x = seeds();
  for (std::size_t i = 10; i-- > 0;) {
    const auto r = run_seeded_episode(ps, cfg, data, s[i], Mode::Eval, Split::Test);
    CHECK(static_cast<int>(r.correct) == one.outcomes[i]);
  }
  CHECK(one.ci_half_width ==
        doctest::Approx(1.96 * std::sqrt(one.accuracy * (1 - one.accuracy) / 10.0)).epsilon(1e-12));
}

TEST_CASE("parameters trained at one cue count evaluate at another") {
  TrainConfig five = small_cue(5);
  const ad::ParamSet ps = init_params(five);
  const TrainConfig nine = overlay_config("[cue]\nn_cues = 9\n", five);
  const TaskData data;
  check_compatible(ps, nine);
  const EvalResult r = evaluate(ps, nine, data, 4);
  CHECK(r.episodes == 4);
}

TEST_CASE("untrained parameters sit at chance on the cue task") {
  const TrainConfig cfg = small_cue(3);
  const ad::ParamSet ps = init_params(cfg);
  const TaskData data;
  const EvalResult r = evaluate(ps, cfg, data, 200);
  // 99% binomial interval around 0.5
  CHECK(std::abs(r.accuracy - 0.5) <= 2.576 * std::sqrt(0.25 / 200.0));
}

TEST_CASE("sweep validates its range and writes one row per cue count") {
  const TrainConfig cfg = small_cue(3);
  const ad::ParamSet ps = init_params(cfg);
  CHECK_THROWS_AS(sweep_cues(ps, cfg, 0, 3, 2), ConfigError);
  CHECK_THROWS_AS(sweep_cues(ps, cfg, 4, 3, 2), ConfigError);
  const auto rows = sweep_cues(ps, cfg, 1, 2, 3);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].n_cues == 1);
  CHECK(rows[1].result.episodes == 3);
  std::ostringstream os;
  write_sweep_csv(os, rows);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header == "n_cues,episodes,correct,accuracy,ci_low,ci_high");
  std::size_t lines = 0;
  for (std::string l; std::getline(is, l);) ++lines;
  CHECK(lines == 2);
}

// ----------------------------------------------------------------- training

TEST_CASE("metrics records survive a json round trip") {
  MetricsRecord m{7, 1.25, 0.5, 3e-7, 0.125, 2.5};
  const MetricsRecord back = MetricsRecord::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(m.to_json(false).find("wall_time") == std::string::npos);
}

TEST_CASE("training writes one record per update and the final checkpoint") {
  TrainConfig cfg = small_cue();
  const fs::path d = scratch_dir("train");
  TrainOptions opt;
  opt.out_dir = d;
  std::size_t seen = 0;
  opt.on_record = [&](const MetricsRecord& r) { CHECK(r.update == seen++); };
  const Checkpoint ck = train(cfg, opt);
  CHECK(ck.update == 3);
  CHECK(seen == 3);
  CHECK(read_metrics(d / "metrics.jsonl").size() == 3);
  std::ifstream csv(d / "metrics.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  CHECK(lines == 4);
  CHECK(fs::exists(d / "final.bin"));
  CHECK(fs::exists(d / "ckpt-000002.bin"));
  CHECK(load_checkpoint(d / "final.bin").params == ck.params);
}

TEST_CASE("training is reproducible across runs and worker counts") {
  TrainConfig cfg = small_cue();
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  TrainOptions oa;
  oa.out_dir = a;
  TrainOptions ob;
  ob.out_dir = b;
  ob.workers = 3;
  train(cfg, oa);
  train(cfg, ob);
  require_same_stream(read_metrics(a / "metrics.jsonl"), read_metrics(b / "metrics.jsonl"));
  CHECK(file_bytes(a / "final.bin") == file_bytes(b / "final.bin"));
}

TEST_CASE("interrupted training resumes onto the uninterrupted stream") {
  TrainConfig cfg = small_cue();
  cfg.outer_updates = 4;
  const fs::path whole = scratch_dir("whole"), part = scratch_dir("part");
  TrainOptions ow;
  ow.out_dir = whole;
  train(cfg, ow);

  TrainOptions op;
  op.out_dir = part;
  op.stop_after = 2;
  CHECK(train(cfg, op).update == 2);
  TrainOptions resume;
  resume.out_dir = part;
  resume.resume = part / "latest.bin";
  train(cfg, resume);

  require_same_stream(read_metrics(whole / "metrics.jsonl"), read_metrics(part / "metrics.jsonl"));
  CHECK(file_bytes(whole / "final.bin") == file_bytes(part / "final.bin"));
}

TEST_CASE("smoke run lowers the loss on held-out episodes for most seeds") {
  // 8 episodes x 10 updates at one cue; loss measured on a fixed set of
  // fresh episodes before and after
  const TaskData data;
  int lower = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    TrainConfig cfg = parse_config("[train]\nbatch_episodes = 8\nouter_updates = 10\ncheckpoint_every = 0\n[cue]\nn_cues = 1\n");
    cfg.seed = seed;
    const ad::ParamSet start = init_params(cfg);
    const Checkpoint ck = train(cfg, {});
    const double before = evaluate(start, cfg, data, 32).mean_loss;
    const double after = evaluate(ck.params, cfg, data, 32).mean_loss;
    if (after < before) ++lower;
  }
  CHECK(lower >= 7);
}
