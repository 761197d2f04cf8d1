#include "metaplast/harness/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "metaplast/errors.hpp"

namespace metaplast::harness {

using nlohmann::json;

std::string MetricsRecord::to_json(bool with_time) const {
  json j;
  j["update"] = update;
  j["loss"] = loss;
  j["accuracy"] = accuracy;
  j["grad_norm"] = grad_norm;
  j["hidden_rate"] = hidden_rate;
  if (with_time) j["wall_time"] = wall_time;
  return j.dump();
}

MetricsRecord MetricsRecord::from_json(const std::string& line) {
  const json j = json::parse(line);
  MetricsRecord r;
  r.update = j.at("update").get<std::uint64_t>();
  r.loss = j.at("loss").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.hidden_rate = j.value("hidden_rate", 0.0);
  r.wall_time = j.value("wall_time", 0.0);
  return r;
}

namespace {

std::vector<EpisodeResult> run_all(const ad::ParamSet& ps, const TrainConfig& cfg, const TaskData& data,
                                   const std::vector<std::uint64_t>& seeds, Mode mode, Split split, std::size_t workers,
                                   const EpisodeOptions& opt) {
  std::vector<EpisodeResult> out(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < seeds.size(); i += std::max<std::size_t>(workers, 1)) {
      try {
        out[i] = run_seeded_episode(ps, cfg, data, seeds[i], mode, split, opt);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(seeds.size(), 1));
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_text(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw CorruptFileError("checkpoint rng state unreadable");
  return rng;
}

template <class F>
auto at_update(std::uint64_t u, F&& f) {
  const std::string where = "update " + std::to_string(u) + ": ";
  try {
    return f();
  } catch (const DivergenceError& e) {
    throw DivergenceError(where + e.what());
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  }
}

const char* kCsvHeader = "update,loss,accuracy,grad_norm,hidden_rate,wall_time\n";

std::string csv_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.3f\n", static_cast<unsigned long long>(r.update),
                r.loss, r.accuracy, r.grad_norm, r.hidden_rate, r.wall_time);
  return buf;
}

// Metrics from an earlier run, cut back to the records before `update`.
std::vector<std::string> kept_metrics(const std::filesystem::path& jsonl, std::uint64_t update) {
  std::vector<std::string> kept;
  std::ifstream in(jsonl);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (MetricsRecord::from_json(line).update < update) kept.push_back(line);
  }
  return kept;
}

}  // namespace

BatchResult run_batch(const ad::ParamSet& ps, const TrainConfig& cfg, const TaskData& data,
                      const std::vector<std::uint64_t>& seeds, Mode mode, Split split, std::size_t workers,
                      const EpisodeOptions& opt) {
  if (seeds.empty()) throw ConfigError("batch needs at least one episode");
  const auto results = run_all(ps, cfg, data, seeds, mode, split, workers, opt);
  BatchResult b;
  for (const auto& r : results) {
    b.loss += r.loss;
    b.accuracy += r.correct ? 1.0 : 0.0;
    b.hidden_rate += r.hidden_rate;
    for (const auto& [name, g] : r.grads) ad::accumulate(b.grads[name], g);
  }
  const double n = static_cast<double>(seeds.size());
  b.loss /= n;
  b.accuracy /= n;
  b.hidden_rate /= n;
  for (auto& [name, g] : b.grads) {
    for (double& x : g) x /= n;
  }
  return b;
}

Checkpoint new_checkpoint(const TrainConfig& cfg) {
  cfg.validate();
  Checkpoint ck;
  ck.config_text = to_text(cfg);
  ck.params = init_params(cfg);
  apply_constraints(ck.params, cfg);
  ck.optimizer = init_optimizer(ck.params);
  ck.rng_state = rng_text(std::mt19937_64(cfg.seed));
  return ck;
}

Checkpoint train(const TrainConfig& cfg_in, const TrainOptions& opt) {
  Checkpoint ck = opt.resume ? load_checkpoint(*opt.resume) : new_checkpoint(cfg_in);
  const TrainConfig cfg = opt.resume ? ck.config() : cfg_in;
  cfg.validate();
  check_compatible(ck.params, cfg);
  const TaskData data = load_task_data(cfg);
  std::mt19937_64 rng = rng_from_text(ck.rng_state);
  const OptimizerSettings os{cfg.optimizer == OptimizerKind::Adam, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                             cfg.adam_eps};

  std::ofstream jsonl, csv;
  const bool files = !opt.out_dir.empty();
  if (files) {
    std::filesystem::create_directories(opt.out_dir);
    const auto jpath = opt.out_dir / "metrics.jsonl";
    std::vector<std::string> kept;
    if (opt.resume) kept = kept_metrics(jpath, ck.update);
    jsonl.open(jpath, std::ios::trunc);
    csv.open(opt.out_dir / "metrics.csv", std::ios::trunc);
    if (!jsonl || !csv) throw ConfigError("cannot write metrics under " + opt.out_dir.string());
    csv << kCsvHeader;
    for (const auto& line : kept) {
      jsonl << line << '\n';
      csv << csv_row(MetricsRecord::from_json(line));
    }
    jsonl.flush();
    csv.flush();
  }

  const auto start = std::chrono::steady_clock::now();
  std::uint64_t done_here = 0;
  while (ck.update < cfg.outer_updates) {
    if (opt.stop_after && done_here >= *opt.stop_after) return ck;
    const std::uint64_t u = ck.update;
    std::vector<std::uint64_t> seeds(cfg.batch_episodes);
    for (auto& s : seeds) s = rng();

    BatchResult b = at_update(u, [&] {
      return run_batch(ck.params, cfg, data, seeds, Mode::TrainGrad, Split::Train, opt.workers);
    });
    MetricsRecord rec;
    rec.update = u;
    rec.loss = b.loss;
    rec.accuracy = b.accuracy;
    rec.hidden_rate = b.hidden_rate;
    rec.grad_norm = global_norm(b.grads);
    clip_global_norm(b.grads, cfg.grad_clip);
    outer_update(ck.params, b.grads, ck.optimizer, os);
    apply_constraints(ck.params, cfg);
    ck.update = u + 1;
    ck.rng_state = rng_text(rng);
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (files) {
      jsonl << rec.to_json() << '\n';
      csv << csv_row(rec);
      jsonl.flush();
      csv.flush();
    }
    if (opt.log) *opt.log << rec.to_json() << std::endl;
    if (opt.on_record) opt.on_record(rec);
    ++done_here;

    if (files && cfg.checkpoint_every > 0 && ck.update % cfg.checkpoint_every == 0 && ck.update < cfg.outer_updates) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt-%06llu.bin", static_cast<unsigned long long>(ck.update));
      save_checkpoint(ck, opt.out_dir / name);
      save_checkpoint(ck, opt.out_dir / "latest.bin");
    }
  }
  if (files) {
    save_checkpoint(ck, opt.out_dir / "final.bin");
    save_checkpoint(ck, opt.out_dir / "latest.bin");
  }
  return ck;
}

void check_compatible(const ad::ParamSet& ps, const TrainConfig& cfg) {
  const ad::ParamSet ref = init_params(cfg);
  for (const auto& [name, e] : ref.entries()) {
    if (!ps.contains(name)) throw ShapeError("parameters lack " + name + " required by the task configuration");
    const auto& t = ps.at(name);
    if (!(t.shape == e.tensor.shape)) {
      throw ShapeError(name + " is " + std::to_string(t.shape.rows) + "x" + std::to_string(t.shape.cols) +
                       " but the task configuration needs " + std::to_string(e.tensor.shape.rows) + "x" +
                       std::to_string(e.tensor.shape.cols));
    }
  }
  for (const auto& [name, e] : ps.entries()) {
    if (!ref.contains(name)) throw ShapeError("parameter " + name + " is not used by the task configuration");
  }
}

EvalResult evaluate(const ad::ParamSet& ps, const TrainConfig& cfg, const TaskData& data, std::size_t n_episodes,
                    std::size_t workers, const EpisodeOptions& opt) {
  if (n_episodes == 0) throw ConfigError("evaluation needs at least one episode");
  check_compatible(ps, cfg);
  std::mt19937_64 rng(cfg.eval_seed);
  std::vector<std::uint64_t> seeds(n_episodes);
  for (auto& s : seeds) s = rng();
  const auto results = run_all(ps, cfg, data, seeds, Mode::Eval, Split::Test, workers, opt);
  EvalResult e;
  e.episodes = n_episodes;
  for (const auto& r : results) {
    e.outcomes.push_back(r.correct ? 1 : 0);
    e.correct += r.correct ? 1 : 0;
    e.mean_loss += r.loss;
  }
  const double n = static_cast<double>(n_episodes);
  e.mean_loss /= n;
  e.accuracy = static_cast<double>(e.correct) / n;
  e.ci_half_width = 1.96 * std::sqrt(e.accuracy * (1.0 - e.accuracy) / n);
  return e;
}

std::vector<SweepRow> sweep_cues(const ad::ParamSet& ps, TrainConfig cfg, std::size_t m_min, std::size_t m_max,
                                 std::size_t n_episodes, std::size_t workers) {
  if (cfg.task != TaskKind::Cue) throw ConfigError("sweep needs a cue-task checkpoint");
  if (m_min == 0) throw ConfigError("cue count must be at least 1");
  if (m_max < m_min) throw ConfigError("sweep range is empty");
  std::vector<SweepRow> rows;
  const TaskData none;
  for (std::size_t m = m_min; m <= m_max; ++m) {
    cfg.cue.n_cues = m;
    cfg.validate();
    rows.push_back({m, evaluate(ps, cfg, none, n_episodes, workers)});
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "n_cues,episodes,correct,accuracy,ci_low,ci_high\n";
  for (const auto& r : rows) {
    char buf[160];
    const auto& e = r.result;
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.6f,%.6f,%.6f\n", r.n_cues, e.episodes, e.correct, e.accuracy,
                  std::max(0.0, e.accuracy - e.ci_half_width), std::min(1.0, e.accuracy + e.ci_half_width));
    os << buf;
  }
}

}  // namespace metaplast::harness
