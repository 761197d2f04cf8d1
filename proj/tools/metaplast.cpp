#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "metaplast/errors.hpp"
#include "metaplast/harness/checkpoint.hpp"
#include "metaplast/harness/config.hpp"
#include "metaplast/harness/gradsuite.hpp"
#include "metaplast/harness/model.hpp"
#include "metaplast/harness/trainer.hpp"
#include "metaplast/tasks.hpp"

namespace mh = metaplast::harness;
namespace mt = metaplast::tasks;

namespace {

struct Args {
  // train
  std::string config, out = "run", resume, print_task;
  std::uint64_t seed = 0;
  bool seed_set = false, print_config = false;
  std::size_t workers = 1;
  // eval / sweep / inspect
  std::string ckpt, task;
  std::size_t episodes = 1000;
  bool zero_mod = false;
  std::size_t m_min = 1, m_max = 15;
  std::string csv;
  // gradcheck
  std::string size = "small";
  std::size_t programs = 50;
  std::uint64_t gc_seed = 1;
  double eps = 1e-4, tol = 1e-4;
  // make-glyphs
  mt::GlyphSetSpec glyphs;
  std::string glyph_dir = "glyphs";
};

mh::TrainConfig config_from(const std::string& path) {
  return path.empty() ? mh::default_config(mh::TaskKind::Cue) : mh::load_config(path);
}

int cmd_train(const Args& a) {
  if (a.print_config) {
    mh::TrainConfig cfg;
    if (!a.config.empty()) {
      cfg = mh::load_config(a.config);
    } else {
      cfg = mh::default_config(a.print_task == "character" ? mh::TaskKind::Character : mh::TaskKind::Cue);
    }
    if (a.seed_set) cfg.seed = a.seed;
    std::cout << mh::to_text(cfg);
    return 0;
  }
  mh::TrainConfig cfg = config_from(a.config);
  if (a.seed_set) cfg.seed = a.seed;
  mh::TrainOptions opt;
  opt.out_dir = a.out;
  opt.workers = a.workers;
  opt.log = &std::cout;
  if (!a.resume.empty()) opt.resume = a.resume;
  const mh::Checkpoint ck = mh::train(cfg, opt);
  std::cerr << "finished " << ck.update << " updates; checkpoint " << (std::filesystem::path(a.out) / "final.bin").string()
            << "\n";
  return 0;
}

mh::TrainConfig eval_config(const mh::Checkpoint& ck, const std::string& task_file) {
  mh::TrainConfig cfg = ck.config();
  if (!task_file.empty()) cfg = mh::overlay_config(mh::read_text_file(task_file), cfg);
  return cfg;
}

void print_eval(const char* label, const mh::EvalResult& e) {
  std::printf("%s: accuracy %.4f +/- %.4f (%zu/%zu), mean loss %.6f\n", label, e.accuracy, e.ci_half_width, e.correct,
              e.episodes, e.mean_loss);
}

int cmd_eval(const Args& a) {
  const mh::Checkpoint ck = mh::load_checkpoint(a.ckpt);
  const mh::TrainConfig cfg = eval_config(ck, a.task);
  const mh::TaskData data = mh::load_task_data(cfg);
  mh::EpisodeOptions o;
  o.zero_modulation = a.zero_mod;
  const mh::EvalResult e = mh::evaluate(ck.params, cfg, data, a.episodes, a.workers, o);
  print_eval(a.zero_mod ? "eval (modulation zeroed)" : "eval", e);
  return 0;
}

int cmd_sweep(const Args& a) {
  const mh::Checkpoint ck = mh::load_checkpoint(a.ckpt);
  const mh::TrainConfig cfg = eval_config(ck, a.task);
  const auto rows = mh::sweep_cues(ck.params, cfg, a.m_min, a.m_max, a.episodes, a.workers);
  if (a.csv.empty()) {
    mh::write_sweep_csv(std::cout, rows);
  } else {
    std::ofstream out(a.csv);
    if (!out) throw metaplast::ConfigError("cannot write " + a.csv);
    mh::write_sweep_csv(out, rows);
    std::cerr << "wrote " << a.csv << "\n";
  }
  return 0;
}

int cmd_gradcheck(const Args& a) {
  std::size_t neurons = 10, steps = 50;
  if (a.size == "tiny") {
    neurons = 4;
    steps = 15;
  } else if (a.size != "small") {
    throw metaplast::ConfigError("gradcheck --size must be small or tiny");
  }
  const auto r = mh::run_gradcheck_suite(a.programs, a.gc_seed, a.eps, a.tol, neurons, steps);
  for (const auto& e : r.entries) {
    std::printf("%-4s %.3e  %s  (worst %s[%zu]: analytic %.9g, numeric %.9g)\n", e.passed ? "ok" : "FAIL",
                e.report.max_rel_error, e.description.c_str(), e.report.worst_param.c_str(), e.report.worst_index,
                e.report.analytic, e.report.numeric);
  }
  std::printf("%zu/%zu programs within %.1e; worst relative error %.3e\n", r.passed, r.entries.size(), a.tol, r.worst);
  return r.all_passed() ? 0 : 1;
}

int cmd_inspect(const Args& a) {
  const mh::Checkpoint ck = mh::load_checkpoint(a.ckpt);
  std::printf("format version %u\nupdates completed %llu\noptimizer steps %llu\n", mh::kCheckpointVersion,
              static_cast<unsigned long long>(ck.update), static_cast<unsigned long long>(ck.optimizer.step));
  std::printf("\nparameters:\n");
  std::size_t total = 0;
  for (const auto& [name, e] : ck.params.entries()) {
    const auto& d = e.tensor.data;
    double lo = d.empty() ? 0 : d[0], hi = lo, sum = 0;
    for (double x : d) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      sum += x;
    }
    if (e.learnable) total += d.size();
    std::printf("  %-16s %4zux%-4zu %-9s min %+.4e max %+.4e mean %+.4e\n", name.c_str(), e.tensor.shape.rows,
                e.tensor.shape.cols, e.learnable ? "learnable" : "constant", lo, hi,
                d.empty() ? 0.0 : sum / static_cast<double>(d.size()));
  }
  std::printf("  %zu learnable scalars\n\nconfig:\n%s", total, ck.config_text.c_str());
  return 0;
}

int cmd_make_glyphs(const Args& a) {
  mt::make_glyph_dataset(a.glyph_dir, a.glyphs);
  std::cerr << "wrote " << a.glyphs.n_classes << " classes x " << a.glyphs.samples_per_class << " samples to "
            << a.glyph_dir << " (manifest.txt)\n";
  return 0;
}

int cmd_dump_episode(const Args& a) {
  const mh::TrainConfig cfg = config_from(a.config);
  if (cfg.task != mh::TaskKind::Cue) throw metaplast::ConfigError("dump-episode supports the cue task");
  std::mt19937_64 rng(a.seed);
  const mt::CueEpisode ep = mt::build_cue_episode(cfg.cue, cfg.one_shot, rng);
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!a.csv.empty()) {
    file.open(a.csv);
    if (!file) throw metaplast::ConfigError("cannot write " + a.csv);
    os = &file;
  }
  mt::write_raster_csv(*os, ep);
  std::cerr << "episode: " << ep.trials.size() << " trials, " << ep.total_steps() << " steps, query label "
            << mt::to_string(ep.test_trial().label) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metaplast: meta-learned neuromodulated plasticity in spiking networks"};
  app.require_subcommand(1);
  Args a;

  auto* train = app.add_subcommand("train", "meta-train a configuration");
  train->add_option("--config", a.config, "INI configuration file (defaults: cue task)");
  train->add_option("--seed", a.seed, "override train.seed")->each([&](const std::string&) { a.seed_set = true; });
  train->add_option("--out", a.out, "output directory for metrics and checkpoints");
  train->add_option("--workers", a.workers, "episode-parallel threads")->check(CLI::PositiveNumber);
  train->add_option("--resume", a.resume, "continue from a checkpoint (its stored config is used)");
  train->add_flag("--print-config", a.print_config, "print the full configuration and exit");
  train->add_option("--task", a.print_task, "defaults to print without --config")->check(CLI::IsMember({"cue", "character"}));

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on fresh episodes");
  eval->add_option("--ckpt", a.ckpt)->required();
  eval->add_option("--task", a.task, "INI file overlaid on the checkpoint's configuration");
  eval->add_option("--episodes", a.episodes);
  eval->add_option("--workers", a.workers)->check(CLI::PositiveNumber);
  eval->add_flag("--zero-modulation", a.zero_mod, "replace the neuromodulatory output by zeros");

  auto* sweep = app.add_subcommand("sweep", "accuracy against the number of cues");
  sweep->add_option("--ckpt", a.ckpt)->required();
  sweep->add_option("--task", a.task, "INI file overlaid on the checkpoint's configuration");
  sweep->add_option("--m-min", a.m_min);
  sweep->add_option("--m-max", a.m_max);
  sweep->add_option("--episodes", a.episodes);
  sweep->add_option("--workers", a.workers)->check(CLI::PositiveNumber);
  sweep->add_option("--csv", a.csv, "write the table here instead of stdout");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of random plastic programs");
  gradcheck->add_option("--size", a.size, "small (<=10 neurons, <=50 steps) or tiny");
  gradcheck->add_option("--programs", a.programs);
  gradcheck->add_option("--seed", a.gc_seed);
  gradcheck->add_option("--eps", a.eps);
  gradcheck->add_option("--tol", a.tol);

  auto* inspect = app.add_subcommand("inspect", "summarize a checkpoint");
  inspect->add_option("--ckpt", a.ckpt)->required();

  auto* glyphs = app.add_subcommand("make-glyphs", "write a synthetic stroke-glyph dataset");
  glyphs->add_option("--out", a.glyph_dir);
  glyphs->add_option("--classes", a.glyphs.n_classes);
  glyphs->add_option("--samples", a.glyphs.samples_per_class);
  glyphs->add_option("--size", a.glyphs.image_size);
  glyphs->add_option("--seed", a.glyphs.seed);

  auto* dump = app.add_subcommand("dump-episode", "spike raster of one cue episode as CSV");
  dump->add_option("--config", a.config);
  dump->add_option("--seed", a.seed);
  dump->add_option("--csv", a.csv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(a);
    if (*eval) return cmd_eval(a);
    if (*sweep) return cmd_sweep(a);
    if (*gradcheck) return cmd_gradcheck(a);
    if (*inspect) return cmd_inspect(a);
    if (*glyphs) return cmd_make_glyphs(a);
    if (*dump) return cmd_dump_episode(a);
  } catch (const metaplast::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const metaplast::ShapeError& e) {
    std::cerr << "incompatible shapes: " << e.what() << "\n";
    return 2;
  } catch (const metaplast::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const metaplast::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 3;
  } catch (const metaplast::DivergenceError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
