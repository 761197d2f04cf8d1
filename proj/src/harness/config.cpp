#include "metaplast/harness/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "metaplast/errors.hpp"

namespace metaplast::harness {

namespace pt = boost::property_tree;

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

// shortest text that reads back to the same double
std::string fmt(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected a number, got '" + s + "'");
  }
}

std::uint64_t parse_uint(const std::string& s, const std::string& where) {
  try {
    if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected a non-negative integer, got '" + s + "'");
  }
}

bool parse_bool(const std::string& s, const std::string& where) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(where + ": expected true or false, got '" + s + "'");
}

template <class E>
E parse_enum(const std::string& s, const std::string& where, const std::map<std::string, E>& names) {
  auto it = names.find(s);
  if (it == names.end()) {
    std::string opts;
    for (const auto& [n, v] : names) opts += (opts.empty() ? "" : ", ") + n;
    throw ConfigError(where + ": '" + s + "' is not one of " + opts);
  }
  return it->second;
}

template <class E>
std::string enum_name(E v, const std::map<std::string, E>& names) {
  for (const auto& [n, e] : names) {
    if (e == v) return n;
  }
  return "?";
}

class Registry {
 public:
  void real(const std::string& sec, const std::string& key, double& ref) {
    add(sec, key, [&ref] { return fmt(ref); }, [&ref, w = sec + "." + key](const std::string& s) { ref = parse_double(s, w); });
  }
  void size(const std::string& sec, const std::string& key, std::size_t& ref) {
    add(sec, key, [&ref] { return std::to_string(ref); },
        [&ref, w = sec + "." + key](const std::string& s) { ref = static_cast<std::size_t>(parse_uint(s, w)); });
  }
  void u64(const std::string& sec, const std::string& key, std::uint64_t& ref) {
    add(sec, key, [&ref] { return std::to_string(ref); },
        [&ref, w = sec + "." + key](const std::string& s) { ref = parse_uint(s, w); });
  }
  void flag(const std::string& sec, const std::string& key, bool& ref) {
    add(sec, key, [&ref] { return std::string(ref ? "true" : "false"); },
        [&ref, w = sec + "." + key](const std::string& s) { ref = parse_bool(s, w); });
  }
  void text(const std::string& sec, const std::string& key, std::string& ref) {
    add(sec, key, [&ref] { return ref; }, [&ref](const std::string& s) { ref = s; });
  }
  template <class E>
  void choice(const std::string& sec, const std::string& key, E& ref, std::map<std::string, E> names) {
    add(sec, key, [&ref, names] { return enum_name(ref, names); },
        [&ref, names, w = sec + "." + key](const std::string& s) { ref = parse_enum(s, w, names); });
  }
  void neuron(const std::string& sec, neuron::NeuronParams& p) {
    real(sec, "alpha_v", p.alpha_v);
    real(sec, "alpha_u", p.alpha_u);
    real(sec, "v_rest", p.v_rest);
    real(sec, "u_rest", p.u_rest);
    real(sec, "resistance", p.resistance);
    real(sec, "v_th", p.v_th);
  }

  const std::vector<Field>& fields() const { return fields_; }

 private:
  void add(const std::string& sec, const std::string& key, std::function<std::string()> g,
           std::function<void(const std::string&)> s) {
    fields_.push_back(Field{sec, key, std::move(g), std::move(s)});
  }
  std::vector<Field> fields_;
};

Registry registry(TrainConfig& c) {
  Registry r;
  r.choice("train", "task", c.task, {{"cue", TaskKind::Cue}, {"character", TaskKind::Character}});
  r.size("train", "batch_episodes", c.batch_episodes);
  r.size("train", "outer_updates", c.outer_updates);
  r.real("train", "learning_rate", c.learning_rate);
  r.choice("train", "optimizer", c.optimizer, {{"sgd", OptimizerKind::Sgd}, {"adam", OptimizerKind::Adam}});
  r.real("train", "adam_beta1", c.adam_beta1);
  r.real("train", "adam_beta2", c.adam_beta2);
  r.real("train", "adam_eps", c.adam_eps);
  r.real("train", "grad_clip", c.grad_clip);
  r.u64("train", "seed", c.seed);
  r.size("train", "checkpoint_every", c.checkpoint_every);
  r.u64("train", "eval_seed", c.eval_seed);

  r.choice("spike", "mode", c.spike.mode, {{"hard", ad::SpikeMode::Hard}, {"smooth", ad::SpikeMode::Smooth}});
  r.real("spike", "surrogate_scale", c.spike.surrogate_scale);
  r.real("spike", "surrogate_magnitude", c.spike.surrogate_magnitude);

  r.size("cue", "n_cues", c.cue.n_cues);
  r.size("cue", "n_shot", c.cue.n_shot);
  r.flag("cue", "one_shot", c.one_shot);
  r.size("cue", "n_sensory", c.cue.n_sensory);
  r.size("cue", "group_size", c.cue.group_size);
  r.real("cue", "p_active", c.cue.p_active);
  r.real("cue", "p_background", c.cue.p_background);
  r.size("cue", "cue_duration", c.cue.cue_duration);
  r.size("cue", "inter_cue_gap", c.cue.inter_cue_gap);
  r.size("cue", "pre_decision_gap", c.cue.pre_decision_gap);
  r.size("cue", "decision_duration", c.cue.decision_duration);
  r.choice("cue", "readout_window", c.readout_window,
           {{"decision", ReadoutWindow::Decision}, {"trial", ReadoutWindow::Trial}});
  r.real("cue", "feedback_gain", c.feedback_gain);

  r.text("character", "manifest", c.manifest);
  r.flag("character", "augment", c.augment);
  r.real("character", "test_frac", c.test_frac);
  r.u64("character", "split_seed", c.split_seed);
  r.size("character", "present_ms", c.character.present_ms);
  r.size("character", "n_phase2", c.character.n_phase2);
  r.flag("character", "plastic", c.plastic);
  r.real("character", "input_gain", c.input_gain);
  r.neuron("character_input", c.input_neuron);

  auto& d = c.dp;
  r.size("dp", "n_hidden", d.n_hidden);
  r.choice("dp", "rule", d.rule, {{"pair", plasticity::Rule::Pair}, {"triplet", plasticity::Rule::Triplet}});
  r.real("dp", "density", d.density);
  r.real("dp", "inhib_frac", d.inhib_frac);
  r.real("dp", "w_init_scale", d.w_init_scale);
  r.real("dp", "w_min", d.bounds.w_min);
  r.real("dp", "w_max", d.bounds.w_max);
  r.real("dp", "mu", d.bounds.mu);
  r.choice("dp", "eta_granularity", d.eta_granularity,
           {{"layer", networks::EtaGranularity::Layer}, {"synapse", networks::EtaGranularity::Synapse}});
  r.real("dp", "eta_plus", d.eta_plus);
  r.real("dp", "eta_minus", d.eta_minus);
  r.real("dp", "alpha_e", d.alpha_e);
  r.real("dp", "gamma", d.gamma);
  r.choice("dp", "trace_form", d.trace_form,
           {{"linear", plasticity::TraceForm::Linear}, {"saturating", plasticity::TraceForm::Saturating}});
  r.real("dp", "trace_beta", d.trace_beta);
  r.real("dp", "trace_x_max", d.trace_x_max);
  r.real("dp", "trace_alpha_pre", d.trace_alpha_pre);
  r.real("dp", "trace_alpha_post", d.trace_alpha_post);
  r.real("dp", "trace_alpha_slow", d.trace_alpha_slow);
  r.real("dp", "w_out_scale", d.w_out_scale);
  r.real("dp", "w_out_mean", d.w_out_mean);
  r.neuron("dp_hidden", d.hidden_neuron);
  r.neuron("dp_output", d.output_neuron);

  r.size("nm", "n_layer1", c.nm.n_layer1);
  r.size("nm", "n_layer2", c.nm.n_layer2);
  r.real("nm", "w1_scale", c.nm.w1_scale);
  r.real("nm", "w2_scale", c.nm.w2_scale);
  r.real("nm", "readout_scale", c.nm.readout_scale);
  r.neuron("nm_neuron", c.nm.neuron);

  r.size("cnn", "image_size", c.cnn.height);
  r.size("cnn", "channels", c.cnn.channels);
  r.size("cnn", "kernel", c.cnn.kernel);
  r.size("cnn", "padding", c.cnn.padding);
  r.real("cnn", "norm_eps", c.cnn.norm_eps);
  r.real("cnn", "norm_gain", c.cnn.norm_gain);
  r.real("cnn", "out_gain", c.cnn.out_gain);

  r.real("readout", "weight", c.readout_weight);
  r.real("readout", "bias", c.readout_bias);
  return r;
}

pt::ptree read_ini_text(const std::string& text) {
  std::istringstream in(text);
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return tree;
}

TaskKind task_of(const pt::ptree& tree) {
  const auto v = tree.get_optional<std::string>(pt::ptree::path_type("train/task", '/'));
  if (!v) return TaskKind::Cue;
  return parse_enum<TaskKind>(*v, "train.task", {{"cue", TaskKind::Cue}, {"character", TaskKind::Character}});
}

TrainConfig apply_tree(const pt::ptree& tree, TrainConfig c) {
  Registry r = registry(c);
  std::map<std::string, const Field*> by_name;
  for (const auto& f : r.fields()) by_name[f.section + "." + f.key] = &f;
  for (const auto& [sec, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + sec + "' outside any section");
    for (const auto& [key, val] : body) {
      auto it = by_name.find(sec + "." + key);
      if (it == by_name.end()) throw ConfigError("config: unknown key '" + key + "' in section [" + sec + "]");
      it->second->set(val.data());
    }
  }
  if (c.cnn.height != c.cnn.width) c.cnn.width = c.cnn.height;
  c.derive();
  c.validate();
  return c;
}

}  // namespace

const char* to_string(TaskKind t) { return t == TaskKind::Cue ? "cue" : "character"; }

void TrainConfig::derive() {
  cnn.width = cnn.height;
  dp.spike = spike;
  nm.spike = spike;
  if (task == TaskKind::Cue) {
    dp.n_input = cue.n_sensory;
    dp.n_output = 2;
    nm.n_input = cue.n_sensory + dp.n_hidden + 2;
    nm.n_modulated = cue.n_sensory;
  } else {
    dp.n_input = cnn.output_size();
    dp.n_output = 1;
    nm.n_input = dp.n_input + dp.n_hidden;
    nm.n_modulated = dp.n_input;
  }
}

void TrainConfig::validate() const {
  if (batch_episodes == 0) throw ConfigError("train.batch_episodes must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("train: invalid adam constants");
  }
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be non-negative");
  spike.validate();
  dp.validate();
  nm.validate();
  input_neuron.validate();
  if (task == TaskKind::Cue) {
    cue.validate();
  } else {
    cnn.validate();
    character.validate();
    if (!(test_frac > 0.0 && test_frac < 1.0)) throw ConfigError("character.test_frac must lie in (0, 1)");
  }
}

TrainConfig default_config(TaskKind task) {
  TrainConfig c;
  c.task = task;
  if (task == TaskKind::Character) {
    c.outer_updates = 500;
    c.dp.rule = plasticity::Rule::Triplet;
  }
  c.derive();
  return c;
}

TrainConfig parse_config(const std::string& text) {
  const pt::ptree tree = read_ini_text(text);
  return apply_tree(tree, default_config(task_of(tree)));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig load_config(const std::filesystem::path& path) {
  TrainConfig c = parse_config(read_text_file(path));
  // dataset paths in a config file are relative to the file
  if (!c.manifest.empty() && std::filesystem::path(c.manifest).is_relative()) {
    c.manifest = std::filesystem::absolute(path.parent_path() / c.manifest).lexically_normal().string();
  }
  return c;
}

TrainConfig overlay_config(const std::string& text, TrainConfig base) { return apply_tree(read_ini_text(text), base); }

std::string to_text(const TrainConfig& cfg) {
  TrainConfig copy = cfg;
  Registry r = registry(copy);
  std::ostringstream os;
  std::string sec;
  for (const auto& f : r.fields()) {
    if (f.section != sec) {
      if (!sec.empty()) os << '\n';
      sec = f.section;
      os << '[' << sec << "]\n";
    }
    os << f.key << " = " << f.get() << '\n';
  }
  return os.str();
}

}  // namespace metaplast::harness
