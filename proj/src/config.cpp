#include "saelab/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace saelab {

FrequencyLaw LawSettings::resolve() const {
  if (kind == "uniform") return UniformLaw{};
  if (kind == "zipf") return ZipfLaw{alpha};
  if (kind == "two_phase") return two_phase;
  throw ConfigError("unknown frequency law '" + kind + "' (expected uniform, zipf or two_phase)");
}

GroundTruthSpec ExperimentConfig::ground_truth_spec() const {
  GroundTruthSpec s = data;
  s.law = law.resolve();
  return s;
}

void ExperimentConfig::validate() const {
  if (train.seeds.empty()) throw ConfigError("config: seed list is empty");
  if (archs.empty()) throw ConfigError("config: no architectures selected");
  if (d_sae == 0) throw ConfigError("config: d_sae must be positive");
  if (!sweep_key.empty() && sweep_values.empty()) throw ConfigError("config: sweep_key set without sweep_values");
  if (sweep_key.empty() && !sweep_values.empty()) throw ConfigError("config: sweep_values set without sweep_key");
  if (!sweep_key.empty()) {
    const auto keys = config_keys();
    if (std::find(keys.begin(), keys.end(), sweep_key) == keys.end())
      throw ConfigError("config: unknown sweep key '" + sweep_key + "'");
  }
  try {
    train.validate();
    if (synthetic()) {
      ground_truth_spec().validate();
    } else if (activation_dim == 0) {
      throw ConfigError("config: activations given without activation_dim");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (analysis.bins == 0) throw ConfigError("config: analysis.bins must be positive");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>)
      out += v[i];
    else
      out += fmt(static_cast<std::size_t>(v[i]));
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto s = trim(v);
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    // Accept integral scientific notation such as 5e4.
    double d = 0.0;
    auto rd = std::from_chars(s.data(), s.data() + s.size(), d);
    if (rd.ec != std::errc() || rd.ptr != s.data() + s.size() || d < 0 || d != static_cast<double>(static_cast<std::size_t>(d)))
      throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    out = static_cast<std::size_t>(d);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto s = trim(v);
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto s = trim(v);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

struct KeyDef {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SAELAB_SIZE(key, field) \
  KeyDef{key, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = to_size(k, v); }, \
         [](const ExperimentConfig& c) { return fmt(static_cast<std::size_t>(c.field)); }}
#define SAELAB_REAL(key, field) \
  KeyDef{key, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
         [](const ExperimentConfig& c) { return fmt(static_cast<double>(c.field)); }}
#define SAELAB_BOOL(key, field) \
  KeyDef{key, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
         [](const ExperimentConfig& c) { return fmt(static_cast<bool>(c.field)); }}

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      KeyDef{"experiment.name", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.name = trim(v); },
             [](const ExperimentConfig& c) { return c.name; }},
      KeyDef{"experiment.output_dir",
             [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output_dir = trim(v); },
             [](const ExperimentConfig& c) { return c.output_dir.string(); }},
      KeyDef{"experiment.archs",
             [](ExperimentConfig& c, const std::string&, const std::string& v) {
               c.archs.clear();
               for (const auto& a : split_list(v)) {
                 try {
                   c.archs.push_back(parse_arch(a));
                 } catch (const std::exception& e) {
                   throw ConfigError(std::string("config: experiment.archs: ") + e.what());
                 }
               }
             },
             [](const ExperimentConfig& c) {
               std::vector<std::string> names;
               for (Arch a : c.archs) names.push_back(to_string(a));
               return join(names);
             }},
      SAELAB_SIZE("experiment.d_sae", d_sae),
      SAELAB_SIZE("experiment.workers", workers),
      KeyDef{"experiment.sweep_key", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.sweep_key = trim(v); },
             [](const ExperimentConfig& c) { return c.sweep_key; }},
      KeyDef{"experiment.sweep_values",
             [](ExperimentConfig& c, const std::string&, const std::string& v) { c.sweep_values = split_list(v); },
             [](const ExperimentConfig& c) { return join(c.sweep_values); }},
      KeyDef{"experiment.activations",
             [](ExperimentConfig& c, const std::string&, const std::string& v) { c.activations = trim(v); },
             [](const ExperimentConfig& c) { return c.activations.string(); }},
      SAELAB_SIZE("experiment.activation_dim", activation_dim),

      SAELAB_SIZE("data.m", data.m),
      SAELAB_SIZE("data.d_gt", data.d_gt),
      SAELAB_SIZE("data.k", data.k),
      SAELAB_SIZE("data.n", data.n),
      SAELAB_SIZE("data.clusters", data.clusters),
      KeyDef{"data.law", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.law.kind = trim(v); },
             [](const ExperimentConfig& c) { return c.law.kind; }},
      SAELAB_REAL("data.alpha", law.alpha),
      SAELAB_REAL("data.s1", law.two_phase.s1),
      SAELAB_REAL("data.q", law.two_phase.q),
      SAELAB_REAL("data.s2", law.two_phase.s2),
      SAELAB_SIZE("data.transition_rank", law.two_phase.transition_rank),
      SAELAB_SIZE("data.seed", data.seed),
      SAELAB_BOOL("data.signed_values", data.signed_values),
      SAELAB_BOOL("data.normalize_columns", data.normalize_columns),

      SAELAB_REAL("model.sparsity_coeff", arch_params.sparsity_coeff),
      SAELAB_SIZE("model.k", arch_params.k),
      SAELAB_REAL("model.ema_decay", arch_params.ema_decay),
      SAELAB_REAL("model.p_end", arch_params.p_end),
      SAELAB_SIZE("model.anneal_interval", arch_params.anneal_interval),
      SAELAB_REAL("model.target_l0", arch_params.target_l0),
      SAELAB_REAL("model.bandwidth", arch_params.bandwidth),
      SAELAB_REAL("model.initial_threshold", arch_params.initial_threshold),

      SAELAB_SIZE("train.steps", train.steps),
      SAELAB_SIZE("train.batch_size", train.batch_size),
      SAELAB_REAL("train.lr", train.lr),
      SAELAB_SIZE("train.warmup_steps", train.warmup_steps),
      SAELAB_REAL("train.lr_decay_factor", train.lr_decay_factor),
      KeyDef{"train.lr_decay_steps",
             [](ExperimentConfig& c, const std::string& k, const std::string& v) {
               c.train.lr_decay_steps.clear();
               for (const auto& s : split_list(v)) c.train.lr_decay_steps.push_back(to_size(k, s));
             },
             [](const ExperimentConfig& c) { return join(c.train.lr_decay_steps); }},
      SAELAB_REAL("train.min_lr", train.min_lr),
      SAELAB_SIZE("train.sparsity_warmup_steps", train.sparsity_warmup_steps),
      KeyDef{"train.seeds",
             [](ExperimentConfig& c, const std::string& k, const std::string& v) {
               c.train.seeds.clear();
               for (const auto& s : split_list(v)) c.train.seeds.push_back(to_size(k, s));
             },
             [](const ExperimentConfig& c) { return join(c.train.seeds); }},
      SAELAB_SIZE("train.checkpoint_interval", train.checkpoint_interval),
      SAELAB_SIZE("train.eval_interval", train.eval_interval),
      SAELAB_REAL("train.clip_norm", train.standard_clip_norm),

      SAELAB_BOOL("analysis.pw_mcc", analysis.pw_mcc),
      SAELAB_BOOL("analysis.gt_mcc", analysis.gt_mcc),
      SAELAB_BOOL("analysis.intersection_ratio", analysis.intersection_ratio),
      SAELAB_BOOL("analysis.capacity_allocation", analysis.capacity_allocation),
      SAELAB_BOOL("analysis.binned_similarity", analysis.binned_similarity),
      SAELAB_BOOL("analysis.spark_check", analysis.spark_check),
      SAELAB_SIZE("analysis.bins", analysis.bins),
      KeyDef{"analysis.bin_mode",
             [](ExperimentConfig& c, const std::string& k, const std::string& v) {
               const auto s = trim(v);
               if (s == "log")
                 c.analysis.bin_mode = BinMode::Log;
               else if (s == "quantile")
                 c.analysis.bin_mode = BinMode::Quantile;
               else
                 throw ConfigError("config: " + k + " expects log or quantile, got '" + v + "'");
             },
             [](const ExperimentConfig& c) { return to_string(c.analysis.bin_mode); }},
      SAELAB_SIZE("analysis.curve_points", analysis.curve_points),
  };
  return defs;
}

#undef SAELAB_SIZE
#undef SAELAB_REAL
#undef SAELAB_BOOL

const KeyDef& find_key(const std::string& key) {
  for (const auto& d : key_defs())
    if (d.name == key) return d;
  throw ConfigError("config: unknown key '" + key + "'");
}

ExperimentConfig synthetic_base(std::size_t m, std::size_t d_gt, std::size_t k, std::size_t n, std::size_t d_sae) {
  ExperimentConfig c;
  c.data.m = m;
  c.data.d_gt = d_gt;
  c.data.k = k;
  c.data.n = n;
  c.d_sae = d_sae;
  c.arch_params.k = k;
  return c;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"matched",        "redundant",      "compressive",
                                                 "uniform_clusters", "zipf_sweep",   "two_phase_desk",
                                                 "two_phase_full", "two_phase",      "k_sweep",
                                                 "custom"};
  return names;
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "matched") {
    c = synthetic_base(8, 16, 3, 50000, 16);
    c.archs = {Arch::TopK, Arch::Standard};
  } else if (name == "redundant") {
    c = synthetic_base(20, 80, 8, 50000, 160);
    c.analysis.intersection_ratio = true;
  } else if (name == "compressive") {
    c = synthetic_base(20, 800, 8, 50000, 80);
  } else if (name == "uniform_clusters") {
    c = synthetic_base(20, 800, 8, 100000, 80);
    c.train.seeds = {0, 1, 2};
    c.sweep_key = "data.clusters";
    c.sweep_values = {"1", "10", "50", "100"};
  } else if (name == "zipf_sweep") {
    c = synthetic_base(20, 800, 8, 100000, 80);
    c.data.clusters = 10;
    c.law.kind = "zipf";
    c.train.seeds = {0, 1, 2};
    c.sweep_key = "data.alpha";
    c.sweep_values = {"1", "1.1", "1.5", "2"};
    c.analysis.capacity_allocation = true;
    c.analysis.binned_similarity = true;
  } else if (name == "two_phase_desk" || name == "two_phase") {
    c = synthetic_base(20, 40000, 8, 100000, 1000);
    c.data.clusters = 5000;
    c.law.kind = "two_phase";
    c.law.two_phase = TwoPhaseLaw{1.05, 5.0, 30.0, 4000};
    c.train.seeds = {0, 1, 2};
    c.analysis.gt_mcc = false;
    c.analysis.binned_similarity = true;
    c.analysis.curve_points = 3;
  } else if (name == "two_phase_full") {
    c = synthetic_base(20, 400000, 8, 100000, 1000);
    c.data.clusters = 50000;
    c.law.kind = "two_phase";
    c.law.two_phase = TwoPhaseLaw{1.05, 5.0, 30.0, 40000};
    c.train.seeds = {0, 1, 2};
    c.sweep_key = "experiment.d_sae";
    c.sweep_values = {"80", "160", "1000", "10000"};
    c.analysis.gt_mcc = false;
    c.analysis.binned_similarity = true;
    c.analysis.curve_points = 3;
  } else if (name == "k_sweep") {
    c = synthetic_base(8, 40, 8, 50000, 40);
    c.train.eval_interval = 20;
    c.sweep_key = "model.k";
    c.sweep_values = {"2", "4", "6", "8", "10", "12", "14", "16"};
  } else if (name != "custom") {
    throw ConfigError("unknown experiment '" + name + "'");
  }
  c.name = name == "two_phase" ? "two_phase_desk" : name;
  return c;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& d : key_defs()) out.push_back(d.name);
  return out;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_key(key).set(cfg, key, value);
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) { return find_key(key).get(cfg); }

const std::vector<std::string>& pinned_keys() {
  static const std::vector<std::string> keys = {
      "data.m",           "data.d_gt",       "data.k",           "data.n",
      "data.clusters",    "data.law",        "data.alpha",       "data.s1",
      "data.q",           "data.s2",         "data.transition_rank", "data.signed_values",
      "data.normalize_columns", "experiment.d_sae", "experiment.sweep_key", "experiment.sweep_values",
      "model.k",          "model.sparsity_coeff", "train.steps",  "train.batch_size",
      "train.lr",         "train.warmup_steps", "train.lr_decay_factor", "train.lr_decay_steps",
      "train.min_lr",     "experiment.activations"};
  return keys;
}

ConfigEntries read_ini(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  ConfigEntries out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside any section in " + path.string());
    for (const auto& [key, value] : body) out.emplace_back(section + "." + key, value.data());
  }
  return out;
}

std::string to_ini(const ExperimentConfig& cfg) {
  boost::property_tree::ptree tree;
  for (const auto& d : key_defs()) tree.put(boost::property_tree::ptree::path_type(d.name, '.'), d.get(cfg));
  std::ostringstream out;
  boost::property_tree::write_ini(out, tree);
  return out.str();
}

std::pair<std::string, std::string> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' must look like section.key=value");
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

ExperimentConfig resolve_config(const std::optional<std::string>& preset_name, const ConfigEntries& file_entries,
                                const ConfigEntries& overrides, bool force) {
  std::string name = "custom";
  for (const auto& [k, v] : file_entries)
    if (k == "experiment.name") name = trim(v);
  if (preset_name) {
    if (name != "custom" && preset(name).name != preset(*preset_name).name && !force)
      throw ConfigError("config file names experiment '" + name + "' but '" + *preset_name + "' was requested");
    name = *preset_name;
  }
  const ExperimentConfig base = preset(name);
  ExperimentConfig cfg = base;
  for (const auto& [k, v] : file_entries)
    if (k != "experiment.name") set_config_value(cfg, k, v);
  for (const auto& [k, v] : overrides) {
    if (k == "experiment.name") throw ConfigError("experiment.name cannot be overridden");
    set_config_value(cfg, k, v);
  }
  if (cfg.name != "custom" && !force) {
    std::vector<std::string> changed;
    for (const auto& key : pinned_keys())
      if (get_config_value(cfg, key) != get_config_value(base, key))
        changed.push_back(key + " (" + get_config_value(base, key) + " -> " + get_config_value(cfg, key) + ")");
    if (!changed.empty()) {
      std::string msg = "preset '" + cfg.name + "' fixes ";
      for (std::size_t i = 0; i < changed.size(); ++i) msg += (i ? ", " : "") + changed[i];
      throw ConfigError(msg + "; pass --force to override");
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace saelab
