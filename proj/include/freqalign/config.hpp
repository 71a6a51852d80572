#pragma once

// Flat "section.key = value" experiment configuration with typed accessors.
// Every key has a default; unknown keys are rejected.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "freqalign/evaluation.hpp"

namespace freqalign {

namespace detail {

struct KeyDoc {
  const char* key;
  const char* value;
};

// Desk-scale defaults.
inline constexpr KeyDoc kDefaults[] = {
    {"seed", "1"},
    {"output.dir", "runs/default"},
    {"data.kind", "distortion"},  // distortion | probe
    {"data.base", "mixture"},
    {"data.source.families", "gaussian-blur,block-average"},
    {"data.target.families", "additive-noise"},
    {"data.source.count", "240"},
    {"data.target.count", "240"},
    {"data.levels", "5"},
    {"data.size", "64"},
    {"data.crop", "64"},
    {"data.source.dir", ""},  // load instead of generating when set
    {"data.target.dir", ""},
    {"data.probe.row", "2"},
    {"data.probe.col", "3"},
    {"data.probe.source_jitter", "0"},
    {"data.probe.target_jitter", "0.15"},
    {"model.conv_channels", "8,16,32,64"},
    {"model.pool_blocks", "3"},
    {"model.hidden", "64"},
    {"model.disc_hidden", "64"},
    {"model.head", "distribution"},
    {"model.bins", "5"},
    {"model.band_scale", "0"},
    {"model.grl_lambda", "1"},
    {"model.grl_ramp", "0"},
    {"schedule.unit", "iterations"},  // iterations | epochs
    {"schedule.window", "10"},
    {"schedule.radius", "3"},
    {"schedule.interval", "10"},
    {"schedule.warmup", "100"},
    {"schedule.hold", "0"},      // extra iterations at j* before perturbation (auto T_m only)
    {"schedule.perturb", "0"},   // perturbation length (auto T_a only); 0 means (2k+1) T
    {"schedule.movement_end", "0"},
    {"schedule.total", "0"},
    {"schedule.bands", "0"},
    {"schedule.trajectory", "zigzag"},
    {"schedule.metric", "mmd"},
    {"schedule.selection", "argmax"},
    {"train.mode", "freqalign"},  // freqalign | dc-only | source-only
    {"train.batch", "16"},
    {"train.lr", "0.001"},
    {"train.weight_decay", "0.0005"},
    {"train.beta1", "0.9"},
    {"train.beta2", "0.999"},
    {"train.w_source", "1"},
    {"train.w_adv", "1"},
    {"train.w_target", "1"},
    {"train.target_loss", "none"},
    {"train.regression_loss", "mse"},
    {"train.augment", "true"},
    {"train.checkpoint_every", "0"},
    {"sweep.mode", "shared"},
    {"sweep.pretrain_steps", "200"},
    {"sweep.head_steps", "200"},
    {"sweep.head_hidden", "32"},
    {"sweep.head_lr", "0.003"},
    {"ablate.axis", "trajectory"},  // trajectory | metric | interval | window | bands
    {"ablate.intervals", "5,10,20"},
    {"ablate.windows", "1,5,10,20"},
    {"ablate.bands", "11,21,31,41,51,55"},
    {"ablate.seeds", "1"},
};

inline std::string trim_copy(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

class ExperimentConfig {
public:
  ExperimentConfig() {
    for (const auto& d : detail::kDefaults) values_[d.key] = d.value;
  }

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    require<ConfigError>(bool(is), "cannot read config file ", path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    ExperimentConfig c;
    c.merge_text(ss.str(), path.string());
    return c;
  }

  /// Parses "key = value" lines; '#' starts a comment.
  void merge_text(const std::string& text, const std::string& origin = "<text>") {
    std::istringstream is(text);
    std::string line;
    for (int row = 1; std::getline(is, line); ++row) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim_copy(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      require<ConfigError>(eq != std::string::npos, origin, ":", row, ": expected 'key = value', got '", line, "'");
      set(detail::trim_copy(line.substr(0, eq)), detail::trim_copy(line.substr(eq + 1)), origin + ":" + std::to_string(row));
    }
  }

  /// Applies one "key=value" override.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    require<ConfigError>(eq != std::string::npos, "override '", kv, "' is not of the form key=value");
    set(detail::trim_copy(kv.substr(0, eq)), detail::trim_copy(kv.substr(eq + 1)), "--set");
  }

  void set(const std::string& key, const std::string& value, const std::string& origin = "set") {
    require<ConfigError>(values_.count(key) == 1, origin, ": unknown config key '", key, "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) == 1; }
  const std::map<std::string, std::string>& values() const { return values_; }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    require<ConfigError>(it != values_.end(), "unknown config key '", key, "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    require<ConfigError>(!s.empty() && end == s.c_str() + s.size() && std::isfinite(v), "config key ", key,
                         " expects a finite number, got '", s, "'");
    return v;
  }

  long long integer(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    require<ConfigError>(!s.empty() && end == s.c_str() + s.size(), "config key ", key, " expects an integer, got '",
                         s, "'");
    return v;
  }

  bool boolean(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    fail<ConfigError>("config key ", key, " expects a boolean, got '", s, "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim_copy(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : list(key)) {
      char* end = nullptr;
      const long v = std::strtol(s.c_str(), &end, 10);
      require<ConfigError>(end == s.c_str() + s.size(), "config key ", key, " expects integers, got '", s, "'");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  nlohmann::json to_json() const { return nlohmann::json(values_); }

  /// Output directory; relative paths resolve against FREQALIGN_OUTPUT_ROOT when set.
  std::filesystem::path output_dir() const {
    std::filesystem::path p = str("output.dir");
    if (p.is_relative())
      if (const char* root = std::getenv("FREQALIGN_OUTPUT_ROOT"); root && *root) p = std::filesystem::path(root) / p;
    return p;
  }

  std::uint64_t seed() const {
    const long long s = integer("seed");
    require<ConfigError>(s >= 0, "seed must be nonnegative");
    return static_cast<std::uint64_t>(s);
  }

private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Typed views

enum class TrainMode { freqalign, dc_only, source_only };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::freqalign: return "freqalign";
    case TrainMode::dc_only: return "dc-only";
    case TrainMode::source_only: return "source-only";
  }
  return "?";
}

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "freqalign") return TrainMode::freqalign;
  if (s == "dc-only") return TrainMode::dc_only;
  if (s == "source-only") return TrainMode::source_only;
  fail<ConfigError>("unknown train.mode '", s, "' (expected freqalign, dc-only or source-only)");
}

template <class F>
auto config_field(const std::string& key, F&& parse) -> decltype(parse()) {
  try {
    return parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

inline ModelConfig model_config(const ExperimentConfig& c) {
  ModelConfig m;
  m.input_size = static_cast<int>(c.integer("data.crop"));
  m.conv_channels = c.int_list("model.conv_channels");
  m.pool_blocks = static_cast<int>(c.integer("model.pool_blocks"));
  m.hidden = static_cast<int>(c.integer("model.hidden"));
  m.disc_hidden = static_cast<int>(c.integer("model.disc_hidden"));
  m.head = config_field("model.head", [&] { return parse_head(c.str("model.head")); });
  m.bins = static_cast<int>(c.integer("model.bins"));
  m.band_scale = c.real("model.band_scale");
  m.grl_lambda = c.real("model.grl_lambda");
  m.grl_ramp = static_cast<int>(c.integer("model.grl_ramp"));
  const TrainMode mode = config_field("train.mode", [&] { return parse_train_mode(c.str("train.mode")); });
  m.window = mode == TrainMode::freqalign ? static_cast<int>(c.integer("schedule.window")) : 1;
  return m;
}

/// Scheduler configuration with phase boundaries resolved to iterations.
inline SchedulerConfig scheduler_config(const ExperimentConfig& c, int steps_per_epoch) {
  const ModelConfig m = model_config(c);
  require<ConfigError>(m.pool_blocks >= 0 && m.pool_blocks < 30 && m.input_size >= 1, "model: invalid geometry");
  const std::string unit = c.str("schedule.unit");
  require<ConfigError>(unit == "iterations" || unit == "epochs", "schedule.unit must be iterations or epochs, got '",
                       unit, "'");
  const long long scale = unit == "epochs" ? steps_per_epoch : 1;
  auto iters = [&](const char* key) {
    const long long v = c.integer(key);
    require<ConfigError>(v >= 0, key, " must be nonnegative");
    return static_cast<int>(v * scale);
  };
  SchedulerConfig s;
  s.grid_cells = m.grid() * m.grid();
  s.window = m.window;
  s.radius = static_cast<int>(c.integer("schedule.radius"));
  s.interval = iters("schedule.interval");
  s.warmup_end = iters("schedule.warmup");
  s.bands = static_cast<int>(c.integer("schedule.bands"));
  s.trajectory = config_field("schedule.trajectory", [&] { return parse_trajectory(c.str("schedule.trajectory")); });
  s.metric = config_field("schedule.metric", [&] { return parse_metric(c.str("schedule.metric")); });
  s.selection = config_field("schedule.selection", [&] { return parse_selection(c.str("schedule.selection")); });
  // both baselines sit on the DC coefficient for the whole run
  if (parse_train_mode(c.str("train.mode")) != TrainMode::freqalign) {
    s.bands = 1;
    s.radius = 0;
  }
  if (s.bands == 0 && s.window >= 1 && s.window <= s.grid_cells) s.bands = s.max_bands();
  s.movement_end = iters("schedule.movement_end");
  if (s.movement_end == 0) s.movement_end = s.warmup_end + s.bands * s.interval + iters("schedule.hold");
  s.total = iters("schedule.total");
  if (s.total == 0) {
    const int perturb = iters("schedule.perturb");
    s.total = s.movement_end + (perturb > 0 ? perturb : (2 * s.radius + 1) * s.interval);
  }
  return s;
}

inline TrainConfig train_config(const ExperimentConfig& c) {
  TrainConfig t;
  t.batch = static_cast<int>(c.integer("train.batch"));
  t.crop = static_cast<int>(c.integer("data.crop"));
  t.adam.lr = c.real("train.lr");
  t.adam.weight_decay = c.real("train.weight_decay");
  t.adam.beta1 = c.real("train.beta1");
  t.adam.beta2 = c.real("train.beta2");
  t.w_source = c.real("train.w_source");
  t.w_adv = c.real("train.w_adv");
  t.w_target = c.real("train.w_target");
  t.target_loss = config_field("train.target_loss", [&] { return parse_target_loss(c.str("train.target_loss")); });
  t.regression_loss =
      config_field("train.regression_loss", [&] { return parse_regression_loss(c.str("train.regression_loss")); });
  t.augment = c.boolean("train.augment");
  t.source_only = parse_train_mode(c.str("train.mode")) == TrainMode::source_only;
  t.seed = c.seed();
  return t;
}

inline SweepConfig sweep_config(const ExperimentConfig& c) {
  SweepConfig s;
  s.mode = config_field("sweep.mode", [&] { return parse_sweep_mode(c.str("sweep.mode")); });
  s.pretrain_steps = static_cast<int>(c.integer("sweep.pretrain_steps"));
  s.head_steps = static_cast<int>(c.integer("sweep.head_steps"));
  s.head_hidden = static_cast<int>(c.integer("sweep.head_hidden"));
  s.head_lr = c.real("sweep.head_lr");
  s.seed = c.seed();
  require<ConfigError>(s.pretrain_steps >= 0 && s.head_steps >= 1 && s.head_hidden >= 1 && s.head_lr > 0.0,
                       "sweep: step counts, width and learning rate must be positive");
  return s;
}

/// Checks everything a run needs before any work starts.
inline void validate(const ExperimentConfig& c) {
  const ModelConfig m = model_config(c);
  config_field("model", [&] {
    m.validate();
    return 0;
  });
  const TrainConfig t = train_config(c);
  t.validate();
  scheduler_config(c, 1).validate();  // epochs are rescaled again once the data size is known
  sweep_config(c);
  for (const auto& f : c.list("data.source.families")) config_field("data.source.families", [&] { return parse_family(f); });
  for (const auto& f : c.list("data.target.families")) config_field("data.target.families", [&] { return parse_family(f); });
  config_field("data.base", [&] { return parse_base(c.str("data.base")); });
  const std::string kind = c.str("data.kind");
  require<ConfigError>(kind == "distortion" || kind == "probe", "data.kind must be distortion or probe, got '", kind, "'");
  require<ConfigError>(c.integer("data.size") >= c.integer("data.crop"), "data.size must be at least data.crop");
  require<ConfigError>(c.integer("data.source.count") >= 1 && c.integer("data.target.count") >= 1,
                       "data counts must be positive");
  require<ConfigError>(c.integer("data.levels") >= 2, "data.levels must be at least 2");
  require<ConfigError>(c.integer("train.checkpoint_every") >= 0, "train.checkpoint_every must be nonnegative");
}

}  // namespace freqalign
