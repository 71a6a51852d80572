#pragma once

// Single-file training archive: format tag, JSON header (configs, scheduler
// state, optimiser step count, tensor directory), then raw parameter data.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>

#include "json.hpp"

#include "freqalign/training.hpp"

namespace freqalign {

inline constexpr char kCheckpointMagic[8] = {'F', 'Q', 'A', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// Config <-> JSON

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"input_size", m.input_size}, {"input_channels", m.input_channels}, {"conv_channels", m.conv_channels},
          {"pool_blocks", m.pool_blocks}, {"window", m.window},               {"hidden", m.hidden},
          {"disc_hidden", m.disc_hidden}, {"head", to_string(m.head)},        {"bins", m.bins},
          {"band_scale", m.band_scale},   {"grl_lambda", m.grl_lambda},       {"grl_ramp", m.grl_ramp}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.input_size = j.at("input_size").get<int>();
  m.input_channels = j.at("input_channels").get<int>();
  m.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  m.pool_blocks = j.at("pool_blocks").get<int>();
  m.window = j.at("window").get<int>();
  m.hidden = j.at("hidden").get<int>();
  m.disc_hidden = j.at("disc_hidden").get<int>();
  m.head = parse_head(j.at("head").get<std::string>());
  m.bins = j.at("bins").get<int>();
  m.band_scale = j.at("band_scale").get<double>();
  m.grl_lambda = j.at("grl_lambda").get<double>();
  m.grl_ramp = j.at("grl_ramp").get<int>();
  return m;
}

inline nlohmann::json to_json(const SchedulerConfig& s) {
  return {{"window", s.window},
          {"radius", s.radius},
          {"interval", s.interval},
          {"warmup_end", s.warmup_end},
          {"movement_end", s.movement_end},
          {"total", s.total},
          {"bands", s.bands},
          {"grid_cells", s.grid_cells},
          {"trajectory", to_string(s.trajectory)},
          {"metric", to_string(s.metric)},
          {"selection", to_string(s.selection)}};
}

inline SchedulerConfig scheduler_config_from_json(const nlohmann::json& j) {
  SchedulerConfig s;
  s.window = j.at("window").get<int>();
  s.radius = j.at("radius").get<int>();
  s.interval = j.at("interval").get<int>();
  s.warmup_end = j.at("warmup_end").get<int>();
  s.movement_end = j.at("movement_end").get<int>();
  s.total = j.at("total").get<int>();
  s.bands = j.at("bands").get<int>();
  s.grid_cells = j.at("grid_cells").get<int>();
  s.trajectory = parse_trajectory(j.at("trajectory").get<std::string>());
  s.metric = parse_metric(j.at("metric").get<std::string>());
  s.selection = parse_selection(j.at("selection").get<std::string>());
  return s;
}

namespace detail {

inline nlohmann::json nullable(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
inline double from_nullable(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const SchedulerState& s) {
  nlohmann::json latest = nlohmann::json::array();
  for (double v : s.latest) latest.push_back(detail::nullable(v));
  nlohmann::json intervals = nlohmann::json::array();
  for (const auto& r : s.intervals) intervals.push_back({r.t, to_string(r.phase), r.band, r.mean});
  return {{"phase", to_string(s.phase)}, {"t", s.t},           {"band", s.band},
          {"direction", s.direction},    {"j_star", s.j_star}, {"history", s.history},
          {"latest", latest},            {"acc_sum", s.acc_sum}, {"acc_count", s.acc_count},
          {"intervals", intervals}};
}

inline SchedulerState scheduler_state_from_json(const nlohmann::json& j) {
  SchedulerState s;
  s.phase = parse_phase(j.at("phase").get<std::string>());
  s.t = j.at("t").get<int>();
  s.band = j.at("band").get<int>();
  s.direction = j.at("direction").get<int>();
  s.j_star = j.at("j_star").get<int>();
  s.history = j.at("history").get<std::vector<double>>();
  for (const auto& v : j.at("latest")) s.latest.push_back(detail::from_nullable(v));
  s.acc_sum = j.at("acc_sum").get<double>();
  s.acc_count = j.at("acc_count").get<int>();
  for (const auto& r : j.at("intervals"))
    s.intervals.push_back({r.at(0).get<int>(), parse_phase(r.at(1).get<std::string>()), r.at(2).get<int>(),
                           r.at(3).get<double>()});
  return s;
}

// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelConfig model;
  SchedulerConfig scheduler;
  SchedulerState state;
  long long adam_steps = 0;
  nlohmann::json extra;  // experiment settings archived with the weights
  std::map<std::string, nn::Param> tensors;
};

namespace detail {

inline void write_matrix(std::ofstream& os, const Matrix& m) {
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline void read_matrix(std::ifstream& is, Matrix& m, const std::filesystem::path& path) {
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  require<DataError>(bool(is), "checkpoint ", path.string(), " is truncated");
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, Model& model, const FrequencyScheduler& scheduler,
                            long long adam_steps, const nlohmann::json& extra = nlohmann::json::object()) {
  const auto params = model.parameters();
  nlohmann::json dir = nlohmann::json::array();
  for (const auto* p : params) dir.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  const nlohmann::json header = {{"format", "freqalign-checkpoint"},
                                 {"version", kCheckpointVersion},
                                 {"model", to_json(model.config())},
                                 {"scheduler_config", to_json(scheduler.config())},
                                 {"scheduler_state", to_json(scheduler.state())},
                                 {"adam_steps", adam_steps},
                                 {"experiment", extra},
                                 {"tensors", dir}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require<DataError>(bool(os), "cannot write checkpoint ", tmp.string());
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    os.write(reinterpret_cast<const char*>(&version), sizeof version);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : params) {
      detail::write_matrix(os, p->value);
      detail::write_matrix(os, p->m1);
      detail::write_matrix(os, p->m2);
    }
    require<DataError>(bool(os), "failed writing checkpoint ", tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  require<DataError>(std::filesystem::is_regular_file(path), "checkpoint not found: ", path.string());
  std::ifstream is(path, std::ios::binary);
  require<DataError>(bool(is), "cannot open checkpoint ", path.string());
  char magic[sizeof kCheckpointMagic];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  is.read(magic, sizeof magic);
  require<DataError>(bool(is) && std::memcmp(magic, kCheckpointMagic, sizeof magic) == 0, path.string(),
                     " is not a freqalign checkpoint");
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  require<DataError>(bool(is), "checkpoint ", path.string(), " is truncated");
  require<DataError>(version == kCheckpointVersion, "checkpoint version ", version, " is not supported (expected ",
                     kCheckpointVersion, ")");
  require<DataError>(len < (1ull << 31), "checkpoint header length ", len, " is implausible");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  require<DataError>(bool(is), "checkpoint ", path.string(), " is truncated");

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.model = model_config_from_json(header.at("model"));
    ck.scheduler = scheduler_config_from_json(header.at("scheduler_config"));
    ck.state = scheduler_state_from_json(header.at("scheduler_state"));
    ck.adam_steps = header.at("adam_steps").get<long long>();
    ck.extra = header.value("experiment", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      nn::Param p(t.at("name").get<std::string>(), t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
      detail::read_matrix(is, p.value, path);
      detail::read_matrix(is, p.m1, path);
      detail::read_matrix(is, p.m2, path);
      ck.tensors.emplace(p.name, std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    fail<DataError>("checkpoint ", path.string(), " has a malformed header: ", e.what());
  }
  is.peek();
  require<DataError>(is.eof(), "checkpoint ", path.string(), " has trailing data");
  return ck;
}

/// Copies archived tensors into `model`; every parameter must be present with a matching shape.
inline void apply_checkpoint(const Checkpoint& ck, Model& model) {
  for (auto* p : model.parameters()) {
    const auto it = ck.tensors.find(p->name);
    require<DataError>(it != ck.tensors.end(), "checkpoint lacks tensor ", p->name);
    require<DataError>(it->second.value.rows() == p->value.rows() && it->second.value.cols() == p->value.cols(),
                       "checkpoint tensor ", p->name, " has shape ", it->second.value.rows(), "x",
                       it->second.value.cols(), ", model expects ", p->value.rows(), "x", p->value.cols());
    p->value = it->second.value;
    p->m1 = it->second.m1;
    p->m2 = it->second.m2;
  }
}

/// Inference model rebuilt from an archive.
inline Model load_model(const Checkpoint& ck) {
  Model model(ck.model, 0);
  apply_checkpoint(ck, model);
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, Trainer& trainer,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  save_checkpoint(path, trainer.model(), trainer.scheduler(), trainer.optimizer().steps(), extra);
}

/// Restores weights, optimiser moments and scheduler state into a trainer
/// built from the same configuration.
inline void resume_from(const Checkpoint& ck, Trainer& trainer) {
  require<ConfigError>(to_json(ck.model) == to_json(trainer.model().config()),
                       "checkpoint model configuration differs from the current one");
  require<ConfigError>(to_json(ck.scheduler) == to_json(trainer.scheduler().config()),
                       "checkpoint scheduler configuration differs from the current one");
  apply_checkpoint(ck, trainer.model());
  trainer.restore(ck.state, ck.adam_steps);
}

}  // namespace freqalign
