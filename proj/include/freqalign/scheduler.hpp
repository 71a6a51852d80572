#pragma once

// Three-phase frequency-movement schedule: warm-up on band 0, a sliding-window
// traversal that scores every band, then perturbation around the best band.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "freqalign/metrics.hpp"
#include "freqalign/spectral.hpp"

namespace freqalign {

enum class Phase { warmup, movement, perturbation, complete };
enum class Selection { argmax, argmin };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::warmup: return "warmup";
    case Phase::movement: return "movement";
    case Phase::perturbation: return "perturbation";
    case Phase::complete: return "complete";
  }
  return "?";
}

inline Phase parse_phase(std::string_view s) {
  if (s == "warmup") return Phase::warmup;
  if (s == "movement") return Phase::movement;
  if (s == "perturbation") return Phase::perturbation;
  if (s == "complete") return Phase::complete;
  fail("unknown phase '", s, "'");
}

inline std::string_view to_string(Selection s) { return s == Selection::argmax ? "argmax" : "argmin"; }

inline Selection parse_selection(std::string_view s) {
  if (s == "argmax") return Selection::argmax;
  if (s == "argmin") return Selection::argmin;
  fail("unknown selection direction '", s, "' (expected argmax or argmin)");
}

struct SchedulerConfig {
  int window = 10;        // frequencies per band (m)
  int radius = 3;         // perturbation radius (k)
  int interval = 10;      // iterations per movement interval (T)
  int warmup_end = 100;   // T_w
  int movement_end = 0;   // T_m; 0 means warmup_end + bands * interval
  int total = 0;          // T_a; 0 means movement_end + (2 * radius + 1) * interval
  int bands = 0;          // bands traversed during movement; 0 means all of them
  int grid_cells = 64;    // H * W of the frequency grid
  TrajectoryKind trajectory = TrajectoryKind::zigzag;
  MetricKind metric = MetricKind::mmd;
  Selection selection = Selection::argmax;

  int max_bands() const { return band_count(grid_cells, window); }

  /// Copy with the zero-valued "auto" fields filled in.
  SchedulerConfig resolved() const {
    SchedulerConfig c = *this;
    if (c.bands == 0) c.bands = c.max_bands();
    if (c.movement_end == 0) c.movement_end = c.warmup_end + c.bands * c.interval;
    if (c.total == 0) c.total = c.movement_end + (2 * c.radius + 1) * c.interval;
    return c;
  }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const {
    require<ConfigError>(grid_cells >= 1, "scheduler: grid must have at least one cell");
    require<ConfigError>(window >= 1 && window <= grid_cells, "scheduler: window m = ", window,
                         " violates 1 <= m <= H*W = ", grid_cells);
    require<ConfigError>(radius >= 0, "scheduler: radius k = ", radius, " violates 0 <= k");
    require<ConfigError>(interval >= 1, "scheduler: interval T = ", interval, " must be positive");
    require<ConfigError>(bands >= 1 && bands <= max_bands(), "scheduler: n_bands = ", bands,
                         " violates 1 <= n_bands <= H*W - m + 1 = ", max_bands());
    require<ConfigError>(warmup_end > 0, "scheduler: T_w = ", warmup_end, " violates 0 < T_w");
    require<ConfigError>(warmup_end < movement_end, "scheduler: T_w = ", warmup_end, " violates T_w < T_m = ",
                         movement_end);
    require<ConfigError>(movement_end <= total, "scheduler: T_m = ", movement_end, " violates T_m <= T_a = ", total);
    require<ConfigError>(movement_end - warmup_end >= bands * interval, "scheduler: T_m - T_w = ",
                         movement_end - warmup_end, " violates T_m - T_w >= n_bands * T = ", bands * interval);
  }
};

/// Index of the best interval average; ties go to the lowest index.
inline int select_optimal(std::span<const double> history, Selection sel = Selection::argmax) {
  require(!history.empty(), "select_optimal needs at least one interval average");
  int best = 0;
  for (int j = 1; j < static_cast<int>(history.size()); ++j) {
    const bool better = sel == Selection::argmax ? history[j] > history[best] : history[j] < history[best];
    if (better) best = j;
  }
  return best;
}

struct IntervalRecord {
  int t = 0;  // iteration count at the end of the interval
  Phase phase = Phase::warmup;
  int band = 0;
  double mean = 0.0;
};

struct SchedulerState {
  Phase phase = Phase::warmup;
  int t = 0;
  int band = 0;
  int direction = +1;
  int j_star = -1;
  std::vector<double> history;  // movement-phase averages, one per traversed band
  std::vector<double> latest;   // most recent average per band, NaN when never measured
  double acc_sum = 0.0;
  int acc_count = 0;
  std::vector<IntervalRecord> intervals;  // per-interval log, oldest first
};

class FrequencyScheduler {
public:
  explicit FrequencyScheduler(const SchedulerConfig& config) : config_(config.resolved()) {
    config_.validate();
    state_.latest.assign(config_.bands, std::numeric_limits<double>::quiet_NaN());
  }

  FrequencyScheduler(const SchedulerConfig& config, SchedulerState state) : FrequencyScheduler(config) {
    require<StateError>(static_cast<int>(state.latest.size()) == config_.bands,
                        "scheduler state does not match its configuration");
    state_ = std::move(state);
  }

  const SchedulerConfig& config() const { return config_; }
  const SchedulerState& state() const { return state_; }
  const std::vector<IntervalRecord>& intervals() const { return state_.intervals; }

  Phase phase() const { return state_.phase; }
  int band() const { return state_.band; }
  int iteration() const { return state_.t; }
  int j_star() const { return state_.j_star; }
  bool complete() const { return state_.phase == Phase::complete; }

  /// Lowest and highest band reachable during perturbation.
  int perturbation_low() const { return std::max(0, state_.j_star - config_.radius); }
  int perturbation_high() const { return std::min(config_.bands - 1, state_.j_star + config_.radius); }

  /// Records the metric measured on the current band this iteration and
  /// returns the band to use for the next one.
  int step(double epsilon) {
    require<StateError>(state_.phase != Phase::complete, "scheduler step after completion (t = ", state_.t,
                        " >= T_a = ", config_.total, ")");
    require<NumericError>(std::isfinite(epsilon), "non-finite transferability value at t = ", state_.t);
    state_.acc_sum += epsilon;
    ++state_.acc_count;
    ++state_.t;
    const int t = state_.t;

    switch (state_.phase) {
      case Phase::warmup:
        if (t % config_.interval == 0 || t == config_.warmup_end) close_interval();
        if (t == config_.warmup_end) {
          state_.phase = Phase::movement;
          state_.band = 0;
        }
        break;
      case Phase::movement:
        if (traversing()) {
          if ((t - config_.warmup_end) % config_.interval == 0) {
            const double mean = close_interval();
            state_.history.push_back(mean);
            state_.latest[state_.band] = mean;
            if (traversing()) {
              ++state_.band;
            } else {
              state_.j_star = select_optimal(state_.history, config_.selection);
              state_.band = state_.j_star;
            }
          }
        } else {
          reset_accumulator();  // holding at j* until T_m; nothing is scored
        }
        if (t == config_.movement_end) {
          state_.phase = Phase::perturbation;
          state_.band = state_.j_star;
          state_.direction = +1;
          reset_accumulator();
        }
        break;
      case Phase::perturbation:
        if ((t - config_.movement_end) % config_.interval == 0) perturb();
        break;
      case Phase::complete:
        break;
    }
    if (t == config_.total) state_.phase = Phase::complete;
    return state_.band;
  }

private:
  bool traversing() const { return static_cast<int>(state_.history.size()) < config_.bands; }

  void reset_accumulator() {
    state_.acc_sum = 0.0;
    state_.acc_count = 0;
  }

  double close_interval() {
    const double mean = state_.acc_sum / static_cast<double>(state_.acc_count);
    state_.intervals.push_back({state_.t, state_.phase, state_.band, mean});
    reset_accumulator();
    return mean;
  }

  void perturb() {
    const int j = state_.band;
    const int d = state_.direction;
    const double mean = close_interval();
    const int prev = j - d;
    const bool has_prev = prev >= 0 && prev < config_.bands && !std::isnan(state_.latest[prev]);
    const bool worse = has_prev && mean > state_.latest[prev];
    state_.latest[j] = mean;
    if (worse || j >= state_.j_star + config_.radius || j <= state_.j_star - config_.radius)
      state_.direction = -state_.direction;
    int next = j + state_.direction;
    if (next < perturbation_low() || next > perturbation_high()) {
      state_.direction = -state_.direction;
      next = j + state_.direction;
      if (next < perturbation_low() || next > perturbation_high()) next = j;
    }
    state_.band = next;
  }

  SchedulerConfig config_;
  SchedulerState state_;
};

inline void write_interval_csv(std::ostream& os, std::span<const IntervalRecord> records) {
  os << "t,phase,j,epsilon_bar\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.mean);
    os << r.t << ',' << to_string(r.phase) << ',' << r.band << ',' << buf << '\n';
  }
}

}  // namespace freqalign
