#pragma once

// Experiment drivers behind the command-line subcommands. Each writes its
// artifacts plus a copy of the resolved config under the output directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "freqalign/checkpoint.hpp"
#include "freqalign/config.hpp"

namespace freqalign {

namespace fs = std::filesystem;

struct DomainPair {
  DomainDataset source;
  DomainDataset target;
};

inline std::vector<DistortionSpec> family_specs(const ExperimentConfig& c, const std::string& key) {
  std::vector<DistortionSpec> specs;
  const int levels = static_cast<int>(c.integer("data.levels"));
  for (const auto& f : c.list(key)) specs.push_back(DistortionSpec::standard(parse_family(f), levels));
  require<ConfigError>(!specs.empty(), key, " lists no distortion family");
  return specs;
}

/// Generates both domains from the config, or loads them when directories are given.
inline DomainPair make_domains(const ExperimentConfig& c) {
  const std::uint64_t seed = c.seed();
  const int size = static_cast<int>(c.integer("data.size"));
  const int ns = static_cast<int>(c.integer("data.source.count"));
  const int nt = static_cast<int>(c.integer("data.target.count"));
  DomainPair p;
  if (c.str("data.kind") == "probe") {
    ProbeSpec ps;
    ps.row = static_cast<int>(c.integer("data.probe.row"));
    ps.col = static_cast<int>(c.integer("data.probe.col"));
    ps.grid = model_config(c).grid();
    const int levels = static_cast<int>(c.integer("data.levels"));
    ps.amplitudes.resize(levels);
    for (int i = 0; i < levels; ++i) ps.amplitudes[i] = 0.12 * i / (levels - 1);
    ps.brightness_jitter = c.real("data.probe.source_jitter");
    p.source = generate_probe_domain(mix_seed({seed, 101}), ps, ns, size, DomainRole::source);
    ps.brightness_jitter = c.real("data.probe.target_jitter");
    p.target = generate_probe_domain(mix_seed({seed, 202}), ps, nt, size, DomainRole::target);
  } else {
    const BaseContent base = parse_base(c.str("data.base"));
    p.source = generate_domain(mix_seed({seed, 101}), base, family_specs(c, "data.source.families"), ns, size,
                               DomainRole::source);
    p.target = generate_domain(mix_seed({seed, 202}), base, family_specs(c, "data.target.families"), nt, size,
                               DomainRole::target);
  }
  p.source.name = "source";
  p.target.name = "target";
  if (const auto& d = c.str("data.source.dir"); !d.empty()) {
    p.source = load_dataset(d);
    p.source.role = DomainRole::source;
  }
  if (const auto& d = c.str("data.target.dir"); !d.empty()) {
    p.target = load_dataset(d);
    p.target.role = DomainRole::target;
  }
  return p;
}

/// Scores every item; collapsed (constant) predictions yield zero correlations instead of an error.
inline EvalReport evaluate_dataset(Model& model, const DomainDataset& ds, const BandWindow& window) {
  const auto pred = predict_scores(model, ds, window, model.config().input_size);
  std::vector<double> truth;
  for (const auto& it : ds.items) truth.push_back(it.score);
  EvalReport r;
  try {
    r = evaluate_predictions(pred, truth);
  } catch (const NumericError& e) {
    log::warn("evaluation on ", ds.name, " is degenerate: ", e.what());
    r = EvalReport{};
    r.n = static_cast<int>(pred.size());
    r.fit_converged = false;
  }
  r.band = window.start;
  return r;
}

inline void prepare_output(const fs::path& dir, const std::vector<std::string>& artifacts, bool overwrite) {
  if (!overwrite)
    for (const auto& a : artifacts)
      require<DataError>(!fs::exists(dir / a), "refusing to overwrite ", (dir / a).string(),
                         " (pass --overwrite to replace it)");
  fs::create_directories(dir);
}

inline void archive_config(const ExperimentConfig& c, const fs::path& dir) {
  std::ofstream os(dir / "config.cfg");
  require<DataError>(bool(os), "cannot write ", (dir / "config.cfg").string());
  os << c.serialize();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  require<DataError>(bool(os), "cannot write ", path.string());
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// generate-data

inline fs::path cmd_generate_data(const ExperimentConfig& c, bool overwrite) {
  validate(c);
  const fs::path dir = c.output_dir() / "data";
  const DomainPair p = make_domains(c);
  prepare_output(dir, {"source", "target"}, overwrite);
  save_dataset(p.source, dir / "source", overwrite);
  save_dataset(p.target, dir / "target", overwrite);
  archive_config(c, dir);
  return dir;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  int j_star = -1;
  int eval_band = 0;
  int iterations = 0;
  int steps_per_epoch = 0;
  SchedulerConfig schedule;
  EvalReport target;
  EvalReport source;
  std::vector<double> history;
};

inline nlohmann::json to_json(const TrainOutcome& o, const ExperimentConfig& c) {
  return {{"j_star", o.j_star},
          {"eval_band", o.eval_band},
          {"iterations", o.iterations},
          {"steps_per_epoch", o.steps_per_epoch},
          {"epochs", static_cast<double>(o.iterations) / std::max(1, o.steps_per_epoch)},
          {"mode", c.str("train.mode")},
          {"schedule", to_json(o.schedule)},
          {"history", o.history},
          {"target", to_json(o.target)},
          {"source", to_json(o.source)}};
}

struct TrainOptions {
  std::optional<fs::path> out_dir;  // no artifacts when empty
  std::optional<fs::path> resume;   // checkpoint to continue from
  bool quiet = false;
};

inline TrainOutcome train_experiment(const ExperimentConfig& c, const DomainPair& domains, const TrainOptions& opt = {}) {
  validate(c);
  const ModelConfig mc = model_config(c);
  const TrainConfig tc = train_config(c);
  const int spe = (domains.source.size() + tc.batch - 1) / tc.batch;
  const SchedulerConfig sc = scheduler_config(c, spe).resolved();
  Trainer trainer(mc, sc, tc, domains.source, domains.target);

  std::ofstream log;
  if (opt.out_dir) {
    const fs::path log_path = *opt.out_dir / "log.csv";
    if (opt.resume) {
      const Checkpoint ck = load_checkpoint(*opt.resume);
      resume_from(ck, trainer);
      // keep the rows that precede the checkpoint
      std::ifstream in(log_path);
      require<DataError>(bool(in), "cannot resume: ", log_path.string(), " is missing");
      std::vector<std::string> lines;
      std::string line;
      while (std::getline(in, line) && static_cast<int>(lines.size()) <= ck.state.t) lines.push_back(line);
      require<DataError>(static_cast<int>(lines.size()) == ck.state.t + 1, "cannot resume: ", log_path.string(),
                         " holds fewer rows than the checkpoint iteration ", ck.state.t);
      in.close();
      log.open(log_path, std::ios::trunc);
      for (const auto& l : lines) log << l << '\n';
    } else {
      log.open(log_path, std::ios::trunc);
      write_log_header(log);
    }
    require<DataError>(bool(log), "cannot write ", log_path.string());
    archive_config(c, *opt.out_dir);
  } else if (opt.resume) {
    resume_from(load_checkpoint(*opt.resume), trainer);
  }

  const long long every = c.integer("train.checkpoint_every");
  const nlohmann::json extra = c.to_json();
  trainer.run([&](const StepResult& r) {
    if (log.is_open()) write_log_row(log, r.row);
    if (opt.out_dir && every > 0 && (r.scheduler.t % every) == 0) {
      log.flush();
      char name[40];
      std::snprintf(name, sizeof name, "checkpoint_%06lld.bin", static_cast<long long>(r.scheduler.t));
      save_checkpoint(*opt.out_dir / name, trainer, extra);
    }
    if (!opt.quiet && !log::quiet() && r.row.phase != r.scheduler.phase)
      log::info("t=", r.scheduler.t, ": ", to_string(r.row.phase), " -> ", to_string(r.scheduler.phase),
                r.scheduler.j_star >= 0 ? " (j* = " + std::to_string(r.scheduler.j_star) + ")" : std::string());
  });

  TrainOutcome o;
  o.schedule = sc;
  o.steps_per_epoch = spe;
  o.iterations = trainer.scheduler().iteration();
  o.j_star = trainer.scheduler().j_star();
  o.eval_band = trainer.evaluation_band();
  o.history = trainer.scheduler().state().history;
  const BandWindow w = trainer.window(o.eval_band);
  o.target = evaluate_dataset(trainer.model(), domains.target, w);
  o.source = evaluate_dataset(trainer.model(), domains.source, w);

  if (opt.out_dir) {
    log.close();
    save_checkpoint(*opt.out_dir / "checkpoint.bin", trainer, extra);
    std::ofstream iv(*opt.out_dir / "intervals.csv");
    write_interval_csv(iv, trainer.scheduler().intervals());
    write_json(*opt.out_dir / "report.json", to_json(o, c));
  }
  return o;
}

inline TrainOutcome cmd_train(const ExperimentConfig& c, bool overwrite, const std::optional<fs::path>& resume = {}) {
  validate(c);
  const fs::path dir = c.output_dir() / "train";
  if (!resume) prepare_output(dir, {"log.csv", "checkpoint.bin", "report.json"}, overwrite);
  const DomainPair p = make_domains(c);
  return train_experiment(c, p, {dir, resume});
}

// ---------------------------------------------------------------------------
// sweep

inline nlohmann::json sweep_json(const SweepResult& r) {
  EvalReport rep;
  rep.grid = r.grid;
  rep.grid_converged = r.converged;
  Eigen::Index bi = 0, bj = 0;
  r.grid.maxCoeff(&bi, &bj);
  nlohmann::json j = to_json(rep);
  j["best_cell"] = {bi, bj};
  j["best_srocc"] = r.grid(bi, bj);
  j["dc_srocc"] = r.grid(0, 0);
  return j;
}

inline SweepResult cmd_sweep(const ExperimentConfig& c, bool overwrite) {
  validate(c);
  const fs::path dir = c.output_dir() / "sweep";
  prepare_output(dir, {"grid.csv", "grid.ppm", "report.json"}, overwrite);
  const DomainPair p = make_domains(c);
  const TrainConfig tc = train_config(c);
  const SweepResult r = frequency_sweep(p.source, p.target, model_config(c), sweep_config(c), tc.batch, tc.adam.lr);
  write_matrix_csv(dir / "grid.csv", r.grid);
  Matrix flags(r.grid.rows(), r.grid.cols());
  for (Eigen::Index i = 0; i < flags.size(); ++i) flags(i / flags.cols(), i % flags.cols()) = r.converged[i];
  write_matrix_csv(dir / "converged.csv", flags);
  write_heatmap_ppm(dir / "grid.ppm", r.grid);
  write_json(dir / "report.json", sweep_json(r));
  archive_config(c, dir);
  return r;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  TrainOutcome outcome;
};

inline std::vector<std::string> ablation_values(const ExperimentConfig& c, const std::string& axis) {
  if (axis == "trajectory") return {"left-to-right", "up-to-down", "zigzag"};
  if (axis == "metric") return {"mmd", "coral", "adversarial"};
  if (axis == "interval") return c.list("ablate.intervals");
  if (axis == "window") return c.list("ablate.windows");
  if (axis == "bands") return c.list("ablate.bands");
  fail<ConfigError>("unknown ablation axis '", axis, "' (expected trajectory, metric, interval, window or bands)");
}

inline std::string ablation_key(const std::string& axis) {
  if (axis == "trajectory") return "schedule.trajectory";
  if (axis == "metric") return "schedule.metric";
  if (axis == "interval") return "schedule.interval";
  if (axis == "window") return "schedule.window";
  return "schedule.bands";
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "axis,value,seed,j_star,eval_band,iterations,target_srocc,target_plcc,source_srocc\n";
  for (const auto& r : rows)
    os << r.axis << ',' << r.value << ',' << r.seed << ',' << r.outcome.j_star << ',' << r.outcome.eval_band << ','
       << r.outcome.iterations << ',' << format_double(r.outcome.target.srocc) << ','
       << format_double(r.outcome.target.plcc) << ',' << format_double(r.outcome.source.srocc) << '\n';
}

inline std::vector<AblationRow> cmd_ablate(const ExperimentConfig& c, bool overwrite) {
  validate(c);
  const std::string axis = c.str("ablate.axis");
  const auto values = ablation_values(c, axis);
  const auto seeds = c.int_list("ablate.seeds");
  require<ConfigError>(!seeds.empty(), "ablate.seeds is empty");
  const fs::path dir = c.output_dir() / "ablate";
  prepare_output(dir, {axis + ".csv"}, overwrite);
  // validate every variant up front so a bad value fails before hours of training
  for (const auto& v : values) {
    ExperimentConfig variant = c;
    variant.set(ablation_key(axis), v);
    validate(variant);
  }
  std::vector<AblationRow> rows;
  for (int s : seeds) {
    ExperimentConfig seeded = c;
    seeded.set("seed", std::to_string(s));
    const DomainPair p = make_domains(seeded);
    for (const auto& v : values) {
      ExperimentConfig variant = seeded;
      variant.set(ablation_key(axis), v);
      const fs::path run_dir = dir / axis / (v + "_seed" + std::to_string(s));
      fs::create_directories(run_dir);
      log::info("ablate ", axis, " = ", v, ", seed ", s);
      rows.push_back({axis, v, static_cast<std::uint64_t>(s), train_experiment(variant, p, {run_dir, {}, true})});
    }
  }
  std::ofstream os(dir / (axis + ".csv"));
  require<DataError>(bool(os), "cannot write ", (dir / (axis + ".csv")).string());
  write_ablation_csv(os, rows);
  archive_config(c, dir);
  return rows;
}

// ---------------------------------------------------------------------------
// evaluate

inline EvalReport cmd_evaluate(const fs::path& checkpoint, const fs::path& dataset,
                               const std::optional<fs::path>& out = {}) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const DomainDataset ds = load_dataset(dataset);
  Model model = load_model(ck);
  const int band = ck.state.j_star >= 0 ? ck.state.j_star : ck.state.band;
  const Trajectory traj = make_trajectory(ck.scheduler.trajectory, ck.model.grid(), ck.model.grid());
  const EvalReport r = evaluate_dataset(model, ds, {traj, ck.model.window, band});
  if (out) {
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    write_json(*out, to_json(r));
  }
  return r;
}

}  // namespace freqalign
