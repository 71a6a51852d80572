// freqalign: generate-data | train | sweep | ablate | evaluate

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "freqalign/experiment.hpp"

namespace {

using namespace freqalign;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  bool overwrite = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config file (key = value lines)");
  cmd->add_option("-s,--set", c.overrides, "override a config key, e.g. --set schedule.window=5");
  cmd->add_flag("--overwrite", c.overwrite, "replace existing outputs");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(c.config);
  for (const auto& kv : c.overrides) cfg.apply_override(kv);
  validate(cfg);
  return cfg;
}

void print_report(const char* label, const EvalReport& r) {
  std::printf("%s: srocc=%.4f plcc=%.4f n=%d band=%d\n", label, r.srocc, r.plcc, r.n, r.band);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-aligned domain adaptation for blind image quality assessment"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");

  Common gen_opts, train_opts, sweep_opts, ablate_opts;
  auto* gen = app.add_subcommand("generate-data", "write the synthetic source and target domains");
  add_common(gen, gen_opts);

  auto* train = app.add_subcommand("train", "run warm-up, movement and perturbation training");
  add_common(train, train_opts);
  std::string resume;
  train->add_option("--resume", resume, "continue from a checkpoint written by an earlier run of this config");

  auto* sweep = app.add_subcommand("sweep", "per-frequency transferability grid");
  add_common(sweep, sweep_opts);

  auto* ablate = app.add_subcommand("ablate", "train one run per value of an ablation axis");
  add_common(ablate, ablate_opts);
  std::string axis;
  ablate->add_option("--axis", axis, "trajectory | metric | interval | window | bands");

  auto* evaluate = app.add_subcommand("evaluate", "score a dataset with a trained checkpoint");
  std::string checkpoint, dataset, output;
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evaluate->add_option("--dataset", dataset, "dataset directory (manifest.json, scores.csv, images/)")->required();
  evaluate->add_option("-o,--output", output, "write the report JSON here");

  CLI11_PARSE(app, argc, argv);
  log::quiet() = quiet;

  try {
    if (*gen) {
      const auto dir = cmd_generate_data(load(gen_opts), gen_opts.overwrite);
      std::printf("datasets written to %s\n", dir.string().c_str());
    } else if (*train) {
      const ExperimentConfig cfg = load(train_opts);
      const auto o = cmd_train(cfg, train_opts.overwrite,
                               resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume));
      std::printf("j* = %d after %d iterations\n", o.j_star, o.iterations);
      print_report("target", o.target);
      print_report("source", o.source);
      std::printf("outputs in %s\n", (cfg.output_dir() / "train").string().c_str());
    } else if (*sweep) {
      const ExperimentConfig cfg = load(sweep_opts);
      const auto r = cmd_sweep(cfg, sweep_opts.overwrite);
      Eigen::Index bi = 0, bj = 0;
      const double best = r.grid.maxCoeff(&bi, &bj);
      std::printf("best cell (%ld, %ld) srocc=%.4f, dc srocc=%.4f\n", static_cast<long>(bi), static_cast<long>(bj),
                  best, r.grid(0, 0));
      std::printf("outputs in %s\n", (cfg.output_dir() / "sweep").string().c_str());
    } else if (*ablate) {
      ExperimentConfig cfg = load(ablate_opts);
      if (!axis.empty()) cfg.set("ablate.axis", axis, "--axis");
      const auto rows = cmd_ablate(cfg, ablate_opts.overwrite);
      write_ablation_csv(std::cout, rows);
    } else if (*evaluate) {
      const auto r = cmd_evaluate(checkpoint, dataset,
                                  output.empty() ? std::nullopt : std::optional<std::filesystem::path>(output));
      print_report("evaluation", r);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "freqalign: error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "freqalign: unexpected failure: %s\n", e.what());
    return 3;
  }
  return 0;
}
