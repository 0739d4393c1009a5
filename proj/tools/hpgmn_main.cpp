// hpgmn: experiment command-line tool.
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hpgmn/experiment.hpp"
#include "hpgmn/graph.hpp"

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
  bool resume = false;
};

void add_common(CLI::App* cmd, std::string& config, Overrides& o) {
  cmd->add_option("-c,--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override the config seed");
  cmd->add_option("--workers", o.workers, "parallel split jobs")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_flag("--resume", o.resume, "skip runs whose output file already exists");
}

hpgmn::ExperimentConfig load(const std::string& file, const Overrides& o) {
  auto c = hpgmn::ExperimentConfig::from_file(file);
  if (o.seed) c.seed = c.train.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.out) c.out = *o.out;
  c.resume = o.resume;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph memory network node classification experiments"};
  app.require_subcommand(1);

  std::string dataset_dir, config_file;
  Overrides overrides;

  auto* stats = app.add_subcommand("stats", "print dataset statistics as CSV");
  stats->add_option("dataset", dataset_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);

  auto* train = app.add_subcommand("train", "train on every split and aggregate");
  auto* ablate = app.add_subcommand("ablate", "statistic and regularizer ablations");
  auto* sweep = app.add_subcommand("sweep", "grid sweep over K, alpha, beta and block width");
  for (auto* cmd : {train, ablate, sweep}) add_common(cmd, config_file, overrides);

  hpgmn::SbmParams sbm;
  std::string sbm_out;
  std::size_t sbm_splits = 10;
  auto* gen = app.add_subcommand("gen-sbm", "write a synthetic stochastic block model dataset");
  gen->add_option("out", sbm_out, "output directory")->required();
  gen->add_option("--n-per-class", sbm.n_per_class)->capture_default_str();
  gen->add_option("--classes", sbm.num_classes)->capture_default_str();
  gen->add_option("--p-intra", sbm.p_intra)->capture_default_str();
  gen->add_option("--p-inter", sbm.p_inter)->capture_default_str();
  gen->add_option("--feature-shift", sbm.feature_shift)->capture_default_str();
  gen->add_option("--features", sbm.num_features)->capture_default_str();
  gen->add_option("--seed", sbm.seed)->capture_default_str();
  gen->add_option("--splits", sbm_splits)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*stats) return hpgmn::cmd_stats(dataset_dir, std::cout);
    if (*train) return hpgmn::cmd_train(load(config_file, overrides), std::cerr);
    if (*ablate) return hpgmn::cmd_ablate(load(config_file, overrides), std::cerr);
    if (*sweep) return hpgmn::cmd_sweep(load(config_file, overrides), std::cerr);
    if (*gen) {
      hpgmn::Dataset ds{hpgmn::generate_heterophilous_sbm(sbm), {}};
      ds.splits = hpgmn::random_splits(ds.graph, sbm_splits, sbm.seed);
      hpgmn::save_dataset(ds, sbm_out);
      return hpgmn::kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "hpgmn: " << e.what() << "\n";
    return hpgmn::kExitFatal;
  }
  return hpgmn::kExitFatal;
}
