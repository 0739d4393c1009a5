#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpgmn/graph.hpp"
#include "hpgmn/local_stats.hpp"
#include "hpgmn/model.hpp"
#include "hpgmn/nn.hpp"

namespace hpgmn {

/// Declarative description of a run. Serialised as flat JSON; every key is
/// listed in the README and unknown keys are rejected.
struct ExperimentConfig {
  std::filesystem::path dataset;
  std::vector<std::size_t> splits;  // empty selects every split

  ModelConfig model;
  double alpha_ppr = 0.15;
  std::size_t k_max = 32;
  std::size_t dense_diffusion_limit = 20000;
  std::size_t diffusion_top_d = 64;

  BlockMask statistics;
  bool use_kpattern = true;
  bool use_entropy = true;

  TrainConfig train;
  std::size_t estimator_hidden = 512;
  std::size_t estimator_epochs = 200;
  double estimator_learning_rate = 0.01;
  double estimator_weight_decay = 5e-4;

  std::vector<std::size_t> grid_num_units;
  std::vector<double> grid_alpha_kpattern;
  std::vector<double> grid_beta_entropy;
  std::vector<std::size_t> grid_block_out;

  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::filesystem::path out = "runs";
  std::filesystem::path cache_dir;
  bool resume = false;

  /// Coefficients after the use_kpattern / use_entropy switches.
  ModelConfig effective_model() const;

  void validate() const;
  nlohmann::json to_json() const;
  /// Relative paths are resolved against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig from_file(const std::filesystem::path& file);
};

inline constexpr int kConfigSchemaVersion = 1;

/// Stable per-(seed, split, stream) seed.
std::uint64_t derive_seed(std::uint64_t seed, std::size_t split_id, std::uint64_t stream);

/// Graph + splits + shared diffusion block, and the per-split local
/// statistics for a configuration.
class Pipeline {
 public:
  explicit Pipeline(const ExperimentConfig& config);
  Pipeline(const ExperimentConfig& config, Dataset dataset);

  const ExperimentConfig& config() const noexcept { return config_; }
  const Dataset& dataset() const noexcept { return dataset_; }
  /// Splits selected by the config, in order.
  std::vector<SplitSet> selected_splits() const;

  /// All statistics enabled in the config for one split (cached on disk when
  /// cache_dir is set).
  LocalStatistics statistics(const SplitSet& split) const;

  /// Trains one model on one split. `variant` overrides model config and
  /// statistic mask.
  RunMetrics run(const SplitSet& split, const LocalStatistics& stats, const ModelConfig& model,
                 const BlockMask& mask) const;

 private:
  ExperimentConfig config_;
  Dataset dataset_;
  Matrix diffusion_;
};

struct SplitOutcome {
  std::size_t split_id = 0;
  std::optional<RunMetrics> metrics;
  std::string error;
};

struct Aggregate {
  std::string name;
  std::size_t num_splits = 0;
  std::vector<std::size_t> failed_splits;
  std::vector<double> test_accuracies;
  double mean = 0.0;
  double std = 0.0;
  double mean_usage_entropy = 0.0;

  nlohmann::json to_json() const;
  static Aggregate from_outcomes(const std::string& name, const std::vector<SplitOutcome>& outcomes);
};

/// One model configuration evaluated by the runner.
struct Variant {
  std::string name;
  std::string description;
  ModelConfig model;
  BlockMask mask;
  std::filesystem::path dir;
};

/// Runs every variant on every selected split with `config.workers` threads.
/// Writes <dir>/split_<k>.json and <dir>/aggregate.json per variant.
std::vector<Aggregate> run_variants(const Pipeline& pipeline, const std::vector<Variant>& variants);

enum ExitCode : int { kExitOk = 0, kExitFatal = 1, kExitPartial = 2 };

struct DatasetStats {
  std::size_t num_nodes = 0, num_edges = 0, num_features = 0;
  int num_classes = 0;
  std::optional<double> node_homophily, edge_homophily;
};

DatasetStats dataset_stats(const Graph& g);
/// "dataset,num_nodes,num_edges,num_features,num_classes,node_homophily,edge_homophily" header plus one row.
std::string format_stats_csv(const std::string& name, const DatasetStats& s);

int cmd_stats(const std::filesystem::path& dataset_dir, std::ostream& out);
int cmd_train(const ExperimentConfig& config, std::ostream& log);
int cmd_ablate(const ExperimentConfig& config, std::ostream& log);
int cmd_sweep(const ExperimentConfig& config, std::ostream& log);

/// Ablation variants in table order: full, W/O each statistic, /K, /E, /KE.
std::vector<Variant> ablation_variants(const ExperimentConfig& config);
/// Cartesian product of the sweep grids (an empty grid keeps the config value).
std::vector<Variant> sweep_variants(const ExperimentConfig& config);

std::string format_double(double x);

}  // namespace hpgmn
