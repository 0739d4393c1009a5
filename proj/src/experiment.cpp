#include "hpgmn/experiment.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "hpgmn/io_util.hpp"

namespace hpgmn {
namespace fs = std::filesystem;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

std::uint64_t derive_seed(std::uint64_t seed, std::size_t split_id, std::uint64_t stream) {
  // splitmix64 over the three inputs.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ split_id) ^ stream);
}

// ---------------------------------------------------------------------------
// Config

ModelConfig ExperimentConfig::effective_model() const {
  ModelConfig m = model;
  if (!use_kpattern) m.alpha_kpattern = 0.0;
  if (!use_entropy) m.beta_entropy = 0.0;
  return m;
}

void ExperimentConfig::validate() const {
  require(!dataset.empty(), "config: 'dataset' is required");
  require(fs::is_directory(dataset), "config: dataset directory does not exist: " + dataset.string());
  model.validate();
  train.validate();
  require(alpha_ppr > 0.0 && alpha_ppr < 1.0, "config: alpha_ppr must lie in (0, 1)");
  require(statistics.any(), "no local statistic enabled");
  require(workers >= 1, "config: workers must be at least 1");
  require(estimator_hidden >= 1, "config: estimator_hidden must be positive");
}

namespace {

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  return {{"schema_version", kConfigSchemaVersion},
          {"dataset", dataset.string()},
          {"splits", splits},
          {"num_units", model.num_units},
          {"block_hidden", model.block_hidden},
          {"block_out", model.block_out},
          {"head_hidden", model.head_hidden},
          {"alpha_kpattern", model.alpha_kpattern},
          {"beta_entropy", model.beta_entropy},
          {"gamma_frobenius", model.gamma_frobenius},
          {"alpha_ppr", alpha_ppr},
          {"k_max", k_max},
          {"dense_diffusion_limit", dense_diffusion_limit},
          {"diffusion_top_d", diffusion_top_d},
          {"use_node_attributes", statistics.enabled[0]},
          {"use_label_wise_class", statistics.enabled[1]},
          {"use_label_wise_feature", statistics.enabled[2]},
          {"use_diffusion", statistics.enabled[3]},
          {"use_kpattern", use_kpattern},
          {"use_entropy", use_entropy},
          {"learning_rate", train.learning_rate},
          {"max_epochs", train.max_epochs},
          {"patience", train.patience},
          {"weight_decay", train.weight_decay},
          {"dropout", train.dropout},
          {"optimizer", optimizer_name(train.optimizer)},
          {"estimator_hidden", estimator_hidden},
          {"estimator_epochs", estimator_epochs},
          {"estimator_learning_rate", estimator_learning_rate},
          {"estimator_weight_decay", estimator_weight_decay},
          {"grid_num_units", grid_num_units},
          {"grid_alpha_kpattern", grid_alpha_kpattern},
          {"grid_beta_entropy", grid_beta_entropy},
          {"grid_block_out", grid_block_out},
          {"seed", seed},
          {"workers", workers},
          {"out", out.string()},
          {"cache_dir", cache_dir.string()}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  require(j.is_object(), "config must be a JSON object");
  ExperimentConfig c;
  auto resolve = [&](const std::string& p) -> fs::path {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };

  using Setter = std::function<void(const nlohmann::json&)>;
  const std::map<std::string, Setter> setters = {
      {"schema_version",
       [&](const nlohmann::json& v) {
         require(v.get<int>() == kConfigSchemaVersion, "config: unsupported schema_version " + v.dump());
       }},
      {"dataset", [&](const nlohmann::json& v) { c.dataset = resolve(v.get<std::string>()); }},
      {"splits", [&](const nlohmann::json& v) { c.splits = v.get<std::vector<std::size_t>>(); }},
      {"num_units", [&](const nlohmann::json& v) { c.model.num_units = v.get<std::size_t>(); }},
      {"block_hidden", [&](const nlohmann::json& v) { c.model.block_hidden = v.get<std::size_t>(); }},
      {"block_out", [&](const nlohmann::json& v) { c.model.block_out = v.get<std::size_t>(); }},
      {"head_hidden", [&](const nlohmann::json& v) { c.model.head_hidden = v.get<std::size_t>(); }},
      {"alpha_kpattern", [&](const nlohmann::json& v) { c.model.alpha_kpattern = v.get<double>(); }},
      {"beta_entropy", [&](const nlohmann::json& v) { c.model.beta_entropy = v.get<double>(); }},
      {"gamma_frobenius", [&](const nlohmann::json& v) { c.model.gamma_frobenius = v.get<double>(); }},
      {"alpha_ppr", [&](const nlohmann::json& v) { c.alpha_ppr = v.get<double>(); }},
      {"k_max", [&](const nlohmann::json& v) { c.k_max = v.get<std::size_t>(); }},
      {"dense_diffusion_limit", [&](const nlohmann::json& v) { c.dense_diffusion_limit = v.get<std::size_t>(); }},
      {"diffusion_top_d", [&](const nlohmann::json& v) { c.diffusion_top_d = v.get<std::size_t>(); }},
      {"use_node_attributes", [&](const nlohmann::json& v) { c.statistics.enabled[0] = v.get<bool>(); }},
      {"use_label_wise_class", [&](const nlohmann::json& v) { c.statistics.enabled[1] = v.get<bool>(); }},
      {"use_label_wise_feature", [&](const nlohmann::json& v) { c.statistics.enabled[2] = v.get<bool>(); }},
      {"use_diffusion", [&](const nlohmann::json& v) { c.statistics.enabled[3] = v.get<bool>(); }},
      {"use_kpattern", [&](const nlohmann::json& v) { c.use_kpattern = v.get<bool>(); }},
      {"use_entropy", [&](const nlohmann::json& v) { c.use_entropy = v.get<bool>(); }},
      {"learning_rate", [&](const nlohmann::json& v) { c.train.learning_rate = v.get<double>(); }},
      {"max_epochs", [&](const nlohmann::json& v) { c.train.max_epochs = v.get<std::size_t>(); }},
      {"patience", [&](const nlohmann::json& v) { c.train.patience = v.get<std::size_t>(); }},
      {"weight_decay", [&](const nlohmann::json& v) { c.train.weight_decay = v.get<double>(); }},
      {"dropout", [&](const nlohmann::json& v) { c.train.dropout = v.get<double>(); }},
      {"optimizer",
       [&](const nlohmann::json& v) {
         const auto name = v.get<std::string>();
         require(name == "adam" || name == "sgd", "config: optimizer must be 'adam' or 'sgd'");
         c.train.optimizer = name == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
       }},
      {"estimator_hidden", [&](const nlohmann::json& v) { c.estimator_hidden = v.get<std::size_t>(); }},
      {"estimator_epochs", [&](const nlohmann::json& v) { c.estimator_epochs = v.get<std::size_t>(); }},
      {"estimator_learning_rate", [&](const nlohmann::json& v) { c.estimator_learning_rate = v.get<double>(); }},
      {"estimator_weight_decay", [&](const nlohmann::json& v) { c.estimator_weight_decay = v.get<double>(); }},
      {"grid_num_units", [&](const nlohmann::json& v) { c.grid_num_units = v.get<std::vector<std::size_t>>(); }},
      {"grid_alpha_kpattern", [&](const nlohmann::json& v) { c.grid_alpha_kpattern = v.get<std::vector<double>>(); }},
      {"grid_beta_entropy", [&](const nlohmann::json& v) { c.grid_beta_entropy = v.get<std::vector<double>>(); }},
      {"grid_block_out", [&](const nlohmann::json& v) { c.grid_block_out = v.get<std::vector<std::size_t>>(); }},
      {"seed", [&](const nlohmann::json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"workers", [&](const nlohmann::json& v) { c.workers = v.get<std::size_t>(); }},
      {"out", [&](const nlohmann::json& v) { c.out = resolve(v.get<std::string>()); }},
      {"cache_dir", [&](const nlohmann::json& v) { c.cache_dir = resolve(v.get<std::string>()); }},
  };

  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    require(it != setters.end(), "config: unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const nlohmann::json::exception& e) {
      throw Error("config: bad value for '" + key + "': " + e.what());
    }
  }
  c.train.seed = c.seed;
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(file));
  } catch (const nlohmann::json::exception& e) {
    throw Error(file.string() + ": " + e.what());
  }
  return from_json(j, file.parent_path());
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

constexpr std::uint64_t kEstimatorStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kTrainStream = 3;

bool dense_diffusion(const ExperimentConfig& c, std::size_t n) { return n <= c.dense_diffusion_limit; }

}  // namespace

Pipeline::Pipeline(const ExperimentConfig& config) : Pipeline(config, load_dataset(config.dataset)) {}

Pipeline::Pipeline(const ExperimentConfig& config, Dataset dataset)
    : config_(config), dataset_(std::move(dataset)) {
  const Graph& g = dataset_.graph;
  if (config_.statistics[StatBlock::diffusion]) {
    diffusion_ = dense_diffusion(config_, g.num_nodes())
                     ? ppr_diffusion(g, config_.alpha_ppr, config_.k_max)
                     : ppr_diffusion_top_d(g, config_.alpha_ppr, config_.k_max, config_.diffusion_top_d);
  } else {
    diffusion_ = Matrix(g.num_nodes(), 0);
  }
}

std::vector<SplitSet> Pipeline::selected_splits() const {
  if (config_.splits.empty()) return dataset_.splits;
  std::vector<SplitSet> out;
  for (std::size_t id : config_.splits) {
    auto it = std::find_if(dataset_.splits.begin(), dataset_.splits.end(),
                           [id](const SplitSet& s) { return s.split_id == id; });
    require(it != dataset_.splits.end(), "config: split " + std::to_string(id) + " not present in the dataset");
    out.push_back(*it);
  }
  return out;
}

LocalStatistics Pipeline::statistics(const SplitSet& split) const {
  const Graph& g = dataset_.graph;
  const std::uint64_t estimator_seed = derive_seed(config_.seed, split.split_id, kEstimatorStream);

  StatsCacheKey key;
  fs::path cache_file;
  if (!config_.cache_dir.empty()) {
    key.dataset_hash = g.content_hash();
    key.split_id = split.split_id;
    key.alpha_ppr = config_.alpha_ppr;
    key.k_max = config_.k_max;
    key.estimator_seed = estimator_seed;
    key.top_d = dense_diffusion(config_, g.num_nodes()) ? 0 : config_.diffusion_top_d;
    cache_file = config_.cache_dir / key.file_name();
    if (auto cached = load_local_statistics(cache_file, key); cached && cached->mask == config_.statistics) {
      return *cached;
    }
  }

  PseudoLabels pl{std::vector<int>(g.num_nodes(), 0), {}};
  if (config_.statistics[StatBlock::class_distribution] || config_.statistics[StatBlock::feature_distribution]) {
    TrainConfig est;
    est.learning_rate = config_.estimator_learning_rate;
    est.max_epochs = config_.estimator_epochs;
    est.patience = 0;
    est.weight_decay = config_.estimator_weight_decay;
    est.seed = estimator_seed;
    pl = fit_pseudo_label_estimator(g, split, est, config_.estimator_hidden);
  }
  LocalStatistics stats = assemble_local_statistics(g, pl, diffusion_, config_.statistics);
  if (!cache_file.empty()) save_local_statistics(cache_file, key, stats);
  return stats;
}

RunMetrics Pipeline::run(const SplitSet& split, const LocalStatistics& stats, const ModelConfig& model,
                         const BlockMask& mask) const {
  const LocalStatistics view = restrict_blocks(stats, mask);
  HpGmnModel m(view.widths(), dataset_.graph.num_classes(), model,
               derive_seed(config_.seed, split.split_id, kInitStream));
  TrainConfig tc = config_.train;
  tc.seed = derive_seed(config_.seed, split.split_id, kTrainStream);
  RunMetrics metrics = train(m, dataset_.graph, view, split, tc);
  metrics.seed = config_.seed;
  return metrics;
}

// ---------------------------------------------------------------------------
// Aggregation and the job runner

nlohmann::json Aggregate::to_json() const {
  return {{"schema_version", kMetricsSchemaVersion},
          {"name", name},
          {"num_splits", num_splits},
          {"num_failed", failed_splits.size()},
          {"failed_splits", failed_splits},
          {"test_accuracies", test_accuracies},
          {"mean_test_accuracy", mean},
          {"std_test_accuracy", std},
          {"mean_memory_usage_entropy", mean_usage_entropy}};
}

Aggregate Aggregate::from_outcomes(const std::string& name, const std::vector<SplitOutcome>& outcomes) {
  Aggregate a;
  a.name = name;
  a.num_splits = outcomes.size();
  double entropy = 0.0;
  for (const auto& o : outcomes) {
    if (!o.metrics) {
      a.failed_splits.push_back(o.split_id);
      continue;
    }
    a.test_accuracies.push_back(o.metrics->test_accuracy);
    entropy += o.metrics->memory_usage_entropy;
  }
  const auto n = static_cast<double>(a.test_accuracies.size());
  if (n > 0) {
    for (double x : a.test_accuracies) a.mean += x;
    a.mean /= n;
    double var = 0.0;
    for (double x : a.test_accuracies) var += (x - a.mean) * (x - a.mean);
    a.std = std::sqrt(var / n);
    a.mean_usage_entropy = entropy / n;
  } else {
    a.mean = a.std = a.mean_usage_entropy = std::nan("");
  }
  return a;
}

namespace {

fs::path split_file(const fs::path& dir, std::size_t split_id) {
  return dir / ("split_" + std::to_string(split_id) + ".json");
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

template <typename Job>
void run_pool(std::size_t jobs, std::size_t workers, Job&& job) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) job(i);
  };
  const std::size_t threads = std::min(workers, jobs);
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<Aggregate> run_variants(const Pipeline& pipeline, const std::vector<Variant>& variants) {
  const auto splits = pipeline.selected_splits();
  std::vector<std::vector<SplitOutcome>> outcomes(variants.size(), std::vector<SplitOutcome>(splits.size()));
  std::mutex timing_mutex;
  std::vector<nlohmann::json> timing(variants.size(), nlohmann::json::object());

  run_pool(splits.size(), pipeline.config().workers, [&](std::size_t s) {
    const SplitSet& split = splits[s];
    std::optional<LocalStatistics> stats;
    std::string stats_error;
    for (std::size_t v = 0; v < variants.size(); ++v) {
      SplitOutcome& out = outcomes[v][s];
      out.split_id = split.split_id;
      const fs::path file = split_file(variants[v].dir, split.split_id);
      if (pipeline.config().resume && fs::exists(file)) {
        try {
          out.metrics = RunMetrics::from_json(nlohmann::json::parse(read_file(file)));
          continue;
        } catch (const std::exception&) {
          // unreadable output is recomputed
        }
      }
      try {
        if (!stats && stats_error.empty()) {
          try {
            stats = pipeline.statistics(split);
          } catch (const std::exception& e) {
            stats_error = e.what();
          }
        }
        if (!stats) throw Error(stats_error);
        RunMetrics m = pipeline.run(split, *stats, variants[v].model, variants[v].mask);
        write_file_atomic(file, dump(m.to_json()));
        std::lock_guard lock(timing_mutex);
        timing[v][std::to_string(split.split_id)] = m.wall_clock_seconds;
        out.metrics = std::move(m);
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    }
  });

  std::vector<Aggregate> aggregates;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    Aggregate a = Aggregate::from_outcomes(variants[v].name, outcomes[v]);
    nlohmann::json j = a.to_json();
    nlohmann::json errors = nlohmann::json::object();
    for (const auto& o : outcomes[v])
      if (!o.metrics) errors[std::to_string(o.split_id)] = o.error;
    j["errors"] = errors;
    write_file_atomic(variants[v].dir / "aggregate.json", dump(j));
    if (!timing[v].empty()) write_file_atomic(variants[v].dir / "timing.json", dump({{"wall_clock_seconds", timing[v]}}));
    aggregates.push_back(std::move(a));
  }
  return aggregates;
}

// ---------------------------------------------------------------------------
// Commands

DatasetStats dataset_stats(const Graph& g) {
  DatasetStats s;
  s.num_nodes = g.num_nodes();
  s.num_edges = g.num_edges();
  s.num_features = g.num_features();
  s.num_classes = g.num_classes();
  try {
    s.node_homophily = node_homophily(g);
  } catch (const Error&) {
  }
  try {
    s.edge_homophily = edge_homophily(g);
  } catch (const Error&) {
  }
  return s;
}

std::string format_stats_csv(const std::string& name, const DatasetStats& s) {
  auto opt = [](const std::optional<double>& x) { return x ? format_double(*x) : std::string("nan"); };
  std::ostringstream out;
  out << "dataset,num_nodes,num_edges,num_features,num_classes,node_homophily,edge_homophily\n"
      << name << ',' << s.num_nodes << ',' << s.num_edges << ',' << s.num_features << ',' << s.num_classes << ','
      << opt(s.node_homophily) << ',' << opt(s.edge_homophily) << '\n';
  return out.str();
}

int cmd_stats(const fs::path& dataset_dir, std::ostream& out) {
  const Dataset ds = load_dataset(dataset_dir);
  const fs::path canonical = fs::weakly_canonical(dataset_dir);
  out << format_stats_csv(canonical.filename().string(), dataset_stats(ds.graph));
  return kExitOk;
}

namespace {

int exit_code_for(const std::vector<Aggregate>& aggs) {
  bool any_failed = false, all_failed = true;
  for (const auto& a : aggs) {
    any_failed |= !a.failed_splits.empty();
    all_failed &= a.failed_splits.size() == a.num_splits;
  }
  if (all_failed) return kExitFatal;
  return any_failed ? kExitPartial : kExitOk;
}

void log_aggregate(std::ostream& log, const Aggregate& a) {
  log << a.name << ": " << a.test_accuracies.size() << "/" << a.num_splits << " splits, test accuracy "
      << 100.0 * a.mean << " +- " << 100.0 * a.std << "\n";
}

std::string csv_header_and_rows(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  }
  return out.str();
}

}  // namespace

int cmd_train(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const Pipeline pipeline(config);
  Variant full{"hpgmn", "full model", config.effective_model(), config.statistics, config.out};
  write_file_atomic(config.out / "config.json", dump(config.to_json()));
  const auto aggs = run_variants(pipeline, {full});
  log_aggregate(log, aggs.front());
  return exit_code_for(aggs);
}

std::vector<Variant> ablation_variants(const ExperimentConfig& config) {
  std::vector<Variant> out;
  const ModelConfig base = config.effective_model();
  out.push_back({"full", "full model", base, config.statistics, config.out / "full"});
  static const char* labels[] = {"without node attributes", "without label-wise class distribution",
                                 "without label-wise feature distribution", "without diffusion"};
  for (std::size_t i = 0; i < kNumStatBlocks; ++i) {
    BlockMask mask = config.statistics;
    mask.enabled[i] = false;
    if (!mask.any()) continue;
    out.push_back({std::string("wo_") + stat_block_name(i), labels[i], base, mask,
                   config.out / (std::string("wo_") + stat_block_name(i))});
  }
  ModelConfig no_k = base, no_e = base, no_ke = base;
  no_k.alpha_kpattern = 0.0;
  no_e.beta_entropy = 0.0;
  no_ke.alpha_kpattern = no_ke.beta_entropy = 0.0;
  out.push_back({"wo_kpattern", "without kpattern loss", no_k, config.statistics, config.out / "wo_kpattern"});
  out.push_back({"wo_entropy", "without entropy loss", no_e, config.statistics, config.out / "wo_entropy"});
  out.push_back({"wo_kpattern_entropy", "without kpattern and entropy losses", no_ke, config.statistics, config.out / "wo_kpattern_entropy"});
  return out;
}

int cmd_ablate(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const Pipeline pipeline(config);
  const auto variants = ablation_variants(config);
  write_file_atomic(config.out / "config.json", dump(config.to_json()));
  const auto aggs = run_variants(pipeline, variants);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const Aggregate& a = aggs[i];
    log_aggregate(log, a);
    rows.push_back({std::to_string(kMetricsSchemaVersion), variants[i].name, '"' + variants[i].description + '"',
                    format_double(a.mean), format_double(a.std), format_double(a.mean_usage_entropy),
                    std::to_string(a.num_splits), std::to_string(a.failed_splits.size())});
  }
  write_file_atomic(config.out / "ablation.csv",
                    csv_header_and_rows({"schema_version", "variant", "description", "mean_accuracy", "std_accuracy",
                                         "mean_usage_entropy", "num_splits", "num_failed"},
                                        rows));
  return exit_code_for(aggs);
}

std::vector<Variant> sweep_variants(const ExperimentConfig& config) {
  require(!config.grid_num_units.empty() || !config.grid_alpha_kpattern.empty() ||
              !config.grid_beta_entropy.empty() || !config.grid_block_out.empty(),
          "sweep: every grid is empty");
  const ModelConfig base = config.effective_model();
  auto or_default = [](auto grid, auto value) {
    if (grid.empty()) grid.push_back(value);
    return grid;
  };
  const auto ks = or_default(config.grid_num_units, base.num_units);
  const auto alphas = or_default(config.grid_alpha_kpattern, base.alpha_kpattern);
  const auto betas = or_default(config.grid_beta_entropy, base.beta_entropy);
  const auto outs = or_default(config.grid_block_out, base.block_out);

  std::vector<Variant> out;
  for (std::size_t k : ks)
    for (double a : alphas)
      for (double b : betas)
        for (std::size_t w : outs) {
          ModelConfig m = base;
          m.num_units = k;
          m.alpha_kpattern = a;
          m.beta_entropy = b;
          m.block_out = w;
          const std::string name = "K" + std::to_string(k) + "_a" + format_double(a) + "_b" + format_double(b) +
                                   "_h" + std::to_string(w);
          out.push_back({name, name, m, config.statistics, config.out / "cells" / name});
        }
  return out;
}

int cmd_sweep(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const auto variants = sweep_variants(config);
  const Pipeline pipeline(config);
  write_file_atomic(config.out / "config.json", dump(config.to_json()));
  const auto aggs = run_variants(pipeline, variants);

  std::vector<std::vector<std::string>> rows;
  bool any_failed = false;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const Aggregate& a = aggs[i];
    const ModelConfig& m = variants[i].model;
    const bool failed = !a.failed_splits.empty();
    any_failed |= failed;
    log_aggregate(log, a);
    rows.push_back({std::to_string(kMetricsSchemaVersion), std::to_string(m.num_units), format_double(m.alpha_kpattern),
                    format_double(m.beta_entropy), std::to_string(m.block_out), format_double(a.mean),
                    format_double(a.std), std::to_string(a.num_splits), std::to_string(a.failed_splits.size()),
                    a.failed_splits.empty() ? "ok" : (a.test_accuracies.empty() ? "failed" : "partial")});
  }
  write_file_atomic(config.out / "sweep.csv",
                    csv_header_and_rows({"schema_version", "num_units", "alpha_kpattern", "beta_entropy", "block_out",
                                         "mean_accuracy", "std_accuracy", "num_splits", "num_failed", "status"},
                                        rows));
  return any_failed ? kExitPartial : kExitOk;
}

}  // namespace hpgmn
