#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpgmn/graph.hpp"
#include "hpgmn/local_stats.hpp"
#include "hpgmn/memory.hpp"
#include "hpgmn/nn.hpp"

namespace hpgmn {

struct ModelConfig {
  std::size_t block_hidden = 64;  // hidden width of each statistic's MLP
  std::size_t block_out = 64;     // query slice contributed by each statistic
  std::size_t head_hidden = 64;
  std::size_t num_units = 100;    // K
  double alpha_kpattern = 0.01;
  double beta_entropy = 0.01;
  double gamma_frobenius = 1e-4;

  void validate() const;
};

/// Every trainable tensor. Also used, zero-filled, as the gradient container.
struct ModelParams {
  std::array<std::optional<Mlp>, kNumStatBlocks> blocks;
  Mlp head;
  Matrix memory;

  ModelParams zeros_like() const;
  std::size_t count() const;

  /// Visits tensors in declaration order: block MLPs (r1..r4), head, memory.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    for (auto& block : self.blocks)
      if (block) block->for_each_tensor(f);
    self.head.for_each_tensor(f);
    f(self.memory.data(), false);
  }
  template <typename F>
  void for_each_tensor(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each_tensor(F&& f) const { visit(*this, f); }
};

struct ForwardResult {
  Matrix queries;         // N x hidden, Q
  Matrix attention_rows;  // N x K, row v is node v's distribution over units
  Matrix values;          // N x hidden, V
  Matrix logits;          // N x C
  Matrix probs;           // N x C

  /// Attention in the K x N layout.
  AttentionMatrix attention() const { return {attention_rows.transposed()}; }
};

struct LossTerms {
  double total = 0.0;
  double classification = 0.0;
  double kpattern = 0.0;
  double entropy = 0.0;
  double frobenius = 0.0;
  std::size_t clamped_targets = 0;
};

struct LossResult {
  LossTerms terms;
  ModelParams grad;
};

/// Local statistics -> per-block MLPs -> query; query attends the memory;
/// [query | value] -> head MLP -> class logits.
class HpGmnModel {
 public:
  HpGmnModel() = default;
  HpGmnModel(const std::array<std::size_t, kNumStatBlocks>& block_input_widths, int num_classes,
             const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ModelConfig& config() noexcept { return config_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelParams& params() noexcept { return params_; }
  int num_classes() const noexcept { return num_classes_; }
  std::size_t query_width() const;
  MemoryBank memory() const { return MemoryBank(params_.memory); }
  std::array<std::size_t, kNumStatBlocks> block_input_widths() const;

  ForwardResult forward(const LocalStatistics& stats) const;

  /// L_class over `train_rows` + alpha L_kpattern + beta L_entropy (all
  /// nodes) + gamma ||M||_F^2, with the gradient w.r.t. every parameter.
  /// Dropout is applied when `dropout > 0` and an rng is given.
  LossResult total_loss(const LocalStatistics& stats, std::span<const int> labels,
                        std::span<const std::size_t> train_rows, double dropout = 0.0, Rng* rng = nullptr) const;

  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);
  /// 1 for weights and memory, 0 for biases.
  std::vector<std::uint8_t> decay_mask() const;

 private:
  ModelConfig config_;
  int num_classes_ = 0;
  ModelParams params_;
};

std::vector<double> flatten(const ModelParams& p);

/// argmax accuracy over `rows`; ties go to the lowest class id.
double evaluate(const HpGmnModel& model, const LocalStatistics& stats, std::span<const int> labels,
                std::span<const std::size_t> rows);
double accuracy(const Matrix& logits, std::span<const int> labels, std::span<const std::size_t> rows);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct RunMetrics {
  std::size_t split_id = 0;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  LossTerms best_loss_terms;
  double memory_usage_entropy = 0.0;
  bool stopped_early = false;
  double wall_clock_seconds = 0.0;  // kept out of to_json so metric files are reproducible

  nlohmann::json to_json() const;
  static RunMetrics from_json(const nlohmann::json& j);
};

inline constexpr int kMetricsSchemaVersion = 1;

/// Full-batch training with early stopping on validation accuracy. The
/// best-validation parameters are restored before the test evaluation.
RunMetrics train(HpGmnModel& model, const Graph& g, const LocalStatistics& stats, const SplitSet& split,
                 const TrainConfig& cfg);

/// Versioned flat binary: header (tensor widths, K, hidden) followed by
/// little-endian float64 parameters in declaration order.
void save_checkpoint(const HpGmnModel& model, const std::filesystem::path& file);
HpGmnModel load_checkpoint(const std::filesystem::path& file);

}  // namespace hpgmn
