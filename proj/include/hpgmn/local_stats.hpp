#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hpgmn/graph.hpp"
#include "hpgmn/matrix.hpp"
#include "hpgmn/nn.hpp"

namespace hpgmn {

enum class LabelSource : std::uint8_t { ground_truth_on_train, estimated };

/// One class id per node. Train-split nodes carry their true label.
struct PseudoLabels {
  std::vector<int> labels;
  std::vector<LabelSource> source;
};

/// Trains a two-layer ReLU MLP on the attributes of the split's train nodes
/// and predicts every node. Uses cfg.max_epochs full-batch steps.
PseudoLabels fit_pseudo_label_estimator(const Graph& g, const SplitSet& split, const TrainConfig& cfg,
                                        std::size_t hidden = 512);

/// r2: per-node count of neighbours carrying each pseudo-label. N x C.
Matrix label_wise_class_distribution(const Graph& g, const PseudoLabels& pl);

/// r3: per-node mean neighbour attributes for each pseudo-label, class blocks
/// concatenated. A class with no neighbours contributes a zero block. N x (C*F).
Matrix label_wise_feature_distribution(const Graph& g, const PseudoLabels& pl);

/// Truncated personalized-PageRank diffusion
///   S = sum_{k=0..k_max} alpha (1 - alpha)^k T^k,  T = (A + I) D^-1.
/// Dense N x N; row v is the diffusion statistic of node v.
Matrix ppr_diffusion(const Graph& g, double alpha_ppr, std::size_t k_max);

/// Row v holds the `top_d` largest entries of row v of ppr_diffusion, sorted
/// descending. Used when the dense N x N block is too large.
Matrix ppr_diffusion_top_d(const Graph& g, double alpha_ppr, std::size_t k_max, std::size_t top_d);

enum class StatBlock : std::size_t { attributes = 0, class_distribution = 1, feature_distribution = 2, diffusion = 3 };
inline constexpr std::size_t kNumStatBlocks = 4;

const char* stat_block_name(std::size_t block);

struct BlockMask {
  std::array<bool, kNumStatBlocks> enabled{true, true, true, true};

  bool operator[](StatBlock b) const { return enabled[static_cast<std::size_t>(b)]; }
  bool any() const { return enabled[0] || enabled[1] || enabled[2] || enabled[3]; }
  friend bool operator==(const BlockMask&, const BlockMask&) = default;
};

/// The per-node inputs of the model: r1 (attributes), r2, r3, r4. Disabled
/// blocks are N x 0.
struct LocalStatistics {
  std::array<Matrix, kNumStatBlocks> blocks;
  BlockMask mask;

  std::size_t num_nodes() const;
  std::array<std::size_t, kNumStatBlocks> widths() const;
  const Matrix& block(StatBlock b) const { return blocks[static_cast<std::size_t>(b)]; }
};

LocalStatistics assemble_local_statistics(const Graph& g, const PseudoLabels& pl, const Matrix& diffusion,
                                          const BlockMask& mask);

/// Returns a copy with the blocks disabled in `mask` replaced by N x 0.
LocalStatistics restrict_blocks(const LocalStatistics& stats, const BlockMask& mask);

struct StatsCacheKey {
  std::uint64_t dataset_hash = 0;
  std::size_t split_id = 0;
  double alpha_ppr = 0.0;
  std::size_t k_max = 0;
  std::uint64_t estimator_seed = 0;
  std::size_t top_d = 0;  // 0 for the dense diffusion block

  std::string file_name() const;
};

/// Versioned binary blob. A stale version or a key mismatch reads as a miss.
void save_local_statistics(const std::filesystem::path& file, const StatsCacheKey& key, const LocalStatistics& stats);
std::optional<LocalStatistics> load_local_statistics(const std::filesystem::path& file, const StatsCacheKey& key);

}  // namespace hpgmn
