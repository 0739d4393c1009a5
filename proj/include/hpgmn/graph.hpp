#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hpgmn/matrix.hpp"

namespace hpgmn {

using Edge = std::pair<std::uint32_t, std::uint32_t>;

/// Undirected, unweighted attributed graph. Immutable after construction.
///
/// Edges are stored once with u <= v, sorted and deduplicated. A self-loop
/// (v, v) is a single edge and makes v its own neighbour. Labels use -1 for
/// unknown.
class Graph {
 public:
  Graph() = default;
  Graph(std::size_t num_nodes, std::vector<Edge> edges, Matrix features, std::vector<int> labels,
        int num_classes);

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::size_t num_features() const noexcept { return features_.cols(); }
  int num_classes() const noexcept { return num_classes_; }

  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const Matrix& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  bool label_known(std::size_t v) const { return labels_[v] >= 0; }

  std::span<const std::uint32_t> neighbors(std::size_t v) const {
    return {adjacency_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
  }
  std::size_t degree(std::size_t v) const { return offsets_[v + 1] - offsets_[v]; }

  /// 64-bit FNV-1a digest over structure, features and labels.
  std::uint64_t content_hash() const;

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.num_nodes_ == b.num_nodes_ && a.num_classes_ == b.num_classes_ && a.edges_ == b.edges_ &&
           a.features_ == b.features_ && a.labels_ == b.labels_;
  }

 private:
  std::size_t num_nodes_ = 0;
  int num_classes_ = 0;
  std::vector<Edge> edges_;
  Matrix features_;
  std::vector<int> labels_;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> adjacency_;
};

struct SplitSet {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::size_t split_id = 0;

  /// Throws unless the index sets are disjoint, in range, train is non-empty
  /// and every train node has a known label.
  void validate(const Graph& g) const;
};

/// Average fraction of same-label neighbours over non-isolated nodes.
double node_homophily(const Graph& g);
/// Fraction of edges whose endpoints share a label.
double edge_homophily(const Graph& g);

/// Random train/val/test splits over labelled nodes with the given ratios.
/// Split k is shuffled with seed `base_seed + k`.
std::vector<SplitSet> random_splits(const Graph& g, std::size_t count, std::uint64_t base_seed,
                                    double train_ratio = 0.48, double val_ratio = 0.32);

struct SbmParams {
  std::size_t n_per_class = 50;
  int num_classes = 2;
  double p_intra = 0.01;
  double p_inter = 0.2;
  double feature_shift = 2.0;
  std::uint64_t seed = 0;
  std::size_t num_features = 16;
};

/// Stochastic block model with Gaussian features whose class means sit
/// `feature_shift` apart along distinct axes. Nodes are ordered class by class.
Graph generate_heterophilous_sbm(const SbmParams& params);

struct Dataset {
  Graph graph;
  std::vector<SplitSet> splits;
};

/// Reads edges.tsv, features.tsv, labels.tsv and splits/split_<k>.json. A
/// dataset without a splits/ directory gets ten random 48/32/20 splits with
/// seeds 0..9.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the directory layout read by load_dataset.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace hpgmn
