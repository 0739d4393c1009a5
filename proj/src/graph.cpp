#include "hpgmn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace hpgmn {

Graph::Graph(std::size_t num_nodes, std::vector<Edge> edges, Matrix features, std::vector<int> labels,
             int num_classes)
    : num_nodes_(num_nodes), num_classes_(num_classes), features_(std::move(features)), labels_(std::move(labels)) {
  require(features_.rows() == num_nodes_, "feature matrix has " + std::to_string(features_.rows()) +
                                              " rows for " + std::to_string(num_nodes_) + " nodes");
  require(features_.cols() >= 1, "feature matrix needs at least one column");
  require(features_.all_finite(), "feature matrix contains non-finite values");
  require(labels_.size() == num_nodes_, "label vector length differs from node count");
  require(num_classes_ >= 1, "a graph needs at least one class");
  for (int y : labels_) {
    require(y >= -1 && y < num_classes_, "label id " + std::to_string(y) + " outside [0, " +
                                             std::to_string(num_classes_) + ")");
  }

  for (auto& [u, v] : edges) {
    require(u < num_nodes_ && v < num_nodes_, "endpoint out of range");
    if (u > v) std::swap(u, v);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges_ = std::move(edges);

  std::vector<std::size_t> degree(num_nodes_, 0);
  for (const auto& [u, v] : edges_) {
    ++degree[u];
    if (u != v) ++degree[v];
  }
  offsets_.assign(num_nodes_ + 1, 0);
  for (std::size_t i = 0; i < num_nodes_; ++i) offsets_[i + 1] = offsets_[i] + degree[i];
  adjacency_.resize(offsets_.back());
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  for (const auto& [u, v] : edges_) {
    adjacency_[cursor[u]++] = v;
    if (u != v) adjacency_[cursor[v]++] = u;
  }
  for (std::size_t i = 0; i < num_nodes_; ++i) {
    std::sort(adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
              adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]));
  }
}

std::uint64_t Graph::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  const std::uint64_t header[] = {num_nodes_, static_cast<std::uint64_t>(num_classes_), edges_.size(),
                                  features_.cols()};
  mix(header, sizeof(header));
  mix(edges_.data(), edges_.size() * sizeof(Edge));
  mix(features_.raw(), features_.size() * sizeof(double));
  mix(labels_.data(), labels_.size() * sizeof(int));
  return h;
}

void SplitSet::validate(const Graph& g) const {
  require(!train.empty(), "split " + std::to_string(split_id) + ": empty train set");
  std::vector<char> seen(g.num_nodes(), 0);
  auto mark = [&](const std::vector<std::size_t>& idx, const char* name) {
    for (std::size_t v : idx) {
      require(v < g.num_nodes(), "split " + std::to_string(split_id) + ": " + name + " index " + std::to_string(v) +
                                     " out of range");
      require(!seen[v], "split " + std::to_string(split_id) + ": index " + std::to_string(v) +
                            " appears in more than one set");
      seen[v] = 1;
    }
  };
  mark(train, "train");
  mark(val, "val");
  mark(test, "test");
  for (std::size_t v : train) {
    require(g.label_known(v), "split " + std::to_string(split_id) + ": train node " + std::to_string(v) +
                                  " has no label");
  }
}

namespace {

void require_all_labels_known(const Graph& g) {
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    require(g.label_known(v), "homophily needs every label; node " + std::to_string(v) + " is unlabelled");
  }
}

}  // namespace

double node_homophily(const Graph& g) {
  require_all_labels_known(g);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const auto nbrs = g.neighbors(v);
    if (nbrs.empty()) continue;
    std::size_t same = 0;
    for (std::uint32_t u : nbrs) same += g.labels()[u] == g.labels()[v];
    total += static_cast<double>(same) / static_cast<double>(nbrs.size());
    ++counted;
  }
  require(counted > 0, "undefined homophily: no node has a neighbour");
  return total / static_cast<double>(counted);
}

double edge_homophily(const Graph& g) {
  require_all_labels_known(g);
  require(g.num_edges() > 0, "undefined homophily: graph has no edges");
  std::size_t same = 0;
  for (const auto& [u, v] : g.edges()) same += g.labels()[u] == g.labels()[v];
  return static_cast<double>(same) / static_cast<double>(g.num_edges());
}

std::vector<SplitSet> random_splits(const Graph& g, std::size_t count, std::uint64_t base_seed, double train_ratio,
                                    double val_ratio) {
  std::vector<std::size_t> labelled;
  for (std::size_t v = 0; v < g.num_nodes(); ++v)
    if (g.label_known(v)) labelled.push_back(v);
  require(!labelled.empty(), "cannot split a graph without labelled nodes");

  const auto n = static_cast<double>(labelled.size());
  const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(train_ratio * n)));
  const auto n_val = std::min(labelled.size() - n_train, static_cast<std::size_t>(std::llround(val_ratio * n)));

  std::vector<SplitSet> splits;
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<std::size_t> order = labelled;
    Rng rng(base_seed + k);
    std::shuffle(order.begin(), order.end(), rng);
    SplitSet s;
    s.split_id = k;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

Graph generate_heterophilous_sbm(const SbmParams& p) {
  require(p.num_classes >= 2, "SBM needs at least two classes");
  require(p.p_intra >= 0.0 && p.p_intra <= 1.0 && p.p_inter >= 0.0 && p.p_inter <= 1.0,
          "SBM edge probabilities must lie in [0, 1]");
  require(p.num_features >= 1, "SBM needs at least one feature");

  const std::size_t classes = static_cast<std::size_t>(p.num_classes);
  const std::size_t n = p.n_per_class * classes;
  Rng rng(p.seed);

  std::vector<int> labels(n);
  for (std::size_t v = 0; v < n; ++v) labels[v] = static_cast<int>(v / std::max<std::size_t>(p.n_per_class, 1));

  std::vector<Edge> edges;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      const double prob = labels[u] == labels[v] ? p.p_intra : p.p_inter;
      if (coin(rng) < prob) edges.emplace_back(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v));
    }
  }

  Matrix features(n, p.num_features);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t f = 0; f < p.num_features; ++f) features(v, f) = noise(rng);
    features(v, static_cast<std::size_t>(labels[v]) % p.num_features) += p.feature_shift;
  }
  return Graph(n, std::move(edges), std::move(features), std::move(labels), p.num_classes);
}

}  // namespace hpgmn
