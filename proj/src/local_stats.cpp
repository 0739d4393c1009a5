#include "hpgmn/local_stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "hpgmn/io_util.hpp"

namespace hpgmn {

PseudoLabels fit_pseudo_label_estimator(const Graph& g, const SplitSet& split, const TrainConfig& cfg,
                                        std::size_t hidden) {
  require(!split.train.empty(), "pseudo-label estimator needs a non-empty train split");
  const std::size_t n = g.num_nodes();
  PseudoLabels pl{std::vector<int>(n, 0), std::vector<LabelSource>(n, LabelSource::estimated)};

  if (g.num_classes() > 1) {
    Rng rng(cfg.seed);
    Mlp mlp = Mlp::kaiming({g.num_features(), hidden, static_cast<std::size_t>(g.num_classes())}, rng);
    const Matrix x_train = gather_rows(g.features(), split.train);
    std::vector<int> y_train(split.train.size());
    std::vector<std::size_t> rows(split.train.size());
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      y_train[i] = g.labels()[split.train[i]];
      rows[i] = i;
    }

    Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    std::vector<double> params, grads;
    std::vector<std::uint8_t> decay;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      Mlp::Tape tape;
      const Matrix logits = mlp.forward(x_train, tape, cfg.dropout, &rng);
      const Matrix probs = softmax_rows(logits);
      const double loss = cross_entropy_loss(probs, y_train, rows).loss;
      if (!std::isfinite(loss)) throw Error("estimator diverged at epoch " + std::to_string(epoch));
      Mlp grad(mlp.widths());
      mlp.backward(tape, cross_entropy_logit_grad(probs, y_train, rows), grad, false);

      params.clear();
      grads.clear();
      decay.clear();
      mlp.for_each_tensor([&](auto t, bool is_bias) {
        params.insert(params.end(), t.begin(), t.end());
        decay.insert(decay.end(), t.size(), is_bias ? 0 : 1);
      });
      grad.for_each_tensor([&](auto t, bool) { grads.insert(grads.end(), t.begin(), t.end()); });
      try {
        opt.step(params, grads, decay, epoch);
      } catch (const Error&) {
        throw Error("estimator diverged at epoch " + std::to_string(epoch));
      }
      std::size_t offset = 0;
      mlp.for_each_tensor([&](std::span<double> t, bool) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.begin());
        offset += t.size();
      });
    }
    pl.labels = argmax_rows(mlp.forward(g.features()));
  }

  for (std::size_t v : split.train) {
    pl.labels[v] = g.labels()[v];
    pl.source[v] = LabelSource::ground_truth_on_train;
  }
  return pl;
}

namespace {

void check_pseudo_labels(const Graph& g, const PseudoLabels& pl) {
  require(pl.labels.size() == g.num_nodes(), "pseudo-labels do not cover every node");
  for (int y : pl.labels) require(y >= 0 && y < g.num_classes(), "pseudo-label outside [0, C)");
}

}  // namespace

Matrix label_wise_class_distribution(const Graph& g, const PseudoLabels& pl) {
  check_pseudo_labels(g, pl);
  Matrix r2(g.num_nodes(), static_cast<std::size_t>(g.num_classes()));
  for (std::size_t v = 0; v < g.num_nodes(); ++v)
    for (std::uint32_t u : g.neighbors(v)) r2(v, static_cast<std::size_t>(pl.labels[u])) += 1.0;
  return r2;
}

Matrix label_wise_feature_distribution(const Graph& g, const PseudoLabels& pl) {
  check_pseudo_labels(g, pl);
  const std::size_t f = g.num_features();
  const std::size_t c = static_cast<std::size_t>(g.num_classes());
  Matrix r3(g.num_nodes(), c * f);
  std::vector<std::size_t> counts(c);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    std::fill(counts.begin(), counts.end(), 0);
    auto out = r3.row(v);
    for (std::uint32_t u : g.neighbors(v)) {
      const auto cls = static_cast<std::size_t>(pl.labels[u]);
      ++counts[cls];
      auto x = g.features().row(u);
      for (std::size_t j = 0; j < f; ++j) out[cls * f + j] += x[j];
    }
    for (std::size_t cls = 0; cls < c; ++cls) {
      if (counts[cls] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[cls]);
      for (std::size_t j = 0; j < f; ++j) out[cls * f + j] *= inv;
    }
  }
  return r3;
}

namespace {

void check_alpha(double alpha_ppr) {
  require(alpha_ppr > 0.0 && alpha_ppr < 1.0, "alpha_ppr must lie in (0, 1)");
}

// Inverse self-loop-augmented degree of every node.
std::vector<double> inverse_augmented_degree(const Graph& g) {
  std::vector<double> inv(g.num_nodes());
  for (std::size_t v = 0; v < g.num_nodes(); ++v) inv[v] = 1.0 / static_cast<double>(g.degree(v) + 1);
  return inv;
}

}  // namespace

Matrix ppr_diffusion(const Graph& g, double alpha_ppr, std::size_t k_max) {
  check_alpha(alpha_ppr);
  const std::size_t n = g.num_nodes();
  const auto inv_deg = inverse_augmented_degree(g);

  // power holds (1 - alpha)^k T^k; (T P)[u,:] = sum_{v in N(u) + u} P[v,:] / d(v).
  Matrix power = Matrix::identity(n);
  Matrix s = power;
  s *= alpha_ppr;
  Matrix next(n, n);
  for (std::size_t k = 1; k <= k_max; ++k) {
    next.fill(0.0);
    for (std::size_t u = 0; u < n; ++u) {
      auto out = next.row(u);
      auto accumulate = [&](std::size_t v) {
        const double w = (1.0 - alpha_ppr) * inv_deg[v];
        auto src = power.row(v);
        for (std::size_t j = 0; j < n; ++j) out[j] += w * src[j];
      };
      accumulate(u);
      for (std::uint32_t v : g.neighbors(u)) accumulate(v);
    }
    std::swap(power, next);
    for (std::size_t i = 0; i < s.size(); ++i) s.data()[i] += alpha_ppr * power.data()[i];
  }
  return s;
}

Matrix ppr_diffusion_top_d(const Graph& g, double alpha_ppr, std::size_t k_max, std::size_t top_d) {
  check_alpha(alpha_ppr);
  const std::size_t n = g.num_nodes();
  const auto inv_deg = inverse_augmented_degree(g);
  Matrix out(n, top_d);
  std::vector<double> current(n), next(n), acc(n);
  for (std::size_t v = 0; v < n; ++v) {
    // Row v of S: e_v^T sum_k alpha (1 - alpha)^k T^k, i.e. r <- r T.
    std::fill(current.begin(), current.end(), 0.0);
    current[v] = 1.0;
    std::fill(acc.begin(), acc.end(), 0.0);
    acc[v] = alpha_ppr;
    for (std::size_t k = 1; k <= k_max; ++k) {
      for (std::size_t j = 0; j < n; ++j) {
        double sum = current[j];
        for (std::uint32_t u : g.neighbors(j)) sum += current[u];
        next[j] = (1.0 - alpha_ppr) * sum * inv_deg[j];
      }
      std::swap(current, next);
      for (std::size_t j = 0; j < n; ++j) acc[j] += alpha_ppr * current[j];
    }
    const std::size_t keep = std::min(top_d, n);
    std::partial_sort(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(keep), acc.end(), std::greater<>{});
    std::copy_n(acc.begin(), keep, out.row(v).begin());
  }
  return out;
}

const char* stat_block_name(std::size_t block) {
  static const char* names[] = {"node_attributes", "label_wise_class", "label_wise_feature", "diffusion"};
  return block < kNumStatBlocks ? names[block] : "unknown";
}

std::size_t LocalStatistics::num_nodes() const {
  return blocks[0].rows();
}

std::array<std::size_t, kNumStatBlocks> LocalStatistics::widths() const {
  std::array<std::size_t, kNumStatBlocks> w{};
  for (std::size_t i = 0; i < kNumStatBlocks; ++i) w[i] = blocks[i].cols();
  return w;
}

LocalStatistics assemble_local_statistics(const Graph& g, const PseudoLabels& pl, const Matrix& diffusion,
                                          const BlockMask& mask) {
  require(mask.any(), "no local statistic enabled");
  const std::size_t n = g.num_nodes();
  LocalStatistics stats;
  stats.mask = mask;
  for (auto& b : stats.blocks) b = Matrix(n, 0);
  if (mask[StatBlock::attributes]) stats.blocks[0] = g.features();
  if (mask[StatBlock::class_distribution]) stats.blocks[1] = label_wise_class_distribution(g, pl);
  if (mask[StatBlock::feature_distribution]) stats.blocks[2] = label_wise_feature_distribution(g, pl);
  if (mask[StatBlock::diffusion]) {
    require(diffusion.rows() == n, "dimension mismatch: diffusion block has " + std::to_string(diffusion.rows()) +
                                       " rows for " + std::to_string(n) + " nodes");
    stats.blocks[3] = diffusion;
  }
  return stats;
}

LocalStatistics restrict_blocks(const LocalStatistics& stats, const BlockMask& mask) {
  require(mask.any(), "no local statistic enabled");
  LocalStatistics out = stats;
  for (std::size_t i = 0; i < kNumStatBlocks; ++i) {
    out.mask.enabled[i] = stats.mask.enabled[i] && mask.enabled[i];
    if (!out.mask.enabled[i]) out.blocks[i] = Matrix(stats.num_nodes(), 0);
  }
  require(out.mask.any(), "no local statistic enabled");
  return out;
}

namespace {

constexpr char kStatsMagic[8] = {'H', 'P', 'G', 'M', 'N', 'L', 'S', '\0'};
constexpr std::uint32_t kStatsVersion = 1;

template <typename T>
void put(std::string& buf, const T& value) {
  buf.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& value) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&value), sizeof(T)));
}

void put_key(std::string& buf, const StatsCacheKey& key) {
  put(buf, key.dataset_hash);
  put(buf, static_cast<std::uint64_t>(key.split_id));
  put(buf, key.alpha_ppr);
  put(buf, static_cast<std::uint64_t>(key.k_max));
  put(buf, key.estimator_seed);
  put(buf, static_cast<std::uint64_t>(key.top_d));
}

}  // namespace

std::string StatsCacheKey::file_name() const {
  std::string buf;
  put_key(buf, *this);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : buf) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char name[64];
  std::snprintf(name, sizeof(name), "stats_%016llx.bin", static_cast<unsigned long long>(h));
  return name;
}

void save_local_statistics(const std::filesystem::path& file, const StatsCacheKey& key, const LocalStatistics& stats) {
  std::string buf(kStatsMagic, sizeof(kStatsMagic));
  put(buf, kStatsVersion);
  put_key(buf, key);
  for (bool on : stats.mask.enabled) put(buf, static_cast<std::uint8_t>(on));
  for (const Matrix& m : stats.blocks) {
    put(buf, static_cast<std::uint64_t>(m.rows()));
    put(buf, static_cast<std::uint64_t>(m.cols()));
    buf.append(reinterpret_cast<const char*>(m.raw()), m.size() * sizeof(double));
  }
  write_file_atomic(file, buf);
}

std::optional<LocalStatistics> load_local_statistics(const std::filesystem::path& file, const StatsCacheKey& key) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[sizeof(kStatsMagic)];
  std::uint32_t version = 0;
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kStatsMagic, sizeof(magic)) != 0) return std::nullopt;
  if (!get(in, version) || version != kStatsVersion) return std::nullopt;

  std::string expected, actual(sizeof(std::uint64_t) * 6, '\0');
  put_key(expected, key);
  if (!in.read(actual.data(), static_cast<std::streamsize>(actual.size())) || actual != expected) return std::nullopt;

  LocalStatistics stats;
  for (bool& on : stats.mask.enabled) {
    std::uint8_t flag = 0;
    if (!get(in, flag)) return std::nullopt;
    on = flag != 0;
  }
  for (Matrix& m : stats.blocks) {
    std::uint64_t rows = 0, cols = 0;
    if (!get(in, rows) || !get(in, cols)) return std::nullopt;
    m = Matrix(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.raw()), static_cast<std::streamsize>(m.size() * sizeof(double))))
      return std::nullopt;
  }
  return stats;
}

}  // namespace hpgmn
