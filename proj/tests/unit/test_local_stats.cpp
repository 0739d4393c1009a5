#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hpgmn/local_stats.hpp"
#include "test_util.hpp"

using namespace hpgmn;

namespace {

PseudoLabels labels_of(std::vector<int> y) { return PseudoLabels{std::move(y), {}}; }

// Random graph with random pseudo-labels, independent of the SBM generator.
Graph random_graph(std::size_t n, std::size_t f, int c, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution edge(p);
  std::vector<Edge> edges;
  for (std::uint32_t u = 0; u < n; ++u)
    for (std::uint32_t v = u + 1; v < n; ++v)
      if (edge(rng)) edges.emplace_back(u, v);
  std::uniform_int_distribution<int> cls(0, c - 1);
  std::vector<int> y(n);
  for (int& v : y) v = cls(rng);
  return Graph(n, edges, test::random_matrix(n, f, rng), y, c);
}

std::vector<int> random_labels(std::size_t n, int c, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> cls(0, c - 1);
  std::vector<int> y(n);
  for (int& v : y) v = cls(rng);
  return y;
}

// Dense (A + I) D^-1 with d = degree + 1 and the truncated series by direct
// matrix powers.
Matrix dense_ppr_oracle(const Graph& g, double alpha, std::size_t k_max) {
  const std::size_t n = g.num_nodes();
  Matrix a = Matrix::identity(n);
  for (const auto& [u, v] : g.edges()) {
    a(u, v) += 1.0;
    if (u != v) a(v, u) += 1.0;
  }
  Matrix t(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double col = 0;
    for (std::size_t i = 0; i < n; ++i) col += a(i, j);
    for (std::size_t i = 0; i < n; ++i) t(i, j) = a(i, j) / col;
  }
  Matrix s(n, n), power = Matrix::identity(n);
  for (std::size_t k = 0; k <= k_max; ++k) {
    const double theta = alpha * std::pow(1 - alpha, static_cast<double>(k));
    for (std::size_t i = 0; i < s.size(); ++i) s.data()[i] += theta * power.data()[i];
    power = matmul(t, power);
  }
  return s;
}

Graph permuted(const Graph& g, const std::vector<std::uint32_t>& perm) {
  std::vector<Edge> edges;
  for (const auto& [u, v] : g.edges()) edges.emplace_back(perm[u], perm[v]);
  Matrix x(g.num_nodes(), g.num_features());
  std::vector<int> y(g.num_nodes());
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    std::copy(g.features().row(v).begin(), g.features().row(v).end(), x.row(perm[v]).begin());
    y[perm[v]] = g.labels()[v];
  }
  return Graph(g.num_nodes(), edges, x, y, g.num_classes());
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double held_out_accuracy(const Graph& g, const SplitSet& s, const PseudoLabels& pl) {
  std::size_t hit = 0;
  for (std::size_t v : s.test) hit += pl.labels[v] == g.labels()[v];
  return static_cast<double>(hit) / static_cast<double>(s.test.size());
}

}  // namespace

TEST_SUITE("local-stats") {

TEST_CASE("class distribution counts neighbour labels") {
  // Node 0 has neighbours 1, 2, 3 with pseudo-labels 0, 0, 1; node 4 is isolated.
  Graph g(5, {{0, 1}, {0, 2}, {0, 3}}, Matrix(5, 1), {0, 0, 0, 1, 1}, 2);
  const Matrix r2 = label_wise_class_distribution(g, labels_of({1, 0, 0, 1, 1}));
  CHECK(r2(0, 0) == 2.0);
  CHECK(r2(0, 1) == 1.0);
  CHECK(r2(4, 0) == 0.0);
  CHECK(r2(4, 1) == 0.0);
}

TEST_CASE("class distribution rows sum to the degree") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = random_graph(40, 3, 4, 0.15, seed);
    const Matrix r2 = label_wise_class_distribution(g, labels_of(random_labels(40, 4, seed + 100)));
    for (std::size_t v = 0; v < 40; ++v) {
      std::size_t degree = 0;
      for (const auto& [a, b] : g.edges()) degree += (a == v) + (b == v && a != v);
      CHECK(std::accumulate(r2.row(v).begin(), r2.row(v).end(), 0.0) == static_cast<double>(degree));
    }
  }
}

TEST_CASE("feature distribution small cases") {
  Matrix x{{9, 9}, {1, 2}, {0, 2}, {2, 0}};
  Graph one(2, {{0, 1}}, Matrix{{9, 9}, {1, 2}}, {0, 0}, 2);
  const Matrix r3 = label_wise_feature_distribution(one, labels_of({1, 0}));
  CHECK(r3(0, 0) == 1.0);
  CHECK(r3(0, 1) == 2.0);
  CHECK(r3(0, 2) == 0.0);
  CHECK(r3(0, 3) == 0.0);

  Graph two(4, {{0, 2}, {0, 3}}, x, {0, 0, 0, 0}, 2);
  const Matrix m = label_wise_feature_distribution(two, labels_of({0, 0, 0, 0}));
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 1.0);
}

TEST_CASE("feature distribution matches a double loop") {
  const Graph g = random_graph(30, 4, 3, 0.2, 9);
  const auto y = random_labels(30, 3, 10);
  const Matrix r3 = label_wise_feature_distribution(g, labels_of(y));
  const std::size_t n = 30, f = 4, c = 3;
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t cls = 0; cls < c; ++cls) {
      std::vector<double> sum(f, 0.0);
      std::size_t count = 0;
      for (std::size_t u = 0; u < n; ++u) {
        bool adjacent = false;
        for (const auto& [a, b] : g.edges()) adjacent |= (a == v && b == u) || (a == u && b == v);
        if (!adjacent || y[u] != static_cast<int>(cls)) continue;
        ++count;
        for (std::size_t j = 0; j < f; ++j) sum[j] += g.features()(u, j);
      }
      for (std::size_t j = 0; j < f; ++j) {
        const double want = count ? sum[j] / static_cast<double>(count) : 0.0;
        CHECK(std::abs(r3(v, cls * f + j) - want) < 1e-12);
      }
    }
}

TEST_CASE("single class reduces to degree and neighbour mean") {
  const Graph g = random_graph(20, 3, 1, 0.2, 12);
  const PseudoLabels pl = labels_of(std::vector<int>(20, 0));
  const Matrix r2 = label_wise_class_distribution(g, pl);
  const Matrix r3 = label_wise_feature_distribution(g, pl);
  for (std::size_t v = 0; v < 20; ++v) {
    CHECK(r2(v, 0) == static_cast<double>(g.degree(v)));
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (auto u : g.neighbors(v)) s += g.features()(u, j);
      CHECK(std::abs(r3(v, j) - (g.degree(v) ? s / static_cast<double>(g.degree(v)) : 0.0)) < 1e-12);
    }
  }
}

TEST_CASE("ppr on a single node and with k_max = 0") {
  Graph single(1, {}, Matrix(1, 1), {0}, 1);
  for (double alpha : {0.1, 0.5, 0.9}) {
    const Matrix s = ppr_diffusion(single, alpha, 50);
    CHECK(std::abs(s(0, 0) - (1 - std::pow(1 - alpha, 51))) < 1e-12);
  }
  const Graph g = random_graph(10, 1, 2, 0.3, 1);
  const Matrix s0 = ppr_diffusion(g, 0.2, 0);
  Matrix want = Matrix::identity(10);
  want *= 0.2;
  CHECK(s0 == want);
  CHECK_THROWS_WITH_AS(ppr_diffusion(g, 0.0, 5), doctest::Contains("alpha_ppr"), Error);
  CHECK_THROWS_AS(ppr_diffusion(g, 1.0, 5), Error);
}

TEST_CASE("ppr on two nodes approaches the closed form") {
  // alpha (I - (1 - alpha) T)^-1 with T = [[.5,.5],[.5,.5]] and alpha = .5:
  // I - .5 T = [[.75, -.25], [-.25, .75]], inverse = [[1.5, .5], [.5, 1.5]].
  const double det = 0.75 * 0.75 - 0.25 * 0.25;
  const double inv00 = 0.75 / det, inv01 = 0.25 / det;
  Graph g(2, {{0, 1}}, Matrix(2, 1), {0, 1}, 2);
  const Matrix s = ppr_diffusion(g, 0.5, 200);
  CHECK(std::abs(s(0, 0) - 0.5 * inv00) < 1e-12);
  CHECK(std::abs(s(0, 1) - 0.5 * inv01) < 1e-12);
  CHECK(std::abs(s(1, 0) - 0.5 * inv01) < 1e-12);
  CHECK(std::abs(s(1, 1) - 0.5 * inv00) < 1e-12);
}

TEST_CASE("ppr matches dense matrix powers and has the expected column sums") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Graph base = random_graph(25, 1, 2, 0.12, seed);
    // Add a self-loop to exercise the doubled diagonal.
    auto edges = base.edges();
    edges.emplace_back(3, 3);
    const Graph g(25, edges, base.features(), base.labels(), 2);
    const double alpha = 0.15;
    const std::size_t k = 32;
    const Matrix s = ppr_diffusion(g, alpha, k);
    CHECK(max_abs_diff(s, dense_ppr_oracle(g, alpha, k)) < 1e-12);
    for (std::size_t j = 0; j < 25; ++j) {
      double col = 0;
      for (std::size_t i = 0; i < 25; ++i) {
        col += s(i, j);
        CHECK(s(i, j) >= 0.0);
      }
      CHECK(std::abs(col - (1 - std::pow(1 - alpha, static_cast<double>(k + 1)))) < 1e-10);
    }
    const Matrix longer = ppr_diffusion(g, alpha, k + 5);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(longer.data()[i] >= s.data()[i]);
  }
}

TEST_CASE("top-d diffusion keeps the largest entries of each row") {
  const Graph g = random_graph(30, 1, 2, 0.1, 5);
  const Matrix dense = ppr_diffusion(g, 0.15, 16);
  const Matrix top = ppr_diffusion_top_d(g, 0.15, 16, 5);
  CHECK(top.cols() == 5);
  for (std::size_t v = 0; v < 30; ++v) {
    std::vector<double> row(dense.row(v).begin(), dense.row(v).end());
    std::sort(row.rbegin(), row.rend());
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(top(v, j) - row[j]) < 1e-12);
  }
}

TEST_CASE("statistics are permutation equivariant") {
  const Graph g = random_graph(18, 3, 3, 0.2, 21);
  std::vector<std::uint32_t> perm(18);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), Rng(4));
  const Graph h = permuted(g, perm);
  const auto y = random_labels(18, 3, 3);
  std::vector<int> yp(18);
  for (std::size_t v = 0; v < 18; ++v) yp[perm[v]] = y[v];

  const Matrix r2 = label_wise_class_distribution(g, labels_of(y)), r2p = label_wise_class_distribution(h, labels_of(yp));
  const Matrix r3 = label_wise_feature_distribution(g, labels_of(y)), r3p = label_wise_feature_distribution(h, labels_of(yp));
  const Matrix s = ppr_diffusion(g, 0.2, 10), sp = ppr_diffusion(h, 0.2, 10);
  for (std::size_t v = 0; v < 18; ++v) {
    for (std::size_t j = 0; j < r2.cols(); ++j) CHECK(r2(v, j) == r2p(perm[v], j));
    for (std::size_t j = 0; j < r3.cols(); ++j) CHECK(std::abs(r3(v, j) - r3p(perm[v], j)) < 1e-12);
    for (std::size_t u = 0; u < 18; ++u) CHECK(std::abs(s(v, u) - sp(perm[v], perm[u])) < 1e-12);
  }
}

TEST_CASE("pseudo-label estimator") {
  TrainConfig cfg;
  cfg.max_epochs = 100;
  cfg.patience = 0;
  cfg.seed = 3;

  SbmParams p;
  p.n_per_class = 100;
  p.feature_shift = 4.0;
  p.seed = 2;
  const Graph easy = generate_heterophilous_sbm(p);
  const SplitSet s = random_splits(easy, 1, 0)[0];
  const PseudoLabels pl = fit_pseudo_label_estimator(easy, s, cfg, 64);
  CHECK(held_out_accuracy(easy, s, pl) > 0.9);
  for (std::size_t v : s.train) {
    CHECK(pl.labels[v] == easy.labels()[v]);
    CHECK(pl.source[v] == LabelSource::ground_truth_on_train);
  }
  for (std::size_t v : s.test) CHECK(pl.source[v] == LabelSource::estimated);
  CHECK(fit_pseudo_label_estimator(easy, s, cfg, 64).labels == pl.labels);

  // No signal: accuracy near chance, averaged over several draws.
  p.feature_shift = 0.0;
  double acc = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    p.seed = 40 + seed;
    const Graph noise = generate_heterophilous_sbm(p);
    const SplitSet ns = random_splits(noise, 1, seed)[0];
    acc += held_out_accuracy(noise, ns, fit_pseudo_label_estimator(noise, ns, cfg, 64)) / 5;
  }
  CHECK(std::abs(acc - 0.5) < 0.1);

  Rng rng(1);
  Graph single(4, {{0, 1}}, test::random_matrix(4, 2, rng), {0, 0, 0, 0}, 1);
  const PseudoLabels one = fit_pseudo_label_estimator(single, SplitSet{{0, 1}, {2}, {3}, 0}, cfg, 8);
  CHECK(one.labels == std::vector<int>{0, 0, 0, 0});

  TrainConfig wild = cfg;
  wild.learning_rate = 1e300;
  wild.max_epochs = 20;
  CHECK_THROWS_WITH_AS(fit_pseudo_label_estimator(easy, s, wild, 8), doctest::Contains("estimator diverged"), Error);
}

TEST_CASE("assembly widths and masks") {
  const Graph g = random_graph(12, 4, 3, 0.3, 8);
  const PseudoLabels pl = labels_of(random_labels(12, 3, 1));
  const Matrix s = ppr_diffusion(g, 0.15, 8);
  const LocalStatistics all = assemble_local_statistics(g, pl, s, BlockMask{});
  CHECK(all.widths() == std::array<std::size_t, 4>{4, 3, 12, 12});
  CHECK(all.num_nodes() == 12);

  BlockMask only_r1;
  only_r1.enabled = {true, false, false, false};
  const LocalStatistics r1 = assemble_local_statistics(g, pl, Matrix(12, 0), only_r1);
  CHECK(r1.block(StatBlock::attributes) == g.features());
  CHECK(r1.widths() == std::array<std::size_t, 4>{4, 0, 0, 0});
  CHECK(restrict_blocks(all, only_r1).widths() == r1.widths());

  BlockMask none;
  none.enabled = {false, false, false, false};
  CHECK_THROWS_WITH_AS(assemble_local_statistics(g, pl, s, none), doctest::Contains("no local statistic enabled"), Error);
  CHECK_THROWS_WITH_AS(assemble_local_statistics(g, pl, Matrix(11, 11), BlockMask{}), doctest::Contains("dimension mismatch"),
                       Error);
}

TEST_CASE("statistics cache round trip") {
  test::TempDir dir;
  const Graph g = random_graph(10, 2, 2, 0.3, 2);
  const LocalStatistics stats =
      assemble_local_statistics(g, labels_of(random_labels(10, 2, 5)), ppr_diffusion(g, 0.15, 4), BlockMask{});
  StatsCacheKey key{g.content_hash(), 3, 0.15, 4, 99, 0};
  const auto file = dir.path() / key.file_name();
  save_local_statistics(file, key, stats);
  const auto back = load_local_statistics(file, key);
  REQUIRE(back.has_value());
  for (std::size_t b = 0; b < kNumStatBlocks; ++b) CHECK(back->blocks[b] == stats.blocks[b]);
  CHECK(back->mask == stats.mask);

  StatsCacheKey other = key;
  other.estimator_seed = 100;
  CHECK_FALSE(load_local_statistics(file, other).has_value());
  CHECK(other.file_name() != key.file_name());

  // Bump the version byte following the magic.
  std::string blob = [&] {
    std::ifstream in(file, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  }();
  blob[8] = static_cast<char>(blob[8] + 1);
  test::write(file, blob);
  CHECK_FALSE(load_local_statistics(file, key).has_value());
  CHECK_FALSE(load_local_statistics(dir.path() / "missing.bin", key).has_value());
}

}
