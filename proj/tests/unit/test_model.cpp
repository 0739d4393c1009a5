#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hpgmn/model.hpp"
#include "test_util.hpp"

using namespace hpgmn;

namespace {

struct Instance {
  LocalStatistics stats;
  std::vector<int> labels;
  std::vector<std::size_t> train;
};

Instance random_instance(std::size_t n, const std::array<std::size_t, 4>& widths, int c, std::uint64_t seed) {
  Rng rng(seed);
  Instance inst;
  for (std::size_t i = 0; i < 4; ++i) {
    inst.stats.blocks[i] = widths[i] ? test::random_matrix(n, widths[i], rng) : Matrix(n, 0);
    inst.stats.mask.enabled[i] = widths[i] != 0;
  }
  std::uniform_int_distribution<int> cls(0, c - 1);
  for (std::size_t v = 0; v < n; ++v) {
    inst.labels.push_back(cls(rng));
    if (v % 2 == 0) inst.train.push_back(v);
  }
  return inst;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.block_hidden = 5;
  cfg.block_out = 3;
  cfg.head_hidden = 4;
  cfg.num_units = 3;
  cfg.alpha_kpattern = 0.3;
  cfg.beta_entropy = 0.7;
  cfg.gamma_frobenius = 0.05;
  return cfg;
}

// Biases are zero at init; perturb them so the check sees them.
void randomise_biases(HpGmnModel& model, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, 0.2);
  model.params().for_each_tensor([&](std::span<double> t, bool is_bias) {
    if (is_bias)
      for (double& b : t) b = d(rng);
  });
}

}  // namespace

TEST_SUITE("hpgmn-model") {

TEST_CASE("forward matches an explicit composition") {
  const Instance inst = random_instance(12, {4, 3, 6, 12}, 3, 1);
  HpGmnModel model(inst.stats.widths(), 3, small_config(), 2);
  randomise_biases(model, 3);
  const ForwardResult f = model.forward(inst.stats);

  std::vector<Matrix> parts;
  for (std::size_t i = 0; i < 4; ++i) parts.push_back(model.params().blocks[i]->forward(inst.stats.blocks[i]));
  std::vector<const Matrix*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  const Matrix q = hconcat(ptrs);
  const MemoryBank bank(model.params().memory);
  const AttentionMatrix s = attend(bank, q);
  const Matrix v = read_values(bank, s);
  const Matrix logits = model.params().head.forward(hconcat(q, v));
  for (std::size_t i = 0; i < logits.size(); ++i) CHECK(std::abs(f.logits.data()[i] - logits.data()[i]) < 1e-12);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(f.values.data()[i] - v.data()[i]) < 1e-12);
  CHECK(f.attention().weights.rows() == 3);
  CHECK(model.query_width() == 12);
  CHECK(model.params().head.input_width() == 24);
}

TEST_CASE("total loss gradient passes the finite-difference check") {
  const Instance inst = random_instance(12, {4, 3, 6, 12}, 3, 4);
  HpGmnModel model(inst.stats.widths(), 3, small_config(), 5);
  randomise_biases(model, 6);
  const LossResult r = model.total_loss(inst.stats, inst.labels, inst.train);
  const auto analytic = flatten(r.grad);
  auto loss = [&](std::span<const double> p) {
    HpGmnModel m = model;
    m.set_flat_parameters(p);
    return m.total_loss(inst.stats, inst.labels, inst.train).terms.total;
  };
  GradCheckOptions opts;
  opts.max_coordinates = 300;
  opts.seed = 1;
  CHECK(grad_check(loss, model.flat_parameters(), analytic, opts) < 1e-4);
}

TEST_CASE("every parameter tensor receives gradient at init") {
  const Instance inst = random_instance(12, {4, 3, 6, 12}, 3, 7);
  HpGmnModel model(inst.stats.widths(), 3, small_config(), 8);
  const LossResult r = model.total_loss(inst.stats, inst.labels, inst.train);
  std::size_t tensors = 0;
  r.grad.for_each_tensor([&](auto t, bool) {
    ++tensors;
    double norm = 0;
    for (double g : t) norm += g * g;
    CHECK(norm > 0.0);
  });
  CHECK(tensors == 4 * 4 + 4 + 1);
}

TEST_CASE("loss composition identities") {
  const Instance inst = random_instance(10, {3, 0, 0, 10}, 4, 9);
  ModelConfig cfg = small_config();
  cfg.alpha_kpattern = cfg.beta_entropy = cfg.gamma_frobenius = 0.0;
  HpGmnModel model(inst.stats.widths(), 4, cfg, 10);
  const LossResult r = model.total_loss(inst.stats, inst.labels, inst.train);
  const ForwardResult f = model.forward(inst.stats);
  CHECK(r.terms.total == cross_entropy_loss(f.probs, inst.labels, inst.train).loss);

  // Zero head output layer gives uniform predictions.
  model.params().head.layers().back().weight.fill(0.0);
  CHECK(model.total_loss(inst.stats, inst.labels, inst.train).terms.classification ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  HpGmnModel full(inst.stats.widths(), 4, small_config(), 10);
  const LossTerms t = full.total_loss(inst.stats, inst.labels, inst.train).terms;
  CHECK(t.total == doctest::Approx(t.classification + 0.3 * t.kpattern + 0.7 * t.entropy + 0.05 * t.frobenius));
}

TEST_CASE("forward is permutation equivariant") {
  const Instance inst = random_instance(12, {4, 3, 0, 5}, 3, 11);
  HpGmnModel model(inst.stats.widths(), 3, small_config(), 12);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), Rng(13));
  LocalStatistics permuted = inst.stats;
  for (std::size_t i = 0; i < 4; ++i) permuted.blocks[i] = gather_rows(inst.stats.blocks[i], perm);
  const Matrix a = model.forward(inst.stats).logits, b = model.forward(permuted).logits;
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(b(r, c) - a(perm[r], c)) < 1e-12);
}

TEST_CASE("a single memory unit contributes a constant readout") {
  const Instance inst = random_instance(8, {5, 0, 0, 0}, 2, 14);
  ModelConfig cfg = small_config();
  cfg.num_units = 1;
  HpGmnModel model(inst.stats.widths(), 2, cfg, 15);
  const ForwardResult f = model.forward(inst.stats);
  for (std::size_t v = 0; v < 8; ++v) {
    CHECK(f.attention_rows(v, 0) == 1.0);
    for (std::size_t j = 0; j < f.values.cols(); ++j) CHECK(f.values(v, j) == model.params().memory(0, j));
  }
  // The readout enters the head as a bias, so the model is an MLP on attributes.
  const Mlp& block = *model.params().blocks[0];
  const Mlp& head = model.params().head;
  const std::size_t h = model.query_width();
  Mlp folded({h, head.widths()[1], head.widths()[2]});
  folded.layers()[1] = head.layers()[1];
  const auto& first = head.layers()[0];
  auto& out = folded.layers()[0];
  out.bias = first.bias;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < first.weight.cols(); ++c) {
      out.weight(r, c) = first.weight(r, c);
      out.bias[c] += model.params().memory(0, r) * first.weight(h + r, c);
    }
  const Matrix baseline = folded.forward(block.forward(inst.stats.blocks[0]));
  for (std::size_t i = 0; i < baseline.size(); ++i) CHECK(std::abs(baseline.data()[i] - f.logits.data()[i]) < 1e-12);
}

TEST_CASE("width mismatch is rejected") {
  const Instance inst = random_instance(6, {4, 0, 0, 0}, 2, 16);
  HpGmnModel model({5, 0, 0, 0}, 2, small_config(), 1);
  CHECK_THROWS_WITH_AS(model.forward(inst.stats), doctest::Contains("width mismatch"), Error);
  CHECK_THROWS_AS(HpGmnModel({0, 0, 0, 0}, 2, small_config(), 1), Error);
  ModelConfig bad = small_config();
  bad.beta_entropy = -1;
  CHECK_THROWS_AS(HpGmnModel({4, 0, 0, 0}, 2, bad, 1), Error);
}

TEST_CASE("evaluate") {
  const std::vector<int> labels{0, 1, 0, 1};
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  CHECK(accuracy(Matrix{{1, 0}, {0, 1}, {2, 1}, {0, 3}}, labels, rows) == 1.0);
  CHECK(accuracy(Matrix{{1, 0}, {1, 0}, {1, 0}, {1, 0}}, labels, rows) == 0.5);
  CHECK(accuracy(Matrix{{1, 1}, {1, 1}, {1, 1}, {1, 1}}, labels, rows) == 0.5);
  CHECK_THROWS_AS(accuracy(Matrix{{1, 0}}, labels, std::vector<std::size_t>{}), Error);
  const Instance inst = random_instance(6, {4, 0, 0, 0}, 2, 17);
  HpGmnModel model(inst.stats.widths(), 2, small_config(), 1);
  CHECK_THROWS_AS(evaluate(model, inst.stats, inst.labels, std::vector<std::size_t>{}), Error);
}

TEST_CASE("checkpoint round trip") {
  test::TempDir dir;
  const Instance inst = random_instance(9, {4, 2, 0, 9}, 2, 18);
  HpGmnModel model(inst.stats.widths(), 2, small_config(), 19);
  randomise_biases(model, 20);
  const auto file = dir.path() / "model.bin";
  save_checkpoint(model, file);
  const HpGmnModel back = load_checkpoint(file);
  CHECK(back.flat_parameters() == model.flat_parameters());
  CHECK(back.block_input_widths() == model.block_input_widths());
  CHECK(back.config().alpha_kpattern == model.config().alpha_kpattern);
  CHECK(back.forward(inst.stats).logits == model.forward(inst.stats).logits);

  test::write(dir.path() / "junk.bin", "not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "junk.bin"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.bin"), Error);
}

TEST_CASE("run metrics json round trip") {
  RunMetrics m;
  m.split_id = 4;
  m.seed = 9;
  m.epochs = {{0, 1.5, 0.25, 1.25, 0.5}, {1, 1.0, 0.75, 1.0, 0.625}};
  m.best_epoch = 1;
  m.best_val_accuracy = 0.625;
  m.test_accuracy = 0.6;
  m.best_loss_terms.total = 1.0;
  m.memory_usage_entropy = 2.0;
  const auto j = m.to_json();
  CHECK(j.at("schema_version") == kMetricsSchemaVersion);
  CHECK(RunMetrics::from_json(j).to_json() == j);
}

}

TEST_SUITE("training") {

namespace {

struct Fixture {
  Graph graph;
  SplitSet split;
  LocalStatistics stats;
};

Fixture make_fixture(SbmParams p, std::uint64_t split_seed) {
  Fixture fx{generate_heterophilous_sbm(p), {}, {}};
  fx.split = random_splits(fx.graph, 1, split_seed)[0];
  TrainConfig est;
  est.max_epochs = 100;
  est.patience = 0;
  est.seed = split_seed;
  const PseudoLabels pl = fit_pseudo_label_estimator(fx.graph, fx.split, est, 64);
  fx.stats = assemble_local_statistics(fx.graph, pl, ppr_diffusion(fx.graph, 0.15, 32), BlockMask{});
  return fx;
}

RunMetrics fit(const Fixture& fx, std::uint64_t seed, std::size_t epochs = 100) {
  HpGmnModel model(fx.stats.widths(), fx.graph.num_classes(), ModelConfig{}, seed);
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.patience = std::min<std::size_t>(50, epochs);
  cfg.seed = seed;
  return train(model, fx.graph, fx.stats, fx.split, cfg);
}

}  // namespace

TEST_CASE("heterophilous fixture is learned") {
  SbmParams p;
  p.n_per_class = 60;
  p.num_classes = 3;
  p.p_intra = 0.01;
  p.p_inter = 0.3;
  p.feature_shift = 1.0;
  p.seed = 3;
  const Fixture fx = make_fixture(p, 0);

  // Oracle lower bound: nearest class centroid in r2 space, fitted on train.
  const Matrix& r2 = fx.stats.block(StatBlock::class_distribution);
  Matrix centroid(3, 3);
  std::vector<double> count(3, 0.0);
  for (std::size_t v : fx.split.train) {
    const int y = fx.graph.labels()[v];
    count[y] += 1;
    for (std::size_t j = 0; j < 3; ++j) centroid(y, j) += r2(v, j);
  }
  std::size_t hit = 0;
  for (std::size_t v : fx.split.test) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < 3; ++c) {
      double d = 0;
      for (std::size_t j = 0; j < 3; ++j) d += std::pow(r2(v, j) - centroid(c, j) / count[c], 2);
      if (d < best_d) best_d = d, best = c;
    }
    hit += best == fx.graph.labels()[v];
  }
  const double oracle = static_cast<double>(hit) / static_cast<double>(fx.split.test.size());

  const RunMetrics m = fit(fx, 1);
  CHECK(m.test_accuracy > 0.85);
  CHECK(m.test_accuracy >= oracle - 0.1);

  // Best-validation checkpoint bookkeeping.
  double best = 0;
  for (const auto& e : m.epochs) best = std::max(best, e.val_accuracy);
  CHECK(m.best_val_accuracy == best);
  CHECK(m.epochs[m.best_epoch].val_accuracy == best);
  CHECK(m.epochs.size() <= 100);

  // Loss decreases over the first ten epochs.
  CHECK(m.epochs.at(9).train_loss < m.epochs.at(0).train_loss);
}

TEST_CASE("random labels stay at chance") {
  double acc = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    SbmParams p;
    p.seed = 100 + s;
    p.n_per_class = 100;
    Graph g = generate_heterophilous_sbm(p);
    std::vector<int> noise(g.num_nodes());
    Rng rng(s);
    std::bernoulli_distribution coin(0.5);
    for (int& y : noise) y = coin(rng);
    Graph shuffled(g.num_nodes(), g.edges(), g.features(), noise, 2);
    Fixture fx{shuffled, random_splits(shuffled, 1, s)[0], {}};
    TrainConfig est;
    est.max_epochs = 50;
    est.patience = 0;
    const PseudoLabels pl = fit_pseudo_label_estimator(fx.graph, fx.split, est, 64);
    fx.stats = assemble_local_statistics(fx.graph, pl, ppr_diffusion(fx.graph, 0.15, 32), BlockMask{});
    acc += fit(fx, s, 60).test_accuracy / 4;
  }
  CHECK(std::abs(acc - 0.5) < 0.1);
}

TEST_CASE("training is deterministic") {
  SbmParams p;
  p.seed = 5;
  const Fixture fx = make_fixture(p, 2);
  CHECK(fit(fx, 7, 30).to_json() == fit(fx, 7, 30).to_json());
  CHECK(fit(fx, 7, 30).to_json() != fit(fx, 8, 30).to_json());
}

}
