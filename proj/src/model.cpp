#include "hpgmn/model.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <cstring>
#include <fstream>

#include "hpgmn/io_util.hpp"

namespace hpgmn {

void ModelConfig::validate() const {
  require(block_hidden >= 1 && block_out >= 1 && head_hidden >= 1, "MLP widths must be positive");
  require(num_units >= 1, "memory needs K >= 1");
  require(alpha_kpattern >= 0.0 && beta_entropy >= 0.0 && gamma_frobenius >= 0.0,
          "regularization coefficients must be non-negative");
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  for (std::size_t i = 0; i < kNumStatBlocks; ++i)
    if (blocks[i]) z.blocks[i] = Mlp(blocks[i]->widths());
  z.head = Mlp(head.widths());
  z.memory = Matrix(memory.rows(), memory.cols());
  return z;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for_each_tensor([&](auto t, bool) { n += t.size(); });
  return n;
}

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> flat;
  flat.reserve(p.count());
  p.for_each_tensor([&](auto t, bool) { flat.insert(flat.end(), t.begin(), t.end()); });
  return flat;
}

HpGmnModel::HpGmnModel(const std::array<std::size_t, kNumStatBlocks>& block_input_widths, int num_classes,
                       const ModelConfig& config, std::uint64_t seed)
    : config_(config), num_classes_(num_classes) {
  config_.validate();
  require(num_classes >= 1, "model needs at least one class");
  Rng rng(seed);
  std::size_t enabled = 0;
  for (std::size_t i = 0; i < kNumStatBlocks; ++i) {
    if (block_input_widths[i] == 0) continue;
    params_.blocks[i] = Mlp::kaiming({block_input_widths[i], config_.block_hidden, config_.block_out}, rng);
    ++enabled;
  }
  require(enabled > 0, "no local statistic enabled");
  const std::size_t hidden = enabled * config_.block_out;
  params_.head = Mlp::kaiming({2 * hidden, config_.head_hidden, static_cast<std::size_t>(num_classes)}, rng);
  params_.memory = MemoryBank::random(config_.num_units, hidden, rng).units;
}

std::size_t HpGmnModel::query_width() const { return params_.memory.cols(); }

std::array<std::size_t, kNumStatBlocks> HpGmnModel::block_input_widths() const {
  std::array<std::size_t, kNumStatBlocks> w{};
  for (std::size_t i = 0; i < kNumStatBlocks; ++i) w[i] = params_.blocks[i] ? params_.blocks[i]->input_width() : 0;
  return w;
}

namespace {

struct Activations {
  std::array<Mlp::Tape, kNumStatBlocks> block_tapes;
  Mlp::Tape head_tape;
  ForwardResult out;
};

void check_stats(const HpGmnModel& model, const LocalStatistics& stats) {
  const auto expected = model.block_input_widths();
  const auto actual = stats.widths();
  for (std::size_t i = 0; i < kNumStatBlocks; ++i) {
    require(expected[i] == actual[i], std::string("width mismatch for statistic ") + stat_block_name(i) + ": model " +
                                          std::to_string(expected[i]) + ", input " + std::to_string(actual[i]));
  }
}

Activations run_forward(const HpGmnModel& model, const LocalStatistics& stats, double dropout, Rng* rng) {
  check_stats(model, stats);
  const ModelParams& p = model.params();
  Activations act;
  std::vector<Matrix> parts;
  for (std::size_t i = 0; i < kNumStatBlocks; ++i) {
    if (!p.blocks[i]) continue;
    parts.push_back(p.blocks[i]->forward(stats.blocks[i], act.block_tapes[i], dropout, rng));
  }
  std::vector<const Matrix*> ptrs;
  for (const auto& m : parts) ptrs.push_back(&m);
  act.out.queries = hconcat(ptrs);

  const MemoryBank bank(p.memory);
  act.out.attention_rows = attention_rows(bank, act.out.queries);
  act.out.values = matmul(act.out.attention_rows, p.memory);
  act.out.logits = p.head.forward(hconcat(act.out.queries, act.out.values), act.head_tape, dropout, rng);
  act.out.probs = softmax_rows(act.out.logits);
  return act;
}

}  // namespace

ForwardResult HpGmnModel::forward(const LocalStatistics& stats) const {
  return run_forward(*this, stats, 0.0, nullptr).out;
}

LossResult HpGmnModel::total_loss(const LocalStatistics& stats, std::span<const int> labels,
                                  std::span<const std::size_t> train_rows, double dropout, Rng* rng) const {
  require(!train_rows.empty(), "total loss needs a non-empty train split");
  Activations act = run_forward(*this, stats, dropout, rng);
  const ForwardResult& f = act.out;
  const MemoryBank bank(params_.memory);
  const double alpha = config_.alpha_kpattern, beta = config_.beta_entropy, gamma = config_.gamma_frobenius;

  LossResult result;
  result.grad = params_.zeros_like();
  LossTerms& terms = result.terms;

  const CrossEntropy ce = cross_entropy_loss(f.probs, labels, train_rows);
  terms.classification = ce.loss;
  terms.clamped_targets = ce.clamped;
  const KpatternResult kp = kpattern_loss(bank, f.queries);
  terms.kpattern = kp.loss;
  const EntropyResult ent = entropy_loss_rows(f.attention_rows);
  terms.entropy = ent.loss;
  terms.frobenius = squared_norm(params_.memory);
  terms.total = terms.classification + alpha * terms.kpattern + beta * terms.entropy + gamma * terms.frobenius;
  if (!std::isfinite(terms.total)) throw Error("non-finite loss");

  // Head.
  const Matrix grad_h = params_.head.backward(act.head_tape, cross_entropy_logit_grad(f.probs, labels, train_rows),
                                              result.grad.head);
  const std::size_t hidden = query_width();
  Matrix grad_q = column_slice(grad_h, 0, hidden);
  const Matrix grad_v = column_slice(grad_h, hidden, hidden);
  Matrix& grad_m = result.grad.memory;

  // V = P M.
  Matrix grad_p = matmul_nt(grad_v, params_.memory);
  grad_m += matmul_tn(f.attention_rows, grad_v);

  if (beta != 0.0) {
    Matrix g = ent.grad;
    g *= beta;
    grad_p += g;
  }
  attention_rows_backward(bank, f.queries, f.attention_rows, grad_p, grad_m, grad_q);

  if (alpha != 0.0) {
    Matrix gq = kp.grad_queries;
    gq *= alpha;
    grad_q += gq;
    Matrix gm = kp.grad_units;
    gm *= alpha;
    grad_m += gm;
  }
  if (gamma != 0.0) {
    Matrix gm = params_.memory;
    gm *= 2.0 * gamma;
    grad_m += gm;
  }

  std::size_t offset = 0;
  for (std::size_t i = 0; i < kNumStatBlocks; ++i) {
    if (!params_.blocks[i]) continue;
    const std::size_t w = params_.blocks[i]->output_width();
    params_.blocks[i]->backward(act.block_tapes[i], column_slice(grad_q, offset, w), *result.grad.blocks[i], false);
    offset += w;
  }
  return result;
}

std::vector<double> HpGmnModel::flat_parameters() const { return flatten(params_); }

void HpGmnModel::set_flat_parameters(std::span<const double> flat) {
  require(flat.size() == params_.count(), "flat parameter vector has the wrong length");
  std::size_t offset = 0;
  params_.for_each_tensor([&](std::span<double> t, bool) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.begin());
    offset += t.size();
  });
}

std::vector<std::uint8_t> HpGmnModel::decay_mask() const {
  std::vector<std::uint8_t> mask;
  params_.for_each_tensor([&](auto t, bool is_bias) { mask.insert(mask.end(), t.size(), is_bias ? 0 : 1); });
  return mask;
}

double accuracy(const Matrix& logits, std::span<const int> labels, std::span<const std::size_t> rows) {
  require(!rows.empty(), "accuracy over an empty index list");
  const auto pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t r : rows) correct += pred[r] == labels[r];
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

double evaluate(const HpGmnModel& model, const LocalStatistics& stats, std::span<const int> labels,
                std::span<const std::size_t> rows) {
  require(!rows.empty(), "evaluate: empty index list");
  return accuracy(model.forward(stats).logits, labels, rows);
}

RunMetrics train(HpGmnModel& model, const Graph& g, const LocalStatistics& stats, const SplitSet& split,
                 const TrainConfig& cfg) {
  cfg.validate();
  split.validate(g);
  const auto start = std::chrono::steady_clock::now();
  const auto& labels = g.labels();
  const std::span<const std::size_t> monitor = split.val.empty() ? std::span(split.train) : std::span(split.val);

  RunMetrics metrics;
  metrics.split_id = split.split_id;
  metrics.seed = cfg.seed;

  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
  const auto mask = model.decay_mask();
  std::vector<double> params = model.flat_parameters();
  std::vector<double> best_params = params;
  double best_val = -1.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    LossResult loss;
    try {
      loss = model.total_loss(stats, labels, split.train, cfg.dropout, &dropout_rng);
    } catch (const Error& e) {
      throw Error("diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    opt.step(params, flatten(loss.grad), mask, epoch);
    model.set_flat_parameters(params);

    const ForwardResult f = model.forward(stats);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss.terms.total;
    rec.train_accuracy = accuracy(f.logits, labels, split.train);
    if (!split.val.empty()) {
      rec.val_loss = cross_entropy_loss(f.probs, labels, split.val).loss;
      rec.val_accuracy = accuracy(f.logits, labels, split.val);
    }
    if (!std::isfinite(rec.val_loss)) throw Error("diverged at epoch " + std::to_string(epoch));
    metrics.epochs.push_back(rec);

    // Ties in accuracy keep the checkpoint with the lower cross-entropy but
    // do not reset patience.
    const double monitored = accuracy(f.logits, labels, monitor);
    const double monitored_loss = cross_entropy_loss(f.probs, labels, monitor).loss;
    if (monitored > best_val || (monitored == best_val && monitored_loss < best_val_loss)) {
      const bool improved = monitored > best_val;
      best_val = monitored;
      best_val_loss = monitored_loss;
      best_params = params;
      metrics.best_epoch = epoch;
      if (improved) since_best = 0;
      else if (++since_best >= cfg.patience) {
        metrics.stopped_early = true;
        break;
      }
    } else if (++since_best >= cfg.patience) {
      metrics.stopped_early = true;
      break;
    }
  }

  model.set_flat_parameters(best_params);
  metrics.best_val_accuracy = best_val;
  metrics.best_loss_terms = model.total_loss(stats, labels, split.train).terms;
  const ForwardResult f = model.forward(stats);
  metrics.test_accuracy = split.test.empty() ? 0.0 : accuracy(f.logits, labels, split.test);
  metrics.memory_usage_entropy = usage_entropy(f.attention_rows);
  metrics.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return metrics;
}

nlohmann::json RunMetrics::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"train_accuracy", e.train_accuracy},
                           {"val_loss", e.val_loss},
                           {"val_accuracy", e.val_accuracy}});
  }
  return {{"schema_version", kMetricsSchemaVersion},
          {"split_id", split_id},
          {"seed", seed},
          {"checkpoint", "best_validation"},
          {"best_epoch", best_epoch},
          {"best_val_accuracy", best_val_accuracy},
          {"test_accuracy", test_accuracy},
          {"stopped_early", stopped_early},
          {"memory_usage_entropy", memory_usage_entropy},
          {"loss_terms",
           {{"total", best_loss_terms.total},
            {"classification", best_loss_terms.classification},
            {"kpattern", best_loss_terms.kpattern},
            {"entropy", best_loss_terms.entropy},
            {"frobenius", best_loss_terms.frobenius}}},
          {"epochs", epochs_json}};
}

RunMetrics RunMetrics::from_json(const nlohmann::json& j) {
  RunMetrics m;
  m.split_id = j.at("split_id").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.best_epoch = j.at("best_epoch").get<std::size_t>();
  m.best_val_accuracy = j.at("best_val_accuracy").get<double>();
  m.test_accuracy = j.at("test_accuracy").get<double>();
  m.stopped_early = j.at("stopped_early").get<bool>();
  m.memory_usage_entropy = j.at("memory_usage_entropy").get<double>();
  const auto& lt = j.at("loss_terms");
  m.best_loss_terms.total = lt.at("total").get<double>();
  m.best_loss_terms.classification = lt.at("classification").get<double>();
  m.best_loss_terms.kpattern = lt.at("kpattern").get<double>();
  m.best_loss_terms.entropy = lt.at("entropy").get<double>();
  m.best_loss_terms.frobenius = lt.at("frobenius").get<double>();
  for (const auto& e : j.at("epochs")) {
    m.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                        e.at("train_accuracy").get<double>(), e.at("val_loss").get<double>(),
                        e.at("val_accuracy").get<double>()});
  }
  return m;
}

namespace {

constexpr char kCheckpointMagic[8] = {'H', 'P', 'G', 'M', 'N', 'C', 'K', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& buf, T value) {
  buf.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw Error("truncated checkpoint");
  T value;
  std::memcpy(&value, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void save_checkpoint(const HpGmnModel& model, const std::filesystem::path& file) {
  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(buf, kCheckpointVersion);
  const ModelConfig& c = model.config();
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(model.num_classes()));
  for (std::size_t w : model.block_input_widths()) put<std::uint64_t>(buf, w);
  put<std::uint64_t>(buf, c.block_hidden);
  put<std::uint64_t>(buf, c.block_out);
  put<std::uint64_t>(buf, c.head_hidden);
  put<std::uint64_t>(buf, c.num_units);
  put<std::uint64_t>(buf, model.query_width());
  put(buf, c.alpha_kpattern);
  put(buf, c.beta_entropy);
  put(buf, c.gamma_frobenius);
  const auto flat = model.flat_parameters();
  put<std::uint64_t>(buf, flat.size());
  buf.append(reinterpret_cast<const char*>(flat.data()), flat.size() * sizeof(double));
  write_file_atomic(file, buf);
}

HpGmnModel load_checkpoint(const std::filesystem::path& file) {
  const std::string buf = read_file(file);
  if (buf.size() < sizeof(kCheckpointMagic) || std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw Error(file.string() + ": not a checkpoint");
  std::size_t pos = sizeof(kCheckpointMagic);
  if (take<std::uint32_t>(buf, pos) != kCheckpointVersion) throw Error(file.string() + ": unsupported checkpoint version");
  const auto num_classes = static_cast<int>(take<std::uint64_t>(buf, pos));
  std::array<std::size_t, kNumStatBlocks> widths{};
  for (auto& w : widths) w = take<std::uint64_t>(buf, pos);
  ModelConfig c;
  c.block_hidden = take<std::uint64_t>(buf, pos);
  c.block_out = take<std::uint64_t>(buf, pos);
  c.head_hidden = take<std::uint64_t>(buf, pos);
  c.num_units = take<std::uint64_t>(buf, pos);
  const auto hidden = take<std::uint64_t>(buf, pos);
  c.alpha_kpattern = take<double>(buf, pos);
  c.beta_entropy = take<double>(buf, pos);
  c.gamma_frobenius = take<double>(buf, pos);
  HpGmnModel model(widths, num_classes, c, 0);
  if (model.query_width() != hidden) throw Error(file.string() + ": checkpoint header is inconsistent");
  const auto count = take<std::uint64_t>(buf, pos);
  if (count != model.params().count() || pos + count * sizeof(double) != buf.size())
    throw Error(file.string() + ": checkpoint parameter count mismatch");
  std::vector<double> flat(count);
  std::memcpy(flat.data(), buf.data() + pos, count * sizeof(double));
  model.set_flat_parameters(flat);
  return model;
}

}  // namespace hpgmn
