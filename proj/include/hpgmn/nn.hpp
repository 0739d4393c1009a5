#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hpgmn/matrix.hpp"

namespace hpgmn {

/// Fully connected layer computing x * weight + bias. weight is in x out.
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;
};

/// Affine + ReLU stack with identity output. Hidden activations may be
/// dropped out during training.
class Mlp {
 public:
  /// Activations recorded by a training forward pass for backward().
  struct Tape {
    std::vector<Matrix> inputs;  // input seen by each layer
    std::vector<Matrix> pre;     // pre-activation of each hidden layer
    std::vector<Matrix> masks;   // dropout scale per hidden layer (empty if none)
  };

  Mlp() = default;
  /// All parameters zero.
  explicit Mlp(std::vector<std::size_t> widths);
  /// Kaiming-uniform weights, zero biases.
  static Mlp kaiming(std::vector<std::size_t> widths, Rng& rng);

  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  std::size_t input_width() const { return widths_.front(); }
  std::size_t output_width() const { return widths_.back(); }
  std::size_t parameter_count() const;

  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Tape& tape, double dropout = 0.0, Rng* rng = nullptr) const;

  /// Accumulates parameter gradients into `grads` (same widths). Returns the
  /// gradient w.r.t. the input unless `need_input_grad` is false.
  Matrix backward(const Tape& tape, const Matrix& grad_out, Mlp& grads, bool need_input_grad = true) const;

  /// Visits each parameter tensor in declaration order (W_0, b_0, W_1, ...).
  template <typename F>
  void for_each_tensor(F&& visit) {
    for (auto& layer : layers_) {
      visit(layer.weight.data(), false);
      visit(std::span<double>(layer.bias), true);
    }
  }
  template <typename F>
  void for_each_tensor(F&& visit) const {
    for (const auto& layer : layers_) {
      visit(layer.weight.data(), false);
      visit(std::span<const double>(layer.bias), true);
    }
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<DenseLayer> layers_;
};

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

struct CrossEntropy {
  double loss = 0.0;
  std::size_t clamped = 0;  // targets whose probability was clamped to 1e-12
};

/// Mean negative log-likelihood over `rows`. targets is indexed by row id.
CrossEntropy cross_entropy_loss(const Matrix& probs, std::span<const int> targets, std::span<const std::size_t> rows);

/// Gradient of cross_entropy_loss(softmax_rows(logits)) w.r.t. the logits.
Matrix cross_entropy_logit_grad(const Matrix& probs, std::span<const int> targets, std::span<const std::size_t> rows);

/// Index of the row maximum; ties go to the lowest column.
std::vector<int> argmax_rows(const Matrix& m);

struct GradCheckOptions {
  double eps = 1e-6;
  std::size_t max_coordinates = 0;  // 0 checks every coordinate
  std::uint64_t seed = 0;
};

/// Central-difference gradient check. Returns the max over checked
/// coordinates of |fd - an| / max(1e-8, |fd| + |an|).
double grad_check(const std::function<double(std::span<const double>)>& loss, std::span<const double> params,
                  std::span<const double> analytic, const GradCheckOptions& options = {});

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t max_epochs = 500;
  std::size_t patience = 100;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double dropout = 0.0;

  void validate() const;
};

/// Adam or SGD over a flat parameter vector. Weight decay is applied as an
/// L2 term on coordinates whose mask entry is non-zero.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
            double epsilon = 1e-8);

  void step(std::span<double> params, std::span<const double> grads, std::span<const std::uint8_t> decay_mask,
            std::size_t epoch);

  std::size_t steps_taken() const noexcept { return step_; }

 private:
  OptimizerKind kind_;
  double lr_, weight_decay_, beta1_, beta2_, epsilon_;
  std::vector<double> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace hpgmn
