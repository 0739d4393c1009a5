#include "hpgmn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace hpgmn {

Mlp::Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  require(widths_.size() >= 2, "an MLP needs at least an input and an output width");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    layers_.push_back({Matrix(widths_[l], widths_[l + 1]), std::vector<double>(widths_[l + 1], 0.0)});
  }
}

Mlp Mlp::kaiming(std::vector<std::size_t> widths, Rng& rng) {
  Mlp mlp(std::move(widths));
  for (auto& layer : mlp.layers_) {
    const double fan_in = static_cast<double>(std::max<std::size_t>(layer.weight.rows(), 1));
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weight.data()) w = dist(rng);
  }
  return mlp;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

namespace {

void add_bias(Matrix& z, const std::vector<double>& bias) {
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

}  // namespace

Matrix Mlp::forward(const Matrix& x) const {
  Tape tape;
  return forward(x, tape);
}

Matrix Mlp::forward(const Matrix& x, Tape& tape, double dropout, Rng* rng) const {
  require(x.cols() == input_width(),
          "MLP input width mismatch: expected " + std::to_string(input_width()) + ", got " + std::to_string(x.cols()));
  tape.inputs.clear();
  tape.pre.clear();
  tape.masks.clear();
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = matmul(h, layers_[l].weight);
    add_bias(z, layers_[l].bias);
    tape.inputs.push_back(std::move(h));
    if (l + 1 == layers_.size()) return z;

    Matrix a = z;
    for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
    Matrix mask;
    if (dropout > 0.0 && rng != nullptr) {
      mask = Matrix(a.rows(), a.cols());
      std::bernoulli_distribution keep(1.0 - dropout);
      const double scale = 1.0 / (1.0 - dropout);
      for (double& m : mask.data()) m = keep(*rng) ? scale : 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] *= mask.data()[i];
    }
    tape.pre.push_back(std::move(z));
    tape.masks.push_back(std::move(mask));
    h = std::move(a);
  }
  return h;
}

Matrix Mlp::backward(const Tape& tape, const Matrix& grad_out, Mlp& grads, bool need_input_grad) const {
  require(tape.inputs.size() == layers_.size(), "MLP backward without a matching forward tape");
  Matrix delta = grad_out;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    grads.layers_[l].weight += matmul_tn(tape.inputs[l], delta);
    auto& db = grads.layers_[l].bias;
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto row = delta.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
    }
    if (l == 0 && !need_input_grad) return {};
    Matrix upstream = matmul_nt(delta, layers_[l].weight);
    if (l > 0) {
      const Matrix& pre = tape.pre[l - 1];
      const Matrix& mask = tape.masks[l - 1];
      for (std::size_t i = 0; i < upstream.size(); ++i) {
        double g = pre.data()[i] > 0.0 ? upstream.data()[i] : 0.0;
        if (!mask.empty()) g *= mask.data()[i];
        upstream.data()[i] = g;
      }
    }
    delta = std::move(upstream);
  }
  return delta;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

CrossEntropy cross_entropy_loss(const Matrix& probs, std::span<const int> targets, std::span<const std::size_t> rows) {
  require(!rows.empty(), "cross entropy over an empty row set");
  CrossEntropy ce;
  for (std::size_t r : rows) {
    require(r < probs.rows() && r < targets.size(), "cross entropy row out of range");
    const int y = targets[r];
    require(y >= 0 && static_cast<std::size_t>(y) < probs.cols(), "cross entropy target out of range");
    double p = probs(r, static_cast<std::size_t>(y));
    if (p < 1e-12) {
      p = 1e-12;
      ++ce.clamped;
    }
    ce.loss -= std::log(p);
  }
  ce.loss /= static_cast<double>(rows.size());
  return ce;
}

Matrix cross_entropy_logit_grad(const Matrix& probs, std::span<const int> targets, std::span<const std::size_t> rows) {
  Matrix grad(probs.rows(), probs.cols());
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    for (std::size_t c = 0; c < probs.cols(); ++c) grad(r, c) += scale * probs(r, c);
    grad(r, static_cast<std::size_t>(targets[r])) -= scale;
  }
  return grad;
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows(), 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double grad_check(const std::function<double(std::span<const double>)>& loss, std::span<const double> params,
                  std::span<const double> analytic, const GradCheckOptions& options) {
  require(params.size() == analytic.size(), "grad_check: parameter and gradient sizes differ");
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coordinates != 0 && coords.size() > options.max_coordinates) {
    Rng rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }

  std::vector<double> probe(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double original = probe[i];
    probe[i] = original + options.eps;
    const double up = loss(probe);
    probe[i] = original - options.eps;
    const double down = loss(probe);
    probe[i] = original;
    const double fd = (up - down) / (2.0 * options.eps);
    const double err = std::abs(fd - analytic[i]) / std::max(1e-8, std::abs(fd) + std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(patience <= max_epochs, "patience must not exceed max_epochs");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double weight_decay, double beta1, double beta2,
                     double epsilon)
    : kind_(kind), lr_(learning_rate), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void Optimizer::step(std::span<double> params, std::span<const double> grads, std::span<const std::uint8_t> decay_mask,
                     std::size_t epoch) {
  require(params.size() == grads.size(), "optimizer: parameter and gradient sizes differ");
  require(decay_mask.empty() || decay_mask.size() == params.size(), "optimizer: decay mask size mismatch");
  for (double g : grads) {
    if (!std::isfinite(g)) throw Error("diverged at epoch " + std::to_string(epoch));
  }
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    step_ = 0;
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    if (weight_decay_ > 0.0 && (decay_mask.empty() || decay_mask[i] != 0)) g += weight_decay_ * params[i];
    if (kind_ == OptimizerKind::sgd) {
      params[i] -= lr_ * g;
      continue;
    }
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + epsilon_);
  }
}

}  // namespace hpgmn
