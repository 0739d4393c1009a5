#include "hpgmn/memory.hpp"

#include <cmath>
#include <limits>

#include "hpgmn/nn.hpp"

namespace hpgmn {

MemoryBank::MemoryBank(Matrix m) : units(std::move(m)) {
  require(units.rows() >= 1, "memory needs at least one unit");
  require(units.all_finite(), "memory contains non-finite values");
}

MemoryBank MemoryBank::random(std::size_t k, std::size_t hidden, Rng& rng) {
  require(k >= 1 && hidden >= 1, "memory needs K >= 1 and hidden >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(k, hidden);
  for (double& x : m.data()) x = dist(rng);
  return MemoryBank(std::move(m));
}

Matrix attention_rows(const MemoryBank& bank, const Matrix& queries) {
  require(queries.cols() == bank.hidden(), "query width " + std::to_string(queries.cols()) +
                                               " does not match memory width " + std::to_string(bank.hidden()));
  return softmax_rows(matmul_nt(queries, bank.units));
}

AttentionMatrix attend(const MemoryBank& bank, const Matrix& queries) {
  return {attention_rows(bank, queries).transposed()};
}

Matrix read_values(const MemoryBank& bank, const AttentionMatrix& attention) {
  require(attention.weights.rows() == bank.size(), "attention rows must equal the number of memory units");
  return matmul_tn(attention.weights, bank.units);
}

KpatternResult kpattern_loss(const MemoryBank& bank, const Matrix& queries) {
  require(queries.cols() == bank.hidden(), "query width does not match memory width");
  const std::size_t n = queries.rows(), k = bank.size(), h = bank.hidden();
  KpatternResult out{0.0, Matrix(k, h), Matrix(n, h), std::vector<std::size_t>(n, 0)};
  for (std::size_t v = 0; v < n; ++v) {
    auto q = queries.row(v);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_unit = 0;
    for (std::size_t i = 0; i < k; ++i) {
      auto m = bank.units.row(i);
      double d2 = 0.0;
      for (std::size_t j = 0; j < h; ++j) d2 += (m[j] - q[j]) * (m[j] - q[j]);
      if (d2 < best) {
        best = d2;
        best_unit = i;
      }
    }
    const double dist = std::sqrt(best);
    out.loss += dist;
    out.nearest[v] = best_unit;
    if (dist == 0.0) continue;
    auto m = bank.units.row(best_unit);
    auto gq = out.grad_queries.row(v);
    auto gm = out.grad_units.row(best_unit);
    for (std::size_t j = 0; j < h; ++j) {
      const double u = (q[j] - m[j]) / dist;
      gq[j] += u;
      gm[j] -= u;
    }
  }
  return out;
}

namespace {

// Usage s'_i from N x K attention, and dL/ds'_i of L = sum p ln p with
// p = s' / sum(s').
double entropy_and_usage_grad(const std::vector<double>& usage, std::vector<double>& grad) {
  double total = 0.0;
  for (double s : usage) total += s;
  double loss = 0.0;
  for (double s : usage) {
    const double p = s / total;
    if (p > 0.0) loss += p * std::log(p);
  }
  grad.resize(usage.size());
  for (std::size_t i = 0; i < usage.size(); ++i) {
    const double p = usage[i] / total;
    grad[i] = p > 0.0 ? (std::log(p) - loss) / total : 0.0;
  }
  return loss;
}

std::vector<double> unit_usage_rows(const Matrix& rows) {
  std::vector<double> usage(rows.cols(), 0.0);
  for (std::size_t v = 0; v < rows.rows(); ++v) {
    auto r = rows.row(v);
    for (std::size_t i = 0; i < r.size(); ++i) usage[i] += r[i];
  }
  return usage;
}

}  // namespace

EntropyResult entropy_loss_rows(const Matrix& attention_rows) {
  std::vector<double> grad;
  EntropyResult out;
  out.loss = entropy_and_usage_grad(unit_usage_rows(attention_rows), grad);
  out.grad = Matrix(attention_rows.rows(), attention_rows.cols());
  for (std::size_t v = 0; v < out.grad.rows(); ++v) std::copy(grad.begin(), grad.end(), out.grad.row(v).begin());
  return out;
}

EntropyResult entropy_loss(const AttentionMatrix& attention) {
  const Matrix& s = attention.weights;
  std::vector<double> usage(s.rows(), 0.0), grad;
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (double x : s.row(i)) usage[i] += x;
  EntropyResult out;
  out.loss = entropy_and_usage_grad(usage, grad);
  out.grad = Matrix(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (double& g : out.grad.row(i)) g = grad[i];
  return out;
}

double usage_entropy(const Matrix& attention_rows) {
  std::vector<double> grad;
  return -entropy_and_usage_grad(unit_usage_rows(attention_rows), grad);
}

FrobeniusResult frobenius_penalty(const MemoryBank& bank) {
  FrobeniusResult out{squared_norm(bank.units), bank.units};
  out.grad *= 2.0;
  return out;
}

void attention_rows_backward(const MemoryBank& bank, const Matrix& queries, const Matrix& attention,
                             const Matrix& grad_attention, Matrix& grad_units, Matrix& grad_queries) {
  // Row softmax backward: dA = P * (dP - <P, dP>) per row.
  Matrix grad_logits(attention.rows(), attention.cols());
  for (std::size_t v = 0; v < attention.rows(); ++v) {
    auto p = attention.row(v);
    auto dp = grad_attention.row(v);
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
    auto out = grad_logits.row(v);
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (dp[i] - dot);
  }
  // logits = Q M^T
  grad_queries += matmul(grad_logits, bank.units);
  grad_units += matmul_tn(grad_logits, queries);
}

nlohmann::json memory_diagnostics(const MemoryBank& bank, const Matrix& queries) {
  const Matrix att = attention_rows(bank, queries);
  const auto usage = unit_usage_rows(att);
  double total = 0.0;
  for (double s : usage) total += s;
  std::vector<double> normalized;
  for (double s : usage) normalized.push_back(s / total);
  std::vector<std::size_t> histogram(bank.size(), 0);
  for (std::size_t unit : kpattern_loss(bank, queries).nearest) ++histogram[unit];
  return {{"num_units", bank.size()},
          {"hidden", bank.hidden()},
          {"importance", usage},
          {"usage", normalized},
          {"usage_entropy", usage_entropy(att)},
          {"max_entropy", std::log(static_cast<double>(bank.size()))},
          {"nearest_unit_histogram", histogram}};
}

}  // namespace hpgmn
