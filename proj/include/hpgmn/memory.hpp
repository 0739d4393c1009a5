#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "hpgmn/matrix.hpp"

namespace hpgmn {

/// K x hidden matrix of memory units, one unit per row.
struct MemoryBank {
  Matrix units;

  MemoryBank() = default;
  explicit MemoryBank(Matrix m);
  /// Entries uniform in [-1/sqrt(hidden), 1/sqrt(hidden)].
  static MemoryBank random(std::size_t k, std::size_t hidden, Rng& rng);

  std::size_t size() const noexcept { return units.rows(); }
  std::size_t hidden() const noexcept { return units.cols(); }
};

/// K x N attention; column j is node j's distribution over memory units.
/// Note that this is unrelated to the diffusion matrix of local_stats.hpp.
struct AttentionMatrix {
  Matrix weights;
};

/// S = softmax over units of M Q^T, computed per node.
AttentionMatrix attend(const MemoryBank& bank, const Matrix& queries);

/// Same attention laid out N x K (row v = node v's distribution). This is the
/// layout the model works in.
Matrix attention_rows(const MemoryBank& bank, const Matrix& queries);

/// V = S^T M: each row is the attention-weighted average of memory units.
Matrix read_values(const MemoryBank& bank, const AttentionMatrix& attention);

struct KpatternResult {
  double loss = 0.0;
  Matrix grad_units;    // K x hidden
  Matrix grad_queries;  // N x hidden
  std::vector<std::size_t> nearest;  // nearest unit per node
};

/// Sum over nodes of the Euclidean distance to the nearest memory unit. The
/// subgradient flows only to that unit; ties go to the lowest index and a
/// zero distance contributes no gradient.
KpatternResult kpattern_loss(const MemoryBank& bank, const Matrix& queries);

struct EntropyResult {
  double loss = 0.0;
  Matrix grad;  // same layout as the input attention
};

/// Negative entropy of the normalised unit usage p = s' / sum(s'), where
/// s'_i is the total attention unit i receives. Lies in [-ln K, 0].
EntropyResult entropy_loss(const AttentionMatrix& attention);

/// entropy_loss for attention stored N x K (see attention_rows).
EntropyResult entropy_loss_rows(const Matrix& attention_rows);

/// Entropy H(p) of the normalised usage of N x K attention.
double usage_entropy(const Matrix& attention_rows);

struct FrobeniusResult {
  double loss = 0.0;
  Matrix grad;
};

FrobeniusResult frobenius_penalty(const MemoryBank& bank);

/// Backward pass of attention_rows: maps dL/d(attention rows) to gradients
/// w.r.t. the units and the queries (accumulated).
void attention_rows_backward(const MemoryBank& bank, const Matrix& queries, const Matrix& attention,
                             const Matrix& grad_attention, Matrix& grad_units, Matrix& grad_queries);

/// Per-unit importance s', normalised usage, usage entropy and a histogram of
/// nearest-unit assignments.
nlohmann::json memory_diagnostics(const MemoryBank& bank, const Matrix& queries);

}  // namespace hpgmn
