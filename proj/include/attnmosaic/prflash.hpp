// SPDX-License-Identifier: Apache-2.0
//
// Probabilistic block-sparse attention. Query/key blocks are dropped by
// comparing a per-row/per-column decision factor (block keep probability
// blended with a uniform draw) against an adjusted sparsity threshold.
// Single batch, single head, CPU doubles.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "attnmosaic/matrix.hpp"

namespace attnmosaic::prflash {

struct AttnConfig {
  std::size_t context_length = 0;  // N
  std::size_t head_dim = 0;        // d_h
  std::size_t block_rows = 1;      // B_r, tokens per query block
  std::size_t block_cols = 1;      // B_c, tokens per key block
  std::size_t threshold_range = 0; // k, blocks kept with probability 1
  double weight = 1.0;             // w in [0, 1]
  double target_drop = 0.0;        // s, percent in [0, 100]
  std::uint64_t seed = 0;
  bool causal = true;

  std::size_t row_blocks() const { return (context_length + block_rows - 1) / block_rows; }
  std::size_t col_blocks() const { return (context_length + block_cols - 1) / block_cols; }
};

/// Throws Error(kUsage) for empty context, zero block sizes or head_dim,
/// w outside [0,1] or s outside [0,100].
void validate(const AttnConfig& config);

struct BlockMaskPlan {
  std::vector<double> row_probs;
  std::vector<double> col_probs;
  std::vector<double> row_decisions;
  std::vector<double> col_decisions;
  double sparsity_threshold = 0.0;  // s_adj
  std::vector<bool> kept_rows;
  std::vector<bool> kept_cols;

  double kept_row_fraction() const;
  double kept_col_fraction() const;

  friend bool operator==(const BlockMaskPlan&, const BlockMaskPlan&) = default;
};

struct AttnTensors {
  Matrix q;
  Matrix k;
  Matrix v;
};

/// Keep weight for a block at `distance` blocks from the diagonal: 1 inside
/// the threshold range, 1/((n-k)(n-k+1)) beyond it.
double block_pdf(std::size_t distance, std::size_t threshold_range);

/// Mean block_pdf over the key blocks query block `q` can see. Causal rows
/// average over key blocks 0..min(q, M_c-1); non-causal rows over all M_c.
double row_probability(std::size_t q, const AttnConfig& config);

/// Column counterpart: causal columns average over query blocks
/// min(c, M_r-1)..M_r-1, non-causal over all M_r.
double col_probability(std::size_t c, const AttnConfig& config);

inline double decision_factor(double prob, double draw, double weight) {
  return prob * weight + draw * (1.0 - weight);
}

/// Nearest-rank s-th percentile of `probs` (s = 0 gives the minimum).
double percentile_nearest_rank(std::span<const double> probs, double percent);

/// p_s * w + (s / 100) * (1 - w).
double adjusted_sparsity(std::span<const double> probs, double percent, double weight);

/// Deterministic in config.seed. Row draws come from stream 1 and column
/// draws from stream 2 of the seeded generator.
BlockMaskPlan build_mask(const AttnConfig& config);

/// Whether query token i may attend to key token j under `plan`: causal
/// ordering, then kept row and kept column, except that the key block
/// holding token i itself is always visible (diagonal rescue).
bool visible(std::size_t i, std::size_t j, const BlockMaskPlan& plan, const AttnConfig& config);

/// Exact softmax(Q K^T / sqrt(d_h) [+ causal mask]) V.
Matrix dense_attention(const AttnTensors& tensors, bool causal);

/// Tiled online-softmax attention that skips every block the plan hides.
Matrix sparse_attention(const AttnTensors& tensors, const BlockMaskPlan& plan,
                        const AttnConfig& config);

}  // namespace attnmosaic::prflash
