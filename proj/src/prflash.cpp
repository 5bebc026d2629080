// SPDX-License-Identifier: Apache-2.0
#include "attnmosaic/prflash.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "attnmosaic/error.hpp"
#include "attnmosaic/rng.hpp"

namespace attnmosaic::prflash {

void validate(const AttnConfig& config) {
  if (config.context_length == 0) throw Error(ErrorCode::kUsage, "context length must be >= 1");
  if (config.head_dim == 0) throw Error(ErrorCode::kUsage, "head dim must be >= 1");
  if (config.block_rows == 0 || config.block_cols == 0) {
    throw Error(ErrorCode::kUsage, "block sizes must be >= 1");
  }
  if (!(config.weight >= 0.0 && config.weight <= 1.0)) {
    throw Error(ErrorCode::kUsage, "w must lie in [0,1], got " + std::to_string(config.weight));
  }
  if (!(config.target_drop >= 0.0 && config.target_drop <= 100.0)) {
    throw Error(ErrorCode::kUsage,
                "sparsity must lie in [0,100], got " + std::to_string(config.target_drop));
  }
}

double BlockMaskPlan::kept_row_fraction() const {
  if (kept_rows.empty()) return 0.0;
  return static_cast<double>(std::count(kept_rows.begin(), kept_rows.end(), true)) /
         static_cast<double>(kept_rows.size());
}

double BlockMaskPlan::kept_col_fraction() const {
  if (kept_cols.empty()) return 0.0;
  return static_cast<double>(std::count(kept_cols.begin(), kept_cols.end(), true)) /
         static_cast<double>(kept_cols.size());
}

double block_pdf(std::size_t distance, std::size_t threshold_range) {
  if (distance <= threshold_range) return 1.0;
  const double gap = static_cast<double>(distance - threshold_range);
  return 1.0 / (gap * (gap + 1.0));
}

namespace {

std::size_t block_distance(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

}  // namespace

double row_probability(std::size_t q, const AttnConfig& config) {
  const std::size_t key_blocks = config.col_blocks();
  const std::size_t last = config.causal ? std::min(q, key_blocks - 1) : key_blocks - 1;
  double sum = 0.0;
  for (std::size_t j = 0; j <= last; ++j) sum += block_pdf(block_distance(q, j), config.threshold_range);
  return sum / static_cast<double>(last + 1);
}

double col_probability(std::size_t c, const AttnConfig& config) {
  const std::size_t query_blocks = config.row_blocks();
  const std::size_t first = config.causal ? std::min(c, query_blocks - 1) : 0;
  double sum = 0.0;
  for (std::size_t q = first; q < query_blocks; ++q) {
    sum += block_pdf(block_distance(q, c), config.threshold_range);
  }
  return sum / static_cast<double>(query_blocks - first);
}

double percentile_nearest_rank(std::span<const double> probs, double percent) {
  if (probs.empty()) throw Error(ErrorCode::kUsage, "percentile of an empty list");
  std::vector<double> sorted(probs.begin(), probs.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // percent * n / 100 instead of (percent / 100) * n keeps integer ranks exact
  const double rank = std::ceil(percent * n / 100.0);
  const auto index = static_cast<std::size_t>(std::clamp(rank - 1.0, 0.0, n - 1.0));
  return sorted[index];
}

double adjusted_sparsity(std::span<const double> probs, double percent, double weight) {
  return percentile_nearest_rank(probs, percent) * weight + (percent / 100.0) * (1.0 - weight);
}

BlockMaskPlan build_mask(const AttnConfig& config) {
  validate(config);
  const std::size_t rows = config.row_blocks();
  const std::size_t cols = config.col_blocks();

  BlockMaskPlan plan;
  plan.row_probs.resize(rows);
  plan.col_probs.resize(cols);
  for (std::size_t q = 0; q < rows; ++q) plan.row_probs[q] = row_probability(q, config);
  for (std::size_t c = 0; c < cols; ++c) plan.col_probs[c] = col_probability(c, config);

  const Rng root(config.seed);
  Rng row_draws = root.split(1);
  Rng col_draws = root.split(2);
  plan.row_decisions.resize(rows);
  plan.col_decisions.resize(cols);
  for (std::size_t q = 0; q < rows; ++q) {
    plan.row_decisions[q] = decision_factor(plan.row_probs[q], row_draws.uniform(), config.weight);
  }
  for (std::size_t c = 0; c < cols; ++c) {
    plan.col_decisions[c] = decision_factor(plan.col_probs[c], col_draws.uniform(), config.weight);
  }

  std::vector<double> pooled(plan.row_probs);
  pooled.insert(pooled.end(), plan.col_probs.begin(), plan.col_probs.end());
  plan.sparsity_threshold = adjusted_sparsity(pooled, config.target_drop, config.weight);

  plan.kept_rows.resize(rows);
  plan.kept_cols.resize(cols);
  for (std::size_t q = 0; q < rows; ++q) plan.kept_rows[q] = plan.row_decisions[q] >= plan.sparsity_threshold;
  for (std::size_t c = 0; c < cols; ++c) plan.kept_cols[c] = plan.col_decisions[c] >= plan.sparsity_threshold;
  return plan;
}

bool visible(std::size_t i, std::size_t j, const BlockMaskPlan& plan, const AttnConfig& config) {
  if (config.causal && j > i) return false;
  const std::size_t key_block = j / config.block_cols;
  if (key_block == i / config.block_cols) return true;
  return plan.kept_rows[i / config.block_rows] && plan.kept_cols[key_block];
}

Matrix dense_attention(const AttnTensors& tensors, bool causal) {
  const std::size_t n = tensors.q.rows();
  const std::size_t dv = tensors.v.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(tensors.q.cols()));
  Matrix out(n, dv);
  std::vector<double> logits(tensors.k.rows());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t visible_keys = causal ? std::min(i + 1, tensors.k.rows()) : tensors.k.rows();
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < visible_keys; ++j) {
      logits[j] = dot(tensors.q.row(i), tensors.k.row(j)) * scale;
      max_logit = std::max(max_logit, logits[j]);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < visible_keys; ++j) {
      logits[j] = std::exp(logits[j] - max_logit);
      denom += logits[j];
    }
    auto o = out.row(i);
    for (std::size_t j = 0; j < visible_keys; ++j) {
      const double p = logits[j] / denom;
      const auto v = tensors.v.row(j);
      for (std::size_t x = 0; x < dv; ++x) o[x] += p * v[x];
    }
  }
  return out;
}

Matrix sparse_attention(const AttnTensors& tensors, const BlockMaskPlan& plan,
                        const AttnConfig& config) {
  const std::size_t n = config.context_length;
  const std::size_t br = config.block_rows;
  const std::size_t bc = config.block_cols;
  const std::size_t dv = tensors.v.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(tensors.q.cols()));

  Matrix out(n, dv);
  std::vector<double> running_max;
  std::vector<double> running_sum;
  std::vector<double> logits(bc);

  for (std::size_t qb = 0; qb < config.row_blocks(); ++qb) {
    const std::size_t row_begin = qb * br;
    const std::size_t row_end = std::min(n, row_begin + br);
    running_max.assign(row_end - row_begin, -std::numeric_limits<double>::infinity());
    running_sum.assign(row_end - row_begin, 0.0);
    // key blocks that hold some query token of this block (rescued diagonals)
    const std::size_t diag_first = row_begin / bc;
    const std::size_t diag_last = (row_end - 1) / bc;

    for (std::size_t kb = 0; kb < config.col_blocks(); ++kb) {
      const std::size_t col_begin = kb * bc;
      if (config.causal && col_begin > row_end - 1) break;
      const bool diagonal = kb >= diag_first && kb <= diag_last;
      if (!diagonal && !(plan.kept_rows[qb] && plan.kept_cols[kb])) continue;
      const std::size_t col_end = std::min(n, col_begin + bc);

      for (std::size_t i = row_begin; i < row_end; ++i) {
        const std::size_t r = i - row_begin;
        double block_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = col_begin; j < col_end; ++j) {
          double& logit = logits[j - col_begin];
          if (visible(i, j, plan, config)) {
            logit = dot(tensors.q.row(i), tensors.k.row(j)) * scale;
            block_max = std::max(block_max, logit);
          } else {
            logit = -std::numeric_limits<double>::infinity();
          }
        }
        if (block_max == -std::numeric_limits<double>::infinity()) continue;

        const double new_max = std::max(running_max[r], block_max);
        const double correction = std::exp(running_max[r] - new_max);
        auto o = out.row(i);
        for (double& x : o) x *= correction;
        running_sum[r] *= correction;
        for (std::size_t j = col_begin; j < col_end; ++j) {
          const double logit = logits[j - col_begin];
          if (logit == -std::numeric_limits<double>::infinity()) continue;
          const double p = std::exp(logit - new_max);
          running_sum[r] += p;
          const auto v = tensors.v.row(j);
          for (std::size_t x = 0; x < dv; ++x) o[x] += p * v[x];
        }
        running_max[r] = new_max;
      }
    }

    for (std::size_t i = row_begin; i < row_end; ++i) {
      const double denom = running_sum[i - row_begin];
      for (double& x : out.row(i)) x /= denom;
    }
  }
  return out;
}

}  // namespace attnmosaic::prflash
