// SPDX-License-Identifier: Apache-2.0
#include "attnmosaic/saq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "attnmosaic/error.hpp"
#include "attnmosaic/rng.hpp"

namespace attnmosaic::saq {

Quantized quantize(std::span<const double> values, int bits) {
  if (bits < 1 || bits > 16) throw Error(ErrorCode::kUsage, "bits must lie in [1,16]");
  Quantized out;
  out.spec.bits = bits;
  out.codes.assign(values.size(), 0);
  if (values.empty()) return out;

  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  out.spec.zero_point = *lo;
  if (*hi == *lo) {
    out.spec.scale = 1.0;
    return out;
  }
  const double max_code = std::ldexp(1.0, bits) - 1.0;
  out.spec.scale = (*hi - *lo) / max_code;
  // nearbyint honours the current mode; the default is round-half-to-even
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double code = std::nearbyint((values[i] - out.spec.zero_point) / out.spec.scale);
    out.codes[i] = static_cast<std::uint16_t>(std::clamp(code, 0.0, max_code));
  }
  return out;
}

std::vector<double> dequantize(std::span<const std::uint16_t> codes, const QuantSpec& spec) {
  std::vector<double> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = codes[i] * spec.scale + spec.zero_point;
  return out;
}

void validate(const StaircaseConfig& config) {
  if (config.segment_size == 0 || config.group_size == 0) {
    throw Error(ErrorCode::kUsage, "segment and group sizes must be >= 1");
  }
  if (config.segment_size % config.group_size != 0) {
    throw Error(ErrorCode::kUsage, "group size " + std::to_string(config.group_size) +
                                       " does not divide segment size " +
                                       std::to_string(config.segment_size));
  }
  if (config.ladder.empty()) throw Error(ErrorCode::kUsage, "bit ladder is empty");
  if (config.ladder.front() != 16) {
    throw Error(ErrorCode::kUsage, "bit ladder must start at 16 (full precision)");
  }
  for (std::size_t i = 0; i < config.ladder.size(); ++i) {
    const int b = config.ladder[i];
    if (b != 1 && b != 2 && b != 4 && b != 8 && b != 16) {
      throw Error(ErrorCode::kUsage, "unsupported bit width " + std::to_string(b));
    }
    if (i > 0 && b >= config.ladder[i - 1]) {
      throw Error(ErrorCode::kUsage, "bit ladder must be strictly decreasing");
    }
  }
}

int staircase_bits(std::size_t newest_token, std::size_t total_tokens,
                   const StaircaseConfig& config) {
  const std::size_t age = total_tokens - 1 - newest_token;
  const std::size_t rung = std::min(age / config.segment_size, config.levels() - 1);
  return config.ladder[rung];
}

// ---------------------------------------------------------------------------
// GroupTensor

GroupTensor GroupTensor::full(Matrix values) {
  GroupTensor t;
  t.rows_ = values.rows();
  t.cols_ = values.cols();
  t.raw_ = std::move(values);
  return t;
}

GroupTensor GroupTensor::quantized(const Matrix& values, int bits, Axis axis) {
  GroupTensor t;
  t.full_precision_ = false;
  t.bits_ = bits;
  t.axis_ = axis;
  t.rows_ = values.rows();
  t.cols_ = values.cols();
  t.codes_.resize(t.rows_ * t.cols_);

  if (axis == Axis::kPerToken) {
    for (std::size_t r = 0; r < t.rows_; ++r) {
      Quantized q = quantize(values.row(r), bits);
      std::copy(q.codes.begin(), q.codes.end(), t.codes_.begin() + static_cast<std::ptrdiff_t>(r * t.cols_));
      t.specs_.push_back(q.spec);
    }
  } else {
    std::vector<double> column(t.rows_);
    for (std::size_t c = 0; c < t.cols_; ++c) {
      for (std::size_t r = 0; r < t.rows_; ++r) column[r] = values(r, c);
      Quantized q = quantize(column, bits);
      for (std::size_t r = 0; r < t.rows_; ++r) t.codes_[r * t.cols_ + c] = q.codes[r];
      t.specs_.push_back(q.spec);
    }
  }
  return t;
}

Matrix GroupTensor::dequantize() const {
  if (full_precision_) return raw_;
  Matrix out(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) {
      const QuantSpec& spec = axis_ == Axis::kPerToken ? specs_[r] : specs_[c];
      out(r, c) = codes_[r * cols_ + c] * spec.scale + spec.zero_point;
    }
  }
  return out;
}

std::uint64_t GroupTensor::storage_bits() const {
  const std::uint64_t n = static_cast<std::uint64_t>(rows_) * cols_;
  if (full_precision_) return 16ULL * n;
  return static_cast<std::uint64_t>(bits_) * n + 2ULL * 16ULL * specs_.size();
}

// ---------------------------------------------------------------------------
// StaircaseCache

namespace {

CacheGroup make_group(std::size_t first_token, int bits, Matrix keys, Matrix values,
                      const StaircaseConfig& config) {
  CacheGroup group;
  group.first_token = first_token;
  group.bits = bits;
  if (bits == config.ladder.front()) {
    group.keys = GroupTensor::full(std::move(keys));
    group.values = GroupTensor::full(std::move(values));
  } else {
    group.keys = GroupTensor::quantized(keys, bits, GroupTensor::Axis::kPerChannel);
    group.values = GroupTensor::quantized(values, bits, GroupTensor::Axis::kPerToken);
  }
  return group;
}

}  // namespace

StaircaseCache::StaircaseCache(StaircaseConfig config, std::size_t dim)
    : config_(std::move(config)), dim_(dim), key_residual_(0, dim), value_residual_(0, dim) {
  validate(config_);
}

void StaircaseCache::append(const Matrix& keys, const Matrix& values) {
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    key_residual_.append_row(keys.row(r));
    value_residual_.append_row(values.row(r));
  }
  total_ += keys.rows();
  flush_overflow();
  restaircase();
}

void StaircaseCache::flush_overflow() {
  const std::size_t g = config_.group_size;
  while (key_residual_.rows() > config_.segment_size) {
    const std::size_t first = total_ - key_residual_.rows();
    const int bits = staircase_bits(first + g - 1, total_, config_);
    groups_.push_back(make_group(first, bits, key_residual_.slice_rows(0, g),
                                 value_residual_.slice_rows(0, g), config_));
    key_residual_.erase_front_rows(g);
    value_residual_.erase_front_rows(g);
  }
}

void StaircaseCache::restaircase() {
  const std::size_t g = config_.group_size;
  for (CacheGroup& group : groups_) {
    const int bits = staircase_bits(group.first_token + g - 1, total_, config_);
    if (bits >= group.bits) continue;
    group = make_group(group.first_token, bits, group.keys.dequantize(), group.values.dequantize(),
                       config_);
  }
}

Matrix StaircaseCache::keys() const {
  Matrix out(0, dim_);
  for (const CacheGroup& group : groups_) {
    const Matrix k = group.keys.dequantize();
    for (std::size_t r = 0; r < k.rows(); ++r) out.append_row(k.row(r));
  }
  for (std::size_t r = 0; r < key_residual_.rows(); ++r) out.append_row(key_residual_.row(r));
  return out;
}

Matrix StaircaseCache::values() const {
  Matrix out(0, dim_);
  for (const CacheGroup& group : groups_) {
    const Matrix v = group.values.dequantize();
    for (std::size_t r = 0; r < v.rows(); ++r) out.append_row(v.row(r));
  }
  for (std::size_t r = 0; r < value_residual_.rows(); ++r) out.append_row(value_residual_.row(r));
  return out;
}

std::uint64_t StaircaseCache::theoretical_bits() const {
  std::uint64_t bits = 2ULL * 16ULL * key_residual_.rows() * dim_;
  for (const CacheGroup& group : groups_) bits += group.keys.storage_bits() + group.values.storage_bits();
  return bits;
}

// ---------------------------------------------------------------------------
// Decoders

Projections Projections::random(std::size_t dim, std::uint64_t seed) {
  const Rng root(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  Projections p;
  p.query = root.split(11).uniform_matrix(dim, dim, -bound, bound);
  p.key = root.split(12).uniform_matrix(dim, dim, -bound, bound);
  p.value = root.split(13).uniform_matrix(dim, dim, -bound, bound);
  return p;
}

namespace {

std::vector<double> project(std::span<const double> token, const Matrix& weight) {
  std::vector<double> out(weight.cols(), 0.0);
  for (std::size_t k = 0; k < token.size(); ++k) {
    const auto w = weight.row(k);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += token[k] * w[j];
  }
  return out;
}

Matrix as_row(std::span<const double> values) {
  Matrix m(0, values.size());
  m.append_row(values);
  return m;
}

void check_prompt(const Matrix& prompt, std::size_t dim) {
  if (prompt.rows() == 0) throw Error(ErrorCode::kEmptyPrompt, "prompt has no tokens");
  if (prompt.cols() != dim) {
    throw Error(ErrorCode::kUsage, "prompt width " + std::to_string(prompt.cols()) +
                                       " does not match model dim " + std::to_string(dim));
  }
}

// Softmax over scaled dot products of `query` with every row of the given
// key blocks; blocks are visited in order so the logits are laid out
// oldest token first.
std::vector<double> attention_weights(std::span<const double> query,
                                      std::initializer_list<const Matrix*> key_blocks) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.size()));
  std::vector<double> weights;
  for (const Matrix* block : key_blocks) {
    for (std::size_t r = 0; r < block->rows(); ++r) weights.push_back(dot(query, block->row(r)) * scale);
  }
  const double max_logit = *std::max_element(weights.begin(), weights.end());
  double denom = 0.0;
  for (double& w : weights) {
    w = std::exp(w - max_logit);
    denom += w;
  }
  for (double& w : weights) w /= denom;
  return weights;
}

}  // namespace

SaqDecoder::SaqDecoder(Projections weights, StaircaseConfig config)
    : weights_(std::move(weights)), cache_(std::move(config), weights_.key.cols()) {}

std::pair<Matrix, Matrix> SaqDecoder::prefill(const Matrix& prompt) {
  check_prompt(prompt, weights_.key.rows());
  Matrix keys = matmul(prompt, weights_.key);
  Matrix values = matmul(prompt, weights_.value);
  cache_.append(keys, values);
  prefilled_ = true;
  return {std::move(keys), std::move(values)};
}

std::vector<double> SaqDecoder::decode_step(std::span<const double> token) {
  if (!prefilled_) throw Error(ErrorCode::kState, "decode_step called before prefill");
  const std::vector<double> query = project(token, weights_.query);
  cache_.append(as_row(project(token, weights_.key)), as_row(project(token, weights_.value)));

  Matrix grouped_keys(0, cache_.dim());
  Matrix grouped_values(0, cache_.dim());
  for (const CacheGroup& group : cache_.groups()) {
    const Matrix k = group.keys.dequantize();
    const Matrix v = group.values.dequantize();
    for (std::size_t r = 0; r < k.rows(); ++r) {
      grouped_keys.append_row(k.row(r));
      grouped_values.append_row(v.row(r));
    }
  }

  const std::vector<double> weights =
      attention_weights(query, {&grouped_keys, &cache_.key_residual()});
  const auto split = static_cast<std::ptrdiff_t>(grouped_keys.rows());
  last_.grouped.assign(weights.begin(), weights.begin() + split);
  last_.residual.assign(weights.begin() + split, weights.end());

  std::vector<double> out(cache_.dim(), 0.0);
  auto accumulate = [&out](std::span<const double> probs, const Matrix& vals) {
    for (std::size_t r = 0; r < vals.rows(); ++r) {
      const auto v = vals.row(r);
      for (std::size_t x = 0; x < out.size(); ++x) out[x] += probs[r] * v[x];
    }
  };
  accumulate(last_.grouped, grouped_values);
  accumulate(last_.residual, cache_.value_residual());
  return out;
}

BaselineDecoder::BaselineDecoder(Projections weights)
    : weights_(std::move(weights)), keys_(0, weights_.key.cols()), values_(0, weights_.key.cols()) {}

std::pair<Matrix, Matrix> BaselineDecoder::prefill(const Matrix& prompt) {
  check_prompt(prompt, weights_.key.rows());
  Matrix keys = matmul(prompt, weights_.key);
  Matrix values = matmul(prompt, weights_.value);
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    keys_.append_row(keys.row(r));
    values_.append_row(values.row(r));
  }
  prefilled_ = true;
  return {std::move(keys), std::move(values)};
}

std::vector<double> BaselineDecoder::decode_step(std::span<const double> token) {
  if (!prefilled_) throw Error(ErrorCode::kState, "decode_step called before prefill");
  const std::vector<double> query = project(token, weights_.query);
  keys_.append_row(project(token, weights_.key));
  values_.append_row(project(token, weights_.value));

  const std::vector<double> weights = attention_weights(query, {&keys_});
  std::vector<double> out(values_.cols(), 0.0);
  for (std::size_t r = 0; r < values_.rows(); ++r) {
    const auto v = values_.row(r);
    for (std::size_t x = 0; x < out.size(); ++x) out[x] += weights[r] * v[x];
  }
  return out;
}

}  // namespace attnmosaic::saq
