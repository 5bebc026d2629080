// SPDX-License-Identifier: Apache-2.0
//
// Staircase adaptive quantization of a KV cache.
//
// Cache layout, oldest token first:
//
//   | group 0 | group 1 | ... | group g-1 | residual (<= S tokens) |
//     2 bits    2 bits          16 bits      full precision
//
// Groups hold G consecutive tokens. A group's bit width is chosen by the age
// of its newest token: every S tokens of age moves it one rung down the bit
// ladder, and the last rung is open-ended. Groups at the top rung are kept in
// full precision; lower rungs are stored as integer codes with an affine
// (zero-point, scale) per key channel and per value token. When a group ages
// past a segment boundary it is re-quantized from its dequantized values.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "attnmosaic/matrix.hpp"

namespace attnmosaic::saq {

struct QuantSpec {
  int bits = 0;
  double zero_point = 0.0;
  double scale = 1.0;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

struct Quantized {
  std::vector<std::uint16_t> codes;
  QuantSpec spec;
};

/// Asymmetric min/max quantization to `bits` in [1, 16], round half to even.
/// A constant input gets scale 1 and all-zero codes so it round-trips exactly.
Quantized quantize(std::span<const double> values, int bits);

std::vector<double> dequantize(std::span<const std::uint16_t> codes, const QuantSpec& spec);

struct StaircaseConfig {
  std::size_t segment_size = 128;    // S
  std::size_t group_size = 32;       // G, must divide S
  std::vector<int> ladder{16, 8, 4, 2};  // ladder[0] is full precision

  std::size_t levels() const { return ladder.size(); }
};

/// Throws Error(kUsage) unless S, G >= 1, G | S, the ladder is nonempty,
/// starts at 16, is strictly decreasing and only uses widths {1,2,4,8,16}.
void validate(const StaircaseConfig& config);

/// Bits for a group whose newest token is `newest_token` in a sequence of
/// `total_tokens`: ladder[min((total - 1 - newest) / S, levels - 1)].
int staircase_bits(std::size_t newest_token, std::size_t total_tokens,
                   const StaircaseConfig& config);

/// G x d block stored either in full precision or as quantized codes.
class GroupTensor {
 public:
  enum class Axis { kPerChannel, kPerToken };

  static GroupTensor full(Matrix values);
  static GroupTensor quantized(const Matrix& values, int bits, Axis axis);

  bool is_full_precision() const { return full_precision_; }
  int bits() const { return bits_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  const std::vector<QuantSpec>& specs() const { return specs_; }

  Matrix dequantize() const;

  /// Theoretical storage: 16 bits per full-precision value, `bits` per code
  /// plus two 16-bit floats (zero point, scale) per spec.
  std::uint64_t storage_bits() const;

 private:
  bool full_precision_ = true;
  int bits_ = 16;
  Axis axis_ = Axis::kPerChannel;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Matrix raw_;
  std::vector<std::uint16_t> codes_;  // row-major, rows_ x cols_
  std::vector<QuantSpec> specs_;
};

struct CacheGroup {
  std::size_t first_token = 0;
  int bits = 16;
  GroupTensor keys;    // per-channel specs
  GroupTensor values;  // per-token specs
};

class StaircaseCache {
 public:
  StaircaseCache(StaircaseConfig config, std::size_t dim);

  /// Appends token rows, moves overflow out of the residual in whole groups
  /// and re-quantizes groups that crossed a segment boundary.
  void append(const Matrix& keys, const Matrix& values);

  std::size_t total_tokens() const { return total_; }
  std::size_t residual_length() const { return key_residual_.rows(); }
  std::size_t dim() const { return dim_; }
  const std::vector<CacheGroup>& groups() const { return groups_; }
  const Matrix& key_residual() const { return key_residual_; }
  const Matrix& value_residual() const { return value_residual_; }
  const StaircaseConfig& config() const { return config_; }

  /// All cached keys/values, dequantized, oldest first.
  Matrix keys() const;
  Matrix values() const;

  std::uint64_t theoretical_bits() const;
  /// 16 bits per key and value entry for every cached token.
  std::uint64_t full_precision_bits() const {
    return 2ULL * 16ULL * total_ * dim_;
  }

 private:
  void flush_overflow();
  void restaircase();

  StaircaseConfig config_;
  std::size_t dim_;
  std::size_t total_ = 0;
  std::vector<CacheGroup> groups_;
  Matrix key_residual_;
  Matrix value_residual_;
};

struct Projections {
  Matrix query;
  Matrix key;
  Matrix value;

  /// d x d matrices with entries uniform in [-1, 1] / sqrt(d).
  static Projections random(std::size_t dim, std::uint64_t seed);
};

/// Softmax weights of the last decode step, split at the residual boundary.
struct AttentionSplit {
  std::vector<double> grouped;   // A_g
  std::vector<double> residual;  // A_r
};

/// Single-layer, single-head decoder whose KV cache is a StaircaseCache.
class SaqDecoder {
 public:
  SaqDecoder(Projections weights, StaircaseConfig config);

  /// Projects the prompt, caches it and returns the exact (X W_K, X W_V).
  /// Throws kEmptyPrompt for an empty prompt.
  std::pair<Matrix, Matrix> prefill(const Matrix& prompt);

  /// One token in, one attention output out. Throws kState before prefill.
  std::vector<double> decode_step(std::span<const double> token);

  const StaircaseCache& cache() const { return cache_; }
  const AttentionSplit& last_attention() const { return last_; }

 private:
  Projections weights_;
  StaircaseCache cache_;
  bool prefilled_ = false;
  AttentionSplit last_;
};

/// The same decoder with an unbounded full-precision cache.
class BaselineDecoder {
 public:
  explicit BaselineDecoder(Projections weights);

  std::pair<Matrix, Matrix> prefill(const Matrix& prompt);
  std::vector<double> decode_step(std::span<const double> token);

 private:
  Projections weights_;
  Matrix keys_;
  Matrix values_;
  bool prefilled_ = false;
};

}  // namespace attnmosaic::saq
