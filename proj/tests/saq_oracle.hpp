// SPDX-License-Identifier: Apache-2.0
//
// Runs the staircase decoder and the full-precision baseline side by side on
// the same random prompt and token stream.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "attnmosaic/rng.hpp"
#include "attnmosaic/saq.hpp"

namespace attnmosaic::testing {

struct DecodeComparison {
  double max_abs_err = 0.0;
  double mean_abs_err = 0.0;
  std::uint64_t cache_bits = 0;
  std::uint64_t baseline_bits = 0;
};

inline DecodeComparison compare_decoders(std::uint64_t seed, std::size_t prompt_len,
                                         std::size_t gen_len, std::size_t dim,
                                         const saq::StaircaseConfig& config) {
  const Rng rng(seed);
  const saq::Projections weights = saq::Projections::random(dim, seed);
  const Matrix prompt = rng.split(21).uniform_matrix(prompt_len, dim, -1.0, 1.0);
  const Matrix stream = rng.split(22).uniform_matrix(gen_len, dim, -1.0, 1.0);

  saq::SaqDecoder staircase(weights, config);
  saq::BaselineDecoder baseline(weights);
  staircase.prefill(prompt);
  baseline.prefill(prompt);

  DecodeComparison result;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < gen_len; ++t) {
    const auto got = staircase.decode_step(stream.row(t));
    const auto want = baseline.decode_step(stream.row(t));
    for (std::size_t x = 0; x < dim; ++x) {
      const double err = std::abs(got[x] - want[x]);
      result.max_abs_err = std::max(result.max_abs_err, err);
      sum += err;
      ++count;
    }
  }
  result.mean_abs_err = count == 0 ? 0.0 : sum / static_cast<double>(count);
  result.cache_bits = staircase.cache().theoretical_bits();
  result.baseline_bits = staircase.cache().full_precision_bits();
  return result;
}

}  // namespace attnmosaic::testing
