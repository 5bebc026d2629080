// SPDX-License-Identifier: Apache-2.0
//
// Smoothing curve theta(x) = a2 - a1 / sqrt(a3 + (x + a4)^-4) and a damped
// Gauss-Newton (Levenberg-Marquardt) fitter for it.
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnmosaic/error.hpp"

namespace attnmosaic::curvefit {

struct CurveParams {
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;
  double a4 = 0.0;

  std::array<double, 4> as_array() const { return {a1, a2, a3, a4}; }
  static CurveParams from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Throws Error(kDomain) at the pole x = -a4 or for a non-positive radicand.
double eval_theta(const CurveParams& params, double x);

/// Central-difference partials d theta / d a_i, step h per parameter.
std::array<double, 4> numeric_jacobian(const CurveParams& params, double x, double h = 1e-6);

struct FitOptions {
  std::size_t max_iterations = 200;
  double relative_tolerance = 1e-10;
  double jacobian_step = 1e-6;
};

struct FitResult {
  CurveParams params;
  double residual = 0.0;  // sum of squared errors
  std::size_t iterations = 0;
  std::vector<double> residual_history;  // one entry per accepted step, starting with the initial residual
};

/// Raised when the damped normal equations cannot be solved; carries the
/// last accepted iterate.
class FitFailed : public Error {
 public:
  FitFailed(const std::string& message, CurveParams last, double residual)
      : Error(ErrorCode::kFitFailed, message), last_(last), residual_(residual) {}

  const CurveParams& last_iterate() const noexcept { return last_; }
  double residual() const noexcept { return residual_; }

 private:
  CurveParams last_;
  double residual_;
};

/// a = (1, mean(y), 1, 1 - min(x)): puts the pole left of every sample.
CurveParams default_init(std::span<const Point> points);

/// Minimizes sum (theta(x_i) - y_i)^2. Throws kUsage for fewer than 4
/// points, kDomain when the initial guess is invalid on the data and
/// FitFailed when the normal equations stay singular at maximum damping.
/// A step that would cross the pole or make the radicand non-positive is
/// rejected like any other uphill step.
FitResult fit_theta(std::span<const Point> points, std::optional<CurveParams> init = std::nullopt,
                    const FitOptions& options = {});

/// Two comma-separated columns per line, '#' starts a comment.
std::vector<Point> read_points(const std::filesystem::path& path);
std::vector<Point> parse_points(const std::string& text);

/// {"a1","a2","a3","a4","residual","iterations"} as a single-line JSON object.
std::string parameter_document(const FitResult& result);

}  // namespace attnmosaic::curvefit
