// SPDX-License-Identifier: Apache-2.0
#include "attnmosaic/curvefit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace attnmosaic::curvefit {

double eval_theta(const CurveParams& p, double x) {
  const double u = x + p.a4;
  if (u == 0.0) throw Error(ErrorCode::kDomain, "pole at x = -a4");
  const double u2 = u * u;
  const double radicand = p.a3 + 1.0 / (u2 * u2);
  if (!(radicand > 0.0)) throw Error(ErrorCode::kDomain, "non-positive radicand");
  return p.a2 - p.a1 / std::sqrt(radicand);
}

std::array<double, 4> numeric_jacobian(const CurveParams& params, double x, double h) {
  std::array<double, 4> grad{};
  const auto base = params.as_array();
  for (std::size_t i = 0; i < 4; ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    grad[i] = (eval_theta(CurveParams::from_array(plus), x) -
               eval_theta(CurveParams::from_array(minus), x)) /
              (2.0 * h);
  }
  return grad;
}

CurveParams default_init(std::span<const Point> points) {
  double sum = 0.0;
  double min_x = std::numeric_limits<double>::infinity();
  for (const Point& p : points) {
    sum += p.y;
    min_x = std::min(min_x, p.x);
  }
  return {1.0, sum / static_cast<double>(points.size()), 1.0, 1.0 - min_x};
}

namespace {

// Sum of squared residuals, or nullopt if any sample is outside the domain.
std::optional<double> cost(const CurveParams& params, std::span<const Point> points) {
  double sum = 0.0;
  for (const Point& p : points) {
    double value = 0.0;
    try {
      value = eval_theta(params, p.x);
    } catch (const Error&) {
      return std::nullopt;
    }
    const double r = value - p.y;
    sum += r * r;
  }
  if (!std::isfinite(sum)) return std::nullopt;
  return sum;
}

using Mat4 = std::array<std::array<double, 4>, 4>;
using Vec4 = std::array<double, 4>;

// Gaussian elimination with partial pivoting.
std::optional<Vec4> solve4(Mat4 a, Vec4 b) {
  for (std::size_t col = 0; col < 4; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < 4; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (!std::isfinite(a[pivot][col]) || std::abs(a[pivot][col]) < 1e-300) return std::nullopt;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < 4; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < 4; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  Vec4 x{};
  for (std::size_t i = 4; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < 4; ++c) acc -= a[i][c] * x[c];
    x[i] = acc / a[i][i];
  }
  for (double v : x) {
    if (!std::isfinite(v)) return std::nullopt;
  }
  return x;
}

constexpr double kMaxDamping = 1e16;

}  // namespace

FitResult fit_theta(std::span<const Point> points, std::optional<CurveParams> init,
                    const FitOptions& options) {
  if (points.size() < 4) {
    throw Error(ErrorCode::kUsage, "need at least 4 points to fit 4 parameters, got " +
                                       std::to_string(points.size()));
  }
  FitResult result;
  result.params = init.value_or(default_init(points));
  const auto initial = cost(result.params, points);
  if (!initial) throw Error(ErrorCode::kDomain, "initial parameters are invalid on the data");
  result.residual = *initial;
  result.residual_history.push_back(result.residual);

  double damping = 1e-3;
  for (result.iterations = 0; result.iterations < options.max_iterations; ++result.iterations) {
    if (result.residual == 0.0) break;

    Mat4 normal{};
    Vec4 gradient{};
    for (const Point& p : points) {
      const Vec4 j = numeric_jacobian(result.params, p.x, options.jacobian_step);
      const double r = eval_theta(result.params, p.x) - p.y;
      for (std::size_t a = 0; a < 4; ++a) {
        gradient[a] += j[a] * r;
        for (std::size_t b = 0; b < 4; ++b) normal[a][b] += j[a] * j[b];
      }
    }
    double diag_scale = 0.0;
    for (std::size_t a = 0; a < 4; ++a) diag_scale = std::max(diag_scale, normal[a][a]);
    const double floor = std::max(diag_scale, 1.0) * 1e-12;

    bool accepted = false;
    bool solved_any = false;
    while (damping <= kMaxDamping) {
      Mat4 damped = normal;
      Vec4 rhs{};
      for (std::size_t a = 0; a < 4; ++a) {
        damped[a][a] += damping * std::max(normal[a][a], floor);
        rhs[a] = -gradient[a];
      }
      const auto step = solve4(damped, rhs);
      if (step) {
        solved_any = true;
        auto trial = result.params.as_array();
        for (std::size_t a = 0; a < 4; ++a) trial[a] += (*step)[a];
        const CurveParams candidate = CurveParams::from_array(trial);
        const auto trial_cost = cost(candidate, points);
        if (trial_cost && *trial_cost < result.residual) {
          const double previous = result.residual;
          result.params = candidate;
          result.residual = *trial_cost;
          result.residual_history.push_back(result.residual);
          damping = std::max(damping / 10.0, 1e-15);
          accepted = true;
          if ((previous - result.residual) / previous < options.relative_tolerance) {
            ++result.iterations;
            return result;
          }
          break;
        }
      }
      damping *= 10.0;
    }
    if (!solved_any) {
      throw FitFailed("normal equations singular at maximum damping", result.params, result.residual);
    }
    if (!accepted) break;  // no downhill step left: converged to working precision
  }
  return result;
}

std::vector<Point> parse_points(const std::string& text) {
  std::vector<Point> points;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::kValidation, "line " + std::to_string(line_no) + ": expected 'x,y'");
    }
    try {
      std::size_t used_x = 0;
      std::size_t used_y = 0;
      const std::string xs = line.substr(0, comma);
      const std::string ys = line.substr(comma + 1);
      Point p{std::stod(xs, &used_x), std::stod(ys, &used_y)};
      if (xs.find_first_not_of(" \t\r", used_x) != std::string::npos ||
          ys.find_first_not_of(" \t\r", used_y) != std::string::npos || !std::isfinite(p.x) ||
          !std::isfinite(p.y)) {
        throw std::invalid_argument("trailing");
      }
      points.push_back(p);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kValidation, "line " + std::to_string(line_no) + ": bad number");
    }
  }
  return points;
}

std::vector<Point> read_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read points file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_points(buffer.str());
}

std::string parameter_document(const FitResult& result) {
  nlohmann::ordered_json doc;
  doc["a1"] = result.params.a1;
  doc["a2"] = result.params.a2;
  doc["a3"] = result.params.a3;
  doc["a4"] = result.params.a4;
  doc["residual"] = result.residual;
  doc["iterations"] = result.iterations;
  return doc.dump();
}

}  // namespace attnmosaic::curvefit
